// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlalign/adapters.hpp"
#include "vlalign/image.hpp"
#include "vlalign/model.hpp"

namespace vlalign {

enum class Stage { warmup, realign, finetune };

const char* to_string(Stage s);
Stage parse_stage(const std::string& s);

struct StageConfig {
  Stage stage = Stage::realign;
  double lr = 5e-5;
  long warmup_steps = 1000;
  long total_steps = 60000;
  int batch_size = 128;  // effective batch, reached via gradient accumulation
  int grad_accum = 1;
  double weight_decay = 0.1;
  int max_target_len = 128;
  LoraConfig lora;
  std::uint64_t seed = 0;
  long checkpoint_interval = 0;  // 0 = final checkpoint only

  void validate() const;
};

// Paper defaults: warm-up trains the projection alone at a high rate on
// captions; re-alignment runs the instruction mixture.
StageConfig default_warmup_config();
StageConfig default_realign_config();

struct FreezeSet {
  std::set<std::string> trainable;
  bool contains(const std::string& name) const { return trainable.count(name) != 0; }
};

// warmup -> projection only; realign/finetune -> Q-Former (incl. query
// tokens) + projection + LoRA. Vision encoder and base LM are never
// trainable.
FreezeSet freeze_policy(const VisionLm& model, Stage stage);
void apply_freeze(VisionLm& model, const FreezeSet& fs);

// Linear ramp 0 -> lr over warmup_steps, then cosine decay to 0 at
// total_steps. Exact at the anchor points.
double lr_schedule(long step, const StageConfig& cfg);

// Raised when training hits a non-finite loss.
class TrainAbortError : public std::runtime_error {
 public:
  TrainAbortError(long step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

struct TrainExample {
  std::vector<std::string> image_ids;
  std::vector<int> prompt_ids;
  std::vector<int> target_ids;
};

struct StepMetric {
  long step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

struct StageSinks {
  std::string metrics_path;      // JSONL {step, loss, lr}; empty = no file
  std::string checkpoint_dir;    // empty = no checkpoints
  std::string checkpoint_prefix; // stage tag embedded in file names
  std::optional<LoraConfig> lora_for_checkpoint;
};

struct StageResult {
  std::vector<StepMetric> metrics;
  std::vector<std::string> checkpoint_paths;
};

// Runs total_steps AdamW updates over the trainable set. Deterministic for
// a fixed seed: data order, dropout masks, and updates all derive from it.
StageResult run_stage(VisionLm& model, const std::vector<TrainExample>& data,
                      const StageConfig& cfg, const ImageSource& images,
                      const StageSinks* sinks = nullptr);

enum class FinetuneTask { xgqa, xvnli, marvl };

FinetuneTask parse_finetune_task(const std::string& s);

struct FinetunePreset {
  int epochs;
  double lr;
  int batch_size;
};

FinetunePreset finetune_preset(FinetuneTask task);

// Requires a merged model (no attached adapters); attaches fresh LoRA and
// trains with the per-task preset.
StageResult finetune(VisionLm& model, FinetuneTask task, const std::vector<TrainExample>& data,
                     const ImageSource& images, std::uint64_t seed, const LoraConfig& fresh_lora,
                     const StageSinks* sinks = nullptr);

struct CheckpointRef {
  std::string path;
  long step = 0;
};

// Argmax over English validation scores; ties break to the earliest entry.
// The API deliberately has no channel for target-language scores.
std::size_t select_checkpoint(const std::vector<CheckpointRef>& checkpoints,
                              const std::vector<double>& english_val_scores);

// The six ablation rows: instruction mix on/off, LoRA target, warm start.
struct AblationPreset {
  std::string name;
  bool instruction_mix;
  LoraConfig::Target lora_target;
  bool warm_start;
};

const std::vector<AblationPreset>& ablation_presets();
const AblationPreset& ablation_preset(const std::string& name);

}  // namespace vlalign
