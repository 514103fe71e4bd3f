// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#include "vlalign/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "vlalign/checkpoint.hpp"
#include "vlalign/rng.hpp"

namespace vlalign {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::warmup: return "warmup";
    case Stage::realign: return "realign";
    case Stage::finetune: return "finetune";
  }
  return "realign";
}

Stage parse_stage(const std::string& s) {
  if (s == "warmup") return Stage::warmup;
  if (s == "realign") return Stage::realign;
  if (s == "finetune") return Stage::finetune;
  throw std::invalid_argument("unknown stage: " + s);
}

void StageConfig::validate() const {
  if (lr <= 0.0) throw std::invalid_argument("StageConfig: lr must be > 0");
  if (warmup_steps < 0 || total_steps <= 0 || warmup_steps > total_steps) {
    throw std::invalid_argument("StageConfig: need 0 <= warmup_steps <= total_steps");
  }
  if (batch_size <= 0 || grad_accum <= 0 || batch_size % grad_accum != 0) {
    throw std::invalid_argument("StageConfig: batch_size must be divisible by grad_accum");
  }
  if (weight_decay < 0.0) throw std::invalid_argument("StageConfig: negative weight decay");
  if (max_target_len <= 0) throw std::invalid_argument("StageConfig: bad max_target_len");
  lora.validate();
}

StageConfig default_warmup_config() {
  StageConfig cfg;
  cfg.stage = Stage::warmup;
  cfg.lr = 5e-3;
  cfg.warmup_steps = 1000;
  cfg.total_steps = 8000;  // ~1M captions at batch 128
  cfg.batch_size = 128;
  cfg.lora.target = LoraConfig::Target::none;
  return cfg;
}

StageConfig default_realign_config() {
  StageConfig cfg;
  cfg.stage = Stage::realign;
  cfg.lr = 5e-5;
  cfg.warmup_steps = 1000;
  cfg.total_steps = 60000;  // 2 epochs over the 3.9M-example mix at batch 128
  cfg.batch_size = 128;
  cfg.lora.target = LoraConfig::Target::all_lm_matrices;
  return cfg;
}

FreezeSet freeze_policy(const VisionLm& model, Stage stage) {
  FreezeSet fs;
  switch (stage) {
    case Stage::warmup:
      fs.trainable = {"proj.weight", "proj.bias"};
      break;
    case Stage::realign:
    case Stage::finetune: {
      for (const auto& prefix : {"qformer.", "proj.", "lora."}) {
        for (const std::string& n : model.params().names_with_prefix(prefix)) {
          fs.trainable.insert(n);
        }
      }
      break;
    }
  }
  for (const std::string& n : fs.trainable) {
    if (n.rfind("vit.", 0) == 0 || n.rfind("lm.", 0) == 0) {
      throw std::logic_error("freeze_policy: frozen backbone parameter selected: " + n);
    }
  }
  return fs;
}

void apply_freeze(VisionLm& model, const FreezeSet& fs) {
  for (auto& [name, p] : model.params()) p.trainable = fs.contains(name);
}

double lr_schedule(long step, const StageConfig& cfg) {
  if (step < 0 || step > cfg.total_steps) {
    throw std::invalid_argument("lr_schedule: step " + std::to_string(step) +
                                " outside [0, " + std::to_string(cfg.total_steps) + "]");
  }
  if (step == cfg.total_steps) return 0.0;
  if (step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (step == cfg.warmup_steps) return cfg.lr;
  double progress = static_cast<double>(step - cfg.warmup_steps) /
                    static_cast<double>(cfg.total_steps - cfg.warmup_steps);
  return cfg.lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

namespace {

// Decoupled-weight-decay Adam over the trainable parameter set.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(VisionLm& model, double lr, double weight_decay) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (auto& [name, p] : model.params()) {
      if (!p.trainable) continue;
      auto& [m, v] = moments_[name];
      if (m.size() == 0) {
        m = Matd::Zero(p.value.rows(), p.value.cols());
        v = Matd::Zero(p.value.rows(), p.value.cols());
      }
      m = beta1_ * m + (1.0 - beta1_) * p.grad;
      v = beta2_ * v + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
      Matd mhat = m / bc1;
      Matd vhat = v / bc2;
      p.value -= lr * (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
      if (weight_decay > 0.0) p.value -= lr * weight_decay * p.value;
    }
  }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::map<std::string, std::pair<Matd, Matd>> moments_;
};

// Seed-determined epoch order with wraparound.
class ExampleStream {
 public:
  ExampleStream(const std::vector<TrainExample>& data, std::uint64_t seed)
      : data_(data), rng_(seed) {
    if (data_.empty()) throw std::invalid_argument("training stream is empty");
    order_.resize(data_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    rng_.shuffle(order_);
  }

  const TrainExample& next() {
    if (pos_ == order_.size()) {
      pos_ = 0;
      rng_.shuffle(order_);
    }
    return data_[order_[pos_++]];
  }

 private:
  const std::vector<TrainExample>& data_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

}  // namespace

StageResult run_stage(VisionLm& model, const std::vector<TrainExample>& data,
                      const StageConfig& cfg, const ImageSource& images,
                      const StageSinks* sinks) {
  cfg.validate();
  apply_freeze(model, freeze_policy(model, cfg.stage));

  ExampleStream stream(data, cfg.seed ^ fnv1a64("data-order"));
  Rng dropout_rng(cfg.seed ^ fnv1a64("dropout"));
  AdamW optimizer;
  StageResult result;

  std::ofstream metrics_out;
  if (sinks != nullptr && !sinks->metrics_path.empty()) {
    metrics_out.open(sinks->metrics_path, std::ios::trunc);
    if (!metrics_out) {
      throw std::runtime_error("run_stage: cannot open metrics file " + sinks->metrics_path);
    }
  }
  auto save_ckpt = [&](long step) {
    if (sinks == nullptr || sinks->checkpoint_dir.empty()) return;
    std::filesystem::create_directories(sinks->checkpoint_dir);
    std::string prefix = sinks->checkpoint_prefix.empty() ? std::string(to_string(cfg.stage))
                                                          : sinks->checkpoint_prefix;
    std::string path = sinks->checkpoint_dir + "/" + prefix + "-step" +
                       std::to_string(step) + ".ckpt";
    save_checkpoint(model, prefix, sinks->lora_for_checkpoint, path);
    result.checkpoint_paths.push_back(path);
  };

  const int micro_size = cfg.batch_size / cfg.grad_accum;
  TrainContext ctx{/*training=*/true, &dropout_rng};
  for (long step = 1; step <= cfg.total_steps; ++step) {
    model.params().zero_grads();
    double loss_sum = 0.0;
    for (int micro = 0; micro < cfg.grad_accum; ++micro) {
      for (int e = 0; e < micro_size; ++e) {
        const TrainExample& ex = stream.next();
        std::vector<Image> imgs;
        imgs.reserve(ex.image_ids.size());
        for (const std::string& id : ex.image_ids) {
          imgs.push_back(images.image(id, model.config().image_size));
        }
        std::vector<int> target = ex.target_ids;
        if (static_cast<int>(target.size()) > cfg.max_target_len) {
          std::fprintf(stderr, "[vlalign] warning: stage target of %zu tokens truncated to %d\n",
                       target.size(), cfg.max_target_len);
          target.resize(static_cast<std::size_t>(cfg.max_target_len));
        }
        loss_sum += model.example_loss_backward(imgs, ex.prompt_ids, target,
                                                1.0 / cfg.batch_size, ctx);
      }
    }
    double loss = loss_sum / cfg.batch_size;
    if (!std::isfinite(loss)) {
      throw TrainAbortError(step, "non-finite loss at step " + std::to_string(step) +
                                      " in stage " + to_string(cfg.stage));
    }
    double lr = lr_schedule(step, cfg);
    optimizer.step(model, lr, cfg.weight_decay);
    result.metrics.push_back(StepMetric{step, loss, lr});
    if (metrics_out.is_open()) {
      nlohmann::ordered_json rec;
      rec["step"] = step;
      rec["loss"] = loss;
      rec["lr"] = lr;
      metrics_out << rec.dump() << "\n";
    }
    if (cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0 &&
        step != cfg.total_steps) {
      save_ckpt(step);
    }
  }
  save_ckpt(cfg.total_steps);
  return result;
}

FinetuneTask parse_finetune_task(const std::string& s) {
  if (s == "xgqa") return FinetuneTask::xgqa;
  if (s == "xvnli") return FinetuneTask::xvnli;
  if (s == "marvl") return FinetuneTask::marvl;
  throw std::invalid_argument("unknown finetune task: " + s);
}

FinetunePreset finetune_preset(FinetuneTask task) {
  switch (task) {
    case FinetuneTask::xgqa: return FinetunePreset{5, 5e-5, 256};
    case FinetuneTask::xvnli: return FinetunePreset{10, 1e-5, 128};
    case FinetuneTask::marvl: return FinetunePreset{20, 5e-5, 128};
  }
  throw std::logic_error("unreachable");
}

StageResult finetune(VisionLm& model, FinetuneTask task, const std::vector<TrainExample>& data,
                     const ImageSource& images, std::uint64_t seed, const LoraConfig& fresh_lora,
                     const StageSinks* sinks) {
  if (has_adapters(model)) {
    throw std::logic_error("finetune: merge re-alignment LoRA before fine-tuning");
  }
  if (data.empty()) throw std::invalid_argument("finetune: empty dataset");
  attach_lora(model, fresh_lora, seed ^ fnv1a64("finetune-lora"));

  FinetunePreset preset = finetune_preset(task);
  StageConfig cfg;
  cfg.stage = Stage::finetune;
  cfg.lr = preset.lr;
  cfg.batch_size = preset.batch_size;
  long steps_per_epoch =
      static_cast<long>((data.size() + preset.batch_size - 1) / preset.batch_size);
  cfg.total_steps = std::max<long>(1, preset.epochs * steps_per_epoch);
  cfg.warmup_steps = std::min<long>(1000, cfg.total_steps / 10);
  cfg.lora = fresh_lora;
  cfg.seed = seed;
  return run_stage(model, data, cfg, images, sinks);
}

std::size_t select_checkpoint(const std::vector<CheckpointRef>& checkpoints,
                              const std::vector<double>& english_val_scores) {
  if (checkpoints.empty()) throw std::invalid_argument("select_checkpoint: no checkpoints");
  if (checkpoints.size() != english_val_scores.size()) {
    throw std::invalid_argument("select_checkpoint: score/checkpoint count mismatch");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < english_val_scores.size(); ++i) {
    if (english_val_scores[i] > english_val_scores[best]) best = i;
  }
  return best;
}

const std::vector<AblationPreset>& ablation_presets() {
  static const std::vector<AblationPreset> kPresets = {
      {"captions-only", false, LoraConfig::Target::none, true},
      {"captions-lora-all", false, LoraConfig::Target::all_lm_matrices, true},
      {"mix-no-lora", true, LoraConfig::Target::none, true},
      {"mix-lora-qv", true, LoraConfig::Target::query_value, true},
      {"mix-no-warmstart", true, LoraConfig::Target::all_lm_matrices, false},
      {"full", true, LoraConfig::Target::all_lm_matrices, true},
  };
  return kPresets;
}

const AblationPreset& ablation_preset(const std::string& name) {
  for (const AblationPreset& p : ablation_presets()) {
    if (p.name == name) return p;
  }
  throw std::invalid_argument("unknown ablation preset: " + name);
}

}  // namespace vlalign
