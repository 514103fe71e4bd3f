// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vlalign/model.hpp"
#include "vlalign/types.hpp"

namespace vlalign {

struct GenConfig {
  int beam_width = 5;
  // Hypotheses are ranked by sum(log p) / len^alpha; alpha = -1 favors
  // short sequences (classification-style tasks), alpha = 1 longer ones.
  double length_penalty = 1.0;
  // >= 1; divides positive / multiplies negative logits of tokens already
  // generated in the hypothesis before the softmax.
  double repetition_penalty = 1.0;
  int max_len = 48;
  int eos_id = 0;

  void validate() const;
};

// Scoring provider: next-token logits given the tokens generated so far.
// The prompt (and visual prefix) is owned by the provider.
using StepFn = std::function<Vecd(const std::vector<int>& generated)>;

struct Hypothesis {
  std::vector<int> tokens;  // includes the final EOS when ended_with_eos
  double sum_logprob = 0.0;
  double score = 0.0;  // sum_logprob / len^alpha
  bool ended_with_eos = false;
};

double length_normalized_score(double sum_logprob, std::size_t length, double alpha);

// Deterministic beam search. Live beams are pruned by cumulative log
// probability; finished hypotheses are ranked by the length-normalized
// score. Ties break to the lexicographically lower token sequence, then to
// the earlier (shorter) completion. Hypotheses that hit max_len without the
// end token are finalized as-is and flagged.
Hypothesis beam_search(const StepFn& step, const GenConfig& cfg);

// StepFn over the vision-LM for a fixed visual prefix and prompt.
StepFn model_step_fn(const VisionLm& model, Matd visual_tokens, std::vector<int> prompt_ids);

// CLI decode records.
struct DecodeRequest {
  std::string example_id;
  std::string prompt;
  std::string language;
  GenConfig gen;
};

struct DecodeResult {
  std::string example_id;
  std::string text;
  double score = 0.0;
  bool truncated = false;
};

}  // namespace vlalign
