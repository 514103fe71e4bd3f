// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#include "vlalign/generation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace vlalign {

void GenConfig::validate() const {
  if (beam_width < 1) throw std::invalid_argument("GenConfig: beam_width must be >= 1");
  if (max_len < 1) throw std::invalid_argument("GenConfig: max_len must be >= 1");
  if (repetition_penalty < 1.0) {
    throw std::invalid_argument("GenConfig: repetition_penalty must be >= 1");
  }
  if (eos_id < 0) throw std::invalid_argument("GenConfig: bad eos_id");
}

double length_normalized_score(double sum_logprob, std::size_t length, double alpha) {
  if (length == 0) throw std::invalid_argument("length_normalized_score: empty hypothesis");
  return sum_logprob / std::pow(static_cast<double>(length), alpha);
}

namespace {

struct Beam {
  std::vector<int> tokens;
  double sum_logprob = 0.0;
};

Vecd log_softmax(Vecd logits) {
  double m = logits.maxCoeff();
  double lse = m + std::log((logits.array() - m).exp().sum());
  return logits.array() - lse;
}

// true if a ranks before b.
bool hypothesis_less(const Hypothesis& a, const Hypothesis& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.tokens != b.tokens) {
    return std::lexicographical_compare(a.tokens.begin(), a.tokens.end(), b.tokens.begin(),
                                        b.tokens.end());
  }
  return a.tokens.size() < b.tokens.size();
}

}  // namespace

Hypothesis beam_search(const StepFn& step, const GenConfig& cfg) {
  cfg.validate();
  std::vector<Beam> live{Beam{}};
  std::vector<Hypothesis> done;

  for (int t = 0; t < cfg.max_len && !live.empty(); ++t) {
    struct Candidate {
      std::size_t beam;
      int token;
      double sum_logprob;
    };
    std::vector<Candidate> candidates;
    for (std::size_t b = 0; b < live.size(); ++b) {
      Vecd logits = step(live[b].tokens);
      if (cfg.eos_id >= logits.size()) {
        throw std::invalid_argument("beam_search: vocab does not include the end token");
      }
      if (cfg.repetition_penalty != 1.0) {
        std::set<int> seen(live[b].tokens.begin(), live[b].tokens.end());
        for (int tok : seen) {
          if (tok < logits.size()) {
            double& l = logits(tok);
            l = l > 0.0 ? l / cfg.repetition_penalty : l * cfg.repetition_penalty;
          }
        }
      }
      Vecd logp = log_softmax(std::move(logits));
      for (Index v = 0; v < logp.size(); ++v) {
        candidates.push_back(Candidate{b, static_cast<int>(v), live[b].sum_logprob + logp(v)});
      }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
      if (a.sum_logprob != b.sum_logprob) return a.sum_logprob > b.sum_logprob;
      if (a.token != b.token) return a.token < b.token;
      return a.beam < b.beam;
    });

    std::vector<Beam> next;
    for (const Candidate& c : candidates) {
      if (static_cast<int>(next.size()) >= cfg.beam_width) break;
      Beam nb = live[c.beam];
      nb.tokens.push_back(c.token);
      nb.sum_logprob = c.sum_logprob;
      if (c.token == cfg.eos_id) {
        Hypothesis h;
        h.tokens = std::move(nb.tokens);
        h.sum_logprob = nb.sum_logprob;
        h.score = length_normalized_score(nb.sum_logprob, h.tokens.size(), cfg.length_penalty);
        h.ended_with_eos = true;
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(nb));
      }
    }
    live = std::move(next);
  }

  for (Beam& b : live) {
    if (b.tokens.empty()) continue;
    Hypothesis h;
    h.sum_logprob = b.sum_logprob;
    h.score = length_normalized_score(b.sum_logprob, b.tokens.size(), cfg.length_penalty);
    h.tokens = std::move(b.tokens);
    h.ended_with_eos = false;
    done.push_back(std::move(h));
  }
  if (done.empty()) throw std::runtime_error("beam_search: produced no hypotheses");
  return *std::min_element(done.begin(), done.end(),
                           [](const Hypothesis& a, const Hypothesis& b) {
                             return hypothesis_less(a, b);
                           });
}

StepFn model_step_fn(const VisionLm& model, Matd visual_tokens, std::vector<int> prompt_ids) {
  return [&model, visual = std::move(visual_tokens),
          prompt = std::move(prompt_ids)](const std::vector<int>& generated) {
    std::vector<int> ids = prompt;
    ids.insert(ids.end(), generated.begin(), generated.end());
    return model.next_token_logits(visual, ids);
  };
}

}  // namespace vlalign
