// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vlalign/model.hpp"
#include "vlalign/rng.hpp"
#include "vlalign/types.hpp"

namespace vlalign {

struct LoraConfig {
  enum class Target { none, query_value, all_lm_matrices };

  int r = 8;
  double alpha = 16.0;
  double dropout = 0.05;
  Target target = Target::all_lm_matrices;

  double scaling() const { return alpha / r; }
  void validate() const;
};

const char* to_string(LoraConfig::Target t);
LoraConfig::Target parse_lora_target(const std::string& s);

// Standalone adapter for the vector-convention forward below.
struct LoraAdapter {
  std::string base_matrix_name;
  Matd a;  // r x d_in
  Matd b;  // d_out x r
  LoraConfig config;
};

// W*x + (alpha/r) * B * (A * dropout(x)); dropout only in training mode.
Vecd lora_forward(const Vecd& x, const Matd& w, const LoraAdapter& adapter, bool training,
                  Rng* rng = nullptr);

// Wraps the configured base matrices with fresh adapters (A ~ N(0, 0.02^2),
// B = 0, so the adapted model starts as an exact identity). The base
// matrices stay frozen while adapters are attached.
void attach_lora(VisionLm& model, const LoraConfig& cfg, std::uint64_t seed);

// Folds every adapter into its base matrix (W += scaling * B * A) and
// removes the adapter parameters.
void merge_lora(VisionLm& model);

bool has_adapters(const VisionLm& model);

// Total adapter parameter count: sum of r*(d_in + d_out) over adapters.
std::size_t lora_parameter_count(const VisionLm& model);

}  // namespace vlalign
