// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#include "vlalign/adapters.hpp"

#include <stdexcept>

namespace vlalign {

void LoraConfig::validate() const {
  if (r < 1) throw std::invalid_argument("LoraConfig: rank must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) {
    throw std::invalid_argument("LoraConfig: dropout must be in [0, 1)");
  }
}

const char* to_string(LoraConfig::Target t) {
  switch (t) {
    case LoraConfig::Target::none: return "none";
    case LoraConfig::Target::query_value: return "query_value";
    case LoraConfig::Target::all_lm_matrices: return "all";
  }
  return "none";
}

LoraConfig::Target parse_lora_target(const std::string& s) {
  if (s == "none") return LoraConfig::Target::none;
  if (s == "query_value" || s == "qv" || s == "q,v") return LoraConfig::Target::query_value;
  if (s == "all" || s == "all_lm_matrices") return LoraConfig::Target::all_lm_matrices;
  throw std::invalid_argument("unknown LoRA target: " + s);
}

Vecd lora_forward(const Vecd& x, const Matd& w, const LoraAdapter& adapter, bool training,
                  Rng* rng) {
  if (w.cols() != x.size()) throw std::invalid_argument("lora_forward: W/x shape mismatch");
  if (adapter.a.cols() != x.size() || adapter.b.rows() != w.rows() ||
      adapter.a.rows() != adapter.config.r || adapter.b.cols() != adapter.config.r) {
    throw std::invalid_argument("lora_forward: adapter rank/shape mismatch");
  }
  Vecd xin = x;
  if (training && adapter.config.dropout > 0.0) {
    if (rng == nullptr) throw std::logic_error("lora_forward: training dropout needs an rng");
    double keep_scale = 1.0 / (1.0 - adapter.config.dropout);
    for (Index i = 0; i < xin.size(); ++i) {
      xin(i) = rng->next_double() < adapter.config.dropout ? 0.0 : xin(i) * keep_scale;
    }
  }
  return w * x + adapter.config.scaling() * (adapter.b * (adapter.a * xin));
}

void attach_lora(VisionLm& model, const LoraConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::vector<std::string> targets;
  if (cfg.target == LoraConfig::Target::query_value) {
    targets = model.lm_matrix_names(true);
  } else if (cfg.target == LoraConfig::Target::all_lm_matrices) {
    targets = model.lm_matrix_names(false);
  }
  auto& bindings = model.adapter_bindings();
  for (const std::string& name : targets) {
    if (bindings.count(name) != 0) {
      throw std::invalid_argument("attach_lora: adapter already attached to " + name);
    }
  }
  Rng rng(seed);
  for (const std::string& name : targets) {
    const Parameter& base = model.params().at(name);
    AdapterBinding ab;
    ab.a_name = "lora." + name + ".A";
    ab.b_name = "lora." + name + ".B";
    ab.scaling = cfg.scaling();
    ab.dropout = cfg.dropout;
    model.params().create(ab.a_name, rng.normal_matrix(cfg.r, base.value.cols(), 0.02));
    model.params().create(ab.b_name, Matd::Zero(base.value.rows(), cfg.r));
    bindings.emplace(name, std::move(ab));
  }
}

void merge_lora(VisionLm& model) {
  auto& bindings = model.adapter_bindings();
  if (bindings.empty()) throw std::logic_error("merge_lora: no adapters attached");
  for (auto& [base_name, ab] : bindings) {
    Parameter& base = model.params().at(base_name);
    const Matd& a = model.params().at(ab.a_name).value;
    const Matd& b = model.params().at(ab.b_name).value;
    base.value += ab.scaling * (b * a);
    model.params().remove(ab.a_name);
    model.params().remove(ab.b_name);
  }
  bindings.clear();
}

bool has_adapters(const VisionLm& model) { return !model.adapter_bindings().empty(); }

std::size_t lora_parameter_count(const VisionLm& model) {
  std::size_t total = 0;
  for (const auto& [base_name, ab] : model.adapter_bindings()) {
    total += static_cast<std::size_t>(model.params().at(ab.a_name).value.size()) +
             static_cast<std::size_t>(model.params().at(ab.b_name).value.size());
  }
  return total;
}

}  // namespace vlalign
