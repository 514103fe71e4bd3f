// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlalign/types.hpp"

namespace vlalign {

// One named tensor. `grad` is accumulation storage for the trainer; it is
// mutable so that inference-shaped const forward passes can also run with
// gradient recording when the trainer drives them.
struct Parameter {
  Matd value;
  mutable Matd grad;
  bool trainable = false;

  void zero_grad() const { grad.setZero(); }
};

// Named parameter collection with deterministic (sorted) iteration order.
class ParamStore {
 public:
  Parameter& create(const std::string& name, Matd init) {
    auto [it, inserted] = items_.try_emplace(name);
    if (!inserted) throw std::invalid_argument("parameter already exists: " + name);
    it->second.value = std::move(init);
    it->second.grad = Matd::Zero(it->second.value.rows(), it->second.value.cols());
    return it->second;
  }

  bool contains(const std::string& name) const { return items_.count(name) != 0; }

  Parameter& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw std::out_of_range("no such parameter: " + name);
    return it->second;
  }
  const Parameter& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw std::out_of_range("no such parameter: " + name);
    return it->second;
  }

  void remove(const std::string& name) {
    if (items_.erase(name) == 0) throw std::out_of_range("no such parameter: " + name);
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(items_.size());
    for (const auto& [k, v] : items_) out.push_back(k);
    return out;
  }

  std::vector<std::string> names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [k, v] : items_) {
      if (k.rfind(prefix, 0) == 0) out.push_back(k);
    }
    return out;
  }

  void zero_grads() {
    for (auto& [k, p] : items_) p.grad.setZero();
  }

  void set_all_trainable(bool flag) {
    for (auto& [k, p] : items_) p.trainable = flag;
  }

  std::size_t size() const { return items_.size(); }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::map<std::string, Parameter> items_;
};

}  // namespace vlalign
