// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "vlalign/types.hpp"

namespace vlalign::ad {

// Handle into a Tape. Valid only for the tape that produced it.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode autodiff over dense Eigen matrices.
//
// A Tape records one forward pass; backward() walks the record in reverse
// creation order (a valid topological order) and accumulates gradients.
// Leaves created with input() push their gradient into an external sink so
// parameters can live outside the tape. A tape constructed with
// grad_enabled=false evaluates values only, which is the inference path.
class Tape {
 public:
  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

  Var constant(Matd v);
  // Leaf whose gradient is accumulated into *grad_sink (same shape as v).
  // grad_sink == nullptr makes it a constant.
  Var input(const Matd& v, Matd* grad_sink);

  const Matd& value(Var v) const { return node(v).value; }
  // Gradient of the last backward() target w.r.t. v. Zero-sized if none flowed.
  const Matd& grad(Var v) const { return node(v).grad; }

  // a (m×k) · b (k×n)
  Var matmul(Var a, Var b);
  // a (m×k) · bᵀ with b (n×k); the row-major linear-layer product.
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  // Broadcast-add a 1×d row vector to every row of a.
  Var add_rowvec(Var a, Var v);
  Var scale(Var a, double s);
  Var mul_elem(Var a, Var b);
  Var softmax_rows(Var a);
  // Per-row layer norm with affine gamma/beta (1×d).
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps = 1e-5);
  Var gelu(Var a);
  Var concat_rows(const std::vector<Var>& parts);
  Var slice_rows(Var a, Index start, Index count);
  // Row lookup: out.row(r) = table.row(ids[r]).
  Var gather_rows(Var table, const std::vector<int>& ids);
  // Mean token cross-entropy over rows whose label is >= 0; labels.size()
  // must equal logits rows. Returns a 1×1 scalar.
  Var cross_entropy_mean(Var logits, const std::vector<int>& labels);

  // Backprop from a 1×1 scalar node (seeded with 1), optionally scaled.
  void backward(Var loss, double seed = 1.0);

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matd value;
    Matd grad;  // allocated on demand during backward
    bool needs_grad = false;
    Matd* external = nullptr;
    // Distributes this node's grad to its parents (captured by index).
    std::function<void(Tape&)> back;
  };

  Node& node(Var v) { return nodes_.at(static_cast<std::size_t>(v.i)); }
  const Node& node(Var v) const { return nodes_.at(static_cast<std::size_t>(v.i)); }
  Matd& grad_buf(int i);
  Var push(Matd value, bool needs_grad, std::function<void(Tape&)> back);

  std::vector<Node> nodes_;
  bool grad_enabled_;
};

}  // namespace vlalign::ad
