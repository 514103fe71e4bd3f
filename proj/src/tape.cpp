// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#include "vlalign/tape.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace vlalign::ad {

namespace {

void check_same_shape(const Matd& a, const Matd& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                                " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

}  // namespace

Matd& Tape::grad_buf(int i) {
  Node& n = nodes_[static_cast<std::size_t>(i)];
  if (n.grad.size() == 0) n.grad = Matd::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::push(Matd value, bool needs_grad, std::function<void(Tape&)> back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = grad_enabled_ && needs_grad;
  if (n.needs_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matd v) { return push(std::move(v), false, nullptr); }

Var Tape::input(const Matd& v, Matd* grad_sink) {
  if (grad_sink == nullptr) return constant(v);
  if (grad_sink->rows() != v.rows() || grad_sink->cols() != v.cols()) {
    throw std::invalid_argument("Tape::input: grad sink shape mismatch");
  }
  Var out = push(v, true, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [idx = out.i, grad_sink](Tape& t) {
      *grad_sink += t.grad_buf(idx);
    };
  }
  return out;
}

Var Tape::matmul(Var a, Var b) {
  const Matd& av = value(a);
  const Matd& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree");
  }
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out;
  Matd v = av * bv;
  out = push(std::move(v), ng, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a, b](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      if (t.node(a).needs_grad) t.grad_buf(a.i) += g * t.value(b).transpose();
      if (t.node(b).needs_grad) t.grad_buf(b.i) += t.value(a).transpose() * g;
    };
  }
  return out;
}

Var Tape::matmul_nt(Var a, Var b) {
  const Matd& av = value(a);
  const Matd& bv = value(b);
  if (av.cols() != bv.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimensions disagree");
  }
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(av * bv.transpose(), ng, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a, b](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      if (t.node(a).needs_grad) t.grad_buf(a.i) += g * t.value(b);
      if (t.node(b).needs_grad) t.grad_buf(b.i) += g.transpose() * t.value(a);
    };
  }
  return out;
}

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(value(a) + value(b), ng, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a, b](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      if (t.node(a).needs_grad) t.grad_buf(a.i) += g;
      if (t.node(b).needs_grad) t.grad_buf(b.i) += g;
    };
  }
  return out;
}

Var Tape::add_rowvec(Var a, Var v) {
  const Matd& av = value(a);
  const Matd& vv = value(v);
  if (vv.rows() != 1 || vv.cols() != av.cols()) {
    throw std::invalid_argument("add_rowvec: expected 1x" + std::to_string(av.cols()));
  }
  bool ng = node(a).needs_grad || node(v).needs_grad;
  Matd o = av;
  o.rowwise() += vv.row(0);
  Var out = push(std::move(o), ng, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a, v](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      if (t.node(a).needs_grad) t.grad_buf(a.i) += g;
      if (t.node(v).needs_grad) t.grad_buf(v.i) += g.colwise().sum();
    };
  }
  return out;
}

Var Tape::scale(Var a, double s) {
  Var out = push(value(a) * s, node(a).needs_grad, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a, s](Tape& t) {
      t.grad_buf(a.i) += t.grad_buf(oi) * s;
    };
  }
  return out;
}

Var Tape::mul_elem(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul_elem");
  bool ng = node(a).needs_grad || node(b).needs_grad;
  Var out = push(value(a).cwiseProduct(value(b)), ng, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a, b](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      if (t.node(a).needs_grad) t.grad_buf(a.i) += g.cwiseProduct(t.value(b));
      if (t.node(b).needs_grad) t.grad_buf(b.i) += g.cwiseProduct(t.value(a));
    };
  }
  return out;
}

Var Tape::softmax_rows(Var a) {
  const Matd& av = value(a);
  Matd y(av.rows(), av.cols());
  for (Index r = 0; r < av.rows(); ++r) {
    double m = av.row(r).maxCoeff();
    y.row(r) = (av.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  Var out = push(std::move(y), node(a).needs_grad, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      const Matd& yv = t.value(Var{oi});
      Matd& ga = t.grad_buf(a.i);
      for (Index r = 0; r < g.rows(); ++r) {
        double dot = g.row(r).cwiseProduct(yv.row(r)).sum();
        ga.row(r) += (g.row(r).array() - dot).matrix().cwiseProduct(yv.row(r));
      }
    };
  }
  return out;
}

Var Tape::layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
  const Matd& xv = value(x);
  const Matd& gv = value(gamma);
  const Matd& bv = value(beta);
  Index d = xv.cols();
  if (gv.rows() != 1 || gv.cols() != d || bv.rows() != 1 || bv.cols() != d) {
    throw std::invalid_argument("layer_norm_rows: gamma/beta must be 1xd");
  }
  Matd xhat(xv.rows(), d);
  Vecd istd(xv.rows());
  for (Index r = 0; r < xv.rows(); ++r) {
    double mu = xv.row(r).mean();
    double var = (xv.row(r).array() - mu).square().mean();
    istd(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (xv.row(r).array() - mu) * istd(r);
  }
  Matd y = xhat;
  y.array().rowwise() *= gv.row(0).array();
  y.rowwise() += bv.row(0);
  bool ng = node(x).needs_grad || node(gamma).needs_grad || node(beta).needs_grad;
  Var out = push(std::move(y), ng, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, x, gamma, beta, xhat, istd](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      const Matd& gv2 = t.value(gamma);
      if (t.node(gamma).needs_grad) {
        t.grad_buf(gamma.i) += (g.cwiseProduct(xhat)).colwise().sum();
      }
      if (t.node(beta).needs_grad) t.grad_buf(beta.i) += g.colwise().sum();
      if (t.node(x).needs_grad) {
        Matd& gx = t.grad_buf(x.i);
        for (Index r = 0; r < g.rows(); ++r) {
          // dxhat = dy * gamma; dx = istd * (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
          RowVecd dxhat = g.row(r).cwiseProduct(gv2.row(0));
          double m1 = dxhat.mean();
          double m2 = dxhat.cwiseProduct(xhat.row(r)).mean();
          gx.row(r) += istd(r) *
                       (dxhat.array() - m1 - xhat.row(r).array() * m2).matrix();
        }
      }
    };
  }
  return out;
}

Var Tape::gelu(Var a) {
  const Matd& av = value(a);
  Matd y = 0.5 * av.array() * (1.0 + (av.array() / std::sqrt(2.0)).erf());
  Var out = push(std::move(y), node(a).needs_grad, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      const Matd& xv = t.value(a);
      const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
      Matd phi = 0.5 * (1.0 + (xv.array() / std::sqrt(2.0)).erf());
      Matd dens = (-0.5 * xv.array().square()).exp() * inv_sqrt2pi;
      t.grad_buf(a.i) +=
          g.cwiseProduct((phi.array() + xv.array() * dens.array()).matrix());
    };
  }
  return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  Index cols = value(parts[0]).cols();
  Index rows = 0;
  bool ng = false;
  for (Var p : parts) {
    if (value(p).cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += value(p).rows();
    ng = ng || node(p).needs_grad;
  }
  Matd v(rows, cols);
  Index at = 0;
  for (Var p : parts) {
    v.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  Var out = push(std::move(v), ng, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, parts](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      Index at2 = 0;
      for (Var p : parts) {
        Index n = t.value(p).rows();
        if (t.node(p).needs_grad) t.grad_buf(p.i) += g.middleRows(at2, n);
        at2 += n;
      }
    };
  }
  return out;
}

Var Tape::slice_rows(Var a, Index start, Index count) {
  const Matd& av = value(a);
  if (start < 0 || count < 0 || start + count > av.rows()) {
    throw std::invalid_argument("slice_rows: range out of bounds");
  }
  Var out = push(av.middleRows(start, count), node(a).needs_grad, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, a, start, count](Tape& t) {
      t.grad_buf(a.i).middleRows(start, count) += t.grad_buf(oi);
    };
  }
  return out;
}

Var Tape::gather_rows(Var table, const std::vector<int>& ids) {
  const Matd& tv = value(table);
  Matd v(static_cast<Index>(ids.size()), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || ids[r] >= tv.rows()) {
      throw std::invalid_argument("gather_rows: id " + std::to_string(ids[r]) +
                                  " out of range [0, " + std::to_string(tv.rows()) + ")");
    }
    v.row(static_cast<Index>(r)) = tv.row(ids[r]);
  }
  Var out = push(std::move(v), node(table).needs_grad, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, table, ids](Tape& t) {
      const Matd& g = t.grad_buf(oi);
      Matd& gt = t.grad_buf(table.i);
      for (std::size_t r = 0; r < ids.size(); ++r) {
        gt.row(ids[r]) += g.row(static_cast<Index>(r));
      }
    };
  }
  return out;
}

Var Tape::cross_entropy_mean(Var logits, const std::vector<int>& labels) {
  const Matd& lv = value(logits);
  if (static_cast<Index>(labels.size()) != lv.rows()) {
    throw std::invalid_argument("cross_entropy_mean: labels size != logits rows");
  }
  Index vocab = lv.cols();
  int count = 0;
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    int lab = labels[r];
    if (lab < 0) continue;
    if (lab >= vocab) throw std::invalid_argument("cross_entropy_mean: label out of vocab");
    const auto row = lv.row(static_cast<Index>(r));
    double m = row.maxCoeff();
    double lse = m + std::log((row.array() - m).exp().sum());
    total += lse - row(lab);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy_mean: no labeled positions");
  Matd v(1, 1);
  v(0, 0) = total / count;
  Var out = push(std::move(v), node(logits).needs_grad, nullptr);
  if (node(out).needs_grad) {
    node(out).back = [oi = out.i, logits, labels, count](Tape& t) {
      double g = t.grad_buf(oi)(0, 0) / count;
      const Matd& lv2 = t.value(logits);
      Matd& gl = t.grad_buf(logits.i);
      for (std::size_t r = 0; r < labels.size(); ++r) {
        int lab = labels[r];
        if (lab < 0) continue;
        const auto row = lv2.row(static_cast<Index>(r));
        double m = row.maxCoeff();
        RowVecd p = (row.array() - m).exp();
        p /= p.sum();
        gl.row(static_cast<Index>(r)) += g * p;
        gl(static_cast<Index>(r), lab) -= g;
      }
    };
  }
  return out;
}

void Tape::backward(Var loss, double seed) {
  if (!grad_enabled_) throw std::logic_error("Tape::backward on a no-grad tape");
  const Matd& lv = value(loss);
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::invalid_argument("Tape::backward: target must be 1x1");
  }
  grad_buf(loss.i)(0, 0) += seed;
  for (int i = loss.i; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.needs_grad && n.grad.size() != 0 && n.back) n.back(*this);
  }
}

}  // namespace vlalign::ad
