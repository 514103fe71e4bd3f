// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#include "vlalign/model.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace vlalign {

using ad::Tape;
using ad::Var;

namespace {

Matd causal_mask(Index t) {
  Matd m = Matd::Zero(t, t);
  for (Index i = 0; i < t; ++i)
    for (Index j = i + 1; j < t; ++j) m(i, j) = -1e30;
  return m;
}

Matd dropout_mask(Index rows, Index cols, double rate, Rng& rng) {
  Matd m(rows, cols);
  double keep_scale = 1.0 / (1.0 - rate);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = rng.next_double() < rate ? 0.0 : keep_scale;
  return m;
}

}  // namespace

void ModelConfig::validate() const {
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw std::invalid_argument("ModelConfig: image_size must be a positive multiple of patch_size");
  }
  if (num_query_tokens <= 0) throw std::invalid_argument("ModelConfig: num_query_tokens must be > 0");
  if (h_img <= 0 || h_q <= 0 || h_v <= 0 || h_l <= 0) {
    throw std::invalid_argument("ModelConfig: hidden dims must be > 0");
  }
  if (n_layers_vit < 0 || n_layers_qformer <= 0 || n_layers_lm <= 0) {
    throw std::invalid_argument("ModelConfig: bad layer counts");
  }
  if (vocab_size <= 1) throw std::invalid_argument("ModelConfig: vocab_size must be > 1");
  if (max_target_len <= 0 || max_seq_len <= 0) {
    throw std::invalid_argument("ModelConfig: bad sequence limits");
  }
}

Matd project(const Matd& visual, const Matd& w, const RowVecd& b) {
  if (visual.cols() != w.rows()) {
    throw std::invalid_argument("project: visual cols " + std::to_string(visual.cols()) +
                                " != projection rows " + std::to_string(w.rows()));
  }
  if (b.cols() != w.cols()) throw std::invalid_argument("project: bias length mismatch");
  Matd out = visual * w;
  out.rowwise() += b;
  return out;
}

VisionLm::VisionLm(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const double w_std = 0.02;
  auto normal = [&](Index r, Index c, double s) { return rng.normal_matrix(r, c, s); };
  auto add_ln = [&](const std::string& prefix, int dim) {
    params_.create(prefix + ".g", Matd::Ones(1, dim));
    params_.create(prefix + ".b", Matd::Zero(1, dim));
  };
  auto add_attn = [&](const std::string& prefix, int dim) {
    params_.create(prefix + ".wq", normal(dim, dim, w_std));
    params_.create(prefix + ".wk", normal(dim, dim, w_std));
    params_.create(prefix + ".wv", normal(dim, dim, w_std));
    params_.create(prefix + ".wo", normal(dim, dim, w_std));
  };
  auto add_ffn = [&](const std::string& prefix, int dim) {
    params_.create(prefix + ".w1", normal(4 * dim, dim, w_std));
    params_.create(prefix + ".w2", normal(dim, 4 * dim, w_std));
  };

  // Frozen toy vision encoder.
  params_.create("vit.patch.weight", normal(cfg_.h_img, cfg_.patch_dim(), w_std));
  params_.create("vit.patch.bias", Matd::Zero(1, cfg_.h_img));
  for (int i = 0; i < cfg_.n_layers_vit; ++i) {
    std::string l = "vit.l" + std::to_string(i);
    add_ln(l + ".ln1", cfg_.h_img);
    add_attn(l + ".attn", cfg_.h_img);
    add_ln(l + ".ln2", cfg_.h_img);
    add_ffn(l + ".ffn", cfg_.h_img);
  }

  // Q-Former: learned queries, self-attention, cross-attention to patches.
  params_.create("qformer.queries", normal(cfg_.num_query_tokens, cfg_.h_q, w_std));
  for (int i = 0; i < cfg_.n_layers_qformer; ++i) {
    std::string l = "qformer.l" + std::to_string(i);
    add_ln(l + ".ln1", cfg_.h_q);
    add_attn(l + ".attn", cfg_.h_q);
    add_ln(l + ".ln2", cfg_.h_q);
    params_.create(l + ".xattn.wq", normal(cfg_.h_q, cfg_.h_q, w_std));
    params_.create(l + ".xattn.wk", normal(cfg_.h_q, cfg_.h_img, w_std));
    params_.create(l + ".xattn.wv", normal(cfg_.h_q, cfg_.h_img, w_std));
    params_.create(l + ".xattn.wo", normal(cfg_.h_q, cfg_.h_q, w_std));
    add_ln(l + ".ln3", cfg_.h_q);
    add_ffn(l + ".ffn", cfg_.h_q);
  }
  add_ln("qformer.final_ln", cfg_.h_q);
  params_.create("qformer.out.weight", normal(cfg_.h_v, cfg_.h_q, w_std));

  // Projection into the LM embedding space; bias starts at zero.
  params_.create("proj.weight", normal(cfg_.h_v, cfg_.h_l, w_std));
  params_.create("proj.bias", Matd::Zero(1, cfg_.h_l));

  // Frozen toy LM with tied input/output embeddings. The embedding scale is
  // chosen so the tied output head can produce confident logits after layer
  // norm (row norm ~ sqrt(h_l)).
  params_.create("lm.tok_emb", normal(cfg_.vocab_size, cfg_.h_l, 1.5 / std::sqrt(cfg_.h_l)));
  params_.create("lm.pos_emb", normal(cfg_.max_seq_len, cfg_.h_l, w_std));
  for (int i = 0; i < cfg_.n_layers_lm; ++i) {
    std::string l = "lm.l" + std::to_string(i);
    add_ln(l + ".ln1", cfg_.h_l);
    add_attn(l + ".attn", cfg_.h_l);
    add_ln(l + ".ln2", cfg_.h_l);
    add_ffn(l + ".ffn", cfg_.h_l);
  }
  add_ln("lm.final_ln", cfg_.h_l);
}

Var VisionLm::use(Tape& t, const std::string& name, bool with_grad) const {
  const Parameter& p = params_.at(name);
  Matd* sink = (with_grad && p.trainable) ? &p.grad : nullptr;
  return t.input(p.value, sink);
}

Var VisionLm::linear(Tape& t, Var x, const std::string& wname, bool with_grad,
                     TrainContext* ctx) const {
  Var w = use(t, wname, with_grad);
  Var y = t.matmul_nt(x, w);
  auto it = adapters_.find(wname);
  if (it == adapters_.end()) return y;
  const AdapterBinding& ab = it->second;
  Var a = use(t, ab.a_name, with_grad);
  Var b = use(t, ab.b_name, with_grad);
  Var xin = x;
  if (ctx != nullptr && ctx->training && ab.dropout > 0.0) {
    if (ctx->rng == nullptr) throw std::logic_error("training dropout requires an rng");
    const Matd& xv = t.value(x);
    xin = t.mul_elem(x, t.constant(dropout_mask(xv.rows(), xv.cols(), ab.dropout, *ctx->rng)));
  }
  Var low = t.matmul_nt(xin, a);
  Var up = t.matmul_nt(low, b);
  return t.add(y, t.scale(up, ab.scaling));
}

Var VisionLm::layer_norm(Tape& t, Var x, const std::string& prefix, bool with_grad) const {
  return t.layer_norm_rows(x, use(t, prefix + ".g", with_grad), use(t, prefix + ".b", with_grad));
}

Var VisionLm::self_attention(Tape& t, Var x, const std::string& prefix, int dim, bool causal,
                             bool with_grad, TrainContext* ctx) const {
  Var q = linear(t, x, prefix + ".wq", with_grad, ctx);
  Var k = linear(t, x, prefix + ".wk", with_grad, ctx);
  Var v = linear(t, x, prefix + ".wv", with_grad, ctx);
  Var scores = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dim)));
  if (causal) scores = t.add(scores, t.constant(causal_mask(t.value(scores).rows())));
  Var attn = t.softmax_rows(scores);
  Var mixed = t.matmul(attn, v);
  return linear(t, mixed, prefix + ".wo", with_grad, ctx);
}

Var VisionLm::cross_attention(Tape& t, Var x, Var kv, const std::string& prefix, int dim,
                              bool with_grad, TrainContext* ctx) const {
  Var q = linear(t, x, prefix + ".wq", with_grad, ctx);
  Var k = linear(t, kv, prefix + ".wk", with_grad, ctx);
  Var v = linear(t, kv, prefix + ".wv", with_grad, ctx);
  Var scores = t.scale(t.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dim)));
  Var attn = t.softmax_rows(scores);
  Var mixed = t.matmul(attn, v);
  return linear(t, mixed, prefix + ".wo", with_grad, ctx);
}

Var VisionLm::ffn(Tape& t, Var x, const std::string& prefix, bool with_grad,
                  TrainContext* ctx) const {
  Var h = t.gelu(linear(t, x, prefix + ".w1", with_grad, ctx));
  return linear(t, h, prefix + ".w2", with_grad, ctx);
}

Matd VisionLm::vit_forward(const Image& image) const {
  const int ps = cfg_.patch_size;
  const int side = cfg_.image_size / ps;
  Matd patches(cfg_.num_patches(), cfg_.patch_dim());
  for (int pr = 0; pr < side; ++pr) {
    for (int pc = 0; pc < side; ++pc) {
      Index row = pr * side + pc;
      Index at = 0;
      for (int y = 0; y < ps; ++y) {
        for (int x = 0; x < ps; ++x) {
          Index pixel = static_cast<Index>(pr * ps + y) * cfg_.image_size + (pc * ps + x);
          for (int c = 0; c < 3; ++c) patches(row, at++) = image.pixels(pixel, c);
        }
      }
    }
  }
  Matd emb = patches * params_.at("vit.patch.weight").value.transpose();
  emb.rowwise() += params_.at("vit.patch.bias").value.row(0);
  if (cfg_.n_layers_vit == 0) return emb;
  // Frozen transformer blocks; evaluated on a no-grad tape.
  Tape t(false);
  Var x = t.constant(std::move(emb));
  for (int i = 0; i < cfg_.n_layers_vit; ++i) {
    std::string l = "vit.l" + std::to_string(i);
    x = t.add(x, self_attention(t, layer_norm(t, x, l + ".ln1", false), l + ".attn",
                                cfg_.h_img, /*causal=*/false, false, nullptr));
    x = t.add(x, ffn(t, layer_norm(t, x, l + ".ln2", false), l + ".ffn", false, nullptr));
  }
  return t.value(x);
}

PatchSequence VisionLm::encode_image(const Image& image) const {
  if (image.height != cfg_.image_size || image.width != cfg_.image_size) {
    throw std::invalid_argument("encode_image: expected " + std::to_string(cfg_.image_size) +
                                "x" + std::to_string(cfg_.image_size) + " image, got " +
                                std::to_string(image.height) + "x" + std::to_string(image.width));
  }
  if (image.pixels.rows() != static_cast<Index>(image.height) * image.width ||
      image.pixels.cols() != 3) {
    throw std::invalid_argument("encode_image: pixel buffer shape mismatch");
  }
  if (image.pixels.size() > 0 &&
      (image.pixels.minCoeff() < 0.0 || image.pixels.maxCoeff() > 1.0)) {
    throw std::invalid_argument("encode_image: pixel values must lie in [0,1]");
  }
  return PatchSequence{vit_forward(image), image.id};
}

Var VisionLm::qformer_forward(Tape& t, Var patches, bool with_grad, TrainContext* ctx) const {
  if (t.value(patches).rows() == 0) {
    throw std::invalid_argument("qformer_encode: empty patch sequence");
  }
  if (t.value(patches).cols() != cfg_.h_img) {
    throw std::invalid_argument("qformer_encode: patch dim != h_img");
  }
  Var x = use(t, "qformer.queries", with_grad);
  for (int i = 0; i < cfg_.n_layers_qformer; ++i) {
    std::string l = "qformer.l" + std::to_string(i);
    x = t.add(x, self_attention(t, layer_norm(t, x, l + ".ln1", with_grad), l + ".attn",
                                cfg_.h_q, /*causal=*/false, with_grad, ctx));
    x = t.add(x, cross_attention(t, layer_norm(t, x, l + ".ln2", with_grad), patches,
                                 l + ".xattn", cfg_.h_q, with_grad, ctx));
    x = t.add(x, ffn(t, layer_norm(t, x, l + ".ln3", with_grad), l + ".ffn", with_grad, ctx));
  }
  x = layer_norm(t, x, "qformer.final_ln", with_grad);
  return t.matmul_nt(x, use(t, "qformer.out.weight", with_grad));
}

Var VisionLm::projection_forward(Tape& t, Var qformer_out, bool with_grad) const {
  Var w = use(t, "proj.weight", with_grad);
  Var b = use(t, "proj.bias", with_grad);
  return t.add_rowvec(t.matmul(qformer_out, w), b);
}

Matd VisionLm::qformer_encode(const PatchSequence& patches) const {
  Tape t(false);
  return t.value(qformer_forward(t, t.constant(patches.embeddings), false, nullptr));
}

Matd VisionLm::project(const Matd& qformer_out) const {
  return vlalign::project(qformer_out, params_.at("proj.weight").value,
                          params_.at("proj.bias").value.row(0));
}

VisualTokenSet VisionLm::encode_images(const std::vector<Image>& images) const {
  if (images.empty()) throw std::invalid_argument("encode_images: empty image list");
  VisualTokenSet out;
  out.tokens.resize(static_cast<Index>(images.size()) * cfg_.num_query_tokens, cfg_.h_l);
  Index at = 0;
  for (const Image& img : images) {
    Matd block = project(qformer_encode(encode_image(img)));
    out.tokens.middleRows(at, cfg_.num_query_tokens) = block;
    at += cfg_.num_query_tokens;
    out.image_ids.push_back(img.id);
  }
  return out;
}

LmInput VisionLm::assemble_lm_input(const VisualTokenSet& visual,
                                    const std::vector<int>& prompt_ids) const {
  if (visual.tokens.cols() != cfg_.h_l) {
    throw std::invalid_argument("assemble_lm_input: visual token dim != h_l");
  }
  const Matd& emb = params_.at("lm.tok_emb").value;
  LmInput input;
  input.visual_len = visual.tokens.rows();
  input.prompt_ids = prompt_ids;
  input.embeddings.resize(input.visual_len + static_cast<Index>(prompt_ids.size()), cfg_.h_l);
  input.embeddings.topRows(input.visual_len) = visual.tokens;
  for (std::size_t i = 0; i < prompt_ids.size(); ++i) {
    int id = prompt_ids[i];
    if (id < 0 || id >= cfg_.vocab_size) {
      throw std::invalid_argument("assemble_lm_input: token id " + std::to_string(id) +
                                  " outside vocab [0, " + std::to_string(cfg_.vocab_size) + ")");
    }
    input.embeddings.row(input.visual_len + static_cast<Index>(i)) = emb.row(id);
  }
  return input;
}

std::vector<int> VisionLm::prepare_target(const std::vector<int>& target_ids) const {
  std::vector<int> out = target_ids;
  if (static_cast<int>(out.size()) > cfg_.max_target_len) {
    std::fprintf(stderr, "[vlalign] warning: target of %zu tokens truncated to %d\n",
                 out.size(), cfg_.max_target_len);
    out.resize(static_cast<std::size_t>(cfg_.max_target_len));
  }
  for (int id : out) {
    if (id < 0 || id >= cfg_.vocab_size) {
      throw std::invalid_argument("target token id outside vocab");
    }
  }
  out.push_back(eos_id());
  return out;
}

std::vector<int> VisionLm::build_labels(Index visual_len, Index prompt_len,
                                        const std::vector<int>& target_ids_with_eos,
                                        Index total_len) {
  Index start = visual_len + prompt_len - 1;
  if (start < 0 || total_len != start + static_cast<Index>(target_ids_with_eos.size())) {
    throw std::invalid_argument("build_labels: inconsistent segment lengths");
  }
  std::vector<int> labels(static_cast<std::size_t>(total_len), -1);
  for (std::size_t k = 0; k < target_ids_with_eos.size(); ++k) {
    labels[static_cast<std::size_t>(start) + k] = target_ids_with_eos[k];
  }
  return labels;
}

Var VisionLm::lm_logits(Tape& t, Var seq_embeddings, bool with_grad, TrainContext* ctx) const {
  Index total = t.value(seq_embeddings).rows();
  if (total > cfg_.max_seq_len) {
    throw std::invalid_argument("lm: sequence of " + std::to_string(total) +
                                " tokens exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
  }
  Var x = t.add(seq_embeddings,
                t.constant(params_.at("lm.pos_emb").value.topRows(total)));
  for (int i = 0; i < cfg_.n_layers_lm; ++i) {
    std::string l = "lm.l" + std::to_string(i);
    x = t.add(x, self_attention(t, layer_norm(t, x, l + ".ln1", with_grad), l + ".attn",
                                cfg_.h_l, /*causal=*/true, with_grad, ctx));
    x = t.add(x, ffn(t, layer_norm(t, x, l + ".ln2", with_grad), l + ".ffn", with_grad, ctx));
  }
  x = layer_norm(t, x, "lm.final_ln", with_grad);
  return t.matmul_nt(x, use(t, "lm.tok_emb", with_grad));
}

double VisionLm::lm_loss(const LmInput& input, const std::vector<int>& target_ids) const {
  std::vector<int> with_eos = prepare_target(target_ids);
  Index n_target_in = static_cast<Index>(with_eos.size()) - 1;
  Matd seq(input.embeddings.rows() + n_target_in, cfg_.h_l);
  seq.topRows(input.embeddings.rows()) = input.embeddings;
  const Matd& emb = params_.at("lm.tok_emb").value;
  for (Index k = 0; k < n_target_in; ++k) {
    seq.row(input.embeddings.rows() + k) = emb.row(with_eos[static_cast<std::size_t>(k)]);
  }
  std::vector<int> labels =
      build_labels(input.visual_len, input.embeddings.rows() - input.visual_len, with_eos,
                   seq.rows());
  Tape t(false);
  Var logits = lm_logits(t, t.constant(std::move(seq)), false, nullptr);
  return t.value(t.cross_entropy_mean(logits, labels))(0, 0);
}

Vecd VisionLm::next_token_logits(const Matd& visual_tokens,
                                 const std::vector<int>& token_ids) const {
  const Matd& emb = params_.at("lm.tok_emb").value;
  Matd seq(visual_tokens.rows() + static_cast<Index>(token_ids.size()), cfg_.h_l);
  seq.topRows(visual_tokens.rows()) = visual_tokens;
  for (std::size_t i = 0; i < token_ids.size(); ++i) {
    int id = token_ids[i];
    if (id < 0 || id >= cfg_.vocab_size) throw std::invalid_argument("token id outside vocab");
    seq.row(visual_tokens.rows() + static_cast<Index>(i)) = emb.row(id);
  }
  Tape t(false);
  Var logits = lm_logits(t, t.constant(std::move(seq)), false, nullptr);
  return t.value(logits).row(t.value(logits).rows() - 1).transpose();
}

double VisionLm::example_loss_backward(const std::vector<Image>& images,
                                       const std::vector<int>& prompt_ids,
                                       const std::vector<int>& target_ids, double loss_scale,
                                       TrainContext& ctx) {
  if (images.empty()) throw std::invalid_argument("example_loss_backward: no images");
  Tape t(true);
  std::vector<Var> parts;
  parts.reserve(images.size() + 1);
  for (const Image& img : images) {
    Var patches = t.constant(encode_image(img).embeddings);
    Var q = qformer_forward(t, patches, true, &ctx);
    parts.push_back(projection_forward(t, q, true));
  }
  std::vector<int> with_eos = prepare_target(target_ids);
  std::vector<int> text_ids = prompt_ids;
  text_ids.insert(text_ids.end(), with_eos.begin(), with_eos.end() - 1);
  for (int id : text_ids) {
    if (id < 0 || id >= cfg_.vocab_size) throw std::invalid_argument("token id outside vocab");
  }
  if (!text_ids.empty()) {
    parts.push_back(t.gather_rows(use(t, "lm.tok_emb", true), text_ids));
  }
  Var seq = t.concat_rows(parts);
  Var logits = lm_logits(t, seq, true, &ctx);
  Index visual_len = static_cast<Index>(images.size()) * cfg_.num_query_tokens;
  std::vector<int> labels = build_labels(visual_len, static_cast<Index>(prompt_ids.size()),
                                         with_eos, t.value(seq).rows());
  Var loss = t.cross_entropy_mean(logits, labels);
  double value = t.value(loss)(0, 0);
  t.backward(loss, loss_scale);
  return value;
}

std::vector<std::string> VisionLm::lm_matrix_names(bool query_value_only) const {
  std::vector<std::string> out;
  for (int i = 0; i < cfg_.n_layers_lm; ++i) {
    std::string l = "lm.l" + std::to_string(i);
    out.push_back(l + ".attn.wq");
    if (!query_value_only) out.push_back(l + ".attn.wk");
    out.push_back(l + ".attn.wv");
    if (!query_value_only) {
      out.push_back(l + ".attn.wo");
      out.push_back(l + ".ffn.w1");
      out.push_back(l + ".ffn.w2");
    }
  }
  return out;
}

}  // namespace vlalign
