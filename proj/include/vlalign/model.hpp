// Copyright 2026 The vlalign Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vlalign/image.hpp"
#include "vlalign/params.hpp"
#include "vlalign/rng.hpp"
#include "vlalign/tape.hpp"
#include "vlalign/types.hpp"

namespace vlalign {

struct ModelConfig {
  int image_size = 32;
  int patch_size = 8;
  int h_img = 32;  // vision hidden dim
  int num_query_tokens = 32;
  int h_q = 32;  // Q-Former hidden dim
  int h_v = 32;  // Q-Former output dim
  int h_l = 48;  // LM hidden dim
  int n_layers_vit = 2;
  int n_layers_qformer = 2;
  int n_layers_lm = 2;
  int vocab_size = 256;
  int max_target_len = 128;
  int max_seq_len = 512;  // LM position table size

  int num_patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  void validate() const;
};

// Patch embeddings of one image: num_patches x h_img.
struct PatchSequence {
  Matd embeddings;
  std::string source_image_id;
};

// Projected query-token embeddings for k images: (k*num_query_tokens) x h_l.
struct VisualTokenSet {
  Matd tokens;
  std::vector<std::string> image_ids;
};

// Visual tokens plus the embedded prompt; the LM input before targets.
struct LmInput {
  Matd embeddings;  // (visual_len + prompt_len) x h_l
  Index visual_len = 0;
  std::vector<int> prompt_ids;
};

// LoRA wiring for one base matrix; managed by adapters.hpp.
struct AdapterBinding {
  std::string a_name;  // r x d_in
  std::string b_name;  // d_out x r
  double scaling = 1.0;
  double dropout = 0.0;
};

// Dropout/gradient context for training-mode forward passes.
struct TrainContext {
  bool training = false;
  Rng* rng = nullptr;
};

// Row-wise affine map: visual (n x h_v) * w (h_v x h_l) + b (1 x h_l).
Matd project(const Matd& visual, const Matd& w, const RowVecd& b);

// The modular vision-LM: frozen toy ViT, trainable Q-Former with learned
// query tokens, linear projection into the LM space, and a frozen
// decoder-only toy LM that consumes visual tokens as a non-loss prefix.
class VisionLm {
 public:
  VisionLm(ModelConfig cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // --- forward ops -------------------------------------------------------
  PatchSequence encode_image(const Image& image) const;
  // Contextualizes the learned query tokens over the patches; 32 x h_v.
  Matd qformer_encode(const PatchSequence& patches) const;
  // Per-image Q-Former encoding + projection, concatenated in input order.
  VisualTokenSet encode_images(const std::vector<Image>& images) const;
  Matd project(const Matd& qformer_out) const;
  LmInput assemble_lm_input(const VisualTokenSet& visual,
                            const std::vector<int>& prompt_ids) const;
  // Mean next-token cross-entropy over the target (plus end token).
  double lm_loss(const LmInput& input, const std::vector<int>& target_ids) const;

  // Next-token logits given visual tokens and the token ids so far.
  Vecd next_token_logits(const Matd& visual_tokens, const std::vector<int>& token_ids) const;

  // --- training ----------------------------------------------------------
  // Runs the full differentiable path (Q-Former -> projection -> LM loss)
  // for one example and accumulates loss_scale * dLoss/dtheta into the
  // grads of trainable parameters. Returns the unscaled loss.
  double example_loss_backward(const std::vector<Image>& images,
                               const std::vector<int>& prompt_ids,
                               const std::vector<int>& target_ids, double loss_scale,
                               TrainContext& ctx);

  // --- adapter plumbing (used by adapters.hpp) ---------------------------
  std::map<std::string, AdapterBinding>& adapter_bindings() { return adapters_; }
  const std::map<std::string, AdapterBinding>& adapter_bindings() const { return adapters_; }
  // Base-LM weight matrices eligible for LoRA, in a stable order.
  std::vector<std::string> lm_matrix_names(bool query_value_only) const;

  // Labels for teacher forcing: -1 everywhere except positions that predict
  // a target token or the end token. Exposed for tests.
  static std::vector<int> build_labels(Index visual_len, Index prompt_len,
                                       const std::vector<int>& target_ids_with_eos,
                                       Index total_len);

  // Truncates to max_target_len with a logged warning, appends EOS.
  std::vector<int> prepare_target(const std::vector<int>& target_ids) const;

  int eos_id() const { return 0; }

 private:
  friend struct VisionLmTestAccess;

  ad::Var use(ad::Tape& t, const std::string& name, bool with_grad) const;
  ad::Var linear(ad::Tape& t, ad::Var x, const std::string& wname, bool with_grad,
                 TrainContext* ctx) const;
  ad::Var self_attention(ad::Tape& t, ad::Var x, const std::string& prefix, int dim,
                         bool causal, bool with_grad, TrainContext* ctx) const;
  ad::Var cross_attention(ad::Tape& t, ad::Var x, ad::Var kv, const std::string& prefix,
                          int dim, bool with_grad, TrainContext* ctx) const;
  ad::Var ffn(ad::Tape& t, ad::Var x, const std::string& prefix, bool with_grad,
              TrainContext* ctx) const;
  ad::Var layer_norm(ad::Tape& t, ad::Var x, const std::string& prefix,
                     bool with_grad) const;

  Matd vit_forward(const Image& image) const;
  ad::Var qformer_forward(ad::Tape& t, ad::Var patches, bool with_grad,
                          TrainContext* ctx) const;
  ad::Var projection_forward(ad::Tape& t, ad::Var qformer_out, bool with_grad) const;
  // seq_embeddings: T x h_l already including visual prefix; returns logits T x vocab.
  ad::Var lm_logits(ad::Tape& t, ad::Var seq_embeddings, bool with_grad,
                    TrainContext* ctx) const;

  ModelConfig cfg_;
  ParamStore params_;
  std::map<std::string, AdapterBinding> adapters_;
};

// Test hook: exposes internal builders for gradient and masking probes.
struct VisionLmTestAccess {
  static ad::Var lm_logits(const VisionLm& m, ad::Tape& t, ad::Var seq, bool with_grad) {
    return m.lm_logits(t, seq, with_grad, nullptr);
  }
  static ad::Var qformer_forward(const VisionLm& m, ad::Tape& t, ad::Var patches,
                                 bool with_grad) {
    return m.qformer_forward(t, patches, with_grad, nullptr);
  }
  static ad::Var projection_forward(const VisionLm& m, ad::Tape& t, ad::Var q,
                                    bool with_grad) {
    return m.projection_forward(t, q, with_grad);
  }
};

}  // namespace vlalign
