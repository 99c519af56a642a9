// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Multimodal language model core: learnable fusion tokens appended after the
// language tokens, frozen causal LM blocks, and trainable MM blocks (gated
// cross-attention + gated FFW initialized from the paired LM block's FFW,
// optionally low-rank-adapted) inserted at configured depths.
//
// The "pretrained LM" at this scale is a randomly initialized, then frozen,
// decoder stack: every structural and isolation claim checked here is
// weight-agnostic.

#pragma once

#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "dmlf/attention.hpp"
#include "dmlf/error.hpp"
#include "dmlf/nn.hpp"
#include "dmlf/tensor.hpp"

namespace dmlf {

enum class FusionScheme { f_only, t_and_f, t_only };

inline FusionScheme fusion_scheme_from_string(const std::string& s) {
  if (s == "f_only") return FusionScheme::f_only;
  if (s == "t_and_f") return FusionScheme::t_and_f;
  if (s == "t_only") return FusionScheme::t_only;
  fail(ErrorCategory::config, "unknown fusion scheme '" + s + "'");
}

inline std::string fusion_scheme_to_string(FusionScheme s) {
  switch (s) {
    case FusionScheme::f_only: return "f_only";
    case FusionScheme::t_and_f: return "t_and_f";
    case FusionScheme::t_only: return "t_only";
  }
  fail(ErrorCategory::contract, "invalid fusion scheme enum");
}

enum class FfwFt { full, lora };

inline FfwFt ffw_ft_from_string(const std::string& s) {
  if (s == "full") return FfwFt::full;
  if (s == "lora") return FfwFt::lora;
  fail(ErrorCategory::config, "unknown FFW fine-tuning mode '" + s + "'");
}

inline std::string ffw_ft_to_string(FfwFt f) {
  return f == FfwFt::full ? "full" : "lora";
}

struct MlmConfig {
  int n_layers = 4;    // LM depth N
  int d_t = 16;        // LM width
  int vocab_size = 32;
  int n_f = 4;
  int n_heads = 2;
  int L_t_max = 16;    // positional table size
  int d_av = 16;       // GCA key/value source width
  std::vector<int> mm_positions{3, 4};  // ascending, subset of 1..N
  Gating gating = Gating::sigmoid;
  FusionScheme fusion_scheme = FusionScheme::f_only;
  bool ffw_enabled = true;
  FfwFt ffw_ft = FfwFt::full;
  int lora_rank = 4;
};

inline void validate_mlm_config(const MlmConfig& c) {
  require(c.n_layers >= 1, ErrorCategory::config, "n_layers must be >= 1");
  require(c.d_t >= 1 && c.d_t % c.n_heads == 0, ErrorCategory::config,
          "d_t must be positive and divisible by n_heads");
  require(c.vocab_size >= 2, ErrorCategory::config, "vocab_size must be >= 2");
  require(c.n_f >= 1, ErrorCategory::config, "at least one fusion token is required");
  require(c.L_t_max >= 1, ErrorCategory::config, "L_t_max must be >= 1");
  require(!c.mm_positions.empty(), ErrorCategory::config,
          "mm_positions must name at least one block");
  int prev = 0;
  for (int p : c.mm_positions) {
    require(p >= 1 && p <= c.n_layers, ErrorCategory::config,
            "mm position " + std::to_string(p) + " outside 1.." + std::to_string(c.n_layers));
    require(p > prev, ErrorCategory::config, "mm_positions must be strictly ascending");
    prev = p;
  }
  if (c.ffw_ft == FfwFt::lora) {
    require(c.lora_rank >= 1 && c.lora_rank <= c.d_t, ErrorCategory::config,
            "lora rank must be in 1..min(d_t, 4*d_t) = 1.." + std::to_string(c.d_t));
  }
}

// Positions {N, N-k, N-2k, ...} (count of them), returned ascending.
inline std::vector<int> build_mm_placement(int N, int count, int stride) {
  require(N >= 1 && count >= 1 && stride >= 1, ErrorCategory::config,
          "placement needs N, count, stride >= 1");
  const int lowest = N - (count - 1) * stride;
  require(lowest >= 1, ErrorCategory::config,
          "placement underflows layer 1: N=" + std::to_string(N) + ", count=" +
              std::to_string(count) + ", stride=" + std::to_string(stride));
  std::vector<int> out;
  for (int i = count - 1; i >= 0; --i) out.push_back(N - i * stride);
  return out;
}

// ---------------------------------------------------------------------------
// low-rank adaptation
// ---------------------------------------------------------------------------

struct LoraPair {
  Tensor A;  // [d_in, r], random init
  Tensor B;  // [r, d_out], zero init -> adapter output starts at zero
  float scale = 1.0f;  // 1/r
};

inline LoraPair init_lora(int d_in, int d_out, int r, Rng& rng) {
  require(r >= 1 && r <= std::min(d_in, d_out), ErrorCategory::config,
          "lora rank " + std::to_string(r) + " exceeds min(" + std::to_string(d_in) + "," +
              std::to_string(d_out) + ")");
  LoraPair p;
  p.A = Tensor::zeros({d_in, r}, true);
  fill_xavier(p.A, rng);
  p.B = Tensor::zeros({r, d_out}, true);
  p.scale = 1.0f / static_cast<float>(r);
  return p;
}

// y = x (base_W + lora_scale * A B) without materializing the adapted weight.
inline Tensor lora_forward(const Tensor& x, const Tensor& base_W, const Tensor& A,
                           const Tensor& B, float lora_scale) {
  require(A.dim(0) == base_W.dim(0) && B.dim(1) == base_W.dim(1) && A.dim(1) == B.dim(0),
          ErrorCategory::dimension, "lora factor shapes incompatible with base weight");
  return add(matmul(x, base_W), scale(matmul(matmul(x, A), B), lora_scale));
}

// ---------------------------------------------------------------------------
// MM block
// ---------------------------------------------------------------------------

struct MmBlockParams {
  GcaParams gca;
  Tensor a1;  // GCA gate parameter, scalar
  Tensor a2;  // FFW gate parameter, scalar
  NormParams ffw_norm;
  FfwParams ffw;  // d_t -> 4 d_t -> d_t, mirrors the paired LM block
  std::optional<LoraPair> lora_fc1;
  std::optional<LoraPair> lora_fc2;
};

inline MmBlockParams init_mm_block(const MlmConfig& c, Rng& rng) {
  MmBlockParams p;
  p.gca = init_gca(c.d_t, c.d_av, c.n_heads, rng, /*trainable=*/true);
  p.a1 = Tensor::zeros({1}, true);
  p.a2 = Tensor::zeros({1}, true);
  p.ffw_norm = init_norm(c.d_t, /*trainable=*/true);
  p.ffw = init_ffw(c.d_t, 4 * c.d_t, c.d_t, rng, Act::gelu, /*trainable=*/true);
  if (!c.ffw_enabled) {
    // The branch is skipped at forward time; freeze its parameters so they
    // neither train nor count as trainable.
    p.a2.set_requires_grad(false);
    p.ffw_norm.gain.set_requires_grad(false);
    p.ffw_norm.bias.set_requires_grad(false);
    p.ffw.fc1.W.set_requires_grad(false);
    p.ffw.fc1.b.set_requires_grad(false);
    p.ffw.fc2.W.set_requires_grad(false);
    p.ffw.fc2.b.set_requires_grad(false);
    return p;
  }
  if (c.ffw_ft == FfwFt::lora) {
    p.lora_fc1 = init_lora(c.d_t, 4 * c.d_t, c.lora_rank, rng);
    p.lora_fc2 = init_lora(4 * c.d_t, c.d_t, c.lora_rank, rng);
    // adapters learn; the base FFW (weights and biases) stays put
    p.ffw.fc1.W.set_requires_grad(false);
    p.ffw.fc1.b.set_requires_grad(false);
    p.ffw.fc2.W.set_requires_grad(false);
    p.ffw.fc2.b.set_requires_grad(false);
  }
  return p;
}

inline void register_params(ParamStore& s, const std::string& prefix, const MmBlockParams& p) {
  register_params(s, prefix + ".gca", p.gca);
  s.add(prefix + ".a1", p.a1);
  s.add(prefix + ".a2", p.a2);
  register_params(s, prefix + ".ffw_norm", p.ffw_norm);
  register_params(s, prefix + ".ffw", p.ffw);
  if (p.lora_fc1) {
    s.add(prefix + ".lora_fc1.A", p.lora_fc1->A);
    s.add(prefix + ".lora_fc1.B", p.lora_fc1->B);
    s.add(prefix + ".lora_fc2.A", p.lora_fc2->A);
    s.add(prefix + ".lora_fc2.B", p.lora_fc2->B);
  }
}

enum class FfwInitMode { from_lm, random };

// from_lm copies the paired LM block's FFW weights and biases into the MM
// FFW; random keeps the fresh initialization.
inline void ffw_init_from_lm(MmBlockParams& mm, const EncoderLayerParams& lm, FfwInitMode mode) {
  if (mode == FfwInitMode::random) return;
  require(mm.ffw.fc1.W.shape() == lm.ffw.fc1.W.shape() &&
              mm.ffw.fc2.W.shape() == lm.ffw.fc2.W.shape(),
          ErrorCategory::config, "MM FFW dims do not match the paired LM block FFW");
  mm.ffw.fc1.W.data() = lm.ffw.fc1.W.data();
  mm.ffw.fc1.b.data() = lm.ffw.fc1.b.data();
  mm.ffw.fc2.W.data() = lm.ffw.fc2.W.data();
  mm.ffw.fc2.b.data() = lm.ffw.fc2.b.data();
}

inline Tensor mm_ffw_forward(const Tensor& x, const MmBlockParams& p) {
  if (!p.lora_fc1) return ffw(x, p.ffw);
  Tensor h = add(lora_forward(x, p.ffw.fc1.W, p.lora_fc1->A, p.lora_fc1->B, p.lora_fc1->scale),
                 p.ffw.fc1.b);
  h = activation(h, p.ffw.act);
  return add(lora_forward(h, p.ffw.fc2.W, p.lora_fc2->A, p.lora_fc2->B, p.lora_fc2->scale),
             p.ffw.fc2.b);
}

// One MM block: split the combined sequence, apply gated cross-attention on
// the scheme-selected query rows, re-concatenate, then the gated FFW over
// the full sequence (position-wise).
inline Tensor mm_block_forward(const Tensor& H_hat, const Tensor& Z, const MmBlockParams& p,
                               const MlmConfig& c, int L_t, AttnStats* stats = nullptr) {
  require(H_hat.ndim() == 2 && H_hat.dim(0) == L_t + c.n_f, ErrorCategory::dimension,
          "mm_block input length != L_t + n_f");
  require(Z.ndim() == 2 && Z.dim(1) == p.gca.attn.d_kv_in, ErrorCategory::config,
          "audiovisual width " + std::to_string(Z.dim(1)) + " does not match GCA params (" +
              std::to_string(p.gca.attn.d_kv_in) + ")");
  Tensor H_bar;
  switch (c.fusion_scheme) {
    case FusionScheme::f_only: {
      auto parts = split(H_hat, {L_t, c.n_f}, 0);
      Tensor xf_bar = gated_cross_attention(parts[1], Z, p.gca, p.a1, c.gating, stats);
      H_bar = concat({parts[0], xf_bar}, 0);
      break;
    }
    case FusionScheme::t_and_f: {
      H_bar = gated_cross_attention(H_hat, Z, p.gca, p.a1, c.gating, stats);
      break;
    }
    case FusionScheme::t_only: {
      auto parts = split(H_hat, {L_t, c.n_f}, 0);
      Tensor xt_bar = gated_cross_attention(parts[0], Z, p.gca, p.a1, c.gating, stats);
      H_bar = concat({xt_bar, parts[1]}, 0);
      break;
    }
  }
  if (!c.ffw_enabled) return H_bar;
  Tensor branch = mm_ffw_forward(norm(H_bar, p.ffw_norm), p);
  return add(H_bar, mul(branch, gate_value(p.a2, c.gating)));
}

// ---------------------------------------------------------------------------
// full LM assembly
// ---------------------------------------------------------------------------

struct MlmParams {
  Tensor token_embed;    // [vocab, d_t], frozen
  Tensor pos_embed;      // [L_t_max, d_t], frozen
  Tensor fusion_tokens;  // [n_f, d_t], trainable
  std::vector<EncoderLayerParams> lm_blocks;  // frozen
  Tensor lm_head;        // [d_t, vocab], frozen, no bias
  std::map<int, MmBlockParams> mm_blocks;  // keyed by 1-based layer position
};

inline MlmParams init_mlm(const MlmConfig& c, Rng& rng, FfwInitMode ffw_init = FfwInitMode::from_lm) {
  validate_mlm_config(c);
  MlmParams p;
  p.token_embed = Tensor::zeros({c.vocab_size, c.d_t}, false);
  fill_normal(p.token_embed, rng, 0.02f);
  p.pos_embed = Tensor::zeros({c.L_t_max, c.d_t}, false);
  fill_normal(p.pos_embed, rng, 0.02f);
  p.fusion_tokens = Tensor::zeros({c.n_f, c.d_t}, true);
  fill_normal(p.fusion_tokens, rng, 0.02f);
  for (int l = 0; l < c.n_layers; ++l)
    p.lm_blocks.push_back(init_encoder_layer(c.d_t, c.n_heads, rng, /*trainable=*/false));
  p.lm_head = Tensor::zeros({c.d_t, c.vocab_size}, false);
  fill_normal(p.lm_head, rng, 0.02f);
  for (int pos : c.mm_positions) {
    MmBlockParams mm = init_mm_block(c, rng);
    ffw_init_from_lm(mm, p.lm_blocks[static_cast<size_t>(pos - 1)], ffw_init);
    p.mm_blocks.emplace(pos, std::move(mm));
  }
  return p;
}

inline void register_params(ParamStore& s, const MlmParams& p) {
  s.add("lm.token_embed", p.token_embed);
  s.add("lm.pos_embed", p.pos_embed);
  s.add("fusion_tokens", p.fusion_tokens);
  for (size_t l = 0; l < p.lm_blocks.size(); ++l)
    register_params(s, "lm.block." + std::to_string(l), p.lm_blocks[l]);
  s.add("lm.head", p.lm_head);
  for (const auto& [pos, mm] : p.mm_blocks)
    register_params(s, "mm." + std::to_string(pos), mm);
}

// Token + learned positional embedding for the language positions. Fusion
// tokens never receive positional offsets (their values subsume it).
inline Tensor embed_language(const std::vector<int>& ids, const MlmParams& p,
                             const MlmConfig& c) {
  require(!ids.empty(), ErrorCategory::data, "empty token sequence");
  require(static_cast<int>(ids.size()) <= c.L_t_max, ErrorCategory::dimension,
          "sequence length " + std::to_string(ids.size()) + " exceeds L_t_max=" +
              std::to_string(c.L_t_max));
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  return add(embedding_lookup(p.token_embed, ids), embedding_lookup(p.pos_embed, positions));
}

// H0 = [X_t || X_f]: embedded language tokens with the fusion tokens
// appended verbatim.
inline Tensor embed_input(const std::vector<int>& ids, const Tensor& X_f, const MlmParams& p,
                          const MlmConfig& c) {
  return concat({embed_language(ids, p, c), X_f}, 0);
}

inline Tensor lm_block_forward(const Tensor& H, const EncoderLayerParams& layer, int L_t,
                               int n_f, AttnStats* stats = nullptr) {
  return decoder_layer(H, layer, L_t, n_f, stats);
}

struct MlmOutputs {
  Tensor X_t_final;  // [L_t, d_t]
  Tensor X_f_final;  // [n_f, d_t]
  Tensor lm_logits;  // [L_t, vocab]
};

// Runs the stack from a pre-built H0 (which may carry augmentation or
// probe perturbations on the language rows).
inline MlmOutputs mlm_forward_from(const Tensor& H0, const Tensor& Z, const MlmParams& p,
                                   const MlmConfig& c, int L_t, AttnStats* stats = nullptr) {
  require(H0.dim(0) == L_t + c.n_f, ErrorCategory::dimension, "H0 length != L_t + n_f");
  Tensor H = H0;
  for (int l = 1; l <= c.n_layers; ++l) {
    H = lm_block_forward(H, p.lm_blocks[static_cast<size_t>(l - 1)], L_t, c.n_f, stats);
    auto it = p.mm_blocks.find(l);
    if (it != p.mm_blocks.end()) H = mm_block_forward(H, Z, it->second, c, L_t, stats);
  }
  auto parts = split(H, {L_t, c.n_f}, 0);
  MlmOutputs out;
  out.X_t_final = parts[0];
  out.X_f_final = parts[1];
  out.lm_logits = matmul(parts[0], p.lm_head);
  return out;
}

inline MlmOutputs mlm_forward(const std::vector<int>& ids, const Tensor& Z, const MlmParams& p,
                              const MlmConfig& c, AttnStats* stats = nullptr) {
  Tensor H0 = embed_input(ids, p.fusion_tokens, p, c);
  return mlm_forward_from(H0, Z, p, c, static_cast<int>(ids.size()), stats);
}

// ---------------------------------------------------------------------------
// parameter accounting
// ---------------------------------------------------------------------------

struct ParamCountReport {
  std::map<std::string, size_t> groups;  // trainable scalars per group
  size_t total = 0;
};

// Group names: fusion_tokens, mm_blocks, gates, av_encoder, heads, other.
// Gates are broken out of the MM group so their (tiny) count is visible.
inline ParamCountReport count_trainable_params(const ParamStore& store) {
  ParamCountReport r;
  r.groups = {{"fusion_tokens", 0}, {"mm_blocks", 0}, {"gates", 0},
              {"av_encoder", 0},    {"heads", 0},     {"other", 0}};
  for (const auto& [name, t] : store.items()) {
    if (!t.requires_grad()) continue;
    const size_t n = t.numel();
    std::string group = "other";
    if (name == "fusion_tokens") {
      group = "fusion_tokens";
    } else if (name.rfind("mm.", 0) == 0) {
      const bool gate = name.size() >= 3 && (name.compare(name.size() - 3, 3, ".a1") == 0 ||
                                             name.compare(name.size() - 3, 3, ".a2") == 0);
      group = gate ? "gates" : "mm_blocks";
    } else if (name.rfind("av.", 0) == 0) {
      group = "av_encoder";
    } else if (name.rfind("head.", 0) == 0) {
      group = "heads";
    }
    r.groups[group] += n;
    r.total += n;
  }
  return r;
}

// Closed-form count of trainable scalars in one MM block, for cross-checking
// the enumerated table. d = d_t, hidden = 4d.
inline size_t mm_block_param_formula(const MlmConfig& c) {
  const size_t d = static_cast<size_t>(c.d_t);
  const size_t d_av = static_cast<size_t>(c.d_av);
  const size_t gca_norm = 2 * d;
  const size_t gca_attn = (d * d + d) * 2        // q, o
                          + (d_av * d + d) * 2;  // k, v
  if (!c.ffw_enabled) return gca_norm + gca_attn;
  const size_t ffw_norm = 2 * d;
  size_t ffw_count;
  if (c.ffw_ft == FfwFt::lora) {
    const size_t r = static_cast<size_t>(c.lora_rank);
    ffw_count = r * (d + 4 * d)     // fc1: A [d,r] + B [r,4d]
                + r * (4 * d + d);  // fc2: A [4d,r] + B [r,d]
  } else {
    ffw_count = d * 4 * d + 4 * d   // fc1
                + 4 * d * d + d;    // fc2
  }
  return gca_norm + gca_attn + ffw_norm + ffw_count;
}

}  // namespace dmlf
