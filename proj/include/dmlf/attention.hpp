// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// The three attention flavors the model composes: bidirectional
// self-attention (encoder layer), causal self-attention (decoder layer) and
// gated cross-attention, where audiovisual features act as keys/values and
// fusion tokens as queries. All layers are pre-norm residual.

#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/nn.hpp"
#include "dmlf/tensor.hpp"

namespace dmlf {

struct AttentionParams {
  LinearParams q;  // [d_model, d_model]
  LinearParams k;  // [d_kv_in, d_model]
  LinearParams v;  // [d_kv_in, d_model]
  LinearParams o;  // [d_model, d_model]
  int n_heads = 1;
  int d_model = 0;
  int d_kv_in = 0;
};

inline AttentionParams init_attention(int d_model, int d_kv_in, int n_heads, Rng& rng,
                                      bool trainable = true) {
  require(n_heads > 0, ErrorCategory::config, "n_heads must be positive");
  require(d_model % n_heads == 0, ErrorCategory::config,
          "d_model=" + std::to_string(d_model) + " not divisible by n_heads=" +
              std::to_string(n_heads));
  AttentionParams p;
  p.q = init_linear(d_model, d_model, rng, trainable);
  p.k = init_linear(d_kv_in, d_model, rng, trainable);
  p.v = init_linear(d_kv_in, d_model, rng, trainable);
  p.o = init_linear(d_model, d_model, rng, trainable);
  p.n_heads = n_heads;
  p.d_model = d_model;
  p.d_kv_in = d_kv_in;
  return p;
}

inline void register_params(ParamStore& s, const std::string& prefix, const AttentionParams& p) {
  register_params(s, prefix + ".q", p.q);
  register_params(s, prefix + ".k", p.k);
  register_params(s, prefix + ".v", p.v);
  register_params(s, prefix + ".o", p.o);
}

// Records the score-matrix dimensions of every attention call it is handed
// to; the memory-budget analysis reads measured shapes from here.
struct AttnStats {
  struct Entry {
    int lq = 0;
    int lk = 0;
    int n_heads = 0;
  };
  std::vector<Entry> scores;

  size_t total_score_elements() const {
    size_t n = 0;
    for (const auto& e : scores)
      n += static_cast<size_t>(e.lq) * static_cast<size_t>(e.lk) * static_cast<size_t>(e.n_heads);
    return n;
  }
};

// Scaled dot-product multi-head attention. `mask` is boolean over keys:
// shape [Lq, Lk] or [Lk] (broadcast over queries); true = may attend.
inline Tensor multihead_attention(const Tensor& q_in, const Tensor& kv_in,
                                  const AttentionParams& p,
                                  const std::optional<Mask>& mask = std::nullopt,
                                  AttnStats* stats = nullptr) {
  require(q_in.ndim() == 2 && kv_in.ndim() == 2, ErrorCategory::dimension,
          "attention inputs must be 2-D [length, width]");
  require(q_in.dim(1) == p.d_model, ErrorCategory::dimension, "q_in width != d_model");
  require(kv_in.dim(1) == p.d_kv_in, ErrorCategory::dimension, "kv_in width != d_kv_in");
  const int lq = q_in.dim(0);
  const int lk = kv_in.dim(0);
  const int dh = p.d_model / p.n_heads;
  if (mask) {
    require(mask->shape == Shape{lq, lk} || mask->shape == Shape{lk},
            ErrorCategory::dimension, "attention mask must be [Lq,Lk] or [Lk]");
  }
  if (stats) stats->scores.push_back({lq, lk, p.n_heads});

  Tensor Q = linear(q_in, p.q);   // [lq, d_model]
  Tensor K = linear(kv_in, p.k);  // [lk, d_model]
  Tensor V = linear(kv_in, p.v);  // [lk, d_model]

  std::vector<int> head_sizes(static_cast<size_t>(p.n_heads), dh);
  auto Qh = split(Q, head_sizes, 1);
  auto Kh = split(K, head_sizes, 1);
  auto Vh = split(V, head_sizes, 1);

  const float inv_sqrt_dh = 1.0f / std::sqrt(static_cast<float>(dh));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(p.n_heads));
  for (int h = 0; h < p.n_heads; ++h) {
    Tensor scores = scale(matmul(Qh[static_cast<size_t>(h)],
                                 transpose_last2(Kh[static_cast<size_t>(h)])),
                          inv_sqrt_dh);                     // [lq, lk]
    Tensor attn = softmax_lastdim(scores, mask);            // degenerate rows raise
    heads.push_back(matmul(attn, Vh[static_cast<size_t>(h)]));  // [lq, dh]
  }
  Tensor merged = (p.n_heads == 1) ? heads[0] : concat(heads, 1);
  return linear(merged, p.o);
}

// Boolean mask over a combined [language || fusion] sequence of length
// L_t + n_f: position i may attend j iff j <= i. Fusion tokens occupy the
// final n_f positions, so they see all language tokens and preceding fusion
// tokens while no language token sees any fusion token.
inline Mask causal_mask(int L_t, int n_f) {
  require(L_t >= 1, ErrorCategory::dimension, "causal_mask needs L_t >= 1");
  require(n_f >= 0, ErrorCategory::dimension, "causal_mask needs n_f >= 0");
  const int L = L_t + n_f;
  Mask m{{L, L}, std::vector<uint8_t>(static_cast<size_t>(L) * L, 0)};
  for (int i = 0; i < L; ++i)
    for (int j = 0; j <= i; ++j) m.allow[static_cast<size_t>(i) * L + j] = 1;
  return m;
}

struct EncoderLayerParams {
  AttentionParams attn;
  NormParams norm1;
  NormParams norm2;
  FfwParams ffw;
};

inline EncoderLayerParams init_encoder_layer(int d, int n_heads, Rng& rng,
                                             bool trainable = true) {
  EncoderLayerParams p;
  p.norm1 = init_norm(d, trainable);
  p.attn = init_attention(d, d, n_heads, rng, trainable);
  p.norm2 = init_norm(d, trainable);
  p.ffw = init_ffw(d, 4 * d, d, rng, Act::gelu, trainable);
  return p;
}

inline void register_params(ParamStore& s, const std::string& prefix,
                            const EncoderLayerParams& p) {
  register_params(s, prefix + ".norm1", p.norm1);
  register_params(s, prefix + ".attn", p.attn);
  register_params(s, prefix + ".norm2", p.norm2);
  register_params(s, prefix + ".ffw", p.ffw);
}

// Pre-norm residual encoder layer: H + SA(Norm(H)), then + FFW(Norm(.)).
// `pad_mask` (shape [L], true = real position) blocks padded keys; padded
// queries still produce defined outputs, which callers ignore.
inline Tensor encoder_layer(const Tensor& H, const EncoderLayerParams& p,
                            const std::optional<Mask>& pad_mask = std::nullopt,
                            AttnStats* stats = nullptr) {
  Tensor n1 = norm(H, p.norm1);
  Tensor A = add(H, multihead_attention(n1, n1, p.attn, pad_mask, stats));
  return add(A, ffw(norm(A, p.norm2), p.ffw));
}

// Causal (decoder-style) pre-norm layer over a combined language+fusion
// sequence: positions 0..L_t-1 are language, the final n_f are fusion.
inline Tensor decoder_layer(const Tensor& H, const EncoderLayerParams& p, int L_t, int n_f,
                            AttnStats* stats = nullptr) {
  require(H.ndim() == 2 && H.dim(0) == L_t + n_f, ErrorCategory::dimension,
          "decoder_layer input length != L_t + n_f");
  Mask m = causal_mask(L_t, n_f);
  Tensor n1 = norm(H, p.norm1);
  Tensor A = add(H, multihead_attention(n1, n1, p.attn, m, stats));
  return add(A, ffw(norm(A, p.norm2), p.ffw));
}

enum class Gating { sigmoid, tanh, none };

inline Gating gating_from_string(const std::string& s) {
  if (s == "sigmoid") return Gating::sigmoid;
  if (s == "tanh") return Gating::tanh;
  if (s == "none") return Gating::none;
  fail(ErrorCategory::config, "unknown gating kind '" + s + "'");
}

inline std::string gating_to_string(Gating g) {
  switch (g) {
    case Gating::sigmoid: return "sigmoid";
    case Gating::tanh: return "tanh";
    case Gating::none: return "none";
  }
  fail(ErrorCategory::contract, "invalid gating enum");
}

// Gate value as a scalar tensor on the graph; `a` is the raw gate parameter.
// sigmoid(0) = 0.5, tanh(0) = 0, none = 1 (and `a` is unused).
inline Tensor gate_value(const Tensor& a, Gating kind) {
  switch (kind) {
    case Gating::sigmoid: return activation(a, Act::sigmoid);
    case Gating::tanh: return activation(a, Act::tanh);
    case Gating::none: return Tensor::scalar(1.0f);
  }
  fail(ErrorCategory::contract, "invalid gating enum");
}

struct GcaParams {
  AttentionParams attn;  // d_model = d (fusion width), d_kv_in = d_av
  NormParams norm;       // over fusion tokens before querying
};

inline GcaParams init_gca(int d, int d_av, int n_heads, Rng& rng, bool trainable = true) {
  GcaParams p;
  p.norm = init_norm(d, trainable);
  p.attn = init_attention(d, d_av, n_heads, rng, trainable);
  return p;
}

inline void register_params(ParamStore& s, const std::string& prefix, const GcaParams& p) {
  register_params(s, prefix + ".norm", p.norm);
  register_params(s, prefix + ".attn", p.attn);
}

// Gated cross-attention residual: Xf + gate(a1) * GCA(Z as keys/values,
// Norm(Xf) as queries). Score matrix is n_f x L_av, never touching the
// language length.
inline Tensor gated_cross_attention(const Tensor& Xf, const Tensor& Z, const GcaParams& p,
                                    const Tensor& a1, Gating kind,
                                    AttnStats* stats = nullptr) {
  require(Xf.ndim() == 2 && Xf.dim(0) >= 1, ErrorCategory::contract,
          "gated cross-attention requires at least one fusion token");
  Tensor att = multihead_attention(norm(Xf, p.norm), Z, p.attn, std::nullopt, stats);
  return add(Xf, mul(att, gate_value(a1, kind)));
}

}  // namespace dmlf
