// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Prediction heads and the combined objective. The task head is a two-layer
// MLP over [<z> || x_tK || <x_f>]; the three modality heads are independent
// affine maps whose inputs keep them unimodal by construction. The total
// loss is L1 on the task head plus weighted auxiliary L1 terms and a
// reweighted next-token LM loss; a zero weight removes a term exactly.

#pragma once

#include <string>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/nn.hpp"
#include "dmlf/tensor.hpp"

namespace dmlf {

struct HeadsParams {
  FfwParams task;      // (2 d_t + d_av) -> d_t -> 1, GELU
  LinearParams w_av;   // d_av -> 1
  LinearParams w_t;    // d_t -> 1
  LinearParams w_f;    // d_t -> 1
};

inline HeadsParams init_heads(int d_t, int d_av, Rng& rng, bool trainable = true) {
  HeadsParams p;
  p.task = init_ffw(2 * d_t + d_av, d_t, 1, rng, Act::gelu, trainable);
  p.w_av = init_linear(d_av, 1, rng, trainable);
  p.w_t = init_linear(d_t, 1, rng, trainable);
  p.w_f = init_linear(d_t, 1, rng, trainable);
  return p;
}

inline void register_params(ParamStore& s, const HeadsParams& p) {
  register_params(s, "head.task", p.task);
  register_params(s, "head.w_av", p.w_av);
  register_params(s, "head.w_t", p.w_t);
  register_params(s, "head.w_f", p.w_f);
}

// y_o = g([<z> || x_tK || <x_f>]), a scalar tensor on the graph.
inline Tensor task_head(const Tensor& z_mean, const Tensor& x_tK, const Tensor& xf_mean,
                        const FfwParams& g) {
  require(z_mean.ndim() == 1 && x_tK.ndim() == 1 && xf_mean.ndim() == 1,
          ErrorCategory::dimension, "task head expects 1-D pooled inputs");
  Tensor in = concat({z_mean, x_tK, xf_mean}, 0);
  require(in.dim(0) == g.fc1.W.dim(0), ErrorCategory::config,
          "task head width mismatch: input " + std::to_string(in.dim(0)) + ", params expect " +
              std::to_string(g.fc1.W.dim(0)));
  return reshape(ffw(reshape(in, {1, in.dim(0)}), g), {1});
}

struct HeadOutputs {
  Tensor y_o;   // task prediction
  Tensor y_av;  // audiovisual-only head
  Tensor y_t;   // text-only head
  Tensor y_f;   // fusion-token head
};

inline Tensor affine_scalar(const Tensor& x, const LinearParams& w) {
  return reshape(linear(reshape(x, {1, x.dim(0)}), w), {1});
}

inline HeadOutputs modality_heads(const Tensor& z_mean, const Tensor& x_tK,
                                  const Tensor& xf_mean, const HeadsParams& p) {
  HeadOutputs out;
  out.y_o = task_head(z_mean, x_tK, xf_mean, p.task);
  out.y_av = affine_scalar(z_mean, p.w_av);
  out.y_t = affine_scalar(x_tK, p.w_t);
  out.y_f = affine_scalar(xf_mean, p.w_f);
  return out;
}

// Mean next-token cross-entropy over the language positions: targets are the
// ids shifted left; the final position (no successor) and padded positions
// are excluded.
inline Tensor lm_loss(const Tensor& lm_logits, const std::vector<int>& token_ids,
                      const std::vector<uint8_t>& pad_mask = {}) {
  require(lm_logits.ndim() == 2, ErrorCategory::dimension, "lm_logits must be [L_t, vocab]");
  const int L = lm_logits.dim(0);
  require(static_cast<int>(token_ids.size()) == L, ErrorCategory::dimension,
          "token id count does not match logits length");
  if (!pad_mask.empty())
    require(static_cast<int>(pad_mask.size()) == L, ErrorCategory::dimension,
            "pad mask length mismatch");
  std::vector<int> targets(static_cast<size_t>(L), 0);
  std::vector<uint8_t> valid(static_cast<size_t>(L), 0);
  for (int i = 0; i + 1 < L; ++i) {
    const bool here = pad_mask.empty() || pad_mask[static_cast<size_t>(i)];
    const bool next = pad_mask.empty() || pad_mask[static_cast<size_t>(i + 1)];
    if (here && next) {
      targets[static_cast<size_t>(i)] = token_ids[static_cast<size_t>(i + 1)];
      valid[static_cast<size_t>(i)] = 1;
    }
  }
  return cross_entropy_rows(lm_logits, targets, valid);
}

struct LossWeights {
  float lambda_av = 1.0f;
  float lambda_t = 1.0f;
  float lambda_f = 1.0f;
  float lambda_lm = 1.0f;
};

inline void validate_loss_weights(const LossWeights& w) {
  require(w.lambda_av >= 0 && w.lambda_t >= 0 && w.lambda_f >= 0 && w.lambda_lm >= 0,
          ErrorCategory::config, "loss weights must be non-negative");
}

struct LossBreakdown {
  Tensor total;     // scalar on the graph
  float msa = 0.0f; // L1(y, y_o)
  float aux_av = 0.0f;  // weighted contributions; they sum to `total_value`
  float aux_t = 0.0f;
  float aux_f = 0.0f;
  float lm = 0.0f;
  float total_value = 0.0f;
};

// Per-sample objective. `lm` may be undefined (λ_lm = 0 skips the term and
// the graph never touches it).
inline LossBreakdown total_loss(float y, const HeadOutputs& h, const Tensor& lm,
                                const LossWeights& w) {
  validate_loss_weights(w);
  Tensor label = Tensor::scalar(y);
  LossBreakdown b;
  Tensor total = abs(sub(h.y_o, label));
  b.msa = total.item();
  if (w.lambda_av > 0.0f) {
    Tensor term = scale(abs(sub(h.y_av, label)), w.lambda_av);
    b.aux_av = term.item();
    total = add(total, term);
  }
  if (w.lambda_t > 0.0f) {
    Tensor term = scale(abs(sub(h.y_t, label)), w.lambda_t);
    b.aux_t = term.item();
    total = add(total, term);
  }
  if (w.lambda_f > 0.0f) {
    Tensor term = scale(abs(sub(h.y_f, label)), w.lambda_f);
    b.aux_f = term.item();
    total = add(total, term);
  }
  if (w.lambda_lm > 0.0f) {
    require(lm.defined(), ErrorCategory::contract,
            "lambda_lm > 0 but no LM loss was computed");
    Tensor term = scale(lm, w.lambda_lm);
    b.lm = term.item();
    total = add(total, term);
  }
  b.total = total;
  b.total_value = total.item();
  return b;
}

}  // namespace dmlf
