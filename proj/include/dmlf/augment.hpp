// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Language-embedding regularization. The main augmentation softly permutes
// values along the time axis, independently per feature dimension; noise
// injection and dropout are the ablation alternatives. All of it applies to
// language embeddings only, during training only — never to fusion tokens
// and never at evaluation.

#pragma once

#include <string>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/rng.hpp"
#include "dmlf/tensor.hpp"

namespace dmlf {

enum class SeqAugMode { permute, resample };

inline SeqAugMode seqaug_mode_from_string(const std::string& s) {
  if (s == "permute") return SeqAugMode::permute;
  if (s == "resample") return SeqAugMode::resample;
  fail(ErrorCategory::config, "unknown seqaug mode '" + s + "'");
}

inline std::string seqaug_mode_to_string(SeqAugMode m) {
  return m == SeqAugMode::permute ? "permute" : "resample";
}

// Each feature dimension is selected independently with probability p;
// selected dimensions have their values along the time axis permuted
// (permute) or redrawn with replacement from the same sequence's timesteps
// (resample). Unselected dimensions pass through bit-unchanged.
//
// Draw order per dimension: one selection draw, then (if selected) one
// permutation / L resampling draws — replayable from the rng state.
inline Tensor seqaug(const Tensor& X_t, float p, SeqAugMode mode, Rng& rng) {
  require(p >= 0.0f && p <= 1.0f, ErrorCategory::config,
          "seqaug selection probability must be in [0,1]");
  require(X_t.ndim() == 2, ErrorCategory::dimension, "seqaug expects [L_t, d] input");
  const int L = X_t.dim(0);
  const int d = X_t.dim(1);

  // src[t*d + j] = source timestep for output position (t, j)
  std::vector<int> src(static_cast<size_t>(L) * d);
  for (int t = 0; t < L; ++t)
    for (int j = 0; j < d; ++j) src[static_cast<size_t>(t) * d + j] = t;
  for (int j = 0; j < d; ++j) {
    if (!rng.bernoulli(p)) continue;
    if (mode == SeqAugMode::permute) {
      auto perm = rng.permutation(L);
      for (int t = 0; t < L; ++t) src[static_cast<size_t>(t) * d + j] = perm[static_cast<size_t>(t)];
    } else {
      for (int t = 0; t < L; ++t)
        src[static_cast<size_t>(t) * d + j] = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(L)));
    }
  }

  std::vector<float> out(X_t.numel());
  const float* px = X_t.data().data();
  for (int t = 0; t < L; ++t)
    for (int j = 0; j < d; ++j)
      out[static_cast<size_t>(t) * d + j] = px[static_cast<size_t>(src[static_cast<size_t>(t) * d + j]) * d + j];

  detail::Node* xn = X_t.node();
  return make_op(X_t.shape(), std::move(out), {X_t},
                 [xn, src = std::move(src), L, d](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (int t = 0; t < L; ++t)
                     for (int j = 0; j < d; ++j)
                       xn->grad[static_cast<size_t>(src[static_cast<size_t>(t) * d + j]) * d + j] +=
                           self.grad[static_cast<size_t>(t) * d + j];
                 });
}

enum class AltAugKind { noise, dropout };

// noise: adds zero-mean Gaussian with std-dev sigma elementwise.
// dropout: zeroes elements with probability q and rescales survivors by
// 1/(1-q), preserving expectation.
inline Tensor alt_augment(const Tensor& X_t, AltAugKind kind, float param, Rng& rng) {
  if (kind == AltAugKind::noise) {
    require(param >= 0.0f, ErrorCategory::config, "noise sigma must be >= 0");
    if (param == 0.0f) return X_t;
    Tensor eps = Tensor::zeros(X_t.shape());
    fill_normal(eps, rng, param);
    return add(X_t, eps);
  }
  require(param >= 0.0f && param < 1.0f, ErrorCategory::config, "dropout q must be in [0,1)");
  if (param == 0.0f) return X_t;
  Tensor mask = Tensor::zeros(X_t.shape());
  const float keep_scale = 1.0f / (1.0f - param);
  for (float& v : mask.data()) v = rng.bernoulli(param) ? 0.0f : keep_scale;
  return mul(X_t, mask);
}

}  // namespace dmlf
