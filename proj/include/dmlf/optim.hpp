// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// AdamW with decoupled weight decay plus the warmup/cosine learning-rate
// schedule. Frozen parameters (requires_grad == false) are skipped entirely;
// gains, biases, gate scalars and fusion tokens are excluded from decay.

#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/nn.hpp"

namespace dmlf {

struct AdamWConfig {
  float lr = 1e-4f;
  float beta1 = 0.9f;
  float beta2 = 0.95f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
};

struct AdamWState {
  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  std::map<std::string, Moments> moments;
  uint64_t step = 0;
};

// Parameters whose names end in these suffixes are 1-D scale/shift/gate
// state; decaying them toward zero fights their role rather than
// regularizing capacity.
inline bool default_no_decay(const std::string& name) {
  for (const char* sfx : {".b", ".bias", ".gain", ".a1", ".a2", "fusion_tokens"}) {
    const size_t n = std::string(sfx).size();
    if (name.size() >= n && name.compare(name.size() - n, n, sfx) == 0) return true;
  }
  return false;
}

// One AdamW step over every trainable parameter that received a gradient.
// Decay is decoupled: applied directly to weights, never through moments.
inline void adamw_step(ParamStore& params, AdamWState& state, const AdamWConfig& cfg,
                       float lr_t,
                       const std::function<bool(const std::string&)>& no_decay = default_no_decay) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(static_cast<double>(cfg.beta1), static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(static_cast<double>(cfg.beta2), static_cast<double>(state.step));
  for (auto& [name, t] : params.items()) {
    if (!t.requires_grad()) continue;
    if (!t.has_grad()) continue;  // unreached parameters keep their values
    auto& mom = state.moments[name];
    if (mom.m.size() != t.numel()) {
      mom.m.assign(t.numel(), 0.0f);
      mom.v.assign(t.numel(), 0.0f);
    }
    const float decay = no_decay(name) ? 0.0f : cfg.weight_decay;
    auto& w = t.data();
    const auto& g = t.grad();
    for (size_t i = 0; i < w.size(); ++i) {
      require(std::isfinite(g[i]), ErrorCategory::degenerate,
              "non-finite gradient in parameter '" + name + "' at index " + std::to_string(i));
      mom.m[i] = cfg.beta1 * mom.m[i] + (1.0f - cfg.beta1) * g[i];
      mom.v[i] = cfg.beta2 * mom.v[i] + (1.0f - cfg.beta2) * g[i] * g[i];
      const float mhat = static_cast<float>(mom.m[i] / bc1);
      const float vhat = static_cast<float>(mom.v[i] / bc2);
      w[i] -= lr_t * (mhat / (std::sqrt(vhat) + cfg.eps) + decay * w[i]);
    }
  }
}

// Linear warmup 0 -> lr_max over warmup_steps, then cosine lr_max -> lr_min
// at total_steps. Continuous at the boundary; steps past the end hold lr_min.
inline float lr_schedule(uint64_t step, uint64_t warmup_steps, uint64_t total_steps,
                         float lr_max, float lr_min) {
  require(total_steps > warmup_steps, ErrorCategory::config,
          "total_steps must exceed warmup_steps");
  require(lr_max >= lr_min && lr_min >= 0.0f, ErrorCategory::config,
          "need lr_max >= lr_min >= 0");
  if (warmup_steps > 0 && step <= warmup_steps) {
    return lr_max * static_cast<float>(step) / static_cast<float>(warmup_steps);
  }
  if (step >= total_steps) return lr_min;
  const double t = static_cast<double>(step - warmup_steps) /
                   static_cast<double>(total_steps - warmup_steps);
  return static_cast<float>(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(t * 3.14159265358979323846)));
}

}  // namespace dmlf
