// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference gradient verification. Compares analytic gradients from
// backward() against central differences of a scalar-loss closure, sampling
// a few coordinates from every named parameter group so large tensors don't
// blow up the runtime.

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/rng.hpp"
#include "dmlf/tensor.hpp"

namespace dmlf {

struct GradCheckEntry {
  std::string group;
  size_t index = 0;
  float analytic = 0.0f;
  float numeric = 0.0f;
  float rel_err = 0.0f;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  float max_rel_err = 0.0f;
  std::string worst_group;
  size_t worst_index = 0;
  bool passed = false;
  float tolerance = 0.0f;
};

struct GradCheckOptions {
  float eps = 1e-3f;          // central-difference step
  float tolerance = 2e-2f;    // max allowed relative error
  int samples_per_group = 3;  // coordinates sampled per parameter tensor
  uint64_t seed = 17;         // coordinate sampling stream
};

// relative error with a floor so near-zero gradients are judged on an
// absolute scale (f32 forward passes carry ~1e-4 noise)
inline float grad_rel_err(float analytic, float numeric, float floor_val = 0.05f) {
  const float denom = std::max({std::fabs(analytic), std::fabs(numeric), floor_val});
  return std::fabs(analytic - numeric) / denom;
}

// `params` are named leaf tensors with requires_grad=true; `loss_fn` must
// rebuild the graph from current parameter values and return the scalar loss.
// The closure is evaluated twice at the unperturbed point first; disagreement
// means the pipeline is not deterministic, which invalidates the check.
inline GradCheckReport grad_check(const std::vector<std::pair<std::string, Tensor>>& params,
                                  const std::function<Tensor()>& loss_fn,
                                  const GradCheckOptions& opt = {}) {
  require(!params.empty(), ErrorCategory::contract, "grad_check needs at least one parameter");
  for (const auto& [name, t] : params) {
    require(t.requires_grad(), ErrorCategory::contract,
            "grad_check parameter '" + name + "' does not require grad");
    require(t.is_leaf(), ErrorCategory::contract,
            "grad_check parameter '" + name + "' is not a leaf");
  }

  const float f0 = loss_fn().item();
  const float f0b = loss_fn().item();
  require(f0 == f0b, ErrorCategory::reproducibility,
          "loss closure is not deterministic; gradient check would be meaningless");

  for (const auto& [name, t] : params) const_cast<Tensor&>(t).zero_grad();
  Tensor loss = loss_fn();
  backward(loss);

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  Rng rng = Rng::derive(opt.seed, 0);

  for (const auto& [name, t] : params) {
    Tensor& p = const_cast<Tensor&>(t);
    require(p.has_grad(), ErrorCategory::contract,
            "no gradient reached parameter '" + name + "'");
    const size_t n = p.numel();
    const int k = std::min<size_t>(static_cast<size_t>(opt.samples_per_group), n);
    for (int s = 0; s < k; ++s) {
      const size_t idx = (n <= static_cast<size_t>(opt.samples_per_group))
                             ? static_cast<size_t>(s)
                             : static_cast<size_t>(rng.uniform_int(static_cast<uint64_t>(n)));
      const float orig = p.data()[idx];
      p.data()[idx] = orig + opt.eps;
      const float fp = loss_fn().item();
      p.data()[idx] = orig - opt.eps;
      const float fm = loss_fn().item();
      p.data()[idx] = orig;

      GradCheckEntry e;
      e.group = name;
      e.index = idx;
      e.analytic = p.grad()[idx];
      e.numeric = (fp - fm) / (2.0f * opt.eps);
      e.rel_err = grad_rel_err(e.analytic, e.numeric);
      if (e.rel_err > report.max_rel_err) {
        report.max_rel_err = e.rel_err;
        report.worst_group = e.group;
        report.worst_index = e.index;
      }
      report.entries.push_back(std::move(e));
    }
  }
  report.passed = report.max_rel_err <= opt.tolerance;
  return report;
}

}  // namespace dmlf
