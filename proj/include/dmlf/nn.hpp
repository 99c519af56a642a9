// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Small parameter bundles (linear, norm, feed-forward) and a named parameter
// registry. Parameter construction order is fixed by the calling code, so a
// single RNG stream reproduces initialization exactly.

#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/rng.hpp"
#include "dmlf/tensor.hpp"

namespace dmlf {

struct LinearParams {
  Tensor W;  // [d_in, d_out]
  Tensor b;  // [d_out]
};

inline LinearParams init_linear(int d_in, int d_out, Rng& rng, bool trainable = true) {
  require(d_in > 0 && d_out > 0, ErrorCategory::config, "linear dims must be positive");
  LinearParams p;
  p.W = Tensor::zeros({d_in, d_out}, trainable);
  fill_xavier(p.W, rng);
  p.b = Tensor::zeros({d_out}, trainable);
  return p;
}

inline Tensor linear(const Tensor& x, const LinearParams& p) {
  return add(matmul(x, p.W), p.b);
}

struct NormParams {
  Tensor gain;  // [d]
  Tensor bias;  // [d]
};

inline NormParams init_norm(int d, bool trainable = true) {
  NormParams p;
  p.gain = Tensor::full({d}, 1.0f, trainable);
  p.bias = Tensor::zeros({d}, trainable);
  return p;
}

inline Tensor norm(const Tensor& x, const NormParams& p) {
  return layer_norm(x, p.gain, p.bias);
}

struct FfwParams {
  LinearParams fc1;  // d -> hidden
  LinearParams fc2;  // hidden -> d_out
  Act act = Act::gelu;
};

inline FfwParams init_ffw(int d_in, int hidden, int d_out, Rng& rng, Act act = Act::gelu,
                          bool trainable = true) {
  FfwParams p;
  p.fc1 = init_linear(d_in, hidden, rng, trainable);
  p.fc2 = init_linear(hidden, d_out, rng, trainable);
  p.act = act;
  return p;
}

inline Tensor ffw(const Tensor& x, const FfwParams& p) {
  return linear(activation(linear(x, p.fc1), p.act), p.fc2);
}

// Name -> tensor registry. std::map keeps iteration sorted by name, which
// fixes checkpoint layout and optimizer traversal order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor t) {
    require(t.defined(), ErrorCategory::contract, "registering undefined tensor '" + name + "'");
    auto [it, inserted] = params_.emplace(name, std::move(t));
    require(inserted, ErrorCategory::contract, "duplicate parameter name '" + name + "'");
  }

  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  Tensor& at(const std::string& name) {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorCategory::contract, "unknown parameter '" + name + "'");
    return it->second;
  }
  const Tensor& at(const std::string& name) const {
    auto it = params_.find(name);
    require(it != params_.end(), ErrorCategory::contract, "unknown parameter '" + name + "'");
    return it->second;
  }

  std::map<std::string, Tensor>& items() { return params_; }
  const std::map<std::string, Tensor>& items() const { return params_; }
  size_t size() const { return params_.size(); }

  std::vector<std::pair<std::string, Tensor>> trainable() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (const auto& [name, t] : params_) {
      if (t.requires_grad()) out.emplace_back(name, t);
    }
    return out;
  }

  size_t count_trainable_scalars() const {
    size_t n = 0;
    for (const auto& [name, t] : params_) {
      if (t.requires_grad()) n += t.numel();
    }
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
  }

 private:
  std::map<std::string, Tensor> params_;
};

inline void register_params(ParamStore& s, const std::string& prefix, const LinearParams& p) {
  s.add(prefix + ".W", p.W);
  s.add(prefix + ".b", p.b);
}

inline void register_params(ParamStore& s, const std::string& prefix, const NormParams& p) {
  s.add(prefix + ".gain", p.gain);
  s.add(prefix + ".bias", p.bias);
}

inline void register_params(ParamStore& s, const std::string& prefix, const FfwParams& p) {
  register_params(s, prefix + ".fc1", p.fc1);
  register_params(s, prefix + ".fc2", p.fc2);
}

}  // namespace dmlf
