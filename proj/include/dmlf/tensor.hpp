// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense float32 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle onto a graph node holding a row-major value
// buffer, an optional gradient buffer and, for op results, the parent
// handles plus a backward closure. Composing ops records the graph;
// backward(loss) runs the closures in reverse topological order. Leaves
// accumulate gradients across calls; interior buffers are reset per call.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/rng.hpp"

namespace dmlf {

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
  size_t n = 1;
  for (int d : s) {
    require(d >= 0, ErrorCategory::dimension, "negative dimension in shape");
    n *= static_cast<size_t>(d);
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += std::to_string(s[i]);
    if (i + 1 < s.size()) out += ",";
  }
  return out + "]";
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;  // lazily sized to value.size()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // pushes this->grad into parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  static Tensor from_data(Shape shape, std::vector<float> data, bool requires_grad = false) {
    require(shape_numel(shape) == data.size(), ErrorCategory::dimension,
            "data length does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<float>(n, 0.0f), requires_grad);
  }

  static Tensor full(Shape shape, float v, bool requires_grad = false) {
    size_t n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<float>(n, v), requires_grad);
  }

  static Tensor scalar(float v, bool requires_grad = false) {
    return from_data({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(n_); }

  const Shape& shape() const { return n_->shape; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  size_t numel() const { return n_->value.size(); }

  std::vector<float>& data() { return n_->value; }
  const std::vector<float>& data() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  void set_requires_grad(bool b) { n_->requires_grad = b; }

  bool has_grad() const { return n_->grad.size() == n_->value.size(); }
  std::vector<float>& grad() {
    n_->ensure_grad();
    return n_->grad;
  }
  const std::vector<float>& grad() const {
    require(has_grad(), ErrorCategory::contract, "gradient not populated");
    return n_->grad;
  }
  void zero_grad() {
    if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0f);
  }

  float item() const {
    require(numel() == 1, ErrorCategory::contract,
            "item() on tensor of shape " + shape_str(shape()));
    return n_->value[0];
  }

  bool is_leaf() const { return n_->parents.empty(); }

  detail::Node* node() const { return n_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return n_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  friend Tensor make_op(Shape shape, std::vector<float> value,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn);

  std::shared_ptr<detail::Node> n_;
};

// Creates an op result node. backward_fn may assume this node's grad is
// populated and must accumulate (+=) into parents that require grad.
inline Tensor make_op(Shape shape, std::vector<float> value, std::vector<Tensor> parents,
                      std::function<void(detail::Node&)> backward_fn) {
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  for (const auto& p : parents) {
    if (p.requires_grad()) n->requires_grad = true;
  }
  if (n->requires_grad) {
    n->parents.reserve(parents.size());
    for (const auto& p : parents) n->parents.push_back(p.node_ptr());
    n->backward_fn = std::move(backward_fn);
  }
  struct Access : Tensor {
    explicit Access(std::shared_ptr<detail::Node> n) : Tensor(std::move(n)) {}
  };
  return Access(std::move(n));
}

inline bool all_finite(const Tensor& t) {
  for (float v : t.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

inline void backward(const Tensor& loss) {
  require(loss.defined() && loss.numel() == 1, ErrorCategory::contract,
          "backward requires a scalar loss");
  if (!loss.requires_grad()) return;  // no trainable leaf reachable

  // Iterative topological order over the recorded graph.
  std::vector<detail::Node*> topo;
  std::unordered_set<detail::Node*> visited;
  struct Frame {
    detail::Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  stack.push_back({loss.node(), 0});
  visited.insert(loss.node());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      detail::Node* p = f.n->parents[f.next_parent++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      topo.push_back(f.n);
      stack.pop_back();
    }
  }

  // Interior (op) nodes get fresh gradient buffers each call; leaves keep
  // accumulating across calls.
  for (detail::Node* n : topo) {
    if (!n->parents.empty()) {
      n->grad.assign(n->value.size(), 0.0f);
    } else {
      n->ensure_grad();
    }
  }
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0f;

  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn) n->backward_fn(*n);
  }
}

// ---------------------------------------------------------------------------
// broadcasting helpers (elementwise ops support b == a-shape, b == suffix of
// a-shape, or scalar b)
// ---------------------------------------------------------------------------

namespace detail {

enum class Bcast { same, suffix, scalar };

inline Bcast classify_broadcast(const Shape& a, const Shape& b) {
  if (shape_numel(b) == 1) return Bcast::scalar;
  if (a == b) return Bcast::same;
  if (b.size() <= a.size() &&
      std::equal(b.rbegin(), b.rend(), a.rbegin())) {
    return Bcast::suffix;
  }
  fail(ErrorCategory::dimension,
       "cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise arithmetic
// ---------------------------------------------------------------------------

namespace detail {

template <typename FwdFn, typename BwdAFn, typename BwdBFn>
Tensor binary_op(const Tensor& a, const Tensor& b, FwdFn fwd, BwdAFn bwd_a, BwdBFn bwd_b) {
  const Bcast mode = classify_broadcast(a.shape(), b.shape());
  const size_t na = a.numel();
  const size_t nb = b.numel();
  std::vector<float> out(na);
  const float* pa = a.data().data();
  const float* pb = b.data().data();
  for (size_t i = 0; i < na; ++i) {
    size_t j = (mode == Bcast::same) ? i : (mode == Bcast::scalar ? 0 : i % nb);
    out[i] = fwd(pa[i], pb[j]);
  }
  Node* an = a.node();
  Node* bn = b.node();
  return make_op(a.shape(), std::move(out), {a, b},
                 [an, bn, mode, nb, bwd_a, bwd_b](Node& self) {
                   const size_t n = self.value.size();
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (size_t i = 0; i < n; ++i) {
                       size_t j = (mode == Bcast::same) ? i
                                  : (mode == Bcast::scalar ? 0 : i % nb);
                       an->grad[i] += self.grad[i] * bwd_a(an->value[i], bn->value[j]);
                     }
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (size_t i = 0; i < n; ++i) {
                       size_t j = (mode == Bcast::same) ? i
                                  : (mode == Bcast::scalar ? 0 : i % nb);
                       bn->grad[j] += self.grad[i] * bwd_b(an->value[i], bn->value[j]);
                     }
                   }
                 });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](float x, float y) { return x + y; },
      [](float, float) { return 1.0f; }, [](float, float) { return 1.0f; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](float x, float y) { return x - y; },
      [](float, float) { return 1.0f; }, [](float, float) { return -1.0f; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      a, b, [](float x, float y) { return x * y; },
      [](float, float y) { return y; }, [](float x, float) { return x; });
}

inline Tensor scale(const Tensor& x, float c) {
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * c;
  detail::Node* xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, c](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * c;
  });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---------------------------------------------------------------------------
// matmul  (batched, leading dims broadcast numpy-style)
// ---------------------------------------------------------------------------

namespace detail {

// c[m,n] += a[m,k] * b[k,n]
inline void mm_accum(const float* a, const float* b, float* c, int m, int k, int n,
                     bool transpose_a = false, bool transpose_b = false) {
  if (!transpose_a && !transpose_b) {
    for (int i = 0; i < m; ++i) {
      const float* arow = a + static_cast<size_t>(i) * k;
      float* crow = c + static_cast<size_t>(i) * n;
      for (int p = 0; p < k; ++p) {
        const float av = arow[p];
        if (av == 0.0f) continue;
        const float* brow = b + static_cast<size_t>(p) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (transpose_a && !transpose_b) {
    // a is [k,m] interpreted as aT
    for (int p = 0; p < k; ++p) {
      const float* arow = a + static_cast<size_t>(p) * m;
      const float* brow = b + static_cast<size_t>(p) * n;
      for (int i = 0; i < m; ++i) {
        const float av = arow[i];
        if (av == 0.0f) continue;
        float* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!transpose_a && transpose_b) {
    // b is [n,k] interpreted as bT
    for (int i = 0; i < m; ++i) {
      const float* arow = a + static_cast<size_t>(i) * k;
      float* crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const float* brow = b + static_cast<size_t>(j) * k;
        double acc = 0.0;
        for (int p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * brow[p];
        crow[j] += static_cast<float>(acc);
      }
    }
  } else {
    fail(ErrorCategory::contract, "mm_accum: double transpose unsupported");
  }
}

struct BatchMap {
  Shape batch;              // broadcast batch shape
  std::vector<size_t> sa;   // stride (in batches) per batch dim for a, 0 if broadcast
  std::vector<size_t> sb;
  size_t total = 1;
};

inline BatchMap broadcast_batches(const Shape& a, const Shape& b) {
  const int ba = static_cast<int>(a.size()) - 2;
  const int bb = static_cast<int>(b.size()) - 2;
  const int nd = std::max(ba, bb);
  BatchMap m;
  m.batch.assign(static_cast<size_t>(nd), 1);
  for (int i = 0; i < nd; ++i) {
    int da = (i >= nd - ba) ? a[static_cast<size_t>(i - (nd - ba))] : 1;
    int db = (i >= nd - bb) ? b[static_cast<size_t>(i - (nd - bb))] : 1;
    require(da == db || da == 1 || db == 1, ErrorCategory::dimension,
            "matmul batch dims not broadcastable: " + shape_str(a) + " vs " + shape_str(b));
    m.batch[static_cast<size_t>(i)] = std::max(da, db);
    m.total *= static_cast<size_t>(std::max(da, db));
  }
  // strides in units of "one matrix"
  m.sa.assign(static_cast<size_t>(nd), 0);
  m.sb.assign(static_cast<size_t>(nd), 0);
  size_t stride = 1;
  for (int i = ba - 1; i >= 0; --i) {
    m.sa[static_cast<size_t>(i + (nd - ba))] = (a[static_cast<size_t>(i)] == 1) ? 0 : stride;
    stride *= static_cast<size_t>(a[static_cast<size_t>(i)]);
  }
  stride = 1;
  for (int i = bb - 1; i >= 0; --i) {
    m.sb[static_cast<size_t>(i + (nd - bb))] = (b[static_cast<size_t>(i)] == 1) ? 0 : stride;
    stride *= static_cast<size_t>(b[static_cast<size_t>(i)]);
  }
  return m;
}

inline void batch_offsets(const BatchMap& m, size_t flat, size_t& off_a, size_t& off_b) {
  off_a = 0;
  off_b = 0;
  size_t rem = flat;
  for (size_t i = m.batch.size(); i-- > 0;) {
    size_t idx = rem % static_cast<size_t>(m.batch[i]);
    rem /= static_cast<size_t>(m.batch[i]);
    off_a += idx * m.sa[i];
    off_b += idx * m.sb[i];
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() >= 2 && b.ndim() >= 2, ErrorCategory::dimension,
          "matmul requires at least 2-D operands");
  const int m = a.dim(a.ndim() - 2);
  const int k = a.dim(a.ndim() - 1);
  const int k2 = b.dim(b.ndim() - 2);
  const int n = b.dim(b.ndim() - 1);
  require(k == k2, ErrorCategory::dimension,
          "matmul inner dims mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));

  detail::BatchMap bm = detail::broadcast_batches(a.shape(), b.shape());
  Shape out_shape = bm.batch;
  out_shape.push_back(m);
  out_shape.push_back(n);

  const size_t mat_a = static_cast<size_t>(m) * k;
  const size_t mat_b = static_cast<size_t>(k) * n;
  const size_t mat_c = static_cast<size_t>(m) * n;
  std::vector<float> out(bm.total * mat_c, 0.0f);
  for (size_t bi = 0; bi < bm.total; ++bi) {
    size_t oa, ob;
    detail::batch_offsets(bm, bi, oa, ob);
    detail::mm_accum(a.data().data() + oa * mat_a, b.data().data() + ob * mat_b,
                     out.data() + bi * mat_c, m, k, n);
  }

  detail::Node* an = a.node();
  detail::Node* bn = b.node();
  return make_op(std::move(out_shape), std::move(out), {a, b},
                 [an, bn, bm, m, k, n, mat_a, mat_b, mat_c](detail::Node& self) {
                   for (size_t bi = 0; bi < bm.total; ++bi) {
                     size_t oa, ob;
                     detail::batch_offsets(bm, bi, oa, ob);
                     const float* g = self.grad.data() + bi * mat_c;
                     if (an->requires_grad) {
                       an->ensure_grad();
                       // dA += dC * B^T
                       detail::mm_accum(g, bn->value.data() + ob * mat_b,
                                        an->grad.data() + oa * mat_a, m, n, k,
                                        false, true);
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       // dB += A^T * dC
                       detail::mm_accum(an->value.data() + oa * mat_a, g,
                                        bn->grad.data() + ob * mat_b, k, m, n,
                                        true, false);
                     }
                   }
                 });
}

// Swaps the last two dims (materialized copy).
inline Tensor transpose_last2(const Tensor& x) {
  require(x.ndim() >= 2, ErrorCategory::dimension, "transpose_last2 needs >= 2-D");
  const int r = x.dim(x.ndim() - 2);
  const int c = x.dim(x.ndim() - 1);
  Shape out_shape = x.shape();
  std::swap(out_shape[out_shape.size() - 2], out_shape[out_shape.size() - 1]);
  const size_t mats = x.numel() / (static_cast<size_t>(r) * c);
  std::vector<float> out(x.numel());
  const float* px = x.data().data();
  for (size_t bimat = 0; bimat < mats; ++bimat) {
    const float* src = px + bimat * r * c;
    float* dst = out.data() + bimat * r * c;
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) dst[static_cast<size_t>(j) * r + i] = src[static_cast<size_t>(i) * c + j];
  }
  detail::Node* xn = x.node();
  return make_op(std::move(out_shape), std::move(out), {x},
                 [xn, r, c, mats](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (size_t bimat = 0; bimat < mats; ++bimat) {
                     const float* g = self.grad.data() + bimat * r * c;
                     float* dst = xn->grad.data() + bimat * r * c;
                     for (int j = 0; j < c; ++j)
                       for (int i = 0; i < r; ++i)
                         dst[static_cast<size_t>(i) * c + j] += g[static_cast<size_t>(j) * r + i];
                   }
                 });
}

// ---------------------------------------------------------------------------
// masked softmax over the last dim
// ---------------------------------------------------------------------------

// Boolean mask: true/1 = position participates. Shape must equal x's shape or
// the last dim of x (broadcast over rows).
struct Mask {
  Shape shape;
  std::vector<uint8_t> allow;

  static Mask ones(Shape s) {
    size_t n = shape_numel(s);
    return Mask{std::move(s), std::vector<uint8_t>(n, 1)};
  }
};

inline Tensor softmax_lastdim(const Tensor& x, const std::optional<Mask>& mask = std::nullopt) {
  require(x.ndim() >= 1, ErrorCategory::dimension, "softmax on 0-d tensor");
  const int last = x.dim(x.ndim() - 1);
  const size_t rows = x.numel() / static_cast<size_t>(last);
  const uint8_t* mk = nullptr;
  bool mask_per_row = false;
  if (mask) {
    if (mask->shape == x.shape()) {
      mask_per_row = false;
    } else if (mask->shape == Shape{last}) {
      mask_per_row = true;
    } else {
      fail(ErrorCategory::dimension, "mask shape " + shape_str(mask->shape) +
                                         " not broadcastable to " + shape_str(x.shape()));
    }
    mk = mask->allow.data();
  }

  std::vector<float> out(x.numel(), 0.0f);
  const float* px = x.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const float* xr = px + r * last;
    float* yr = out.data() + r * last;
    const uint8_t* mr = mk ? (mask_per_row ? mk : mk + r * last) : nullptr;
    float mx = -std::numeric_limits<float>::infinity();
    for (int j = 0; j < last; ++j) {
      if (!mr || mr[j]) mx = std::max(mx, xr[j]);
    }
    require(std::isfinite(mx) || !mk, ErrorCategory::degenerate,
            "softmax row " + std::to_string(r) + " fully masked");
    double s = 0.0;
    for (int j = 0; j < last; ++j) {
      if (!mr || mr[j]) {
        yr[j] = std::exp(xr[j] - mx);
        s += yr[j];
      }
    }
    const float inv = static_cast<float>(1.0 / s);
    for (int j = 0; j < last; ++j) {
      if (!mr || mr[j]) yr[j] *= inv;
    }
  }

  detail::Node* xn = x.node();
  std::vector<uint8_t> mask_copy = mask ? mask->allow : std::vector<uint8_t>();
  return make_op(x.shape(), std::move(out), {x},
                 [xn, last, rows, mask_copy, mask_per_row](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   const uint8_t* mk2 = mask_copy.empty() ? nullptr : mask_copy.data();
                   for (size_t r = 0; r < rows; ++r) {
                     const float* y = self.value.data() + r * last;
                     const float* gy = self.grad.data() + r * last;
                     float* gx = xn->grad.data() + r * last;
                     const uint8_t* mr =
                         mk2 ? (mask_per_row ? mk2 : mk2 + r * last) : nullptr;
                     double dot = 0.0;
                     for (int j = 0; j < last; ++j) {
                       if (!mr || mr[j]) dot += static_cast<double>(gy[j]) * y[j];
                     }
                     for (int j = 0; j < last; ++j) {
                       if (!mr || mr[j]) {
                         gx[j] += y[j] * (gy[j] - static_cast<float>(dot));
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// normalization
// ---------------------------------------------------------------------------

inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps = 1e-5f) {
  require(x.ndim() >= 1, ErrorCategory::dimension, "layer_norm on 0-d tensor");
  const int d = x.dim(x.ndim() - 1);
  require(gain.shape() == Shape{d} && bias.shape() == Shape{d}, ErrorCategory::dimension,
          "layer_norm gain/bias must have shape [" + std::to_string(d) + "]");
  require(eps > 0.0f, ErrorCategory::config, "layer_norm eps must be positive");
  const size_t rows = x.numel() / static_cast<size_t>(d);

  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> inv_std(rows);
  const float* px = x.data().data();
  const float* pg = gain.data().data();
  const float* pb = bias.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const float* xr = px + r * d;
    double mean = 0.0;
    for (int j = 0; j < d; ++j) mean += xr[j];
    mean /= d;
    double var = 0.0;
    for (int j = 0; j < d; ++j) {
      double c = xr[j] - mean;
      var += c * c;
    }
    var /= d;
    const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
    inv_std[r] = is;
    float* hr = xhat.data() + r * d;
    float* yr = out.data() + r * d;
    for (int j = 0; j < d; ++j) {
      hr[j] = (xr[j] - static_cast<float>(mean)) * is;
      yr[j] = hr[j] * pg[j] + pb[j];
    }
  }

  detail::Node* xn = x.node();
  detail::Node* gn = gain.node();
  detail::Node* bn = bias.node();
  return make_op(x.shape(), std::move(out), {x, gain, bias},
                 [xn, gn, bn, d, rows, xhat = std::move(xhat),
                  inv_std = std::move(inv_std)](detail::Node& self) {
                   for (size_t r = 0; r < rows; ++r) {
                     const float* gy = self.grad.data() + r * d;
                     const float* hr = xhat.data() + r * d;
                     if (gn->requires_grad) {
                       gn->ensure_grad();
                       for (int j = 0; j < d; ++j) gn->grad[j] += gy[j] * hr[j];
                     }
                     if (bn->requires_grad) {
                       bn->ensure_grad();
                       for (int j = 0; j < d; ++j) bn->grad[j] += gy[j];
                     }
                     if (xn->requires_grad) {
                       xn->ensure_grad();
                       float* gx = xn->grad.data() + r * d;
                       double sum_dh = 0.0, sum_dh_h = 0.0;
                       for (int j = 0; j < d; ++j) {
                         const float dh = gy[j] * gn->value[j];
                         sum_dh += dh;
                         sum_dh_h += static_cast<double>(dh) * hr[j];
                       }
                       const float m1 = static_cast<float>(sum_dh / d);
                       const float m2 = static_cast<float>(sum_dh_h / d);
                       for (int j = 0; j < d; ++j) {
                         const float dh = gy[j] * gn->value[j];
                         gx[j] += inv_std[r] * (dh - m1 - hr[j] * m2);
                       }
                     }
                   }
                 });
}

inline Tensor rms_norm(const Tensor& x, const Tensor& gain, float eps = 1e-5f) {
  const int d = x.dim(x.ndim() - 1);
  require(gain.shape() == Shape{d}, ErrorCategory::dimension, "rms_norm gain shape");
  require(eps > 0.0f, ErrorCategory::config, "rms_norm eps must be positive");
  const size_t rows = x.numel() / static_cast<size_t>(d);
  std::vector<float> out(x.numel());
  std::vector<float> inv_rms(rows);
  const float* px = x.data().data();
  const float* pg = gain.data().data();
  for (size_t r = 0; r < rows; ++r) {
    const float* xr = px + r * d;
    double ms = 0.0;
    for (int j = 0; j < d; ++j) ms += static_cast<double>(xr[j]) * xr[j];
    ms /= d;
    const float ir = static_cast<float>(1.0 / std::sqrt(ms + eps));
    inv_rms[r] = ir;
    float* yr = out.data() + r * d;
    for (int j = 0; j < d; ++j) yr[j] = xr[j] * ir * pg[j];
  }
  detail::Node* xn = x.node();
  detail::Node* gn = gain.node();
  return make_op(x.shape(), std::move(out), {x, gain},
                 [xn, gn, d, rows, inv_rms = std::move(inv_rms)](detail::Node& self) {
                   for (size_t r = 0; r < rows; ++r) {
                     const float* gy = self.grad.data() + r * d;
                     const float* xr = xn->value.data() + r * d;
                     const float ir = inv_rms[r];
                     if (gn->requires_grad) {
                       gn->ensure_grad();
                       for (int j = 0; j < d; ++j) gn->grad[j] += gy[j] * xr[j] * ir;
                     }
                     if (xn->requires_grad) {
                       xn->ensure_grad();
                       float* gx = xn->grad.data() + r * d;
                       double dot = 0.0;
                       for (int j = 0; j < d; ++j)
                         dot += static_cast<double>(gy[j]) * gn->value[j] * xr[j];
                       const float k = static_cast<float>(dot) * ir * ir * ir / d;
                       for (int j = 0; j < d; ++j)
                         gx[j] += gy[j] * gn->value[j] * ir - xr[j] * k;
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// activations
// ---------------------------------------------------------------------------

enum class Act { relu, gelu, sigmoid, tanh };

inline Act act_from_string(const std::string& s) {
  if (s == "relu") return Act::relu;
  if (s == "gelu") return Act::gelu;
  if (s == "sigmoid") return Act::sigmoid;
  if (s == "tanh") return Act::tanh;
  fail(ErrorCategory::config, "unknown activation kind '" + s + "'");
}

inline Tensor activation(const Tensor& x, Act kind) {
  const size_t n = x.numel();
  std::vector<float> out(n);
  const float* px = x.data().data();
  switch (kind) {
    case Act::relu:
      for (size_t i = 0; i < n; ++i) out[i] = px[i] > 0.0f ? px[i] : 0.0f;
      break;
    case Act::gelu:
      for (size_t i = 0; i < n; ++i)
        out[i] = 0.5f * px[i] * (1.0f + std::erf(px[i] * 0.70710678118654752440f));
      break;
    case Act::sigmoid:
      for (size_t i = 0; i < n; ++i) {
        const float v = px[i];
        out[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                           : std::exp(v) / (1.0f + std::exp(v));
      }
      break;
    case Act::tanh:
      for (size_t i = 0; i < n; ++i) out[i] = std::tanh(px[i]);
      break;
  }
  detail::Node* xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn, kind](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const size_t n = self.value.size();
    for (size_t i = 0; i < n; ++i) {
      float d = 0.0f;
      const float xv = xn->value[i];
      const float yv = self.value[i];
      switch (kind) {
        case Act::relu:
          d = xv > 0.0f ? 1.0f : 0.0f;
          break;
        case Act::gelu: {
          const float cdf = 0.5f * (1.0f + std::erf(xv * 0.70710678118654752440f));
          const float pdf = 0.39894228040143267794f * std::exp(-0.5f * xv * xv);
          d = cdf + xv * pdf;
          break;
        }
        case Act::sigmoid:
          d = yv * (1.0f - yv);
          break;
        case Act::tanh:
          d = 1.0f - yv * yv;
          break;
      }
      xn->grad[i] += self.grad[i] * d;
    }
  });
}

// ---------------------------------------------------------------------------
// concat / split
// ---------------------------------------------------------------------------

namespace detail {

struct AxisView {
  size_t outer;  // product of dims before axis
  size_t inner;  // product of dims after axis
  int axis_len;
};

inline AxisView axis_view(const Shape& s, int axis) {
  require(axis >= 0 && axis < static_cast<int>(s.size()), ErrorCategory::dimension,
          "axis out of range for shape " + shape_str(s));
  AxisView v{1, 1, s[static_cast<size_t>(axis)]};
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<size_t>(s[static_cast<size_t>(i)]);
  for (size_t i = static_cast<size_t>(axis) + 1; i < s.size(); ++i) v.inner *= static_cast<size_t>(s[i]);
  return v;
}

}  // namespace detail

inline Tensor concat(const std::vector<Tensor>& parts, int axis) {
  require(!parts.empty(), ErrorCategory::contract, "concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  int total = 0;
  for (const auto& p : parts) {
    require(p.ndim() == static_cast<int>(s0.size()), ErrorCategory::dimension,
            "concat rank mismatch");
    for (int i = 0; i < p.ndim(); ++i) {
      if (i != axis)
        require(p.dim(i) == s0[static_cast<size_t>(i)], ErrorCategory::dimension,
                "concat non-axis dims differ: " + shape_str(p.shape()) + " vs " + shape_str(s0));
    }
    total += p.dim(axis);
  }
  Shape out_shape = s0;
  out_shape[static_cast<size_t>(axis)] = total;
  detail::AxisView ov = detail::axis_view(out_shape, axis);

  std::vector<float> out(shape_numel(out_shape));
  std::vector<int> lens;
  for (const auto& p : parts) lens.push_back(p.dim(axis));
  size_t off_axis = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const auto& p = parts[pi];
    const detail::AxisView pv = detail::axis_view(p.shape(), axis);
    const float* src = p.data().data();
    for (size_t o = 0; o < pv.outer; ++o) {
      float* dst = out.data() + (o * static_cast<size_t>(total) + off_axis) * ov.inner;
      const float* s = src + o * static_cast<size_t>(pv.axis_len) * pv.inner;
      std::copy(s, s + static_cast<size_t>(pv.axis_len) * pv.inner, dst);
    }
    off_axis += static_cast<size_t>(lens[pi]);
  }

  std::vector<detail::Node*> pnodes;
  for (const auto& p : parts) pnodes.push_back(p.node());
  return make_op(std::move(out_shape), std::move(out), parts,
                 [pnodes, lens, ov, total, axis](detail::Node& self) {
                   size_t off = 0;
                   for (size_t pi = 0; pi < pnodes.size(); ++pi) {
                     detail::Node* pn = pnodes[pi];
                     const size_t plen = static_cast<size_t>(lens[pi]);
                     if (pn->requires_grad) {
                       pn->ensure_grad();
                       for (size_t o = 0; o < ov.outer; ++o) {
                         const float* g =
                             self.grad.data() + (o * static_cast<size_t>(total) + off) * ov.inner;
                         float* dst = pn->grad.data() + o * plen * ov.inner;
                         for (size_t i = 0; i < plen * ov.inner; ++i) dst[i] += g[i];
                       }
                     }
                     off += plen;
                   }
                 });
}

inline std::vector<Tensor> split(const Tensor& x, const std::vector<int>& sizes, int axis) {
  const detail::AxisView xv = detail::axis_view(x.shape(), axis);
  int sum = 0;
  for (int s : sizes) {
    require(s >= 0, ErrorCategory::dimension, "negative split size");
    sum += s;
  }
  require(sum == xv.axis_len, ErrorCategory::dimension,
          "split sizes sum to " + std::to_string(sum) + ", axis length is " +
              std::to_string(xv.axis_len));

  std::vector<Tensor> outs;
  size_t off = 0;
  for (int sz : sizes) {
    Shape os = x.shape();
    os[static_cast<size_t>(axis)] = sz;
    std::vector<float> buf(shape_numel(os));
    const float* src = x.data().data();
    for (size_t o = 0; o < xv.outer; ++o) {
      const float* s = src + (o * static_cast<size_t>(xv.axis_len) + off) * xv.inner;
      float* d = buf.data() + o * static_cast<size_t>(sz) * xv.inner;
      std::copy(s, s + static_cast<size_t>(sz) * xv.inner, d);
    }
    detail::Node* xn = x.node();
    const size_t off_copy = off;
    outs.push_back(make_op(std::move(os), std::move(buf), {x},
                           [xn, xv, off_copy, sz](detail::Node& self) {
                             if (!xn->requires_grad) return;
                             xn->ensure_grad();
                             for (size_t o = 0; o < xv.outer; ++o) {
                               float* dst = xn->grad.data() +
                                            (o * static_cast<size_t>(xv.axis_len) + off_copy) * xv.inner;
                               const float* g =
                                   self.grad.data() + o * static_cast<size_t>(sz) * xv.inner;
                               for (size_t i = 0; i < static_cast<size_t>(sz) * xv.inner; ++i)
                                 dst[i] += g[i];
                             }
                           }));
    off += static_cast<size_t>(sz);
  }
  return outs;
}

// ---------------------------------------------------------------------------
// reductions, gathers
// ---------------------------------------------------------------------------

// Mean over `axis`; optional validity mask over the axis positions.
inline Tensor mean_axis(const Tensor& x, int axis,
                        const std::vector<uint8_t>& valid = {}) {
  const detail::AxisView v = detail::axis_view(x.shape(), axis);
  if (!valid.empty())
    require(static_cast<int>(valid.size()) == v.axis_len, ErrorCategory::dimension,
            "mean_axis mask length mismatch");
  int count = 0;
  if (valid.empty()) {
    count = v.axis_len;
  } else {
    for (uint8_t m : valid) count += m ? 1 : 0;
  }
  require(count > 0, ErrorCategory::degenerate, "mean_axis over zero valid positions");

  Shape os = x.shape();
  os.erase(os.begin() + axis);
  std::vector<float> out(v.outer * v.inner, 0.0f);
  const float* px = x.data().data();
  for (size_t o = 0; o < v.outer; ++o) {
    for (int a = 0; a < v.axis_len; ++a) {
      if (!valid.empty() && !valid[static_cast<size_t>(a)]) continue;
      const float* row = px + (o * static_cast<size_t>(v.axis_len) + static_cast<size_t>(a)) * v.inner;
      float* dst = out.data() + o * v.inner;
      for (size_t i = 0; i < v.inner; ++i) dst[i] += row[i];
    }
  }
  const float inv = 1.0f / static_cast<float>(count);
  for (float& f : out) f *= inv;

  detail::Node* xn = x.node();
  return make_op(std::move(os), std::move(out), {x},
                 [xn, v, valid, inv](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (size_t o = 0; o < v.outer; ++o) {
                     const float* g = self.grad.data() + o * v.inner;
                     for (int a = 0; a < v.axis_len; ++a) {
                       if (!valid.empty() && !valid[static_cast<size_t>(a)]) continue;
                       float* dst = xn->grad.data() +
                                    (o * static_cast<size_t>(v.axis_len) + static_cast<size_t>(a)) * v.inner;
                       for (size_t i = 0; i < v.inner; ++i) dst[i] += g[i] * inv;
                     }
                   }
                 });
}

// Same data, new shape (element count must match).
inline Tensor reshape(const Tensor& x, Shape new_shape) {
  require(shape_numel(new_shape) == x.numel(), ErrorCategory::dimension,
          "reshape " + shape_str(x.shape()) + " -> " + shape_str(new_shape) +
              " changes element count");
  detail::Node* xn = x.node();
  return make_op(std::move(new_shape), x.data(), {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
  });
}

inline Tensor sum_all(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  detail::Node* xn = x.node();
  return make_op({1}, {static_cast<float>(acc)}, {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    const float g = self.grad[0];
    for (float& gv : xn->grad) gv += g;
  });
}

inline Tensor mean_all(const Tensor& x) {
  require(x.numel() > 0, ErrorCategory::degenerate, "mean of empty tensor");
  return scale(sum_all(x), 1.0f / static_cast<float>(x.numel()));
}

inline Tensor abs(const Tensor& x) {
  std::vector<float> out(x.numel());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x.data()[i]);
  detail::Node* xn = x.node();
  return make_op(x.shape(), std::move(out), {x}, [xn](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    for (size_t i = 0; i < self.grad.size(); ++i) {
      const float v = xn->value[i];
      const float s = v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f);
      xn->grad[i] += self.grad[i] * s;
    }
  });
}

// Gathers rows of a [V, d] table; backward scatters into the table.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
  require(table.ndim() == 2, ErrorCategory::dimension, "embedding table must be 2-D");
  const int V = table.dim(0);
  const int d = table.dim(1);
  std::vector<float> out(ids.size() * static_cast<size_t>(d));
  for (size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < V, ErrorCategory::vocabulary,
            "token id " + std::to_string(ids[i]) + " out of range [0," + std::to_string(V) + ")");
    std::copy_n(table.data().data() + static_cast<size_t>(ids[i]) * d, d,
                out.data() + i * static_cast<size_t>(d));
  }
  detail::Node* tn = table.node();
  return make_op({static_cast<int>(ids.size()), d}, std::move(out), {table},
                 [tn, ids, d](detail::Node& self) {
                   if (!tn->requires_grad) return;
                   tn->ensure_grad();
                   for (size_t i = 0; i < ids.size(); ++i) {
                     const float* g = self.grad.data() + i * static_cast<size_t>(d);
                     float* dst = tn->grad.data() + static_cast<size_t>(ids[i]) * d;
                     for (int j = 0; j < d; ++j) dst[j] += g[j];
                   }
                 });
}

// Extracts row i of a 2-D tensor as a [d] vector.
inline Tensor select_row(const Tensor& x, int row) {
  require(x.ndim() == 2, ErrorCategory::dimension, "select_row needs 2-D input");
  require(row >= 0 && row < x.dim(0), ErrorCategory::dimension, "row index out of range");
  const int d = x.dim(1);
  std::vector<float> out(x.data().begin() + static_cast<size_t>(row) * d,
                         x.data().begin() + static_cast<size_t>(row + 1) * d);
  detail::Node* xn = x.node();
  return make_op({d}, std::move(out), {x}, [xn, row, d](detail::Node& self) {
    if (!xn->requires_grad) return;
    xn->ensure_grad();
    float* dst = xn->grad.data() + static_cast<size_t>(row) * d;
    for (int j = 0; j < d; ++j) dst[j] += self.grad[j];
  });
}

// Mean negative log-likelihood of `targets` under row-wise softmax of
// `logits`, restricted to rows with valid[r] != 0 (all rows when empty).
inline Tensor cross_entropy_rows(const Tensor& logits, const std::vector<int>& targets,
                                 const std::vector<uint8_t>& valid = {}) {
  require(logits.ndim() == 2, ErrorCategory::dimension, "cross_entropy expects 2-D logits");
  const int R = logits.dim(0);
  const int V = logits.dim(1);
  require(static_cast<int>(targets.size()) == R, ErrorCategory::dimension,
          "targets length mismatch");
  if (!valid.empty())
    require(static_cast<int>(valid.size()) == R, ErrorCategory::dimension,
            "validity mask length mismatch");
  int count = 0;
  for (int r = 0; r < R; ++r)
    if (valid.empty() || valid[static_cast<size_t>(r)]) ++count;
  require(count > 0, ErrorCategory::degenerate, "cross_entropy over zero valid rows");

  double total = 0.0;
  std::vector<float> probs(logits.numel(), 0.0f);  // cached for backward
  const float* pl = logits.data().data();
  for (int r = 0; r < R; ++r) {
    if (!valid.empty() && !valid[static_cast<size_t>(r)]) continue;
    const int t = targets[static_cast<size_t>(r)];
    require(t >= 0 && t < V, ErrorCategory::vocabulary, "target id out of range");
    const float* row = pl + static_cast<size_t>(r) * V;
    float mx = row[0];
    for (int j = 1; j < V; ++j) mx = std::max(mx, row[j]);
    double s = 0.0;
    float* pr = probs.data() + static_cast<size_t>(r) * V;
    for (int j = 0; j < V; ++j) {
      pr[j] = std::exp(row[j] - mx);
      s += pr[j];
    }
    const float inv = static_cast<float>(1.0 / s);
    for (int j = 0; j < V; ++j) pr[j] *= inv;
    total += -(static_cast<double>(row[t]) - mx - std::log(s));
  }
  const float loss = static_cast<float>(total / count);

  detail::Node* ln = logits.node();
  return make_op({1}, {loss}, {logits},
                 [ln, targets, valid, V, R, count, probs = std::move(probs)](detail::Node& self) {
                   if (!ln->requires_grad) return;
                   ln->ensure_grad();
                   const float g = self.grad[0] / static_cast<float>(count);
                   for (int r = 0; r < R; ++r) {
                     if (!valid.empty() && !valid[static_cast<size_t>(r)]) continue;
                     const float* pr = probs.data() + static_cast<size_t>(r) * V;
                     float* gl = ln->grad.data() + static_cast<size_t>(r) * V;
                     const int t = targets[static_cast<size_t>(r)];
                     for (int j = 0; j < V; ++j) {
                       gl[j] += g * (pr[j] - (j == t ? 1.0f : 0.0f));
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// init helpers
// ---------------------------------------------------------------------------

inline void fill_normal(Tensor& t, Rng& rng, float std_dev, float mean = 0.0f) {
  for (float& v : t.data()) v = mean + std_dev * rng.normal();
}

inline void fill_uniform(Tensor& t, Rng& rng, float lo, float hi) {
  for (float& v : t.data()) v = rng.uniform(lo, hi);
}

// Glorot/Xavier uniform for a [fan_in, fan_out] matrix.
inline void fill_xavier(Tensor& t, Rng& rng) {
  require(t.ndim() == 2, ErrorCategory::dimension, "xavier init expects 2-D weight");
  const float limit = std::sqrt(6.0f / static_cast<float>(t.dim(0) + t.dim(1)));
  fill_uniform(t, rng, -limit, limit);
}

}  // namespace dmlf
