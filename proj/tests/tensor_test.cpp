// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0

#include "dmlf/tensor.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "dmlf/grad_check.hpp"
#include "dmlf/rng.hpp"

namespace {

using dmlf::Tensor;

// Independent oracle: triple-loop matrix product in double precision.
std::vector<float> naive_matmul(const std::vector<float>& a, const std::vector<float>& b,
                                int m, int k, int n) {
  std::vector<float> c(static_cast<size_t>(m) * n, 0.0f);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p)
        acc += static_cast<double>(a[static_cast<size_t>(i) * k + p]) *
               b[static_cast<size_t>(p) * n + j];
      c[static_cast<size_t>(i) * n + j] = static_cast<float>(acc);
    }
  return c;
}

// Independent oracle: softmax by exp-normalize in double precision.
std::vector<float> naive_softmax_row(const std::vector<float>& x) {
  double mx = x[0];
  for (float v : x) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> e(x.size());
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    e[i] = std::exp(static_cast<double>(x[i]) - mx);
    s += e[i];
  }
  std::vector<float> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>(e[i] / s);
  return y;
}

Tensor randn(dmlf::Shape shape, dmlf::Rng& rng, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  dmlf::fill_normal(t, rng, 1.0f);
  return t;
}

TEST(RngTest, DeterministicAcrossInstances) {
  dmlf::Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(RngTest, CounterStateRestoresMidstream) {
  dmlf::Rng a(7);
  for (int i = 0; i < 10; ++i) a.next_u64();
  const uint64_t seed = a.seed();
  const uint64_t counter = a.counter();
  std::vector<uint64_t> tail;
  for (int i = 0; i < 5; ++i) tail.push_back(a.next_u64());
  dmlf::Rng b(1);
  b.set_state(seed, counter);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(b.next_u64(), tail[static_cast<size_t>(i)]);
}

TEST(RngTest, DerivedStreamsDiffer) {
  dmlf::Rng a = dmlf::Rng::derive(123, 0);
  dmlf::Rng b = dmlf::Rng::derive(123, 1);
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  EXPECT_EQ(same, 0);
}

TEST(RngTest, UniformInHalfOpenUnitInterval) {
  dmlf::Rng r(99);
  double mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    float u = r.uniform();
    ASSERT_GE(u, 0.0f);
    ASSERT_LT(u, 1.0f);
    mean += u;
  }
  EXPECT_NEAR(mean / 10000.0, 0.5, 0.02);
}

TEST(RngTest, NormalMomentsMatch) {
  dmlf::Rng r(7);
  double s = 0.0, ss = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double v = r.normal();
    s += v;
    ss += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(ss / n, 1.0, 0.05);
}

TEST(RngTest, PermutationIsBijective) {
  dmlf::Rng r(5);
  auto p = r.permutation(50);
  std::vector<int> seen(50, 0);
  for (int v : p) {
    ASSERT_GE(v, 0);
    ASSERT_LT(v, 50);
    seen[static_cast<size_t>(v)]++;
  }
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(RngTest, UniformIntWithinBound) {
  dmlf::Rng r(11);
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(r.uniform_int(17), 17u);
  }
}

TEST(TensorTest, MatmulMatchesNaiveOracle) {
  dmlf::Rng rng(1);
  const int m = 5, k = 7, n = 4;
  Tensor a = randn({m, k}, rng, false);
  Tensor b = randn({k, n}, rng, false);
  Tensor c = dmlf::matmul(a, b);
  auto want = naive_matmul(a.data(), b.data(), m, k, n);
  ASSERT_EQ(c.numel(), want.size());
  for (size_t i = 0; i < want.size(); ++i)
    EXPECT_NEAR(c.data()[i], want[i], 1e-5f) << "index " << i;
}

TEST(TensorTest, MatmulBatchBroadcast) {
  dmlf::Rng rng(2);
  Tensor a = randn({3, 2, 4}, rng, false);   // batch of 3
  Tensor b = randn({4, 5}, rng, false);      // shared weight
  Tensor c = dmlf::matmul(a, b);
  ASSERT_EQ(c.shape(), (dmlf::Shape{3, 2, 5}));
  for (int bi = 0; bi < 3; ++bi) {
    std::vector<float> ab(a.data().begin() + bi * 8, a.data().begin() + (bi + 1) * 8);
    auto want = naive_matmul(ab, b.data(), 2, 4, 5);
    for (size_t i = 0; i < want.size(); ++i)
      EXPECT_NEAR(c.data()[static_cast<size_t>(bi) * 10 + i], want[i], 1e-5f);
  }
}

TEST(TensorTest, MatmulShapeMismatchThrows) {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  EXPECT_THROW(dmlf::matmul(a, b), dmlf::Error);
}

TEST(TensorTest, SoftmaxMatchesExpNormalizeOracle) {
  std::vector<float> row = {0.5f, -1.2f, 3.3f, 0.0f, 2.1f};
  Tensor x = Tensor::from_data({1, 5}, row);
  Tensor y = dmlf::softmax_lastdim(x);
  auto want = naive_softmax_row(row);
  double s = 0.0;
  for (size_t i = 0; i < want.size(); ++i) {
    EXPECT_NEAR(y.data()[i], want[i], 1e-6f);
    s += y.data()[i];
  }
  EXPECT_NEAR(s, 1.0, 1e-5);
}

TEST(TensorTest, SoftmaxMaskZerosBlockedPositions) {
  Tensor x = Tensor::from_data({1, 4}, {1.0f, 2.0f, 3.0f, 4.0f});
  dmlf::Mask m{{4}, {1, 0, 1, 0}};
  Tensor y = dmlf::softmax_lastdim(x, m);
  EXPECT_FLOAT_EQ(y.data()[1], 0.0f);
  EXPECT_FLOAT_EQ(y.data()[3], 0.0f);
  EXPECT_NEAR(y.data()[0] + y.data()[2], 1.0f, 1e-6f);
  // blocked positions follow exp-normalize over the allowed set
  auto want = naive_softmax_row({1.0f, 3.0f});
  EXPECT_NEAR(y.data()[0], want[0], 1e-6f);
  EXPECT_NEAR(y.data()[2], want[1], 1e-6f);
}

TEST(TensorTest, SoftmaxFullyMaskedRowThrows) {
  Tensor x = Tensor::from_data({2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  dmlf::Mask m{{2, 2}, {1, 1, 0, 0}};
  EXPECT_THROW(dmlf::softmax_lastdim(x, m), dmlf::Error);
}

TEST(TensorTest, LayerNormOutputHasZeroMeanUnitVar) {
  dmlf::Rng rng(3);
  const int d = 16;
  Tensor x = randn({4, d}, rng, false);
  Tensor g = Tensor::full({d}, 1.0f);
  Tensor b = Tensor::zeros({d});
  Tensor y = dmlf::layer_norm(x, g, b);
  for (int r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (int j = 0; j < d; ++j) mean += y.data()[static_cast<size_t>(r) * d + j];
    mean /= d;
    for (int j = 0; j < d; ++j) {
      double c = y.data()[static_cast<size_t>(r) * d + j] - mean;
      var += c * c;
    }
    var /= d;
    EXPECT_NEAR(mean, 0.0, 1e-5);
    EXPECT_NEAR(var, 1.0, 1e-3);
  }
}

TEST(TensorTest, LayerNormAppliesGainAndBias) {
  Tensor x = Tensor::from_data({1, 2}, {-1.0f, 1.0f});
  Tensor g = Tensor::from_data({2}, {2.0f, 3.0f});
  Tensor b = Tensor::from_data({2}, {10.0f, 20.0f});
  Tensor y = dmlf::layer_norm(x, g, b, 1e-8f);
  // normalized row is (-1, 1) exactly
  EXPECT_NEAR(y.data()[0], -2.0f + 10.0f, 1e-4f);
  EXPECT_NEAR(y.data()[1], 3.0f + 20.0f, 1e-4f);
}

TEST(TensorTest, ConcatSplitRoundTrip) {
  dmlf::Rng rng(4);
  Tensor a = randn({3, 2}, rng, false);
  Tensor b = randn({5, 2}, rng, false);
  Tensor c = dmlf::concat({a, b}, 0);
  ASSERT_EQ(c.shape(), (dmlf::Shape{8, 2}));
  auto parts = dmlf::split(c, {3, 5}, 0);
  ASSERT_EQ(parts.size(), 2u);
  EXPECT_EQ(parts[0].data(), a.data());
  EXPECT_EQ(parts[1].data(), b.data());
}

TEST(TensorTest, ConcatLastAxis) {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {9, 8});
  Tensor c = dmlf::concat({a, b}, 1);
  ASSERT_EQ(c.shape(), (dmlf::Shape{2, 3}));
  std::vector<float> want = {1, 2, 9, 3, 4, 8};
  EXPECT_EQ(c.data(), want);
}

TEST(TensorTest, MeanAxisMatchesLoopOracle) {
  dmlf::Rng rng(6);
  Tensor x = randn({4, 3}, rng, false);
  Tensor m = dmlf::mean_axis(x, 0);
  ASSERT_EQ(m.shape(), (dmlf::Shape{3}));
  for (int j = 0; j < 3; ++j) {
    double acc = 0.0;
    for (int i = 0; i < 4; ++i) acc += x.data()[static_cast<size_t>(i) * 3 + j];
    EXPECT_NEAR(m.data()[static_cast<size_t>(j)], acc / 4.0, 1e-6);
  }
}

TEST(TensorTest, MeanAxisRespectsValidityMask) {
  Tensor x = Tensor::from_data({4, 1}, {1.0f, 100.0f, 3.0f, 100.0f});
  Tensor m = dmlf::mean_axis(x, 0, {1, 0, 1, 0});
  EXPECT_NEAR(m.data()[0], 2.0f, 1e-6f);
  EXPECT_THROW(dmlf::mean_axis(x, 0, std::vector<uint8_t>{0, 0, 0, 0}), dmlf::Error);
}

TEST(TensorTest, EmbeddingLookupGathersAndScatters) {
  Tensor table = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  Tensor e = dmlf::embedding_lookup(table, {2, 0, 2});
  std::vector<float> want = {5, 6, 1, 2, 5, 6};
  EXPECT_EQ(e.data(), want);
  dmlf::backward(dmlf::sum_all(e));
  // row 2 gathered twice, row 0 once, row 1 never
  EXPECT_FLOAT_EQ(table.grad()[0], 1.0f);
  EXPECT_FLOAT_EQ(table.grad()[2], 0.0f);
  EXPECT_FLOAT_EQ(table.grad()[4], 2.0f);
  EXPECT_THROW(dmlf::embedding_lookup(table, {3}), dmlf::Error);
}

TEST(TensorTest, BroadcastAddSuffix) {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6}, true);
  Tensor b = Tensor::from_data({3}, {10, 20, 30}, true);
  Tensor c = dmlf::add(a, b);
  std::vector<float> want = {11, 22, 33, 14, 25, 36};
  EXPECT_EQ(c.data(), want);
  dmlf::backward(dmlf::sum_all(c));
  for (float g : a.grad()) EXPECT_FLOAT_EQ(g, 1.0f);
  for (float g : b.grad()) EXPECT_FLOAT_EQ(g, 2.0f);  // broadcast over 2 rows
}

TEST(TensorTest, CrossEntropyMatchesLogSoftmaxGather) {
  dmlf::Rng rng(8);
  Tensor logits = randn({3, 5}, rng, false);
  std::vector<int> tgt = {4, 0, 2};
  Tensor loss = dmlf::cross_entropy_rows(logits, tgt);
  double want = 0.0;
  for (int r = 0; r < 3; ++r) {
    std::vector<float> row(logits.data().begin() + r * 5, logits.data().begin() + (r + 1) * 5);
    auto p = naive_softmax_row(row);
    want += -std::log(static_cast<double>(p[static_cast<size_t>(tgt[static_cast<size_t>(r)])]));
  }
  EXPECT_NEAR(loss.item(), want / 3.0, 1e-5);
}

TEST(TensorTest, CrossEntropyValidityMaskExcludesRows) {
  Tensor logits = Tensor::from_data({2, 2}, {5.0f, 0.0f, 0.0f, 5.0f});
  // with row 1 excluded the loss is just row 0's term
  Tensor l0 = dmlf::cross_entropy_rows(logits, {0, 0}, {1, 0});
  Tensor both = dmlf::cross_entropy_rows(logits, {0, 0});
  EXPECT_LT(l0.item(), both.item());
}

TEST(BackwardTest, LeafGradsAccumulateInteriorGradsReset) {
  Tensor w = Tensor::from_data({1}, {3.0f}, true);
  for (int pass = 1; pass <= 3; ++pass) {
    Tensor y = dmlf::mul(w, w);  // y = w^2, dy/dw = 2w = 6
    dmlf::backward(y);
    EXPECT_FLOAT_EQ(w.grad()[0], 6.0f * pass);
  }
  w.zero_grad();
  Tensor y = dmlf::mul(w, w);
  dmlf::backward(y);
  EXPECT_FLOAT_EQ(w.grad()[0], 6.0f);
}

TEST(BackwardTest, DiamondGraphSumsBothPaths) {
  Tensor x = Tensor::from_data({1}, {2.0f}, true);
  Tensor a = dmlf::scale(x, 3.0f);
  Tensor b = dmlf::scale(x, 5.0f);
  Tensor y = dmlf::add(a, b);  // y = 8x
  dmlf::backward(y);
  EXPECT_FLOAT_EQ(x.grad()[0], 8.0f);
}

TEST(BackwardTest, NonScalarLossThrows) {
  Tensor x = Tensor::from_data({2}, {1.0f, 2.0f}, true);
  Tensor y = dmlf::scale(x, 2.0f);
  EXPECT_THROW(dmlf::backward(y), dmlf::Error);
}

TEST(BackwardTest, FrozenParentsReceiveNoGrad) {
  Tensor w = Tensor::from_data({1}, {2.0f}, true);
  Tensor f = Tensor::from_data({1}, {4.0f}, false);
  Tensor y = dmlf::mul(w, f);
  dmlf::backward(y);
  EXPECT_FLOAT_EQ(w.grad()[0], 4.0f);
  EXPECT_FALSE(f.has_grad());
}

TEST(GradCheckTest, CatchesAnalyticGradients) {
  dmlf::Rng rng(10);
  Tensor w1 = randn({4, 6}, rng);
  Tensor b1 = Tensor::zeros({6}, true);
  Tensor w2 = randn({6, 1}, rng);
  Tensor x = randn({3, 4}, rng, false);
  Tensor g = Tensor::full({6}, 1.0f, true);
  Tensor bb = Tensor::zeros({6}, true);

  auto loss_fn = [&]() {
    Tensor h = dmlf::add(dmlf::matmul(x, w1), b1);
    h = dmlf::layer_norm(h, g, bb);
    h = dmlf::activation(h, dmlf::Act::gelu);
    Tensor y = dmlf::matmul(h, w2);
    return dmlf::mean_all(dmlf::abs(y));
  };

  auto report = dmlf::grad_check(
      {{"w1", w1}, {"b1", b1}, {"w2", w2}, {"ln_gain", g}, {"ln_bias", bb}}, loss_fn);
  EXPECT_TRUE(report.passed) << "worst group " << report.worst_group << " rel err "
                             << report.max_rel_err;
  // every group sampled
  EXPECT_GE(report.entries.size(), 5u * 3u);
}

TEST(GradCheckTest, SoftmaxAndConcatGradients) {
  dmlf::Rng rng(11);
  Tensor a = randn({2, 3}, rng);
  Tensor b = randn({2, 2}, rng);
  auto loss_fn = [&]() {
    Tensor c = dmlf::concat({a, b}, 1);                  // [2,5]
    Tensor s = dmlf::softmax_lastdim(c);
    Tensor t = dmlf::transpose_last2(s);                 // [5,2]
    Tensor m = dmlf::mean_axis(t, 1);                    // [5]
    return dmlf::sum_all(dmlf::mul(m, m));
  };
  auto report = dmlf::grad_check({{"a", a}, {"b", b}}, loss_fn);
  EXPECT_TRUE(report.passed) << report.worst_group << " rel err " << report.max_rel_err;
}

TEST(GradCheckTest, ActivationsAndCrossEntropyGradients) {
  dmlf::Rng rng(12);
  Tensor w = randn({3, 4}, rng);
  Tensor x = randn({2, 3}, rng, false);
  std::vector<int> tgt = {1, 3};
  for (auto kind : {dmlf::Act::relu, dmlf::Act::sigmoid, dmlf::Act::tanh}) {
    auto loss_fn = [&]() {
      Tensor logits = dmlf::activation(dmlf::matmul(x, w), kind);
      return dmlf::cross_entropy_rows(logits, tgt);
    };
    auto report = dmlf::grad_check({{"w", w}}, loss_fn);
    EXPECT_TRUE(report.passed) << "activation kind " << static_cast<int>(kind) << " rel err "
                               << report.max_rel_err;
  }
}

TEST(GradCheckTest, NondeterministicClosureRejected) {
  Tensor w = Tensor::from_data({1}, {1.0f}, true);
  int calls = 0;
  auto loss_fn = [&]() {
    ++calls;
    return Tensor::scalar(static_cast<float>(calls), false) * w;
  };
  EXPECT_THROW(dmlf::grad_check({{"w", w}}, loss_fn), dmlf::Error);
}

}  // namespace
