// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Regression and classification metrics for scalar sentiment predictions:
// MAE, Pearson correlation, Acc-2 in both community conventions (negative
// vs non-negative over all samples; negative vs positive excluding zero
// labels), Acc-5/Acc-7 by nearest class center, and weighted F1.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dmlf/error.hpp"

namespace dmlf {

struct MetricsReport {
  int n = 0;
  float mae = 0.0f;
  float pearson = 0.0f;
  bool pearson_defined = false;  // false when either side has zero variance
  float acc2_incl_zero = 0.0f;   // negative vs non-negative, all samples
  float acc2_excl_zero = 0.0f;   // negative vs positive, zero labels dropped
  float acc5 = 0.0f;
  float acc7 = 0.0f;
  float f1_incl_zero = 0.0f;     // weighted F1, same split as acc2_incl_zero
  float f1_excl_zero = 0.0f;
};

// Nearest center wins; exact ties go to the lower center. Centers must be
// sorted ascending.
inline int nearest_class(float x, const std::vector<float>& centers) {
  require(!centers.empty(), ErrorCategory::config, "empty class centers");
  int best = 0;
  float best_d = std::fabs(x - centers[0]);
  for (int i = 1; i < static_cast<int>(centers.size()); ++i) {
    const float d = std::fabs(x - centers[static_cast<size_t>(i)]);
    if (d < best_d) {  // strict: ties keep the lower center
      best_d = d;
      best = i;
    }
  }
  return best;
}

namespace detail {

// Weighted F1 over binary classes encoded as 0/1; weights = true support.
inline float weighted_f1_binary(const std::vector<int>& truth, const std::vector<int>& pred) {
  float total = 0.0f;
  const int n = static_cast<int>(truth.size());
  for (int cls = 0; cls <= 1; ++cls) {
    int tp = 0, fp = 0, fn = 0, support = 0;
    for (int i = 0; i < n; ++i) {
      const bool t = truth[static_cast<size_t>(i)] == cls;
      const bool p = pred[static_cast<size_t>(i)] == cls;
      if (t) ++support;
      if (t && p) ++tp;
      if (!t && p) ++fp;
      if (t && !p) ++fn;
    }
    const float prec = (tp + fp) ? static_cast<float>(tp) / (tp + fp) : 0.0f;
    const float rec = (tp + fn) ? static_cast<float>(tp) / (tp + fn) : 0.0f;
    const float f1 = (prec + rec > 0.0f) ? 2.0f * prec * rec / (prec + rec) : 0.0f;
    total += f1 * static_cast<float>(support) / static_cast<float>(n);
  }
  return total;
}

}  // namespace detail

inline MetricsReport compute_metrics(const std::vector<float>& preds,
                                     const std::vector<float>& labels,
                                     const std::vector<float>& centers5 = {-2, -1, 0, 1, 2},
                                     const std::vector<float>& centers7 = {-3, -2, -1, 0, 1, 2, 3}) {
  require(preds.size() == labels.size(), ErrorCategory::dimension,
          "prediction/label count mismatch");
  require(!preds.empty(), ErrorCategory::data, "metrics over empty vectors");
  const int n = static_cast<int>(preds.size());
  MetricsReport r;
  r.n = n;

  double mae = 0.0;
  for (int i = 0; i < n; ++i) mae += std::fabs(preds[static_cast<size_t>(i)] - labels[static_cast<size_t>(i)]);
  r.mae = static_cast<float>(mae / n);

  double mp = 0.0, ml = 0.0;
  for (int i = 0; i < n; ++i) {
    mp += preds[static_cast<size_t>(i)];
    ml += labels[static_cast<size_t>(i)];
  }
  mp /= n;
  ml /= n;
  double spp = 0.0, sll = 0.0, spl = 0.0;
  for (int i = 0; i < n; ++i) {
    const double dp = preds[static_cast<size_t>(i)] - mp;
    const double dl = labels[static_cast<size_t>(i)] - ml;
    spp += dp * dp;
    sll += dl * dl;
    spl += dp * dl;
  }
  if (spp > 0.0 && sll > 0.0) {
    r.pearson = static_cast<float>(spl / std::sqrt(spp * sll));
    r.pearson_defined = true;
  }

  // Acc-2 / F1, negative vs non-negative (zero labels are non-negative)
  {
    std::vector<int> t(static_cast<size_t>(n)), p(static_cast<size_t>(n));
    int correct = 0;
    for (int i = 0; i < n; ++i) {
      t[static_cast<size_t>(i)] = labels[static_cast<size_t>(i)] >= 0.0f ? 1 : 0;
      p[static_cast<size_t>(i)] = preds[static_cast<size_t>(i)] >= 0.0f ? 1 : 0;
      if (t[static_cast<size_t>(i)] == p[static_cast<size_t>(i)]) ++correct;
    }
    r.acc2_incl_zero = static_cast<float>(correct) / n;
    r.f1_incl_zero = detail::weighted_f1_binary(t, p);
  }

  // Acc-2 / F1, negative vs positive over nonzero labels only
  {
    std::vector<int> t, p;
    for (int i = 0; i < n; ++i) {
      if (labels[static_cast<size_t>(i)] == 0.0f) continue;
      t.push_back(labels[static_cast<size_t>(i)] > 0.0f ? 1 : 0);
      p.push_back(preds[static_cast<size_t>(i)] > 0.0f ? 1 : 0);
    }
    if (!t.empty()) {
      int correct = 0;
      for (size_t i = 0; i < t.size(); ++i)
        if (t[i] == p[i]) ++correct;
      r.acc2_excl_zero = static_cast<float>(correct) / static_cast<float>(t.size());
      r.f1_excl_zero = detail::weighted_f1_binary(t, p);
    }
  }

  int c5 = 0, c7 = 0;
  for (int i = 0; i < n; ++i) {
    if (nearest_class(preds[static_cast<size_t>(i)], centers5) ==
        nearest_class(labels[static_cast<size_t>(i)], centers5))
      ++c5;
    if (nearest_class(preds[static_cast<size_t>(i)], centers7) ==
        nearest_class(labels[static_cast<size_t>(i)], centers7))
      ++c7;
  }
  r.acc5 = static_cast<float>(c5) / n;
  r.acc7 = static_cast<float>(c7) / n;
  return r;
}

}  // namespace dmlf
