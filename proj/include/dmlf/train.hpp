// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Training loop: AdamW with linear-warmup + cosine decay, per-epoch
// validation, early stopping on validation total loss, and best-epoch
// weight restoration.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "dmlf/checkpoint.hpp"
#include "dmlf/data.hpp"
#include "dmlf/error.hpp"
#include "dmlf/model.hpp"
#include "dmlf/optim.hpp"
#include "dmlf/rng.hpp"

namespace dmlf {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int batch_size = 32;
  int max_epochs = 30;
  int warmup_epochs = 1;
  // Early stopping: stop once the number of consecutive epochs without a
  // new best validation loss exceeds the patience.
  int early_stop_patience = 8;
  // Cosine floor as a fraction of the peak learning rate.
  double lr_min_ratio = 0.01;
  std::uint64_t seed = 7;
  bool restore_best = true;
};

inline void validate_train_config(const TrainConfig& c) {
  require(c.lr > 0.0, ErrorCategory::config, "lr must be positive");
  require(c.batch_size >= 1, ErrorCategory::config, "batch_size must be >= 1");
  require(c.max_epochs >= 1, ErrorCategory::config, "max_epochs must be >= 1");
  require(c.warmup_epochs >= 0, ErrorCategory::config,
          "warmup_epochs must be >= 0");
  require(c.max_epochs > c.warmup_epochs, ErrorCategory::config,
          "max_epochs must exceed warmup_epochs");
  require(c.early_stop_patience >= 0, ErrorCategory::config,
          "early_stop_patience must be >= 0");
  require(c.lr_min_ratio >= 0.0 && c.lr_min_ratio <= 1.0,
          ErrorCategory::config, "lr_min_ratio must lie in [0, 1]");
  require(c.beta1 >= 0.0 && c.beta1 < 1.0 && c.beta2 >= 0.0 && c.beta2 < 1.0,
          ErrorCategory::config, "betas must lie in [0, 1)");
  require(c.weight_decay >= 0.0, ErrorCategory::config,
          "weight_decay must be >= 0");
}

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_task = 0.0;  // unweighted main-task L1 component
  double train_lm = 0.0;    // unweighted LM loss component
  double val_loss = 0.0;
  double val_mae = 0.0;
  bool improved = false;
};

struct TrainResult {
  std::vector<EpochStats> history;
  int epochs_run = 0;
  int global_steps = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
  double best_val_mae = 0.0;
  bool stopped_early = false;
  // Snapshot of the best-validation weights and optimizer moments, suitable
  // for serialization via save_checkpoint.
  CheckpointTable best_params;
  AdamWState best_moments;
};

inline std::string epoch_stats_json(const EpochStats& s) {
  nlohmann::json j;
  j["epoch"] = s.epoch;
  j["lr"] = s.lr;
  j["train_loss"] = s.train_loss;
  j["train_task"] = s.train_task;
  j["train_lm"] = s.train_lm;
  j["val_loss"] = s.val_loss;
  j["val_mae"] = s.val_mae;
  j["improved"] = s.improved;
  return j.dump();
}

// Runs the optimization loop over `train_recs`, validating on `val_recs`
// after every epoch. If `log` is non-null one JSON line per epoch is
// appended to it.
inline TrainResult train(Model& m, const std::vector<DatasetRecord>& train_recs,
                         const std::vector<DatasetRecord>& val_recs,
                         const TrainConfig& cfg, std::ostream* log = nullptr) {
  validate_train_config(cfg);
  require(!train_recs.empty(), ErrorCategory::data, "training split is empty");
  require(!val_recs.empty(), ErrorCategory::data, "validation split is empty");

  const int n = static_cast<int>(train_recs.size());
  const int steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total_steps = steps_per_epoch * cfg.max_epochs;
  const int warmup_steps = steps_per_epoch * cfg.warmup_epochs;
  const double lr_min = cfg.lr * cfg.lr_min_ratio;

  AdamWConfig opt_cfg;
  opt_cfg.lr = cfg.lr;
  opt_cfg.beta1 = cfg.beta1;
  opt_cfg.beta2 = cfg.beta2;
  opt_cfg.eps = cfg.eps;
  opt_cfg.weight_decay = cfg.weight_decay;
  AdamWState opt_state;

  Rng shuffle_rng = Rng::derive(cfg.seed, 201);
  Rng aug_rng = Rng::derive(cfg.seed, 202);

  const bool want_lm = m.cfg.loss.lambda_lm > 0.0;

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  int bad_epochs = 0;
  int global_step = 0;

  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    std::vector<int> order = shuffle_rng.permutation(n);
    double epoch_loss = 0.0;
    double epoch_task = 0.0;
    double epoch_lm = 0.0;
    double last_lr = 0.0;

    for (int start = 0; start < n; start += cfg.batch_size) {
      const int stop = std::min(n, start + cfg.batch_size);
      const int bsz = stop - start;
      m.store.zero_grad();

      Tensor batch_loss;
      double batch_task = 0.0;
      double batch_lm = 0.0;
      for (int i = start; i < stop; ++i) {
        const DatasetRecord& rec = train_recs[order[i]];
        ForwardOptions opt;
        opt.training = true;
        opt.want_lm_loss = want_lm;
        opt.aug_rng = &aug_rng;
        SampleOutputs out = forward_sample(m, rec, opt);
        LossBreakdown lb =
            total_loss(rec.label, out.heads, out.lm, m.cfg.loss);
        batch_task += lb.msa;
        batch_lm += lb.lm;
        batch_loss = batch_loss.defined() ? batch_loss + lb.total : lb.total;
      }
      Tensor mean_loss = scale(batch_loss, 1.0 / bsz);
      backward(mean_loss);

      // Schedule evaluated at step+1 so the first update is not the
      // zero-lr warmup origin.
      last_lr = lr_schedule(global_step + 1, warmup_steps, total_steps,
                            cfg.lr, lr_min);
      adamw_step(m.store, opt_state, opt_cfg, last_lr);
      ++global_step;

      epoch_loss += mean_loss.item() * bsz;
      epoch_task += batch_task;
      epoch_lm += batch_lm;
    }

    EvalResult val = evaluate(m, val_recs);

    EpochStats st;
    st.epoch = epoch;
    st.lr = last_lr;
    st.train_loss = epoch_loss / n;
    st.train_task = epoch_task / n;
    st.train_lm = epoch_lm / n;
    st.val_loss = val.mean_total_loss;
    st.val_mae = val.metrics.mae;

    if (st.val_loss < best_val) {
      best_val = st.val_loss;
      bad_epochs = 0;
      st.improved = true;
      result.best_epoch = epoch;
      result.best_val_loss = st.val_loss;
      result.best_val_mae = st.val_mae;
      result.best_params = snapshot_params(m.store);
      result.best_moments = opt_state;
    } else {
      ++bad_epochs;
    }

    result.history.push_back(st);
    if (log != nullptr) *log << epoch_stats_json(st) << "\n";
    ++result.epochs_run;

    if (bad_epochs > cfg.early_stop_patience) {
      result.stopped_early = true;
      break;
    }
  }

  result.global_steps = global_step;
  if (cfg.restore_best && result.best_epoch >= 0) {
    apply_checkpoint(m.store, result.best_params);
  }
  return result;
}

}  // namespace dmlf
