// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Full model assembly: AV encoder -> Z, language embedding (optionally
// augmented during training), fusion tokens, the frozen-LM/MM-block stack,
// and all four heads. Forward runs one sample at a time on its real
// (unpadded) token length; batch padding never enters the graph.

#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "dmlf/attention.hpp"
#include "dmlf/augment.hpp"
#include "dmlf/av_encoder.hpp"
#include "dmlf/checkpoint.hpp"
#include "dmlf/data.hpp"
#include "dmlf/error.hpp"
#include "dmlf/heads.hpp"
#include "dmlf/metrics.hpp"
#include "dmlf/mlm.hpp"
#include "dmlf/tensor.hpp"

namespace dmlf {

enum class AugKind { none, seqaug, noise, dropout };

inline AugKind aug_kind_from_string(const std::string& s) {
  if (s == "none") return AugKind::none;
  if (s == "seqaug") return AugKind::seqaug;
  if (s == "noise") return AugKind::noise;
  if (s == "dropout") return AugKind::dropout;
  fail(ErrorCategory::config, "unknown augmentation kind '" + s + "'");
}

inline std::string aug_kind_to_string(AugKind k) {
  switch (k) {
    case AugKind::none: return "none";
    case AugKind::seqaug: return "seqaug";
    case AugKind::noise: return "noise";
    case AugKind::dropout: return "dropout";
  }
  fail(ErrorCategory::contract, "unreachable augmentation kind");
}

struct AugConfig {
  AugKind kind = AugKind::seqaug;
  float p = 0.2f;                        // seqaug feature-selection probability
  SeqAugMode mode = SeqAugMode::permute;
  float sigma = 0.1f;                    // noise std-dev
  float q = 0.1f;                        // dropout probability
};

struct ModelConfig {
  MlmConfig mlm;
  AvEncoderConfig av;
  LossWeights loss;
  AugConfig aug;
  uint64_t seed = 7;
};

inline void validate_model_config(const ModelConfig& c) {
  validate_mlm_config(c.mlm);
  validate_av_config(c.av);
  validate_loss_weights(c.loss);
  require(c.mlm.d_av == c.av.d_av, ErrorCategory::config,
          "mlm.d_av must equal av.d_av (GCA consumes the AV encoder output)");
  require(c.aug.p >= 0.0f && c.aug.p <= 1.0f, ErrorCategory::config, "aug.p must be in [0,1]");
  require(c.aug.sigma >= 0.0f, ErrorCategory::config, "aug.sigma must be >= 0");
  require(c.aug.q >= 0.0f && c.aug.q < 1.0f, ErrorCategory::config, "aug.q must be in [0,1)");
}

struct Model {
  ModelConfig cfg;
  MlmParams mlm;
  AvEncoderParams av;
  HeadsParams heads;
  ParamStore store;
};

// Construction draws the same RNG sequence regardless of AV init mode, so
// switching modes changes AV values only.
inline Model init_model(const ModelConfig& cfg, AvInit av_mode = AvInit::random_tune,
                        const CheckpointTable* av_snapshot = nullptr,
                        FfwInitMode ffw_init = FfwInitMode::from_lm) {
  validate_model_config(cfg);
  Model m;
  m.cfg = cfg;
  Rng rng = Rng::derive(cfg.seed, 0);
  m.mlm = init_mlm(cfg.mlm, rng, ffw_init);
  m.av = init_av(cfg.av, av_mode, av_snapshot, rng);
  m.heads = init_heads(cfg.mlm.d_t, cfg.mlm.d_av, rng, /*trainable=*/true);
  register_params(m.store, m.mlm);
  register_params(m.store, "av", m.av);
  register_params(m.store, m.heads);
  return m;
}

// Bit-exact isolation probes inject +delta into exactly one element of one
// input stream. The av stream spans audio then vision, flattened.
struct PerturbSpec {
  enum class Stream { text, av, fusion };
  Stream stream = Stream::av;
  size_t index = 0;
  float delta = 1.0f;
};

struct ForwardOptions {
  bool training = false;
  bool want_lm_loss = false;
  Rng* aug_rng = nullptr;          // required when training with augmentation
  AttnStats* stats = nullptr;
  const PerturbSpec* perturb = nullptr;
};

struct SampleOutputs {
  HeadOutputs heads;
  Tensor lm;         // defined only when requested
  Tensor z_mean;     // [d_av]
  Tensor x_tK;       // [d_t]
  Tensor xf_mean;    // [d_t]
  Tensor X_t_final;  // [L_t, d_t]
  Tensor X_f_final;  // [n_f, d_t]
  Tensor lm_logits;  // [L_t, vocab]
};

inline SampleOutputs forward_sample(Model& m, const DatasetRecord& r,
                                    const ForwardOptions& opt = {}) {
  std::vector<int> ids = r.tokens;
  if (static_cast<int>(ids.size()) > m.cfg.mlm.L_t_max)
    ids.resize(static_cast<size_t>(m.cfg.mlm.L_t_max));
  const int L_t = static_cast<int>(ids.size());

  // audiovisual stream (with optional probe bump on the raw features)
  std::vector<float> audio = r.audio;
  std::vector<float> vision = r.vision;
  if (opt.perturb && opt.perturb->stream == PerturbSpec::Stream::av) {
    const size_t i = opt.perturb->index;
    require(i < audio.size() + vision.size(), ErrorCategory::contract,
            "av perturbation index out of range");
    if (i < audio.size()) {
      audio[i] += opt.perturb->delta;
    } else {
      vision[i - audio.size()] += opt.perturb->delta;
    }
  }
  Tensor Xa = Tensor::from_data({m.cfg.av.L_av, m.cfg.av.d_a_in}, std::move(audio));
  Tensor Xv = Tensor::from_data({m.cfg.av.L_av, m.cfg.av.d_v_in}, std::move(vision));
  Tensor Z = av_encode(Xa, Xv, m.av, m.cfg.av, opt.stats);
  Tensor z_mean = mean_axis(Z, 0);

  // language stream
  Tensor X_t = embed_language(ids, m.mlm, m.cfg.mlm);
  if (opt.perturb && opt.perturb->stream == PerturbSpec::Stream::text) {
    require(opt.perturb->index < X_t.numel(), ErrorCategory::contract,
            "text perturbation index out of range");
    std::vector<float> bumped = X_t.data();
    bumped[opt.perturb->index] += opt.perturb->delta;
    X_t = Tensor::from_data(X_t.shape(), std::move(bumped));
  }
  if (opt.training && m.cfg.aug.kind != AugKind::none) {
    require(opt.aug_rng != nullptr, ErrorCategory::contract,
            "training with augmentation requires an rng");
    switch (m.cfg.aug.kind) {
      case AugKind::seqaug:
        X_t = seqaug(X_t, m.cfg.aug.p, m.cfg.aug.mode, *opt.aug_rng);
        break;
      case AugKind::noise:
        X_t = alt_augment(X_t, AltAugKind::noise, m.cfg.aug.sigma, *opt.aug_rng);
        break;
      case AugKind::dropout:
        X_t = alt_augment(X_t, AltAugKind::dropout, m.cfg.aug.q, *opt.aug_rng);
        break;
      case AugKind::none:
        break;
    }
  }

  // fusion tokens (probe bump swaps in a detached copy)
  Tensor X_f = m.mlm.fusion_tokens;
  if (opt.perturb && opt.perturb->stream == PerturbSpec::Stream::fusion) {
    require(opt.perturb->index < X_f.numel(), ErrorCategory::contract,
            "fusion perturbation index out of range");
    std::vector<float> bumped = X_f.data();
    bumped[opt.perturb->index] += opt.perturb->delta;
    X_f = Tensor::from_data(X_f.shape(), std::move(bumped));
  }

  Tensor H0 = concat({X_t, X_f}, 0);
  MlmOutputs lm_out = mlm_forward_from(H0, Z, m.mlm, m.cfg.mlm, L_t, opt.stats);

  SampleOutputs out;
  out.z_mean = z_mean;
  out.X_t_final = lm_out.X_t_final;
  out.X_f_final = lm_out.X_f_final;
  out.lm_logits = lm_out.lm_logits;
  out.x_tK = select_row(lm_out.X_t_final, L_t - 1);
  out.xf_mean = mean_axis(lm_out.X_f_final, 0);
  out.heads = modality_heads(z_mean, out.x_tK, out.xf_mean, m.heads);
  if (opt.want_lm_loss) out.lm = lm_loss(lm_out.lm_logits, ids);
  return out;
}

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

struct EvalResult {
  MetricsReport metrics;    // on the task head y_o
  float mean_total_loss = 0.0f;  // L_tot with the run's weights (early-stop signal)
  float mae_y_t = 0.0f;     // text-only head error
  float mae_y_av = 0.0f;    // audiovisual head error
  float mae_y_f = 0.0f;     // fusion head error
  std::vector<float> preds; // y_o per record
};

inline EvalResult evaluate(Model& m, const std::vector<DatasetRecord>& records) {
  require(!records.empty(), ErrorCategory::data, "evaluating on empty dataset");
  EvalResult res;
  std::vector<float> labels;
  double t_abs = 0.0, av_abs = 0.0, f_abs = 0.0, loss_acc = 0.0;
  const bool need_lm = m.cfg.loss.lambda_lm > 0.0f;
  for (const auto& r : records) {
    ForwardOptions opt;
    opt.want_lm_loss = need_lm;
    SampleOutputs s = forward_sample(m, r, opt);
    LossBreakdown b = total_loss(r.label, s.heads, s.lm, m.cfg.loss);
    loss_acc += b.total_value;
    res.preds.push_back(s.heads.y_o.item());
    labels.push_back(r.label);
    t_abs += std::fabs(s.heads.y_t.item() - r.label);
    av_abs += std::fabs(s.heads.y_av.item() - r.label);
    f_abs += std::fabs(s.heads.y_f.item() - r.label);
  }
  const double n = static_cast<double>(records.size());
  res.metrics = compute_metrics(res.preds, labels);
  res.mean_total_loss = static_cast<float>(loss_acc / n);
  res.mae_y_t = static_cast<float>(t_abs / n);
  res.mae_y_av = static_cast<float>(av_abs / n);
  res.mae_y_f = static_cast<float>(f_abs / n);
  return res;
}

}  // namespace dmlf
