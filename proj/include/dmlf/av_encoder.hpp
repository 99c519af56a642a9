// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Audiovisual encoder: two modality-specific pre-norm transformer encoders
// whose per-timestep outputs are concatenated along the feature axis and
// fused by a residual feed-forward, producing the context Z that the
// gated-cross-attention blocks consume. Also: standalone pretraining with a
// mean-pool regression head, and the three initialization modes for carrying
// pretrained weights into the full model.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dmlf/attention.hpp"
#include "dmlf/checkpoint.hpp"
#include "dmlf/data.hpp"
#include "dmlf/error.hpp"
#include "dmlf/nn.hpp"
#include "dmlf/optim.hpp"
#include "dmlf/tensor.hpp"

namespace dmlf {

struct AvEncoderConfig {
  int d_a_in = 6;
  int d_v_in = 6;
  int d_av = 16;        // fused width; per-modality width is d_av / 2
  int n_enc_layers = 1;
  int L_av = 8;
  int n_heads = 2;
};

inline void validate_av_config(const AvEncoderConfig& c) {
  require(c.L_av >= 1, ErrorCategory::config, "L_av must be >= 1");
  require(c.d_av >= 2 && c.d_av % 2 == 0, ErrorCategory::config,
          "d_av must be even (per-modality width is d_av/2)");
  require((c.d_av / 2) % c.n_heads == 0, ErrorCategory::config,
          "d_av/2 must be divisible by n_heads");
  require(c.n_enc_layers >= 1, ErrorCategory::config, "n_enc_layers must be >= 1");
  require(c.d_a_in >= 1 && c.d_v_in >= 1, ErrorCategory::config,
          "raw feature dims must be >= 1");
}

// Fixed sinusoidal positional table [L, d] (not a parameter).
inline Tensor sinusoidal_pe(int L, int d) {
  Tensor pe = Tensor::zeros({L, d});
  for (int pos = 0; pos < L; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe.data()[static_cast<size_t>(pos) * d + i] =
          static_cast<float>((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

struct AvEncoderParams {
  LinearParams proj_a;  // d_a_in -> d_enc
  LinearParams proj_v;  // d_v_in -> d_enc
  std::vector<EncoderLayerParams> enc_a;
  std::vector<EncoderLayerParams> enc_v;
  FfwParams fusion;     // residual FFW over the concatenated halves, d_av -> d_av
  Tensor pe;            // [L_av, d_enc], constant
};

inline AvEncoderParams init_av_params(const AvEncoderConfig& c, Rng& rng,
                                      bool trainable = true) {
  validate_av_config(c);
  const int d_enc = c.d_av / 2;
  AvEncoderParams p;
  p.proj_a = init_linear(c.d_a_in, d_enc, rng, trainable);
  p.proj_v = init_linear(c.d_v_in, d_enc, rng, trainable);
  for (int l = 0; l < c.n_enc_layers; ++l) {
    p.enc_a.push_back(init_encoder_layer(d_enc, c.n_heads, rng, trainable));
    p.enc_v.push_back(init_encoder_layer(d_enc, c.n_heads, rng, trainable));
  }
  p.fusion = init_ffw(c.d_av, c.d_av, c.d_av, rng, Act::gelu, trainable);
  p.pe = sinusoidal_pe(c.L_av, d_enc);
  return p;
}

inline void register_params(ParamStore& s, const std::string& prefix, const AvEncoderParams& p) {
  register_params(s, prefix + ".proj_a", p.proj_a);
  register_params(s, prefix + ".proj_v", p.proj_v);
  for (size_t l = 0; l < p.enc_a.size(); ++l)
    register_params(s, prefix + ".enc_a." + std::to_string(l), p.enc_a[l]);
  for (size_t l = 0; l < p.enc_v.size(); ++l)
    register_params(s, prefix + ".enc_v." + std::to_string(l), p.enc_v[l]);
  register_params(s, prefix + ".fusion", p.fusion);
}

// Z = H + FusionFFW(H) where H = [Enc_a(proj(Xa)+PE) || Enc_v(proj(Xv)+PE)]
// per timestep. Z never sees text input by construction.
inline Tensor av_encode(const Tensor& Xa, const Tensor& Xv, const AvEncoderParams& p,
                        const AvEncoderConfig& c, AttnStats* stats = nullptr) {
  require(Xa.ndim() == 2 && Xv.ndim() == 2, ErrorCategory::dimension,
          "av_encode expects 2-D [L_av, d] inputs");
  require(Xa.dim(0) == c.L_av && Xv.dim(0) == c.L_av, ErrorCategory::alignment,
          "audio/vision length mismatch: expected L_av=" + std::to_string(c.L_av) +
              ", got audio " + std::to_string(Xa.dim(0)) + ", vision " +
              std::to_string(Xv.dim(0)));
  require(Xa.dim(1) == c.d_a_in && Xv.dim(1) == c.d_v_in, ErrorCategory::dimension,
          "audio/vision feature width mismatch");

  Tensor Ha = add(linear(Xa, p.proj_a), p.pe);
  for (const auto& layer : p.enc_a) Ha = encoder_layer(Ha, layer, std::nullopt, stats);
  Tensor Hv = add(linear(Xv, p.proj_v), p.pe);
  for (const auto& layer : p.enc_v) Hv = encoder_layer(Hv, layer, std::nullopt, stats);
  Tensor H = concat({Ha, Hv}, 1);  // [L_av, d_av]
  return add(H, ffw(H, p.fusion));
}

enum class AvInit { pre_tune, pre_freeze, random_tune };

inline AvInit av_init_from_string(const std::string& s) {
  if (s == "pre_tune") return AvInit::pre_tune;
  if (s == "pre_freeze") return AvInit::pre_freeze;
  if (s == "random_tune") return AvInit::random_tune;
  fail(ErrorCategory::config, "unknown av-init mode '" + s + "'");
}

inline std::string av_init_to_string(AvInit m) {
  switch (m) {
    case AvInit::pre_tune: return "pre_tune";
    case AvInit::pre_freeze: return "pre_freeze";
    case AvInit::random_tune: return "random_tune";
  }
  fail(ErrorCategory::contract, "invalid av-init enum");
}

// Builds AV parameters under the given init mode. Always draws the same RNG
// sequence (fresh init first), so downstream parameter initialization is
// identical across modes; pre_* then overwrite values from the snapshot.
// Snapshot entries are expected under the "av." prefix.
inline AvEncoderParams init_av(const AvEncoderConfig& c, AvInit mode,
                               const CheckpointTable* snapshot, Rng& rng) {
  AvEncoderParams p = init_av_params(c, rng, /*trainable=*/true);
  if (mode == AvInit::random_tune) return p;
  require(snapshot != nullptr, ErrorCategory::config,
          av_init_to_string(mode) + " requires a pretrained AV snapshot");
  ParamStore tmp;
  register_params(tmp, "av", p);
  for (auto& [name, tensor] : tmp.items()) {
    auto it = snapshot->find(name);
    require(it != snapshot->end(), ErrorCategory::config,
            "AV snapshot missing parameter '" + name + "'");
    require(it->second.shape == tensor.shape(), ErrorCategory::config,
            "AV snapshot shape mismatch for '" + name + "' (config differs from pretraining)");
    tensor.data() = it->second.data;
    if (mode == AvInit::pre_freeze) tensor.set_requires_grad(false);
  }
  return p;
}

// ---------------------------------------------------------------------------
// standalone pretraining: mean-pool(Z) -> linear -> scalar, L1 loss
// ---------------------------------------------------------------------------

struct AvPretrainConfig {
  int epochs = 30;
  int batch_size = 32;
  float lr = 3e-3f;
  float weight_decay = 0.01f;
  uint64_t seed = 1;
};

struct AvPretrainResult {
  CheckpointTable snapshot;  // best-validation-epoch parameters ("av.*", "av_head.*")
  std::vector<float> train_mae;  // per epoch
  std::vector<float> val_mae;    // per epoch
  float best_val_mae = 0.0f;
  int best_epoch = -1;
};

inline Tensor record_audio_tensor(const DatasetRecord& r, const AvEncoderConfig& c) {
  return Tensor::from_data({c.L_av, c.d_a_in}, r.audio);
}
inline Tensor record_vision_tensor(const DatasetRecord& r, const AvEncoderConfig& c) {
  return Tensor::from_data({c.L_av, c.d_v_in}, r.vision);
}

// Prediction of the standalone AV regressor for one record.
inline Tensor av_predict(const DatasetRecord& r, const AvEncoderParams& p,
                         const LinearParams& head, const AvEncoderConfig& c) {
  Tensor Z = av_encode(record_audio_tensor(r, c), record_vision_tensor(r, c), p, c);
  Tensor pooled = reshape(mean_axis(Z, 0), {1, c.d_av});
  return reshape(linear(pooled, head), {1});
}

inline float av_eval_mae(const std::vector<DatasetRecord>& records, const AvEncoderParams& p,
                         const LinearParams& head, const AvEncoderConfig& c) {
  require(!records.empty(), ErrorCategory::data, "evaluating on empty dataset");
  double acc = 0.0;
  for (const auto& r : records)
    acc += std::fabs(av_predict(r, p, head, c).item() - r.label);
  return static_cast<float>(acc / records.size());
}

inline AvPretrainResult pretrain_av(const std::vector<DatasetRecord>& train,
                                    const std::vector<DatasetRecord>& val,
                                    const AvEncoderConfig& c, const AvPretrainConfig& tc) {
  require(!train.empty() && !val.empty(), ErrorCategory::data,
          "pretraining requires non-empty train and val sets");
  Rng init_rng = Rng::derive(tc.seed, 100);
  Rng shuffle_rng = Rng::derive(tc.seed, 101);
  AvEncoderParams p = init_av_params(c, init_rng, /*trainable=*/true);
  LinearParams head = init_linear(c.d_av, 1, init_rng, /*trainable=*/true);

  ParamStore store;
  register_params(store, "av", p);
  register_params(store, "av_head", head);

  AdamWConfig opt;
  opt.lr = tc.lr;
  opt.weight_decay = tc.weight_decay;
  AdamWState state;

  AvPretrainResult result;
  result.best_val_mae = std::numeric_limits<float>::infinity();
  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    // token length is irrelevant here; batches carry record indices only
    BatchSet bs = make_batches(train, tc.batch_size, /*L_t_max=*/1024, &shuffle_rng);
    double train_abs = 0.0;
    size_t train_n = 0;
    for (const auto& batch : bs.batches) {
      store.zero_grad();
      std::vector<Tensor> losses;
      for (int ri : batch.record_indices) {
        const auto& r = train[static_cast<size_t>(ri)];
        Tensor diff = abs(sub(av_predict(r, p, head, c), Tensor::scalar(r.label)));
        train_abs += diff.item();
        ++train_n;
        losses.push_back(diff);
      }
      Tensor loss = mean_all(concat(losses, 0));
      backward(loss);
      adamw_step(store, state, opt, opt.lr);
    }
    result.train_mae.push_back(static_cast<float>(train_abs / static_cast<double>(train_n)));
    const float vmae = av_eval_mae(val, p, head, c);
    result.val_mae.push_back(vmae);
    if (vmae < result.best_val_mae) {
      result.best_val_mae = vmae;
      result.best_epoch = epoch;
      result.snapshot = snapshot_params(store);
    }
  }
  return result;
}

}  // namespace dmlf
