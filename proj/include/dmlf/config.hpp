// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON <-> configuration structs. Parsing is strict: unknown keys raise
// config errors so typos never silently fall back to defaults. Every
// from-JSON function starts from the struct defaults, so a partial object
// overrides only what it names; the to-JSON functions dump the fully
// resolved values.

#pragma once

#include <string>
#include <vector>

#include "dmlf/error.hpp"
#include "dmlf/model.hpp"
#include "dmlf/train.hpp"

namespace dmlf {

namespace detail {

inline void check_keys(const json& j, const std::vector<std::string>& known,
                       const std::string& ctx) {
  require(j.is_object(), ErrorCategory::config, ctx + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const auto& k : known)
      if (it.key() == k) { ok = true; break; }
    require(ok, ErrorCategory::config,
            "unknown key '" + it.key() + "' in " + ctx);
  }
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_enum_field(const json& j, const char* key, Gating& out) {
  if (j.contains(key)) out = gating_from_string(j.at(key).get<std::string>());
}
inline void read_enum_field(const json& j, const char* key, FusionScheme& out) {
  if (j.contains(key))
    out = fusion_scheme_from_string(j.at(key).get<std::string>());
}
inline void read_enum_field(const json& j, const char* key, FfwFt& out) {
  if (j.contains(key)) out = ffw_ft_from_string(j.at(key).get<std::string>());
}
inline void read_enum_field(const json& j, const char* key, AugKind& out) {
  if (j.contains(key)) out = aug_kind_from_string(j.at(key).get<std::string>());
}
inline void read_enum_field(const json& j, const char* key, SeqAugMode& out) {
  if (j.contains(key))
    out = seqaug_mode_from_string(j.at(key).get<std::string>());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// sub-configs
// ---------------------------------------------------------------------------

inline MlmConfig mlm_config_from_json(const json& j) {
  detail::check_keys(j,
                     {"n_layers", "d_t", "vocab_size", "n_f", "n_heads",
                      "L_t_max", "d_av", "mm_positions", "gating",
                      "fusion_scheme", "ffw_enabled", "ffw_ft", "lora_rank"},
                     "mlm config");
  MlmConfig c;
  detail::read_field(j, "n_layers", c.n_layers);
  detail::read_field(j, "d_t", c.d_t);
  detail::read_field(j, "vocab_size", c.vocab_size);
  detail::read_field(j, "n_f", c.n_f);
  detail::read_field(j, "n_heads", c.n_heads);
  detail::read_field(j, "L_t_max", c.L_t_max);
  detail::read_field(j, "d_av", c.d_av);
  detail::read_field(j, "mm_positions", c.mm_positions);
  detail::read_enum_field(j, "gating", c.gating);
  detail::read_enum_field(j, "fusion_scheme", c.fusion_scheme);
  detail::read_field(j, "ffw_enabled", c.ffw_enabled);
  detail::read_enum_field(j, "ffw_ft", c.ffw_ft);
  detail::read_field(j, "lora_rank", c.lora_rank);
  return c;
}

inline json mlm_config_to_json(const MlmConfig& c) {
  json j;
  j["n_layers"] = c.n_layers;
  j["d_t"] = c.d_t;
  j["vocab_size"] = c.vocab_size;
  j["n_f"] = c.n_f;
  j["n_heads"] = c.n_heads;
  j["L_t_max"] = c.L_t_max;
  j["d_av"] = c.d_av;
  j["mm_positions"] = c.mm_positions;
  j["gating"] = gating_to_string(c.gating);
  j["fusion_scheme"] = fusion_scheme_to_string(c.fusion_scheme);
  j["ffw_enabled"] = c.ffw_enabled;
  j["ffw_ft"] = ffw_ft_to_string(c.ffw_ft);
  j["lora_rank"] = c.lora_rank;
  return j;
}

inline AvEncoderConfig av_config_from_json(const json& j) {
  detail::check_keys(
      j, {"d_a_in", "d_v_in", "d_av", "n_enc_layers", "L_av", "n_heads"},
      "av config");
  AvEncoderConfig c;
  detail::read_field(j, "d_a_in", c.d_a_in);
  detail::read_field(j, "d_v_in", c.d_v_in);
  detail::read_field(j, "d_av", c.d_av);
  detail::read_field(j, "n_enc_layers", c.n_enc_layers);
  detail::read_field(j, "L_av", c.L_av);
  detail::read_field(j, "n_heads", c.n_heads);
  return c;
}

inline json av_config_to_json(const AvEncoderConfig& c) {
  json j;
  j["d_a_in"] = c.d_a_in;
  j["d_v_in"] = c.d_v_in;
  j["d_av"] = c.d_av;
  j["n_enc_layers"] = c.n_enc_layers;
  j["L_av"] = c.L_av;
  j["n_heads"] = c.n_heads;
  return j;
}

inline LossWeights loss_weights_from_json(const json& j) {
  detail::check_keys(j, {"lambda_av", "lambda_t", "lambda_f", "lambda_lm"},
                     "loss config");
  LossWeights w;
  detail::read_field(j, "lambda_av", w.lambda_av);
  detail::read_field(j, "lambda_t", w.lambda_t);
  detail::read_field(j, "lambda_f", w.lambda_f);
  detail::read_field(j, "lambda_lm", w.lambda_lm);
  return w;
}

inline json loss_weights_to_json(const LossWeights& w) {
  json j;
  j["lambda_av"] = w.lambda_av;
  j["lambda_t"] = w.lambda_t;
  j["lambda_f"] = w.lambda_f;
  j["lambda_lm"] = w.lambda_lm;
  return j;
}

inline AugConfig aug_config_from_json(const json& j) {
  detail::check_keys(j, {"kind", "p", "mode", "sigma", "q"}, "aug config");
  AugConfig c;
  detail::read_enum_field(j, "kind", c.kind);
  detail::read_field(j, "p", c.p);
  detail::read_enum_field(j, "mode", c.mode);
  detail::read_field(j, "sigma", c.sigma);
  detail::read_field(j, "q", c.q);
  return c;
}

inline json aug_config_to_json(const AugConfig& c) {
  json j;
  j["kind"] = aug_kind_to_string(c.kind);
  j["p"] = c.p;
  j["mode"] = seqaug_mode_to_string(c.mode);
  j["sigma"] = c.sigma;
  j["q"] = c.q;
  return j;
}

// ---------------------------------------------------------------------------
// top-level configs
// ---------------------------------------------------------------------------

inline ModelConfig model_config_from_json(const json& j) {
  detail::check_keys(j, {"mlm", "av", "loss", "aug", "seed"}, "model config");
  ModelConfig c;
  if (j.contains("mlm")) c.mlm = mlm_config_from_json(j.at("mlm"));
  if (j.contains("av")) c.av = av_config_from_json(j.at("av"));
  if (j.contains("loss")) c.loss = loss_weights_from_json(j.at("loss"));
  if (j.contains("aug")) c.aug = aug_config_from_json(j.at("aug"));
  detail::read_field(j, "seed", c.seed);
  return c;
}

inline json model_config_to_json(const ModelConfig& c) {
  json j;
  j["mlm"] = mlm_config_to_json(c.mlm);
  j["av"] = av_config_to_json(c.av);
  j["loss"] = loss_weights_to_json(c.loss);
  j["aug"] = aug_config_to_json(c.aug);
  j["seed"] = c.seed;
  return j;
}

inline TrainConfig train_config_from_json(const json& j) {
  detail::check_keys(j,
                     {"lr", "beta1", "beta2", "eps", "weight_decay",
                      "batch_size", "max_epochs", "warmup_epochs",
                      "early_stop_patience", "lr_min_ratio", "seed",
                      "restore_best"},
                     "train config");
  TrainConfig c;
  detail::read_field(j, "lr", c.lr);
  detail::read_field(j, "beta1", c.beta1);
  detail::read_field(j, "beta2", c.beta2);
  detail::read_field(j, "eps", c.eps);
  detail::read_field(j, "weight_decay", c.weight_decay);
  detail::read_field(j, "batch_size", c.batch_size);
  detail::read_field(j, "max_epochs", c.max_epochs);
  detail::read_field(j, "warmup_epochs", c.warmup_epochs);
  detail::read_field(j, "early_stop_patience", c.early_stop_patience);
  detail::read_field(j, "lr_min_ratio", c.lr_min_ratio);
  detail::read_field(j, "seed", c.seed);
  detail::read_field(j, "restore_best", c.restore_best);
  return c;
}

inline json train_config_to_json(const TrainConfig& c) {
  json j;
  j["lr"] = c.lr;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["eps"] = c.eps;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["max_epochs"] = c.max_epochs;
  j["warmup_epochs"] = c.warmup_epochs;
  j["early_stop_patience"] = c.early_stop_patience;
  j["lr_min_ratio"] = c.lr_min_ratio;
  j["seed"] = c.seed;
  j["restore_best"] = c.restore_best;
  return j;
}

inline AvPretrainConfig av_pretrain_config_from_json(const json& j) {
  detail::check_keys(j, {"epochs", "batch_size", "lr", "weight_decay", "seed"},
                     "pretrain config");
  AvPretrainConfig c;
  detail::read_field(j, "epochs", c.epochs);
  detail::read_field(j, "batch_size", c.batch_size);
  detail::read_field(j, "lr", c.lr);
  detail::read_field(j, "weight_decay", c.weight_decay);
  detail::read_field(j, "seed", c.seed);
  return c;
}

inline json av_pretrain_config_to_json(const AvPretrainConfig& c) {
  json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  return j;
}

inline json synthetic_spec_to_json(const SyntheticSpec& s) {
  json j;
  j["w_t"] = s.w_t;
  j["w_av"] = s.w_av;
  j["n_class_words"] = s.n_class_words;
  j["L_t_min"] = s.L_t_min;
  j["L_t_max"] = s.L_t_max;
  j["L_av"] = s.L_av;
  j["d_a_in"] = s.d_a_in;
  j["d_v_in"] = s.d_v_in;
  j["signal_channel"] = s.signal_channel;
  j["noise"] = s.noise;
  j["label_scale"] = s.label_scale;
  j["label_range"] = s.label_range;
  j["n_train"] = s.n_train;
  j["n_val"] = s.n_val;
  j["n_test"] = s.n_test;
  j["seed"] = s.seed;
  return j;
}

}  // namespace dmlf
