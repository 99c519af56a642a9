// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Analysis utilities: input-perturbation information-flow probes, gate
// activation traces, attention score-memory budgets, and one-factor
// ablation grids.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dmlf/attention.hpp"
#include "dmlf/data.hpp"
#include "dmlf/error.hpp"
#include "dmlf/mlm.hpp"
#include "dmlf/model.hpp"

namespace dmlf {

// ---------------------------------------------------------------------------
// information-flow probe
// ---------------------------------------------------------------------------

// Which outputs changed (bit-exactly) after perturbing a single input
// element. Evaluation forwards are deterministic, so any difference is a
// genuine data dependency, and any equality a genuine independence.
struct ProbeReport {
  PerturbSpec::Stream stream = PerturbSpec::Stream::av;
  bool y_o = false;
  bool y_av = false;
  bool y_t = false;
  bool y_f = false;
  bool z = false;          // fused audiovisual summary
  bool x_t = false;        // final-layer language states
  bool x_f = false;        // final-layer fusion tokens
  bool lm_logits = false;  // next-token logits
};

namespace detail {

inline bool bits_differ(const Tensor& a, const Tensor& b) {
  const std::vector<float>& va = a.data();
  const std::vector<float>& vb = b.data();
  require(va.size() == vb.size(), ErrorCategory::contract,
          "probe outputs changed size");
  for (size_t i = 0; i < va.size(); ++i) {
    if (std::memcmp(&va[i], &vb[i], sizeof(float)) != 0) return true;
  }
  return false;
}

}  // namespace detail

inline ProbeReport info_flow_probe(Model& m, const DatasetRecord& rec,
                                   const PerturbSpec& spec) {
  ForwardOptions clean_opt;
  SampleOutputs clean = forward_sample(m, rec, clean_opt);

  ForwardOptions pert_opt;
  pert_opt.perturb = &spec;
  SampleOutputs pert = forward_sample(m, rec, pert_opt);

  ProbeReport r;
  r.stream = spec.stream;
  r.y_o = detail::bits_differ(clean.heads.y_o, pert.heads.y_o);
  r.y_av = detail::bits_differ(clean.heads.y_av, pert.heads.y_av);
  r.y_t = detail::bits_differ(clean.heads.y_t, pert.heads.y_t);
  r.y_f = detail::bits_differ(clean.heads.y_f, pert.heads.y_f);
  r.z = detail::bits_differ(clean.z_mean, pert.z_mean);
  r.x_t = detail::bits_differ(clean.X_t_final, pert.X_t_final);
  r.x_f = detail::bits_differ(clean.X_f_final, pert.X_f_final);
  r.lm_logits = detail::bits_differ(clean.lm_logits, pert.lm_logits);
  return r;
}

// The architectural causality contract: audiovisual and fusion-token
// perturbations must never reach the language states (language positions
// attend only to earlier language positions), while text perturbations may
// reach everything except the audiovisual encoder.
inline bool probe_respects_causality(const ProbeReport& r) {
  switch (r.stream) {
    case PerturbSpec::Stream::text:
      return !r.z && !r.y_av;
    case PerturbSpec::Stream::av:
    case PerturbSpec::Stream::fusion:
      return !r.x_t && !r.y_t && !r.lm_logits;
  }
  fail(ErrorCategory::contract, "unreachable probe stream");
}

inline std::string probe_report_json(const ProbeReport& r) {
  nlohmann::json j;
  switch (r.stream) {
    case PerturbSpec::Stream::text: j["stream"] = "text"; break;
    case PerturbSpec::Stream::av: j["stream"] = "av"; break;
    case PerturbSpec::Stream::fusion: j["stream"] = "fusion"; break;
  }
  j["y_o"] = r.y_o;
  j["y_av"] = r.y_av;
  j["y_t"] = r.y_t;
  j["y_f"] = r.y_f;
  j["z"] = r.z;
  j["x_t"] = r.x_t;
  j["x_f"] = r.x_f;
  j["lm_logits"] = r.lm_logits;
  j["causality_ok"] = probe_respects_causality(r);
  return j.dump();
}

// ---------------------------------------------------------------------------
// gate traces
// ---------------------------------------------------------------------------

struct GateTraceEntry {
  int position = 0;  // 1-based layer index of the multimodal block
  double g1 = 0.0;   // cross-attention branch gate
  double g2 = 0.0;   // feed-forward branch gate
  bool has_ffw = true;
};

inline double gate_scalar(double a, Gating kind) {
  switch (kind) {
    case Gating::sigmoid: return 1.0 / (1.0 + std::exp(-a));
    case Gating::tanh: return std::tanh(a);
    case Gating::none: return 1.0;
  }
  fail(ErrorCategory::contract, "unreachable gating kind");
}

inline std::vector<GateTraceEntry> gate_trace(const Model& m) {
  std::vector<GateTraceEntry> out;
  for (const auto& [pos, mm] : m.mlm.mm_blocks) {
    GateTraceEntry e;
    e.position = pos;
    e.g1 = gate_scalar(mm.a1.data()[0], m.cfg.mlm.gating);
    e.g2 = gate_scalar(mm.a2.data()[0], m.cfg.mlm.gating);
    e.has_ffw = m.cfg.mlm.ffw_enabled;
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------
// attention memory budget
// ---------------------------------------------------------------------------

// Score-matrix element counts (per head and summed over heads/blocks) for
// one forward pass at the given sequence lengths. `joint_attn` is the
// counterfactual cost of cross-attending the full language sequence to the
// audiovisual sequence after interleaving, i.e. (L_t + L_av)^2 per head,
// which the fusion-token design replaces with n_f * L_av.
struct MemoryBudget {
  int L_t = 0;
  int L_av = 0;
  long long gca_per_head = 0;            // n_f * L_av
  long long self_attn_per_head = 0;      // (L_t + n_f)^2
  long long joint_attn_per_head = 0;       // (L_t + L_av)^2
  long long gca_total = 0;               // over heads and multimodal blocks
  long long self_attn_total = 0;         // over heads and LM blocks
  long long joint_attn_total = 0;          // over heads and multimodal blocks
};

inline MemoryBudget memory_budget(const MlmConfig& c, int L_t, int L_av) {
  require(L_t >= 1 && L_av >= 1, ErrorCategory::config,
          "memory budget needs positive sequence lengths");
  MemoryBudget b;
  b.L_t = L_t;
  b.L_av = L_av;
  b.gca_per_head = static_cast<long long>(c.n_f) * L_av;
  b.self_attn_per_head =
      static_cast<long long>(L_t + c.n_f) * (L_t + c.n_f);
  b.joint_attn_per_head = static_cast<long long>(L_t + L_av) * (L_t + L_av);
  const long long n_mm = static_cast<long long>(c.mm_positions.size());
  b.gca_total = b.gca_per_head * c.n_heads * n_mm;
  b.self_attn_total = b.self_attn_per_head * c.n_heads * c.n_layers;
  b.joint_attn_total = b.joint_attn_per_head * c.n_heads * n_mm;
  return b;
}

// Sums recorded score-matrix sizes, optionally restricted to entries whose
// query length matches `query_len` (useful to isolate the cross-attention
// matrices, whose query side is always the fusion-token count).
inline long long measured_score_elements(const AttnStats& stats,
                                         int query_len = -1) {
  long long total = 0;
  for (const auto& e : stats.scores) {
    if (query_len >= 0 && e.lq != query_len) continue;
    total += static_cast<long long>(e.lq) * e.lk * e.n_heads;
  }
  return total;
}

// ---------------------------------------------------------------------------
// ablation grid
// ---------------------------------------------------------------------------

// One run of a one-factor-at-a-time sweep: the base configuration with a
// single axis value substituted.
struct GridEntry {
  std::string id;
  ModelConfig cfg;
  AvInit av_init = AvInit::random_tune;
};

namespace detail {

inline GridEntry grid_base(const ModelConfig& base, AvInit av,
                           const std::string& id) {
  GridEntry e;
  e.id = id;
  e.cfg = base;
  e.av_init = av;
  return e;
}

}  // namespace detail

// Supported axes: "n_f" (fusion-token counts 8/12/16/20), "fusion" (which
// rows feed cross-attention, plus a no-FFW variant), "loss" (drop one
// auxiliary term at a time), "gating", "aug", "av_init", and "mm_count"
// (how many of the top LM layers carry a multimodal block, stride 1).
inline std::vector<GridEntry> ablation_grid(
    const ModelConfig& base, AvInit base_av,
    const std::vector<std::string>& axes) {
  require(!axes.empty(), ErrorCategory::config, "ablation grid needs at least one axis");
  validate_model_config(base);

  std::vector<GridEntry> out;
  out.push_back(detail::grid_base(base, base_av, "base"));

  for (const std::string& axis : axes) {
    if (axis == "n_f") {
      for (int nf : {8, 12, 16, 20}) {
        GridEntry e = detail::grid_base(base, base_av, "n_f=" + std::to_string(nf));
        e.cfg.mlm.n_f = nf;
        out.push_back(e);
      }
    } else if (axis == "fusion") {
      for (FusionScheme s : {FusionScheme::f_only, FusionScheme::t_and_f,
                             FusionScheme::t_only}) {
        GridEntry e = detail::grid_base(
            base, base_av, "fusion=" + fusion_scheme_to_string(s));
        e.cfg.mlm.fusion_scheme = s;
        e.cfg.mlm.ffw_enabled = true;
        out.push_back(e);
      }
      GridEntry e = detail::grid_base(base, base_av, "fusion=f_only_no_ffw");
      e.cfg.mlm.fusion_scheme = FusionScheme::f_only;
      e.cfg.mlm.ffw_enabled = false;
      out.push_back(e);
    } else if (axis == "loss") {
      struct Drop {
        const char* id;
        float LossWeights::*field;
      };
      const Drop drops[] = {{"loss=no_av", &LossWeights::lambda_av},
                            {"loss=no_t", &LossWeights::lambda_t},
                            {"loss=no_f", &LossWeights::lambda_f},
                            {"loss=no_lm", &LossWeights::lambda_lm}};
      for (const Drop& d : drops) {
        GridEntry e = detail::grid_base(base, base_av, d.id);
        e.cfg.loss.*d.field = 0.0f;
        out.push_back(e);
      }
    } else if (axis == "gating") {
      for (Gating g : {Gating::sigmoid, Gating::tanh, Gating::none}) {
        GridEntry e =
            detail::grid_base(base, base_av, "gating=" + gating_to_string(g));
        e.cfg.mlm.gating = g;
        out.push_back(e);
      }
    } else if (axis == "aug") {
      for (AugKind k : {AugKind::seqaug, AugKind::noise, AugKind::dropout,
                        AugKind::none}) {
        GridEntry e =
            detail::grid_base(base, base_av, "aug=" + aug_kind_to_string(k));
        e.cfg.aug.kind = k;
        out.push_back(e);
      }
    } else if (axis == "av_init") {
      for (AvInit a :
           {AvInit::pre_tune, AvInit::pre_freeze, AvInit::random_tune}) {
        GridEntry e =
            detail::grid_base(base, base_av, "av_init=" + av_init_to_string(a));
        e.av_init = a;
        out.push_back(e);
      }
    } else if (axis == "mm_count") {
      for (int count = 1; count <= base.mlm.n_layers; ++count) {
        GridEntry e = detail::grid_base(base, base_av,
                                        "mm_count=" + std::to_string(count));
        e.cfg.mlm.mm_positions =
            build_mm_placement(base.mlm.n_layers, count, /*stride=*/1);
        out.push_back(e);
      }
    } else {
      fail(ErrorCategory::config, "unknown ablation axis '" + axis + "'");
    }
  }
  return out;
}

}  // namespace dmlf
