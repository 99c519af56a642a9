// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry point for the whole workflow: synthetic data
// generation, audiovisual pretraining, fusion training, evaluation,
// structural analysis, gradient checking, and ablation-grid enumeration.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error, 3 config error.
// Failures print a single machine-parsable line to stderr:
//   error:<category>: <message>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dmlf/analysis.hpp"
#include "dmlf/config.hpp"
#include "dmlf/grad_check.hpp"
#include "dmlf/train.hpp"

namespace fs = std::filesystem;
using namespace dmlf;

namespace {

// ---------------------------------------------------------------------------
// small helpers
// ---------------------------------------------------------------------------

json read_json_file(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCategory::io, "cannot open '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(ErrorCategory::config, "'" + path + "' is not valid JSON: " + e.what());
  }
  return j;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  require(f.good(), ErrorCategory::io, "cannot open '" + path + "' for writing");
  f << text;
  require(f.good(), ErrorCategory::io, "write to '" + path + "' failed");
}

// One JSON document drives a run: the model sections plus optional "train"
// and "pretrain" blocks. Unknown keys anywhere are config errors.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AvPretrainConfig pretrain;
};

RunConfig load_run_config(const std::string& path) {
  json j = read_json_file(path);
  detail::check_keys(j, {"mlm", "av", "loss", "aug", "seed", "train", "pretrain"},
                     "run config");
  RunConfig rc;
  json model_part = j;
  model_part.erase("train");
  model_part.erase("pretrain");
  rc.model = model_config_from_json(model_part);
  if (j.contains("train")) rc.train = train_config_from_json(j.at("train"));
  if (j.contains("pretrain"))
    rc.pretrain = av_pretrain_config_from_json(j.at("pretrain"));
  return rc;
}

json run_config_to_json(const RunConfig& rc) {
  json j = model_config_to_json(rc.model);
  j["train"] = train_config_to_json(rc.train);
  j["pretrain"] = av_pretrain_config_to_json(rc.pretrain);
  return j;
}

// Seed precedence: --seed flag, then DMLF_SEED, then the config file. An
// override pins every stream (model init, training, pretraining).
std::optional<uint64_t> env_seed() {
  const char* v = std::getenv("DMLF_SEED");
  if (v == nullptr || *v == '\0') return std::nullopt;
  try {
    size_t used = 0;
    const uint64_t s = std::stoull(v, &used);
    require(used == std::string(v).size(), ErrorCategory::config, "");
    return s;
  } catch (...) {
    fail(ErrorCategory::config,
         std::string("DMLF_SEED must be an unsigned integer, got '") + v + "'");
  }
}

void apply_seed_override(RunConfig& rc, const std::optional<uint64_t>& flag) {
  std::optional<uint64_t> s = flag ? flag : env_seed();
  if (!s) return;
  rc.model.seed = *s;
  rc.train.seed = *s;
  rc.pretrain.seed = *s;
}

struct Dataset {
  std::vector<DatasetRecord> train, val, test;
  DatasetMeta meta;
  bool has_test = false;
};

Dataset load_dataset(const std::string& dir, bool need_train_val = true) {
  Dataset d;
  d.meta = read_meta(dir + "/meta.json");
  if (need_train_val) {
    d.train = read_jsonl(dir + "/train.jsonl");
    d.val = read_jsonl(dir + "/val.jsonl");
  }
  if (fs::exists(dir + "/test.jsonl")) {
    d.test = read_jsonl(dir + "/test.jsonl");
    d.has_test = true;
  }
  return d;
}

void check_meta_against_config(const DatasetMeta& meta, const ModelConfig& c) {
  require(meta.d_a_in == c.av.d_a_in && meta.d_v_in == c.av.d_v_in,
          ErrorCategory::config,
          "dataset feature widths (" + std::to_string(meta.d_a_in) + "," +
              std::to_string(meta.d_v_in) + ") do not match the model (" +
              std::to_string(c.av.d_a_in) + "," + std::to_string(c.av.d_v_in) + ")");
  require(meta.L_av == c.av.L_av, ErrorCategory::config,
          "dataset clip length " + std::to_string(meta.L_av) +
              " does not match the encoder's " + std::to_string(c.av.L_av));
}

// Synthetic record drawn from the model's own dimensions; used by the
// analysis probes and the gradient check, which need an input but no dataset.
DatasetRecord default_record(const ModelConfig& c, uint64_t seed) {
  Rng rng(seed);
  DatasetRecord r;
  r.id = "probe";
  const int L_t = std::min(c.mlm.L_t_max, 6);
  for (int i = 0; i < L_t; ++i)
    r.tokens.push_back(2 + static_cast<int>(rng.uniform_int(
                               static_cast<uint64_t>(c.mlm.vocab_size - 2))));
  for (int i = 0; i < c.av.L_av * c.av.d_a_in; ++i)
    r.audio.push_back(static_cast<float>(rng.normal()));
  for (int i = 0; i < c.av.L_av * c.av.d_v_in; ++i)
    r.vision.push_back(static_cast<float>(rng.normal()));
  r.label = 0.5f;
  return r;
}

json metrics_to_json(const MetricsReport& m) {
  json j;
  j["n"] = m.n;
  j["mae"] = m.mae;
  j["pearson"] = m.pearson;
  j["pearson_defined"] = m.pearson_defined;
  j["acc2_incl_zero"] = m.acc2_incl_zero;
  j["acc2_excl_zero"] = m.acc2_excl_zero;
  j["acc5"] = m.acc5;
  j["acc7"] = m.acc7;
  j["f1_incl_zero"] = m.f1_incl_zero;
  j["f1_excl_zero"] = m.f1_excl_zero;
  return j;
}

void dump_resolved_config(const std::string& out_dir, const json& j) {
  fs::create_directories(out_dir);
  write_text_file(out_dir + "/resolved_config.json", j.dump(2) + "\n");
}

// Builds a model from either a checkpoint (weights restored) or a config
// file (fresh init). Checkpoints start with the 4-byte magic "DMLF".
Model model_from_path(const std::string& path, const std::optional<uint64_t>& seed_flag) {
  std::ifstream probe(path, std::ios::binary);
  require(probe.good(), ErrorCategory::io, "cannot open '" + path + "'");
  char magic[4] = {};
  probe.read(magic, 4);
  probe.close();

  if (std::string(magic, 4) == "DMLF") {
    CheckpointData ck = load_checkpoint(path);
    require(!ck.config_json.empty(), ErrorCategory::config,
            "checkpoint '" + path + "' carries no model config");
    ModelConfig cfg = model_config_from_json(json::parse(ck.config_json));
    Model m = init_model(cfg);
    apply_checkpoint(m.store, ck.params);
    return m;
  }
  RunConfig rc = load_run_config(path);
  apply_seed_override(rc, seed_flag);
  return init_model(rc.model);
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen_data(const std::string& spec_path, const std::string& out_dir,
                 const std::optional<uint64_t>& seed_flag) {
  SyntheticSpec spec = synthetic_spec_from_json(read_json_file(spec_path));
  if (auto s = seed_flag ? seed_flag : env_seed()) spec.seed = *s;

  GeneratedData g = generate_synthetic(spec);
  fs::create_directories(out_dir);
  write_jsonl(out_dir + "/train.jsonl", g.train.records);
  write_jsonl(out_dir + "/val.jsonl", g.val.records);
  write_jsonl(out_dir + "/test.jsonl", g.test.records);
  write_meta(out_dir + "/meta.json", g.meta);
  dump_resolved_config(out_dir, synthetic_spec_to_json(spec));

  std::cout << "wrote " << g.train.records.size() << "/" << g.val.records.size()
            << "/" << g.test.records.size() << " train/val/test records to "
            << out_dir << "\n";
  std::cout << "closed-form test MAE floors: text-only "
            << oracle_mae_text_only(g.test, spec) << ", av-only "
            << oracle_mae_av_only(g.test, spec) << ", multimodal "
            << oracle_mae_multimodal(g.test, spec) << "\n";
  return 0;
}

int cmd_pretrain_av(const std::string& config_path, const std::string& data_dir,
                    const std::string& out_dir,
                    const std::optional<uint64_t>& seed_flag) {
  RunConfig rc = load_run_config(config_path);
  apply_seed_override(rc, seed_flag);
  Dataset d = load_dataset(data_dir);
  check_meta_against_config(d.meta, rc.model);

  fs::create_directories(out_dir);
  dump_resolved_config(out_dir, run_config_to_json(rc));

  AvPretrainResult res = pretrain_av(d.train, d.val, rc.model.av, rc.pretrain);

  std::ofstream log(out_dir + "/run.jsonl");
  require(log.good(), ErrorCategory::io, "cannot open run.jsonl for writing");
  for (size_t e = 0; e < res.train_mae.size(); ++e) {
    json j;
    j["epoch"] = e;
    j["train_mae"] = res.train_mae[e];
    j["val_mae"] = res.val_mae[e];
    log << j.dump() << "\n";
    std::cout << "epoch " << e << ": train MAE " << res.train_mae[e]
              << ", val MAE " << res.val_mae[e] << "\n";
  }

  CheckpointData ck;
  ck.params = res.snapshot;
  ck.config_json = model_config_to_json(rc.model).dump();
  ck.rng_seed = rc.pretrain.seed;
  const std::string ck_path = out_dir + "/av_snapshot.ckpt";
  save_checkpoint(ck_path, ck);

  std::cout << "best epoch " << res.best_epoch << " (val MAE " << res.best_val_mae
            << "); snapshot written to " << ck_path << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, const std::string& av_init_str,
              const std::string& av_snapshot_path,
              const std::optional<uint64_t>& seed_flag) {
  RunConfig rc = load_run_config(config_path);
  apply_seed_override(rc, seed_flag);
  Dataset d = load_dataset(data_dir);
  check_meta_against_config(d.meta, rc.model);

  const AvInit av_init = av_init_from_string(av_init_str);
  CheckpointTable av_snapshot;
  const CheckpointTable* snapshot_ptr = nullptr;
  if (av_init != AvInit::random_tune) {
    require(!av_snapshot_path.empty(), ErrorCategory::config,
            "--av-init " + av_init_str + " requires --av-snapshot");
  }
  if (!av_snapshot_path.empty()) {
    av_snapshot = load_checkpoint(av_snapshot_path).params;
    snapshot_ptr = &av_snapshot;
  }

  fs::create_directories(out_dir);
  json resolved = run_config_to_json(rc);
  resolved["av_init"] = av_init_to_string(av_init);
  dump_resolved_config(out_dir, resolved);

  Model m = init_model(rc.model, av_init, snapshot_ptr);

  std::ofstream log(out_dir + "/run.jsonl");
  require(log.good(), ErrorCategory::io, "cannot open run.jsonl for writing");
  TrainResult res = train(m, d.train, d.val, rc.train, &log);

  for (const EpochStats& st : res.history)
    std::cout << "epoch " << st.epoch << ": lr " << st.lr << ", train loss "
              << st.train_loss << ", val loss " << st.val_loss << ", val MAE "
              << st.val_mae << (st.improved ? " *" : "") << "\n";
  std::cout << "best epoch " << res.best_epoch << " (val loss " << res.best_val_loss
            << ", val MAE " << res.best_val_mae << ")"
            << (res.stopped_early ? ", stopped early" : "") << "\n";

  CheckpointData ck;
  ck.params = snapshot_params(m.store);
  ck.has_moments = true;
  ck.moments = res.best_moments;
  ck.config_json = model_config_to_json(rc.model).dump();
  ck.rng_seed = rc.model.seed;
  const std::string ck_path = out_dir + "/model.ckpt";
  save_checkpoint(ck_path, ck);
  std::cout << "checkpoint written to " << ck_path << "\n";

  if (d.has_test) {
    EvalResult ev = evaluate(m, d.test);
    std::cout << "test metrics: " << metrics_to_json(ev.metrics).dump() << "\n";
  }
  return 0;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             const std::string& split) {
  CheckpointData ck = load_checkpoint(ckpt_path);
  require(!ck.config_json.empty(), ErrorCategory::config,
          "checkpoint '" + ckpt_path + "' carries no model config");
  ModelConfig cfg = model_config_from_json(json::parse(ck.config_json));
  Model m = init_model(cfg);
  apply_checkpoint(m.store, ck.params);

  std::vector<DatasetRecord> records = read_jsonl(data_dir + "/" + split + ".jsonl");
  DatasetMeta meta = read_meta(data_dir + "/meta.json");
  check_meta_against_config(meta, cfg);

  EvalResult ev = evaluate(m, records);
  json j = metrics_to_json(ev.metrics);
  j["split"] = split;
  j["mean_total_loss"] = ev.mean_total_loss;
  j["mae_y_t"] = ev.mae_y_t;
  j["mae_y_av"] = ev.mae_y_av;
  j["mae_y_f"] = ev.mae_y_f;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_analyze(const std::string& path, bool probe, bool gates, bool budget,
                const std::optional<uint64_t>& seed_flag) {
  Model m = model_from_path(path, seed_flag);

  if (gates) {
    for (const GateTraceEntry& e : gate_trace(m)) {
      std::cout << "mm block at layer " << e.position << ": gate_ca " << e.g1;
      if (e.has_ffw) std::cout << ", gate_ffw " << e.g2;
      std::cout << "\n";
    }
  }
  if (probe) {
    DatasetRecord r = default_record(m.cfg, m.cfg.seed + 1);
    bool all_ok = true;
    for (PerturbSpec::Stream s : {PerturbSpec::Stream::text, PerturbSpec::Stream::av,
                                  PerturbSpec::Stream::fusion}) {
      PerturbSpec spec;
      spec.stream = s;
      ProbeReport rep = info_flow_probe(m, r, spec);
      all_ok = all_ok && probe_respects_causality(rep);
      std::cout << probe_report_json(rep) << "\n";
    }
    std::cout << (all_ok ? "information flow respects the masking contract"
                         : "information flow VIOLATES the masking contract")
              << "\n";
  }
  if (budget) {
    MemoryBudget b = memory_budget(m.cfg.mlm, m.cfg.mlm.L_t_max, m.cfg.av.L_av);
    json j;
    j["L_t"] = b.L_t;
    j["L_av"] = b.L_av;
    j["gca_per_head"] = b.gca_per_head;
    j["self_attn_per_head"] = b.self_attn_per_head;
    j["joint_attn_per_head"] = b.joint_attn_per_head;
    j["gca_total"] = b.gca_total;
    j["self_attn_total"] = b.self_attn_total;
    j["joint_attn_total"] = b.joint_attn_total;
    std::cout << j.dump() << "\n";
  }
  return 0;
}

int cmd_grad_check(const std::string& config_path,
                   const std::optional<uint64_t>& seed_flag) {
  ModelConfig cfg;
  if (!config_path.empty()) {
    RunConfig rc = load_run_config(config_path);
    apply_seed_override(rc, seed_flag);
    cfg = rc.model;
  } else if (auto s = seed_flag ? seed_flag : env_seed()) {
    cfg.seed = *s;
  }

  Model m = init_model(cfg);
  DatasetRecord r = default_record(cfg, cfg.seed + 1);
  std::vector<std::pair<std::string, Tensor>> params;
  for (auto& [name, t] : m.store.items())
    if (t.requires_grad()) params.emplace_back(name, t);

  auto loss = [&]() {
    ForwardOptions opt;
    opt.want_lm_loss = m.cfg.loss.lambda_lm > 0.0f;
    SampleOutputs out = forward_sample(m, r, opt);
    return total_loss(r.label, out.heads, out.lm, m.cfg.loss).total;
  };
  GradCheckReport rep = grad_check(params, loss);
  std::cout << "checked " << rep.entries.size() << " coordinates across "
            << params.size() << " parameter groups; max rel err " << rep.max_rel_err
            << " (worst " << rep.worst_group << "), tolerance " << rep.tolerance
            << "\n";
  if (!rep.passed) {
    std::cout << "gradient check failed\n";
    return 1;
  }
  std::cout << "gradient check passed\n";
  return 0;
}

int cmd_grid(const std::string& config_path, const std::vector<std::string>& axes,
             const std::string& out_dir, const std::optional<uint64_t>& seed_flag) {
  RunConfig rc = load_run_config(config_path);
  apply_seed_override(rc, seed_flag);

  std::vector<GridEntry> entries = ablation_grid(rc.model, AvInit::random_tune, axes);

  fs::create_directories(out_dir);
  dump_resolved_config(out_dir, run_config_to_json(rc));
  std::ofstream f(out_dir + "/grid.jsonl");
  require(f.good(), ErrorCategory::io, "cannot open grid.jsonl for writing");

  for (const GridEntry& e : entries) {
    Model m = init_model(e.cfg);
    size_t trainable = 0;
    for (const auto& [name, t] : m.store.items()) {
      bool frozen = !t.requires_grad();
      // a frozen pretrained encoder removes its parameters from training
      if (e.av_init == AvInit::pre_freeze && name.rfind("av.", 0) == 0) frozen = true;
      if (!frozen) trainable += t.numel();
    }
    json j = model_config_to_json(e.cfg);
    j["id"] = e.id;
    j["av_init"] = av_init_to_string(e.av_init);
    j["trainable_scalars"] = trainable;
    f << j.dump() << "\n";

    std::ostringstream mm;
    for (size_t i = 0; i < e.cfg.mlm.mm_positions.size(); ++i)
      mm << (i ? "," : "") << e.cfg.mlm.mm_positions[i];
    std::cout << e.id << ": n_f " << e.cfg.mlm.n_f << ", mm layers {" << mm.str()
              << "}, gating " << gating_to_string(e.cfg.mlm.gating) << ", scheme "
              << fusion_scheme_to_string(e.cfg.mlm.fusion_scheme) << ", av "
              << av_init_to_string(e.av_init) << ", trainable " << trainable << "\n";
  }
  std::cout << entries.size() << " configurations written to " << out_dir
            << "/grid.jsonl\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"deep multimodal fusion with frozen language models"};
  app.require_subcommand(1);

  std::optional<uint64_t> seed_flag;

  std::string gd_spec, gd_out;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("spec", gd_spec, "generator spec JSON")->required();
  gen->add_option("out-dir", gd_out, "output directory")->required();
  gen->add_option("--seed", seed_flag, "override every RNG seed");

  std::string pa_config, pa_data, pa_out = ".";
  CLI::App* pre = app.add_subcommand("pretrain-av", "pretrain the audiovisual encoder");
  pre->add_option("config", pa_config, "run config JSON")->required();
  pre->add_option("data", pa_data, "dataset directory")->required();
  pre->add_option("--out", pa_out, "artifact directory");
  pre->add_option("--seed", seed_flag, "override every RNG seed");

  std::string tr_config, tr_data, tr_out = ".", tr_av_init = "random_tune", tr_snapshot;
  CLI::App* tr = app.add_subcommand("train", "train the fusion model");
  tr->add_option("config", tr_config, "run config JSON")->required();
  tr->add_option("data", tr_data, "dataset directory")->required();
  tr->add_option("--out", tr_out, "artifact directory");
  tr->add_option("--av-init", tr_av_init, "pre_tune|pre_freeze|random_tune");
  tr->add_option("--av-snapshot", tr_snapshot, "pretrained encoder checkpoint");
  tr->add_option("--seed", seed_flag, "override every RNG seed");

  std::string ev_ckpt, ev_data, ev_split = "test";
  CLI::App* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("checkpoint", ev_ckpt, "model checkpoint")->required();
  ev->add_option("data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "train|val|test (default test)");

  std::string an_path;
  bool an_probe = false, an_gates = false, an_budget = false;
  CLI::App* an = app.add_subcommand("analyze", "structural analysis of a model");
  an->add_option("model", an_path, "checkpoint or config JSON")->required();
  an->add_flag("--probe", an_probe, "bit-exact information-flow probes");
  an->add_flag("--gates", an_gates, "per-block gate values");
  an->add_flag("--budget", an_budget, "attention score memory budget");
  an->add_option("--seed", seed_flag, "override every RNG seed");

  std::string gc_config;
  CLI::App* gc = app.add_subcommand("grad-check", "finite-difference gradient check");
  gc->add_option("config", gc_config, "run config JSON (defaults when omitted)");
  gc->add_option("--seed", seed_flag, "override every RNG seed");

  std::string gr_config, gr_out = ".";
  std::vector<std::string> gr_axes;
  CLI::App* gr = app.add_subcommand("grid", "enumerate an ablation grid");
  gr->add_option("config", gr_config, "run config JSON")->required();
  gr->add_option("--axes", gr_axes, "axes: n_f, fusion, loss, gating, aug, av_init, mm_count")
      ->required()
      ->delimiter(',');
  gr->add_option("--out", gr_out, "artifact directory");
  gr->add_option("--seed", seed_flag, "override every RNG seed");

  try {
    app.parse(argc, argv);

    if (gen->parsed()) return cmd_gen_data(gd_spec, gd_out, seed_flag);
    if (pre->parsed()) return cmd_pretrain_av(pa_config, pa_data, pa_out, seed_flag);
    if (tr->parsed())
      return cmd_train(tr_config, tr_data, tr_out, tr_av_init, tr_snapshot, seed_flag);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split);
    if (an->parsed()) {
      if (static_cast<int>(an_probe) + an_gates + an_budget == 0) {
        std::cerr << "error:usage: analyze needs at least one of --probe/--gates/--budget\n";
        return 2;
      }
      return cmd_analyze(an_path, an_probe, an_gates, an_budget, seed_flag);
    }
    if (gc->parsed()) return cmd_grad_check(gc_config, seed_flag);
    if (gr->parsed()) return cmd_grid(gr_config, gr_axes, gr_out, seed_flag);
    return 2;  // unreachable: require_subcommand(1)
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp" ||
        e.get_name() == "CallForVersion") {
      return app.exit(e);
    }
    std::cerr << "error:usage: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error:" << e.what() << "\n";
    return e.category() == ErrorCategory::config ? 3 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error:internal: " << e.what() << "\n";
    return 1;
  }
}
