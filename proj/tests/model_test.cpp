// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Audiovisual encoder, multimodal LM assembly, heads/objective, full-model
// probes and analysis utilities. Reference values come from independent
// double-precision oracles implemented in this file.

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "dmlf/analysis.hpp"
#include "dmlf/av_encoder.hpp"
#include "dmlf/grad_check.hpp"
#include "dmlf/heads.hpp"
#include "dmlf/mlm.hpp"
#include "dmlf/model.hpp"

namespace {

using namespace dmlf;

// ---------------------------------------------------------------------------
// fixtures
// ---------------------------------------------------------------------------

AvEncoderConfig tiny_av() {
  AvEncoderConfig c;
  c.d_a_in = 3;
  c.d_v_in = 3;
  c.d_av = 8;
  c.n_enc_layers = 1;
  c.L_av = 4;
  c.n_heads = 2;
  return c;
}

MlmConfig tiny_mlm() {
  MlmConfig c;
  c.n_layers = 2;
  c.d_t = 8;
  c.vocab_size = 16;
  c.n_f = 2;
  c.n_heads = 2;
  c.L_t_max = 8;
  c.d_av = 8;
  c.mm_positions = {2};
  return c;
}

ModelConfig tiny_model_cfg() {
  ModelConfig c;
  c.mlm = tiny_mlm();
  c.av = tiny_av();
  return c;
}

DatasetRecord tiny_record(uint64_t seed = 5) {
  Rng rng(seed);
  DatasetRecord r;
  r.id = "t0";
  r.tokens = {2, 7, 3, 5};
  for (int i = 0; i < 4 * 3; ++i) r.audio.push_back(static_cast<float>(rng.normal()));
  for (int i = 0; i < 4 * 3; ++i) r.vision.push_back(static_cast<float>(rng.normal()));
  r.label = 0.7f;
  return r;
}

Tensor random_tensor(const Shape& shape, uint64_t seed, bool trainable = false) {
  Rng rng(seed);
  size_t n = 1;
  for (int d : shape) n *= static_cast<size_t>(d);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return Tensor::from_data(shape, v, trainable);
}

// ---------------------------------------------------------------------------
// audiovisual encoder
// ---------------------------------------------------------------------------

TEST(AvEncoderTest, OutputShapeAndDeterminism) {
  AvEncoderConfig c = tiny_av();
  Rng rng(3);
  AvEncoderParams p = init_av_params(c, rng);
  Tensor Xa = random_tensor({c.L_av, c.d_a_in}, 1);
  Tensor Xv = random_tensor({c.L_av, c.d_v_in}, 2);
  Tensor Z1 = av_encode(Xa, Xv, p, c);
  Tensor Z2 = av_encode(Xa, Xv, p, c);
  ASSERT_EQ(Z1.shape(), (Shape{c.L_av, c.d_av}));
  EXPECT_EQ(Z1.data(), Z2.data());
  EXPECT_TRUE(all_finite(Z1));
}

TEST(AvEncoderTest, SinusoidalPeMatchesFormula) {
  Tensor pe = sinusoidal_pe(5, 6);
  for (int pos = 0; pos < 5; ++pos) {
    for (int i = 0; i < 6; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / 6.0);
      const double expect = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
      EXPECT_NEAR(pe.data()[static_cast<size_t>(pos * 6 + i)], expect, 1e-6);
    }
  }
  // position zero is the [0, 1, 0, 1, ...] pattern
  EXPECT_FLOAT_EQ(pe.data()[0], 0.0f);
  EXPECT_FLOAT_EQ(pe.data()[1], 1.0f);
}

TEST(AvEncoderTest, ZeroedFusionBranchConcatenatesTheTwoStacks) {
  AvEncoderConfig c = tiny_av();
  Rng rng(4);
  AvEncoderParams p = init_av_params(c, rng);
  std::fill(p.fusion.fc2.W.data().begin(), p.fusion.fc2.W.data().end(), 0.0f);
  std::fill(p.fusion.fc2.b.data().begin(), p.fusion.fc2.b.data().end(), 0.0f);

  Tensor Xa = random_tensor({c.L_av, c.d_a_in}, 5);
  Tensor Xv = random_tensor({c.L_av, c.d_v_in}, 6);
  Tensor Z = av_encode(Xa, Xv, p, c);

  // recompute the per-modality halves independently
  Tensor Ha = add(linear(Xa, p.proj_a), p.pe);
  for (const auto& layer : p.enc_a) Ha = encoder_layer(Ha, layer);
  Tensor Hv = add(linear(Xv, p.proj_v), p.pe);
  for (const auto& layer : p.enc_v) Hv = encoder_layer(Hv, layer);

  const int half = c.d_av / 2;
  for (int t = 0; t < c.L_av; ++t) {
    for (int i = 0; i < half; ++i) {
      EXPECT_FLOAT_EQ(Z.data()[static_cast<size_t>(t * c.d_av + i)],
                      Ha.data()[static_cast<size_t>(t * half + i)]);
      EXPECT_FLOAT_EQ(Z.data()[static_cast<size_t>(t * c.d_av + half + i)],
                      Hv.data()[static_cast<size_t>(t * half + i)]);
    }
  }
}

TEST(AvEncoderTest, LengthMismatchRaisesAlignment) {
  AvEncoderConfig c = tiny_av();
  Rng rng(7);
  AvEncoderParams p = init_av_params(c, rng);
  Tensor short_audio = random_tensor({c.L_av - 1, c.d_a_in}, 8);
  Tensor Xv = random_tensor({c.L_av, c.d_v_in}, 9);
  try {
    av_encode(short_audio, Xv, p, c);
    FAIL() << "expected alignment error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::alignment);
  }
}

TEST(AvEncoderTest, InvalidWidthsRaiseConfig) {
  AvEncoderConfig c = tiny_av();
  c.d_av = 7;  // odd: cannot split across modalities
  EXPECT_THROW(validate_av_config(c), Error);
  c = tiny_av();
  c.d_av = 12;
  c.n_heads = 4;  // d_enc = 6 not divisible by 4
  EXPECT_THROW(validate_av_config(c), Error);
}

TEST(AvEncoderTest, GradCheckThroughEncoderAndFusion) {
  AvEncoderConfig c = tiny_av();
  Rng rng(11);
  AvEncoderParams p = init_av_params(c, rng);
  Tensor Xa = random_tensor({c.L_av, c.d_a_in}, 12, true);
  Tensor Xv = random_tensor({c.L_av, c.d_v_in}, 13);

  ParamStore store;
  register_params(store, "av", p);
  std::vector<std::pair<std::string, Tensor>> params = {{"Xa", Xa}};
  for (auto& [name, t] : store.items())
    if (t.requires_grad()) params.emplace_back(name, t);

  auto loss = [&]() {
    Tensor Z = av_encode(Xa, Xv, p, c);
    return mean_all(mul(Z, Z));
  };
  GradCheckReport rep = grad_check(params, loss);
  EXPECT_TRUE(rep.passed) << rep.worst_group << " rel err " << rep.max_rel_err;
}

TEST(AvPretrainTest, LearnsAConstantLabel) {
  SyntheticSpec spec;
  spec.n_train = 40;
  spec.n_val = 10;
  spec.n_test = 10;
  spec.seed = 21;
  GeneratedData g = generate_synthetic(spec);
  std::vector<DatasetRecord> train = g.train.records, val = g.val.records;
  for (auto& r : train) r.label = 0.8f;
  for (auto& r : val) r.label = 0.8f;

  AvEncoderConfig c = tiny_av();
  c.d_a_in = spec.d_a_in;
  c.d_v_in = spec.d_v_in;
  c.L_av = spec.L_av;
  AvPretrainConfig tc;
  tc.epochs = 90;
  tc.batch_size = 8;
  tc.weight_decay = 0.0f;  // decay fights exact convergence on a constant
  AvPretrainResult res = pretrain_av(train, val, c, tc);
  // optimization drives the fit error to near zero; the held-out error
  // carries a small-sample generalization gap on 10 records
  EXPECT_LT(res.train_mae.back(), 0.05f);
  EXPECT_LT(res.best_val_mae, 0.15f);
  EXPECT_GE(res.best_epoch, 0);
  EXPECT_EQ(res.train_mae.size(), res.val_mae.size());
  // snapshot holds encoder and pretraining-head weights
  EXPECT_EQ(res.snapshot.count("av.proj_a.W"), 1u);
  EXPECT_EQ(res.snapshot.count("av_head.W"), 1u);
}

TEST(AvPretrainTest, RecoversTheAvSignalComponent) {
  // labels carry only the audiovisual signal: the encoder must beat the
  // predict-zero baseline by a wide margin
  SyntheticSpec spec;
  spec.w_t = 0.0f;
  spec.w_av = 1.0f;
  spec.noise = 0.0f;
  spec.label_scale = 1.0f;
  spec.n_train = 150;
  spec.n_val = 40;
  spec.n_test = 10;
  spec.seed = 31;
  GeneratedData g = generate_synthetic(spec);

  AvEncoderConfig c = tiny_av();
  c.d_a_in = spec.d_a_in;
  c.d_v_in = spec.d_v_in;
  c.L_av = spec.L_av;
  AvPretrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 16;
  AvPretrainResult res = pretrain_av(g.train.records, g.val.records, c, tc);

  double zero_mae = 0.0;
  for (const auto& r : g.val.records) zero_mae += std::fabs(r.label);
  zero_mae /= static_cast<double>(g.val.records.size());
  EXPECT_LT(res.best_val_mae, 0.5 * zero_mae);
}

TEST(AvInitTest, ModesCopyFreezeOrIgnoreTheSnapshot) {
  AvEncoderConfig c = tiny_av();
  CheckpointTable snap;
  {
    Rng rng(40);
    AvEncoderParams donor = init_av_params(c, rng);
    ParamStore s;
    register_params(s, "av", donor);
    snap = snapshot_params(s);
  }

  Rng r1(50), r2(50), r3(50);
  AvEncoderParams tuned = init_av(c, AvInit::pre_tune, &snap, r1);
  AvEncoderParams frozen = init_av(c, AvInit::pre_freeze, &snap, r2);
  AvEncoderParams fresh = init_av(c, AvInit::random_tune, nullptr, r3);

  EXPECT_EQ(tuned.proj_a.W.data(), snap.at("av.proj_a.W").data);
  EXPECT_TRUE(tuned.proj_a.W.requires_grad());
  EXPECT_EQ(frozen.proj_a.W.data(), snap.at("av.proj_a.W").data);
  EXPECT_FALSE(frozen.proj_a.W.requires_grad());
  EXPECT_NE(fresh.proj_a.W.data(), snap.at("av.proj_a.W").data);

  // rng-neutral: every mode consumes the same number of draws
  EXPECT_EQ(r1.counter(), r3.counter());
  EXPECT_EQ(r2.counter(), r3.counter());

  EXPECT_THROW(init_av(c, AvInit::pre_tune, nullptr, r1), Error);
  AvEncoderConfig other = tiny_av();
  other.d_av = 12;
  other.n_heads = 2;
  EXPECT_THROW(init_av(other, AvInit::pre_tune, &snap, r1), Error);
}

// ---------------------------------------------------------------------------
// multimodal LM assembly
// ---------------------------------------------------------------------------

TEST(MlmTest, PlacementFormula) {
  EXPECT_EQ(build_mm_placement(12, 3, 2), (std::vector<int>{8, 10, 12}));
  EXPECT_EQ(build_mm_placement(4, 2, 1), (std::vector<int>{3, 4}));
  EXPECT_EQ(build_mm_placement(4, 1, 1), (std::vector<int>{4}));
  EXPECT_THROW(build_mm_placement(4, 3, 2), Error);
}

TEST(MlmTest, EmbeddedInputEndsWithTheFusionTokens) {
  MlmConfig c = tiny_mlm();
  Rng rng(60);
  MlmParams p = init_mlm(c, rng);
  const std::vector<int> ids = {2, 5, 9};
  Tensor H0 = embed_input(ids, p.fusion_tokens, p, c);
  ASSERT_EQ(H0.shape(), (Shape{3 + c.n_f, c.d_t}));

  Tensor lang = embed_language(ids, p, c);
  for (int i = 0; i < 3 * c.d_t; ++i)
    EXPECT_EQ(H0.data()[static_cast<size_t>(i)], lang.data()[static_cast<size_t>(i)]);
  for (int i = 0; i < c.n_f * c.d_t; ++i)
    EXPECT_EQ(H0.data()[static_cast<size_t>(3 * c.d_t + i)],
              p.fusion_tokens.data()[static_cast<size_t>(i)]);
}

TEST(MlmTest, EmbedRejectsOverlongAndEmptyInput) {
  MlmConfig c = tiny_mlm();
  Rng rng(61);
  MlmParams p = init_mlm(c, rng);
  std::vector<int> too_long(static_cast<size_t>(c.L_t_max + 1), 2);
  EXPECT_THROW(embed_language(too_long, p, c), Error);
  EXPECT_THROW(embed_language({}, p, c), Error);
  EXPECT_THROW(embed_language({c.vocab_size}, p, c), Error);  // out of vocab
}

TEST(LoraTest, FreshAdapterIsExactlyTheBaseMap) {
  Rng rng(62);
  Tensor W = random_tensor({6, 10}, 63, false);
  LoraPair lora = init_lora(6, 10, 2, rng);
  Tensor x = random_tensor({4, 6}, 64);
  Tensor with = lora_forward(x, W, lora.A, lora.B, lora.scale);
  Tensor base = matmul(x, W);
  EXPECT_EQ(with.data(), base.data());  // B starts at zero
}

TEST(LoraTest, MatchesMaterializedLowRankUpdate) {
  Rng rng(65);
  const int d_in = 5, d_out = 7, r = 3;
  Tensor W = random_tensor({d_in, d_out}, 66);
  LoraPair lora = init_lora(d_in, d_out, r, rng);
  fill_normal(lora.B, rng, 0.3f);
  Tensor x = random_tensor({2, d_in}, 67);

  Tensor y = lora_forward(x, W, lora.A, lora.B, lora.scale);

  // oracle: y = x (W + scale * A B) in doubles
  for (int row = 0; row < 2; ++row) {
    for (int col = 0; col < d_out; ++col) {
      double acc = 0.0;
      for (int k = 0; k < d_in; ++k) {
        double w_eff = W.data()[static_cast<size_t>(k * d_out + col)];
        for (int q = 0; q < r; ++q)
          w_eff += static_cast<double>(lora.scale) *
                   lora.A.data()[static_cast<size_t>(k * r + q)] *
                   lora.B.data()[static_cast<size_t>(q * d_out + col)];
        acc += static_cast<double>(x.data()[static_cast<size_t>(row * d_in + k)]) * w_eff;
      }
      EXPECT_NEAR(y.data()[static_cast<size_t>(row * d_out + col)], acc, 1e-4);
    }
  }
  EXPECT_FLOAT_EQ(lora.scale, 1.0f / r);
  EXPECT_THROW(init_lora(2, 4, 3, rng), Error);  // rank above min(d_in, d_out)
}

TEST(MlmTest, MmFfwStartsAsACopyOfThePairedLmFfw) {
  MlmConfig c = tiny_mlm();
  Rng r1(70), r2(70);
  MlmParams copied = init_mlm(c, r1, FfwInitMode::from_lm);
  MlmParams fresh = init_mlm(c, r2, FfwInitMode::random);

  const auto& lm_ffw = copied.lm_blocks[1].ffw;  // paired block: position 2
  const auto& mm_ffw = copied.mm_blocks.at(2).ffw;
  EXPECT_EQ(mm_ffw.fc1.W.data(), lm_ffw.fc1.W.data());
  EXPECT_EQ(mm_ffw.fc1.b.data(), lm_ffw.fc1.b.data());
  EXPECT_EQ(mm_ffw.fc2.W.data(), lm_ffw.fc2.W.data());
  EXPECT_EQ(mm_ffw.fc2.b.data(), lm_ffw.fc2.b.data());
  // the copy is trainable even though the source is frozen
  EXPECT_TRUE(mm_ffw.fc1.W.requires_grad());
  EXPECT_FALSE(lm_ffw.fc1.W.requires_grad());

  EXPECT_NE(fresh.mm_blocks.at(2).ffw.fc1.W.data(), lm_ffw.fc1.W.data());
}

TEST(MlmTest, SchemesRouteCrossAttentionToTheRightRows) {
  MlmConfig c = tiny_mlm();
  c.ffw_enabled = false;  // isolate the cross-attention routing
  const int L_t = 3;
  Tensor H = random_tensor({L_t + c.n_f, c.d_t}, 71);
  Tensor Z = random_tensor({4, c.d_av}, 72);

  auto run = [&](FusionScheme s) {
    MlmConfig cc = c;
    cc.fusion_scheme = s;
    Rng rng(73);
    MmBlockParams p = init_mm_block(cc, rng);
    return mm_block_forward(H, Z, p, cc, L_t);
  };

  Tensor f_only = run(FusionScheme::f_only);
  for (int i = 0; i < L_t * c.d_t; ++i)
    EXPECT_EQ(f_only.data()[static_cast<size_t>(i)], H.data()[static_cast<size_t>(i)])
        << "language row altered by f_only cross-attention";
  bool fusion_changed = false;
  for (int i = L_t * c.d_t; i < (L_t + c.n_f) * c.d_t; ++i)
    if (f_only.data()[static_cast<size_t>(i)] != H.data()[static_cast<size_t>(i)])
      fusion_changed = true;
  EXPECT_TRUE(fusion_changed);

  Tensor t_only = run(FusionScheme::t_only);
  for (int i = L_t * c.d_t; i < (L_t + c.n_f) * c.d_t; ++i)
    EXPECT_EQ(t_only.data()[static_cast<size_t>(i)], H.data()[static_cast<size_t>(i)])
        << "fusion row altered by t_only cross-attention";

  Tensor both = run(FusionScheme::t_and_f);
  bool lang_changed = false;
  for (int i = 0; i < L_t * c.d_t; ++i)
    if (both.data()[static_cast<size_t>(i)] != H.data()[static_cast<size_t>(i)])
      lang_changed = true;
  EXPECT_TRUE(lang_changed);
}

TEST(MlmTest, TanhGatesMakeTheBlockAnExactIdentityAtInit) {
  MlmConfig c = tiny_mlm();
  c.gating = Gating::tanh;
  Rng rng(74);
  MmBlockParams p = init_mm_block(c, rng);
  const int L_t = 3;
  Tensor H = random_tensor({L_t + c.n_f, c.d_t}, 75);
  Tensor Z = random_tensor({4, c.d_av}, 76);
  Tensor out = mm_block_forward(H, Z, p, c, L_t);
  EXPECT_EQ(out.data(), H.data());
}

TEST(MlmTest, WidthMismatchBetweenAvAndGcaRaisesConfig) {
  MlmConfig c = tiny_mlm();
  Rng rng(77);
  MmBlockParams p = init_mm_block(c, rng);
  Tensor H = random_tensor({3 + c.n_f, c.d_t}, 78);
  Tensor Z_bad = random_tensor({4, c.d_av + 2}, 79);
  try {
    mm_block_forward(H, Z_bad, p, c, 3);
    FAIL() << "expected config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::config);
  }
}

TEST(MlmTest, ForwardShapesAndFrozenBackbone) {
  MlmConfig c = tiny_mlm();
  Rng rng(80);
  MlmParams p = init_mlm(c, rng);
  Tensor Z = random_tensor({4, c.d_av}, 81);
  const std::vector<int> ids = {2, 3, 4};
  MlmOutputs out = mlm_forward(ids, Z, p, c);
  EXPECT_EQ(out.X_t_final.shape(), (Shape{3, c.d_t}));
  EXPECT_EQ(out.X_f_final.shape(), (Shape{c.n_f, c.d_t}));
  EXPECT_EQ(out.lm_logits.shape(), (Shape{3, c.vocab_size}));

  ParamStore store;
  register_params(store, p);
  for (const auto& [name, t] : store.items()) {
    if (name.rfind("lm.", 0) == 0) {
      EXPECT_FALSE(t.requires_grad()) << name;
    }
  }
  EXPECT_TRUE(store.at("fusion_tokens").requires_grad());
}

TEST(MlmTest, TrainableCountsMatchTheClosedForm) {
  MlmConfig c = tiny_mlm();
  c.mm_positions = {1, 2};
  Rng rng(82);
  MlmParams p = init_mlm(c, rng);
  ParamStore store;
  register_params(store, p);
  ParamCountReport r = count_trainable_params(store);

  EXPECT_EQ(r.groups.at("fusion_tokens"),
            static_cast<size_t>(c.n_f) * static_cast<size_t>(c.d_t));
  EXPECT_EQ(r.groups.at("gates"), 4u);  // two gates per block
  EXPECT_EQ(r.groups.at("mm_blocks"), 2 * mm_block_param_formula(c));
  EXPECT_EQ(r.groups.at("av_encoder"), 0u);
  EXPECT_EQ(r.total, r.groups.at("fusion_tokens") + r.groups.at("gates") +
                         r.groups.at("mm_blocks"));

  // lora shrinks the FFW share
  MlmConfig cl = c;
  cl.ffw_ft = FfwFt::lora;
  cl.lora_rank = 2;
  EXPECT_LT(mm_block_param_formula(cl), mm_block_param_formula(c));
  Rng rng2(83);
  MlmParams pl = init_mlm(cl, rng2);
  ParamStore store2;
  register_params(store2, pl);
  EXPECT_EQ(count_trainable_params(store2).groups.at("mm_blocks"),
            2 * mm_block_param_formula(cl));

  // disabling the FFW removes its parameters from the trainable set
  MlmConfig cn = c;
  cn.ffw_enabled = false;
  Rng rng3(84);
  MlmParams pn = init_mlm(cn, rng3);
  ParamStore store3;
  register_params(store3, pn);
  EXPECT_EQ(count_trainable_params(store3).groups.at("mm_blocks"),
            2 * mm_block_param_formula(cn));

  // adding one more multimodal block adds exactly one formula unit
  MlmConfig c1 = c;
  c1.mm_positions = {2};
  Rng rng4(85);
  MlmParams p1 = init_mlm(c1, rng4);
  ParamStore store4;
  register_params(store4, p1);
  EXPECT_EQ(r.groups.at("mm_blocks") -
                count_trainable_params(store4).groups.at("mm_blocks"),
            mm_block_param_formula(c));
}

TEST(MlmTest, ConfigValidationCatchesBadPlacements) {
  MlmConfig c = tiny_mlm();
  c.mm_positions = {0, 1};
  EXPECT_THROW(validate_mlm_config(c), Error);
  c.mm_positions = {1, 3};  // beyond n_layers = 2
  EXPECT_THROW(validate_mlm_config(c), Error);
  c.mm_positions = {2, 1};  // not ascending
  EXPECT_THROW(validate_mlm_config(c), Error);
  c.mm_positions = {1, 1};
  EXPECT_THROW(validate_mlm_config(c), Error);
  c.mm_positions = {};
  EXPECT_THROW(validate_mlm_config(c), Error);
  c = tiny_mlm();
  c.ffw_ft = FfwFt::lora;
  c.lora_rank = c.d_t + 1;
  EXPECT_THROW(validate_mlm_config(c), Error);
}

// ---------------------------------------------------------------------------
// heads and objective
// ---------------------------------------------------------------------------

TEST(HeadsTest, UniformLogitsGiveLogVocabLoss) {
  const int L = 5, V = 32;
  Tensor logits = Tensor::zeros({L, V});
  Tensor loss = lm_loss(logits, {2, 3, 4, 5, 6});
  EXPECT_NEAR(loss.item(), std::log(static_cast<double>(V)), 1e-5);
}

TEST(HeadsTest, ConfidentCorrectLogitsDriveLossToZero) {
  const int L = 4, V = 8;
  const std::vector<int> ids = {1, 2, 3, 4};
  Tensor logits = Tensor::zeros({L, V});
  for (int i = 0; i + 1 < L; ++i)
    logits.data()[static_cast<size_t>(i * V + ids[static_cast<size_t>(i + 1)])] = 50.0f;
  Tensor loss = lm_loss(logits, ids);
  EXPECT_NEAR(loss.item(), 0.0, 1e-5);
}

TEST(HeadsTest, LmLossMatchesNaiveShiftedCrossEntropy) {
  const int L = 6, V = 11;
  Tensor logits = random_tensor({L, V}, 90);
  const std::vector<int> ids = {1, 4, 7, 2, 9, 10};
  Tensor loss = lm_loss(logits, ids);

  double acc = 0.0;
  for (int i = 0; i + 1 < L; ++i) {
    double mx = -1e30;
    for (int v = 0; v < V; ++v)
      mx = std::max(mx, static_cast<double>(logits.data()[static_cast<size_t>(i * V + v)]));
    double denom = 0.0;
    for (int v = 0; v < V; ++v)
      denom += std::exp(logits.data()[static_cast<size_t>(i * V + v)] - mx);
    const double logp =
        logits.data()[static_cast<size_t>(i * V + ids[static_cast<size_t>(i + 1)])] - mx -
        std::log(denom);
    acc -= logp;
  }
  EXPECT_NEAR(loss.item(), acc / (L - 1), 1e-5);
}

TEST(HeadsTest, LmLossSkipsPaddedPositions) {
  const int L = 3, V = 6;
  Tensor logits = random_tensor({L, V}, 91);
  const std::vector<int> ids = {1, 2, 0};
  Tensor masked = lm_loss(logits, ids, {1, 1, 0});

  // only position 0 predicts a real next token
  double mx = -1e30;
  for (int v = 0; v < V; ++v)
    mx = std::max(mx, static_cast<double>(logits.data()[static_cast<size_t>(v)]));
  double denom = 0.0;
  for (int v = 0; v < V; ++v) denom += std::exp(logits.data()[static_cast<size_t>(v)] - mx);
  const double expect = -(logits.data()[2] - mx - std::log(denom));
  EXPECT_NEAR(masked.item(), expect, 1e-5);
}

TEST(HeadsTest, SingleTokenSequenceHasNoLmTargets) {
  Tensor logits = random_tensor({1, 6}, 92);
  try {
    lm_loss(logits, {3});
    FAIL() << "expected degenerate error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::degenerate);
  }
}

TEST(HeadsTest, TaskHeadShapesAndWidthCheck) {
  Rng rng(93);
  HeadsParams p = init_heads(8, 6, rng);
  Tensor z = random_tensor({6}, 94);
  Tensor xt = random_tensor({8}, 95);
  Tensor xf = random_tensor({8}, 96);
  Tensor y = task_head(z, xt, xf, p.task);
  EXPECT_EQ(y.shape(), (Shape{1}));

  Tensor z_bad = random_tensor({5}, 97);
  EXPECT_THROW(task_head(z_bad, xt, xf, p.task), Error);
}

TEST(HeadsTest, TotalLossSumsWeightedTermsExactly) {
  HeadOutputs h;
  h.y_o = Tensor::scalar(1.5f);
  h.y_av = Tensor::scalar(-0.5f);
  h.y_t = Tensor::scalar(2.0f);
  h.y_f = Tensor::scalar(0.25f);
  Tensor lm = Tensor::scalar(3.0f);
  LossWeights w;
  w.lambda_av = 0.5f;
  w.lambda_t = 2.0f;
  w.lambda_f = 1.0f;
  w.lambda_lm = 0.1f;
  const float y = 1.0f;

  LossBreakdown b = total_loss(y, h, lm, w);
  EXPECT_NEAR(b.msa, 0.5f, 1e-6);
  EXPECT_NEAR(b.aux_av, 0.5f * 1.5f, 1e-6);
  EXPECT_NEAR(b.aux_t, 2.0f * 1.0f, 1e-6);
  EXPECT_NEAR(b.aux_f, 1.0f * 0.75f, 1e-6);
  EXPECT_NEAR(b.lm, 0.1f * 3.0f, 1e-6);
  EXPECT_NEAR(b.total_value, b.msa + b.aux_av + b.aux_t + b.aux_f + b.lm, 1e-6);
  EXPECT_NEAR(b.total.item(), b.total_value, 1e-6);
}

TEST(HeadsTest, ZeroWeightsSkipTermsAndTheLmTensor) {
  HeadOutputs h;
  h.y_o = Tensor::scalar(0.3f);
  h.y_av = Tensor::scalar(0.4f);
  h.y_t = Tensor::scalar(0.5f);
  h.y_f = Tensor::scalar(0.6f);
  LossWeights w;
  w.lambda_av = 0.0f;
  w.lambda_t = 0.0f;
  w.lambda_f = 0.0f;
  w.lambda_lm = 0.0f;

  // no lm tensor needed when its weight is zero
  LossBreakdown b = total_loss(0.0f, h, Tensor(), w);
  EXPECT_NEAR(b.total_value, 0.3f, 1e-6);
  EXPECT_EQ(b.aux_av, 0.0f);
  EXPECT_EQ(b.lm, 0.0f);

  LossWeights with_lm;
  with_lm.lambda_lm = 1.0f;
  EXPECT_THROW(total_loss(0.0f, h, Tensor(), with_lm), Error);

  LossWeights negative;
  negative.lambda_t = -0.1f;
  EXPECT_THROW(total_loss(0.0f, h, Tensor(), negative), Error);
}

// ---------------------------------------------------------------------------
// full model
// ---------------------------------------------------------------------------

TEST(ModelTest, EvalForwardIsDeterministic) {
  Model m = init_model(tiny_model_cfg());
  DatasetRecord r = tiny_record();
  ForwardOptions opt;
  opt.want_lm_loss = true;
  SampleOutputs a = forward_sample(m, r, opt);
  SampleOutputs b = forward_sample(m, r, opt);
  EXPECT_EQ(a.heads.y_o.data(), b.heads.y_o.data());
  EXPECT_EQ(a.lm.data(), b.lm.data());
  EXPECT_EQ(a.X_f_final.data(), b.X_f_final.data());
}

TEST(ModelTest, SeedChangesInitialization) {
  ModelConfig c1 = tiny_model_cfg();
  ModelConfig c2 = tiny_model_cfg();
  c2.seed = c1.seed + 1;
  Model m1 = init_model(c1);
  Model m2 = init_model(c2);
  EXPECT_NE(m1.mlm.fusion_tokens.data(), m2.mlm.fusion_tokens.data());
  Model m3 = init_model(c1);
  EXPECT_EQ(m1.mlm.fusion_tokens.data(), m3.mlm.fusion_tokens.data());
  EXPECT_EQ(m1.heads.task.fc1.W.data(), m3.heads.task.fc1.W.data());
}

TEST(ModelTest, AvInitModeDoesNotDisturbDownstreamInit) {
  AvEncoderConfig ac = tiny_av();
  CheckpointTable snap;
  {
    Rng rng(98);
    AvEncoderParams donor = init_av_params(ac, rng);
    ParamStore s;
    register_params(s, "av", donor);
    snap = snapshot_params(s);
  }
  Model random_av = init_model(tiny_model_cfg(), AvInit::random_tune);
  Model pre_av = init_model(tiny_model_cfg(), AvInit::pre_tune, &snap);
  // heads are initialized after the AV encoder; swapping the AV init mode
  // must not shift their draws
  EXPECT_EQ(random_av.heads.task.fc1.W.data(), pre_av.heads.task.fc1.W.data());
  EXPECT_EQ(random_av.mlm.fusion_tokens.data(), pre_av.mlm.fusion_tokens.data());
  EXPECT_NE(random_av.av.proj_a.W.data(), pre_av.av.proj_a.W.data());
  EXPECT_EQ(pre_av.av.proj_a.W.data(), snap.at("av.proj_a.W").data);
}

TEST(ModelTest, AvPerturbationNeverReachesTheLanguagePath) {
  Model m = init_model(tiny_model_cfg());  // sigmoid gates: cross-attention live
  DatasetRecord r = tiny_record();
  PerturbSpec spec;
  spec.stream = PerturbSpec::Stream::av;
  spec.index = 2;
  ProbeReport rep = info_flow_probe(m, r, spec);

  EXPECT_TRUE(rep.z);
  EXPECT_TRUE(rep.y_av);
  EXPECT_TRUE(rep.x_f);   // via gated cross-attention
  EXPECT_TRUE(rep.y_f);
  EXPECT_TRUE(rep.y_o);
  EXPECT_FALSE(rep.x_t);  // language rows never look at fusion or av
  EXPECT_FALSE(rep.y_t);
  EXPECT_FALSE(rep.lm_logits);
  EXPECT_TRUE(probe_respects_causality(rep));
}

TEST(ModelTest, FusionPerturbationTouchesFusionButNotLanguageOrAv) {
  Model m = init_model(tiny_model_cfg());
  DatasetRecord r = tiny_record();
  PerturbSpec spec;
  spec.stream = PerturbSpec::Stream::fusion;
  spec.index = 0;
  ProbeReport rep = info_flow_probe(m, r, spec);

  EXPECT_FALSE(rep.z);
  EXPECT_FALSE(rep.y_av);
  EXPECT_FALSE(rep.x_t);
  EXPECT_FALSE(rep.y_t);
  EXPECT_FALSE(rep.lm_logits);
  EXPECT_TRUE(rep.x_f);
  EXPECT_TRUE(rep.y_f);
  EXPECT_TRUE(rep.y_o);
  EXPECT_TRUE(probe_respects_causality(rep));
}

TEST(ModelTest, TextPerturbationReachesEverythingExceptTheAvEncoder) {
  Model m = init_model(tiny_model_cfg());
  DatasetRecord r = tiny_record();
  PerturbSpec spec;
  spec.stream = PerturbSpec::Stream::text;
  spec.index = 0;  // first embedding element of the first token
  ProbeReport rep = info_flow_probe(m, r, spec);

  EXPECT_TRUE(rep.x_t);
  EXPECT_TRUE(rep.y_t);
  EXPECT_TRUE(rep.lm_logits);
  EXPECT_TRUE(rep.x_f);  // fusion tokens attend to language causally
  EXPECT_TRUE(rep.y_f);
  EXPECT_TRUE(rep.y_o);
  EXPECT_FALSE(rep.z);
  EXPECT_FALSE(rep.y_av);
  EXPECT_TRUE(probe_respects_causality(rep));
}

TEST(ModelTest, ClosedTanhGatesBlockAvInfluenceOnFusionTokens) {
  ModelConfig cfg = tiny_model_cfg();
  cfg.mlm.gating = Gating::tanh;
  Model m = init_model(cfg);
  DatasetRecord r = tiny_record();
  PerturbSpec spec;
  spec.stream = PerturbSpec::Stream::av;
  spec.index = 1;
  ProbeReport rep = info_flow_probe(m, r, spec);

  EXPECT_TRUE(rep.z);
  EXPECT_TRUE(rep.y_av);
  EXPECT_FALSE(rep.x_f);  // gate value tanh(0) = 0 blocks the branch
  EXPECT_FALSE(rep.y_f);
  EXPECT_TRUE(rep.y_o);   // still flows through the pooled av summary
  EXPECT_FALSE(rep.x_t);
}

TEST(ModelTest, TruncatesOverlongTokenSequences) {
  Model m = init_model(tiny_model_cfg());
  DatasetRecord r = tiny_record();
  r.tokens.assign(static_cast<size_t>(m.cfg.mlm.L_t_max + 5), 3);
  SampleOutputs out = forward_sample(m, r);
  EXPECT_EQ(out.X_t_final.dim(0), m.cfg.mlm.L_t_max);
}

TEST(ModelTest, TrainingWithAugmentationRequiresAnRng) {
  Model m = init_model(tiny_model_cfg());  // default aug: seqaug
  DatasetRecord r = tiny_record();
  ForwardOptions opt;
  opt.training = true;
  try {
    forward_sample(m, r, opt);
    FAIL() << "expected contract error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::contract);
  }
  Rng rng(99);
  opt.aug_rng = &rng;
  EXPECT_NO_THROW(forward_sample(m, r, opt));
}

TEST(ModelTest, EvaluateAggregatesHeadsAndMetrics) {
  SyntheticSpec spec;
  spec.n_train = 4;
  spec.n_val = 10;
  spec.n_test = 4;
  spec.seed = 100;
  GeneratedData g = generate_synthetic(spec);

  ModelConfig cfg = tiny_model_cfg();
  cfg.av.d_a_in = spec.d_a_in;
  cfg.av.d_v_in = spec.d_v_in;
  cfg.av.L_av = spec.L_av;
  cfg.mlm.vocab_size = g.vocab.size();
  cfg.mlm.L_t_max = spec.L_t_max;
  Model m = init_model(cfg);

  EvalResult res = evaluate(m, g.val.records);
  EXPECT_EQ(res.metrics.n, 10);
  EXPECT_EQ(res.preds.size(), 10u);
  EXPECT_TRUE(std::isfinite(res.mean_total_loss));
  EXPECT_TRUE(std::isfinite(res.mae_y_t));
  EXPECT_THROW(evaluate(m, {}), Error);
}

TEST(ModelTest, FullModelGradCheck) {
  Model m = init_model(tiny_model_cfg());
  DatasetRecord r = tiny_record();

  std::vector<std::pair<std::string, Tensor>> params;
  for (auto& [name, t] : m.store.items())
    if (t.requires_grad()) params.emplace_back(name, t);
  ASSERT_GT(params.size(), 30u);  // fusion tokens + mm block + av + heads

  auto loss = [&]() {
    ForwardOptions opt;
    opt.want_lm_loss = true;
    SampleOutputs out = forward_sample(m, r, opt);
    return total_loss(r.label, out.heads, out.lm, m.cfg.loss).total;
  };
  GradCheckReport rep = grad_check(params, loss);
  EXPECT_TRUE(rep.passed) << rep.worst_group << " rel err " << rep.max_rel_err;
  EXPECT_GE(static_cast<int>(rep.entries.size()), static_cast<int>(params.size()));
}

// ---------------------------------------------------------------------------
// analysis utilities
// ---------------------------------------------------------------------------

TEST(AnalysisTest, GateTraceReportsActivationsPerBlock) {
  ModelConfig cfg = tiny_model_cfg();
  cfg.mlm.mm_positions = {1, 2};
  Model m = init_model(cfg);
  std::vector<GateTraceEntry> trace = gate_trace(m);
  ASSERT_EQ(trace.size(), 2u);
  EXPECT_EQ(trace[0].position, 1);
  EXPECT_EQ(trace[1].position, 2);
  for (const auto& e : trace) {
    EXPECT_NEAR(e.g1, 0.5, 1e-7);  // sigmoid(0)
    EXPECT_NEAR(e.g2, 0.5, 1e-7);
    EXPECT_TRUE(e.has_ffw);
  }

  cfg.mlm.gating = Gating::tanh;
  Model mt = init_model(cfg);
  EXPECT_NEAR(gate_trace(mt)[0].g1, 0.0, 1e-7);
  cfg.mlm.gating = Gating::none;
  Model mn = init_model(cfg);
  EXPECT_NEAR(gate_trace(mn)[0].g1, 1.0, 1e-7);
}

TEST(AnalysisTest, MemoryBudgetMatchesMeasuredScoreSizes) {
  ModelConfig cfg = tiny_model_cfg();
  cfg.mlm.n_f = 6;  // distinct from L_av = 4 and L_t + n_f so slices don't mix
  cfg.mlm.mm_positions = {1, 2};
  Model m = init_model(cfg);

  DatasetRecord r = tiny_record();
  r.tokens = {2, 3, 4, 5, 6};  // L_t = 5

  const int L_t = static_cast<int>(r.tokens.size());
  MemoryBudget b = memory_budget(cfg.mlm, L_t, cfg.av.L_av);
  EXPECT_EQ(b.gca_per_head, 6 * 4);
  EXPECT_EQ(b.self_attn_per_head, 11 * 11);
  EXPECT_EQ(b.joint_attn_per_head, 9 * 9);  // (L_t + L_av)^2
  EXPECT_EQ(b.gca_total, 6LL * 4 * 2 * 2);
  EXPECT_EQ(b.self_attn_total, 121LL * 2 * 2);

  AttnStats stats;
  ForwardOptions opt;
  opt.stats = &stats;
  forward_sample(m, r, opt);
  EXPECT_EQ(measured_score_elements(stats, cfg.mlm.n_f), b.gca_total);
  EXPECT_EQ(measured_score_elements(stats, L_t + cfg.mlm.n_f), b.self_attn_total);
  // fusion-token cross-attention is the cheapest score matrix in the stack
  EXPECT_LT(b.gca_per_head, b.self_attn_per_head);
  EXPECT_LT(b.gca_per_head, b.joint_attn_per_head);
}

TEST(AnalysisTest, AblationGridEnumeratesAxesDeterministically) {
  ModelConfig base = tiny_model_cfg();
  std::vector<GridEntry> grid =
      ablation_grid(base, AvInit::random_tune, {"n_f", "fusion", "loss"});
  // base + 4 fusion-token counts + 4 routing variants + 4 loss drops
  ASSERT_EQ(grid.size(), 13u);
  EXPECT_EQ(grid[0].id, "base");

  std::set<std::string> ids;
  for (const auto& e : grid) ids.insert(e.id);
  EXPECT_EQ(ids.size(), grid.size());

  bool saw_no_ffw = false, saw_no_lm = false;
  for (const auto& e : grid) {
    if (e.id == "fusion=f_only_no_ffw") {
      saw_no_ffw = true;
      EXPECT_FALSE(e.cfg.mlm.ffw_enabled);
      EXPECT_EQ(e.cfg.mlm.fusion_scheme, FusionScheme::f_only);
    }
    if (e.id == "loss=no_lm") {
      saw_no_lm = true;
      EXPECT_EQ(e.cfg.loss.lambda_lm, 0.0f);
      EXPECT_EQ(e.cfg.loss.lambda_av, 1.0f);
    }
    if (e.id == "n_f=12") {
      EXPECT_EQ(e.cfg.mlm.n_f, 12);
    }
  }
  EXPECT_TRUE(saw_no_ffw);
  EXPECT_TRUE(saw_no_lm);

  std::vector<GridEntry> counts =
      ablation_grid(base, AvInit::random_tune, {"mm_count"});
  ASSERT_EQ(counts.size(), 3u);  // base + counts 1..n_layers (2)
  EXPECT_EQ(counts[1].cfg.mlm.mm_positions, (std::vector<int>{2}));
  EXPECT_EQ(counts[2].cfg.mlm.mm_positions, (std::vector<int>{1, 2}));

  EXPECT_THROW(ablation_grid(base, AvInit::random_tune, {}), Error);
  EXPECT_THROW(ablation_grid(base, AvInit::random_tune, {"bogus"}), Error);
}

TEST(AnalysisTest, ProbeReportJsonCarriesTheCausalityVerdict) {
  Model m = init_model(tiny_model_cfg());
  DatasetRecord r = tiny_record();
  PerturbSpec spec;
  spec.stream = PerturbSpec::Stream::av;
  ProbeReport rep = info_flow_probe(m, r, spec);
  const std::string j = probe_report_json(rep);
  EXPECT_NE(j.find("\"causality_ok\":true"), std::string::npos);
  EXPECT_NE(j.find("\"stream\":\"av\""), std::string::npos);
}

}  // namespace
