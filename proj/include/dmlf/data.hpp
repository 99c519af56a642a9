// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Toy whitespace tokenizer, JSONL dataset format, batching with padding, and
// a synthetic multimodal generator with controllable modality dependence.
//
// Generator construction: a text signal s_t = (#positive - #negative
// tokens) / L_t is recoverable from tokens alone; an audiovisual signal s_av
// is the mean of one designated audio channel. The label mixes them:
//   label = clip(label_scale * (w_t * s_t + w_av * s_av) + noise)
// so unimodal Bayes-optimal error is computable in closed form.

#pragma once

#include <algorithm>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "dmlf/error.hpp"
#include "dmlf/rng.hpp"

namespace dmlf {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// vocabulary / toy tokenizer
// ---------------------------------------------------------------------------

struct Vocab {
  std::vector<std::string> id_to_word;  // index = id
  std::unordered_map<std::string, int> word_to_id;
  int pad_id = 0;
  int unk_id = 1;

  int size() const { return static_cast<int>(id_to_word.size()); }
};

// Word-level vocabulary in first-seen order; ids 0/1 reserved for PAD/UNK.
inline Vocab build_vocab(const std::vector<std::string>& corpus) {
  Vocab v;
  v.id_to_word = {"<pad>", "<unk>"};
  v.word_to_id = {{"<pad>", 0}, {"<unk>", 1}};
  for (const auto& line : corpus) {
    std::istringstream ss(line);
    std::string word;
    while (ss >> word) {
      if (!v.word_to_id.count(word)) {
        v.word_to_id[word] = v.size();
        v.id_to_word.push_back(word);
      }
    }
  }
  return v;
}

inline std::vector<int> tokenize_toy(const std::string& text, const Vocab& vocab) {
  std::vector<int> ids;
  std::istringstream ss(text);
  std::string word;
  while (ss >> word) {
    auto it = vocab.word_to_id.find(word);
    ids.push_back(it == vocab.word_to_id.end() ? vocab.unk_id : it->second);
  }
  return ids;
}

inline std::string detokenize_toy(const std::vector<int>& ids, const Vocab& vocab) {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && ids[i] < vocab.size(), ErrorCategory::vocabulary,
            "token id out of vocabulary");
    if (i) out += " ";
    out += vocab.id_to_word[static_cast<size_t>(ids[i])];
  }
  return out;
}

// ---------------------------------------------------------------------------
// records and file format
// ---------------------------------------------------------------------------

struct DatasetRecord {
  std::string id;
  std::vector<int> tokens;                 // <= L_t_max after batching
  std::vector<float> audio;                // row-major [L_av][d_a_in]
  std::vector<float> vision;               // row-major [L_av][d_v_in]
  float label = 0.0f;
};

struct DatasetMeta {
  int d_a_in = 0;
  int d_v_in = 0;
  int L_av = 0;
  int L_t_max = 0;
  float label_min = -3.0f;
  float label_max = 3.0f;
  std::vector<std::string> vocab_words;  // id order
  json extra;                            // generator echo, free-form

  Vocab vocab() const {
    Vocab v;
    v.id_to_word = vocab_words;
    for (int i = 0; i < static_cast<int>(vocab_words.size()); ++i)
      v.word_to_id[vocab_words[static_cast<size_t>(i)]] = i;
    return v;
  }
};

inline void write_jsonl(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream f(path);
  require(f.good(), ErrorCategory::io, "cannot open '" + path + "' for writing");
  for (const auto& r : records) {
    json j;
    j["id"] = r.id;
    j["tokens"] = r.tokens;
    j["audio"] = r.audio;
    j["vision"] = r.vision;
    j["label"] = r.label;
    f << j.dump() << "\n";
  }
  require(f.good(), ErrorCategory::io, "write failed for '" + path + "'");
}

inline std::vector<DatasetRecord> read_jsonl(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCategory::io, "cannot open '" + path + "'");
  std::vector<DatasetRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorCategory::data, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    DatasetRecord r;
    try {
      r.id = j.at("id").get<std::string>();
      r.tokens = j.at("tokens").get<std::vector<int>>();
      r.audio = j.at("audio").get<std::vector<float>>();
      r.vision = j.at("vision").get<std::vector<float>>();
      r.label = j.at("label").get<float>();
    } catch (const json::exception& e) {
      fail(ErrorCategory::data, path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_meta(const std::string& path, const DatasetMeta& m) {
  json j;
  j["d_a_in"] = m.d_a_in;
  j["d_v_in"] = m.d_v_in;
  j["L_av"] = m.L_av;
  j["L_t_max"] = m.L_t_max;
  j["label_min"] = m.label_min;
  j["label_max"] = m.label_max;
  j["vocab"] = m.vocab_words;
  j["extra"] = m.extra;
  std::ofstream f(path);
  require(f.good(), ErrorCategory::io, "cannot open '" + path + "' for writing");
  f << j.dump(2) << "\n";
}

inline DatasetMeta read_meta(const std::string& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCategory::io, "cannot open '" + path + "'");
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    fail(ErrorCategory::data, path + ": " + e.what());
  }
  DatasetMeta m;
  try {
    m.d_a_in = j.at("d_a_in").get<int>();
    m.d_v_in = j.at("d_v_in").get<int>();
    m.L_av = j.at("L_av").get<int>();
    m.L_t_max = j.at("L_t_max").get<int>();
    m.label_min = j.at("label_min").get<float>();
    m.label_max = j.at("label_max").get<float>();
    m.vocab_words = j.at("vocab").get<std::vector<std::string>>();
    m.extra = j.value("extra", json::object());
  } catch (const json::exception& e) {
    fail(ErrorCategory::data, path + ": " + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// synthetic generator
// ---------------------------------------------------------------------------

struct SyntheticSpec {
  float w_t = 0.5f;   // mixing weights; must sum to 1
  float w_av = 0.5f;
  int n_class_words = 6;  // vocabulary words per token class (pos/neg/neutral)
  int L_t_min = 6;
  int L_t_max = 12;
  int L_av = 8;
  int d_a_in = 6;
  int d_v_in = 6;
  int signal_channel = 0;   // audio channel whose mean carries s_av
  float noise = 0.1f;       // label noise std-dev
  float label_scale = 3.0f; // spreads the [-1,1] mix over the label range
  float label_range = 3.0f; // labels clipped to [-range, range]
  int n_train = 2000;
  int n_val = 500;
  int n_test = 500;
  uint64_t seed = 1234;
};

inline SyntheticSpec synthetic_spec_from_json(const json& j) {
  SyntheticSpec s;
  const std::vector<std::string> known = {
      "w_t", "w_av", "n_class_words", "L_t_min", "L_t_max", "L_av", "d_a_in", "d_v_in",
      "signal_channel", "noise", "label_scale", "label_range", "n_train", "n_val",
      "n_test", "seed"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    require(std::find(known.begin(), known.end(), it.key()) != known.end(),
            ErrorCategory::config, "unknown generator key '" + it.key() + "'");
  }
  try {
    s.w_t = j.value("w_t", s.w_t);
    s.w_av = j.value("w_av", s.w_av);
    s.n_class_words = j.value("n_class_words", s.n_class_words);
    s.L_t_min = j.value("L_t_min", s.L_t_min);
    s.L_t_max = j.value("L_t_max", s.L_t_max);
    s.L_av = j.value("L_av", s.L_av);
    s.d_a_in = j.value("d_a_in", s.d_a_in);
    s.d_v_in = j.value("d_v_in", s.d_v_in);
    s.signal_channel = j.value("signal_channel", s.signal_channel);
    s.noise = j.value("noise", s.noise);
    s.label_scale = j.value("label_scale", s.label_scale);
    s.label_range = j.value("label_range", s.label_range);
    s.n_train = j.value("n_train", s.n_train);
    s.n_val = j.value("n_val", s.n_val);
    s.n_test = j.value("n_test", s.n_test);
    s.seed = j.value("seed", s.seed);
  } catch (const json::exception& e) {
    fail(ErrorCategory::config, std::string("generator spec: ") + e.what());
  }
  return s;
}

inline void validate_synthetic_spec(const SyntheticSpec& s) {
  require(std::fabs(s.w_t + s.w_av - 1.0f) < 1e-6f, ErrorCategory::config,
          "mixing weights must satisfy w_t + w_av = 1");
  require(s.w_t >= 0.0f && s.w_av >= 0.0f, ErrorCategory::config,
          "mixing weights must be non-negative");
  require(s.L_t_min >= 1 && s.L_t_max >= s.L_t_min, ErrorCategory::config,
          "need 1 <= L_t_min <= L_t_max");
  require(s.L_av >= 1, ErrorCategory::config, "L_av must be >= 1");
  require(s.signal_channel >= 0 && s.signal_channel < s.d_a_in, ErrorCategory::config,
          "signal_channel out of audio feature range");
  require(s.n_class_words >= 1, ErrorCategory::config, "need at least one word per class");
  require(s.noise >= 0.0f, ErrorCategory::config, "noise must be >= 0");
  require(s.label_range > 0.0f && s.label_scale > 0.0f, ErrorCategory::config,
          "label scale/range must be positive");
}

// Word classes: pos* raise s_t, neg* lower it, neu* are inert.
inline Vocab synthetic_vocab(const SyntheticSpec& s) {
  std::vector<std::string> corpus;
  std::string line;
  for (const char* cls : {"pos", "neg", "neu"}) {
    for (int i = 0; i < s.n_class_words; ++i) line += std::string(cls) + std::to_string(i) + " ";
  }
  corpus.push_back(line);
  return build_vocab(corpus);
}

// Token-class helpers tied to the synthetic_vocab layout (ids 2.. in
// pos/neg/neu blocks of n_class_words each).
// Sign of the token's sentiment class: +1 positive, -1 negative, 0 neutral
// (pad/unk count as neutral).
inline int synthetic_token_class(int id, const SyntheticSpec& s) {
  const int base = 2;
  if (id < base) return 0;
  const int rel = id - base;
  if (rel < s.n_class_words) return 1;
  if (rel < 2 * s.n_class_words) return -1;
  return 0;
}

// s_t as the model must recover it: (#pos - #neg) / L_t.
inline float synthetic_s_t(const std::vector<int>& tokens, const SyntheticSpec& s) {
  require(!tokens.empty(), ErrorCategory::data, "empty token list");
  int net = 0;
  for (int id : tokens) net += synthetic_token_class(id, s);
  return static_cast<float>(net) / static_cast<float>(tokens.size());
}

// s_av as the model must recover it: mean of the designated audio channel.
inline float synthetic_s_av(const DatasetRecord& r, const SyntheticSpec& s) {
  double acc = 0.0;
  for (int t = 0; t < s.L_av; ++t)
    acc += r.audio[static_cast<size_t>(t) * s.d_a_in + s.signal_channel];
  return static_cast<float>(acc / s.L_av);
}

struct GeneratedSplit {
  std::vector<DatasetRecord> records;
  std::vector<float> s_t;   // per-record true text signal
  std::vector<float> s_av;  // per-record true audiovisual signal
};

struct GeneratedData {
  GeneratedSplit train, val, test;
  DatasetMeta meta;
  Vocab vocab;
};

namespace detail {

inline GeneratedSplit generate_split(const SyntheticSpec& s, int n, const std::string& prefix,
                                     Rng& rng) {
  GeneratedSplit out;
  const int base = 2;  // first non-reserved id
  for (int i = 0; i < n; ++i) {
    DatasetRecord r;
    r.id = prefix + std::to_string(i);
    const int L_t = s.L_t_min + static_cast<int>(rng.uniform_int(
                                    static_cast<uint64_t>(s.L_t_max - s.L_t_min + 1)));
    const int n_pos = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(L_t + 1)));
    const int n_neg = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(L_t - n_pos + 1)));
    for (int t = 0; t < L_t; ++t) {
      int cls = (t < n_pos) ? 0 : (t < n_pos + n_neg ? 1 : 2);
      const int word = static_cast<int>(rng.uniform_int(static_cast<uint64_t>(s.n_class_words)));
      r.tokens.push_back(base + cls * s.n_class_words + word);
    }
    // shuffle token order so position carries no signal
    auto perm = rng.permutation(L_t);
    std::vector<int> shuffled(static_cast<size_t>(L_t));
    for (int t = 0; t < L_t; ++t) shuffled[static_cast<size_t>(t)] = r.tokens[static_cast<size_t>(perm[static_cast<size_t>(t)])];
    r.tokens = std::move(shuffled);
    const float s_t = synthetic_s_t(r.tokens, s);

    const float s_av = rng.uniform(-1.0f, 1.0f);
    r.audio.resize(static_cast<size_t>(s.L_av) * s.d_a_in);
    r.vision.resize(static_cast<size_t>(s.L_av) * s.d_v_in);
    for (float& v : r.audio) v = rng.normal();
    for (float& v : r.vision) v = rng.normal();
    // recenter the designated channel so its mean is exactly s_av
    double ch_mean = 0.0;
    for (int t = 0; t < s.L_av; ++t)
      ch_mean += r.audio[static_cast<size_t>(t) * s.d_a_in + s.signal_channel] * 0.3;
    ch_mean /= s.L_av;
    for (int t = 0; t < s.L_av; ++t) {
      float& v = r.audio[static_cast<size_t>(t) * s.d_a_in + s.signal_channel];
      v = v * 0.3f - static_cast<float>(ch_mean) + s_av;
    }

    const float eps = s.noise * rng.normal();
    const float mix = s.w_t * s_t + s.w_av * s_av;
    r.label = std::clamp(s.label_scale * mix + eps, -s.label_range, s.label_range);

    out.records.push_back(std::move(r));
    out.s_t.push_back(s_t);
    out.s_av.push_back(s_av);
  }
  return out;
}

}  // namespace detail

inline GeneratedData generate_synthetic(const SyntheticSpec& s) {
  validate_synthetic_spec(s);
  GeneratedData g;
  g.vocab = synthetic_vocab(s);
  // independent streams per split so resizing one split leaves others intact
  Rng r_train = Rng::derive(s.seed, 1);
  Rng r_val = Rng::derive(s.seed, 2);
  Rng r_test = Rng::derive(s.seed, 3);
  g.train = detail::generate_split(s, s.n_train, "train-", r_train);
  g.val = detail::generate_split(s, s.n_val, "val-", r_val);
  g.test = detail::generate_split(s, s.n_test, "test-", r_test);

  g.meta.d_a_in = s.d_a_in;
  g.meta.d_v_in = s.d_v_in;
  g.meta.L_av = s.L_av;
  g.meta.L_t_max = s.L_t_max;
  g.meta.label_min = -s.label_range;
  g.meta.label_max = s.label_range;
  g.meta.vocab_words = g.vocab.id_to_word;
  g.meta.extra = {{"w_t", s.w_t},
                  {"w_av", s.w_av},
                  {"noise", s.noise},
                  {"label_scale", s.label_scale},
                  {"signal_channel", s.signal_channel},
                  {"n_class_words", s.n_class_words},
                  {"seed", s.seed}};
  return g;
}

inline void write_generated(const GeneratedData& g, const std::string& dir) {
  write_jsonl(dir + "/train.jsonl", g.train.records);
  write_jsonl(dir + "/val.jsonl", g.val.records);
  write_jsonl(dir + "/test.jsonl", g.test.records);
  write_meta(dir + "/meta.json", g.meta);
}

// Bayes-style reference predictors built from the true generator signals.
// Text-only: best guess given tokens alone (audiovisual part has median 0).
// Multimodal: best guess given both signals (only label noise remains).
inline float oracle_mae_text_only(const GeneratedSplit& split, const SyntheticSpec& s) {
  double acc = 0.0;
  for (size_t i = 0; i < split.records.size(); ++i) {
    const float pred = std::clamp(s.label_scale * s.w_t * split.s_t[i], -s.label_range, s.label_range);
    acc += std::fabs(split.records[i].label - pred);
  }
  return static_cast<float>(acc / split.records.size());
}

inline float oracle_mae_av_only(const GeneratedSplit& split, const SyntheticSpec& s) {
  double acc = 0.0;
  for (size_t i = 0; i < split.records.size(); ++i) {
    const float pred = std::clamp(s.label_scale * s.w_av * split.s_av[i], -s.label_range, s.label_range);
    acc += std::fabs(split.records[i].label - pred);
  }
  return static_cast<float>(acc / split.records.size());
}

inline float oracle_mae_multimodal(const GeneratedSplit& split, const SyntheticSpec& s) {
  double acc = 0.0;
  for (size_t i = 0; i < split.records.size(); ++i) {
    const float mix = s.w_t * split.s_t[i] + s.w_av * split.s_av[i];
    const float pred = std::clamp(s.label_scale * mix, -s.label_range, s.label_range);
    acc += std::fabs(split.records[i].label - pred);
  }
  return static_cast<float>(acc / split.records.size());
}

// ---------------------------------------------------------------------------
// batching
// ---------------------------------------------------------------------------

struct MultimodalBatch {
  std::vector<int> record_indices;          // into the source record vector
  std::vector<std::vector<int>> tokens;     // padded to the batch max length
  std::vector<std::vector<uint8_t>> token_mask;  // 1 = real token
  std::vector<float> labels;
};

struct BatchSet {
  std::vector<MultimodalBatch> batches;
  int truncated = 0;  // records clipped to L_t_max
};

// Deterministic given the shuffle rng state; pass nullptr for file order.
// Every record appears exactly once. Records longer than L_t_max are
// truncated with a warning on stderr.
inline BatchSet make_batches(const std::vector<DatasetRecord>& records, int batch_size,
                             int L_t_max, Rng* shuffle_rng = nullptr, int pad_id = 0) {
  require(batch_size >= 1, ErrorCategory::config, "batch_size must be >= 1");
  require(L_t_max >= 1, ErrorCategory::config, "L_t_max must be >= 1");
  require(!records.empty(), ErrorCategory::data, "cannot batch an empty dataset");

  std::vector<int> order(records.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  if (shuffle_rng) {
    auto perm = shuffle_rng->permutation(static_cast<int>(records.size()));
    for (size_t i = 0; i < order.size(); ++i) order[i] = perm[i];
  }

  BatchSet out;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    MultimodalBatch b;
    int max_len = 1;
    for (size_t i = start; i < end; ++i) {
      const auto& r = records[static_cast<size_t>(order[i])];
      int len = static_cast<int>(r.tokens.size());
      if (len > L_t_max) {
        len = L_t_max;
        out.truncated += 1;
      }
      max_len = std::max(max_len, len);
    }
    for (size_t i = start; i < end; ++i) {
      const int ri = order[i];
      const auto& r = records[static_cast<size_t>(ri)];
      const int len = std::min<int>(static_cast<int>(r.tokens.size()), L_t_max);
      std::vector<int> ids(static_cast<size_t>(max_len), pad_id);
      std::vector<uint8_t> mask(static_cast<size_t>(max_len), 0);
      for (int t = 0; t < len; ++t) {
        ids[static_cast<size_t>(t)] = r.tokens[static_cast<size_t>(t)];
        mask[static_cast<size_t>(t)] = 1;
      }
      b.record_indices.push_back(ri);
      b.tokens.push_back(std::move(ids));
      b.token_mask.push_back(std::move(mask));
      b.labels.push_back(r.label);
    }
    out.batches.push_back(std::move(b));
  }
  if (out.truncated > 0) {
    std::cerr << "warning: truncated " << out.truncated << " record(s) to L_t_max=" << L_t_max
              << "\n";
  }
  return out;
}

}  // namespace dmlf
