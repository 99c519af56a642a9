// Copyright (c) 2026 the dmlf authors
// SPDX-License-Identifier: Apache-2.0
//
// Error taxonomy shared by every module. Each failure carries a machine
// parsable category so the CLI can map it to an exit code and a single
// diagnostic line.

#pragma once

#include <stdexcept>
#include <string>

namespace dmlf {

enum class ErrorCategory {
  dimension,      // shape / size mismatch
  config,         // invalid or unknown configuration
  degenerate,     // empty reduction, fully masked row
  alignment,      // modality sequence lengths disagree
  vocabulary,     // token id out of range
  contract,       // API precondition violated (non-scalar loss, n_f = 0, ...)
  data,           // dataset missing / malformed
  io,             // file read/write failure
  reproducibility // non-deterministic function handed to a checker
};

inline const char* category_name(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::dimension: return "dimension";
    case ErrorCategory::config: return "config";
    case ErrorCategory::degenerate: return "degenerate";
    case ErrorCategory::alignment: return "alignment";
    case ErrorCategory::vocabulary: return "vocabulary";
    case ErrorCategory::contract: return "contract";
    case ErrorCategory::data: return "data";
    case ErrorCategory::io: return "io";
    case ErrorCategory::reproducibility: return "reproducibility";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(std::string(category_name(cat)) + ": " + msg), cat_(cat) {}

  ErrorCategory category() const { return cat_; }

 private:
  ErrorCategory cat_;
};

[[noreturn]] inline void fail(ErrorCategory cat, const std::string& msg) {
  throw Error(cat, msg);
}

inline void require(bool cond, ErrorCategory cat, const std::string& msg) {
  if (!cond) fail(cat, msg);
}

}  // namespace dmlf
