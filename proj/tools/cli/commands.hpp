// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "run_config.hpp"

namespace mmate::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailed = 1;     // a verification check failed
inline constexpr int kUsage = 2;      // bad config, flag or precondition
inline constexpr int kDiverged = 3;   // non-finite objective during training

struct DistillOptions {
  std::optional<std::filesystem::path> config;
  std::string stage = "all";  // 1, 2, 3, all, single
  std::string out;            // overrides the config's out
  bool from_scratch = false;
};

/// Writes config.json, teacher.ckpt, stage{k}.ckpt (or single.ckpt) and
/// trace.csv under the output directory.
int cmd_distill(const DistillOptions& options, std::ostream& log);

struct BenchOptions {
  std::optional<std::filesystem::path> config;
  std::string kinds = "attention,mmate";
  std::string lengths = "1024,4096,16384,65536";
  std::string out;
  bool no_decode = false;
  std::optional<int> threads;
};

/// Writes config.json, bench.csv and summary.txt under the output directory.
int cmd_bench(const BenchOptions& options, std::ostream& log);

/// Runs one invariant suite (rms, flexma, swin, losses, grads) or all.
int cmd_verify(const std::string& suite, std::ostream& log);

/// Thread count from MMATE_NUM_THREADS, if set.
std::optional<int> env_threads();

}  // namespace mmate::cli
