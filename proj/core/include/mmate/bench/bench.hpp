// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mmate/model/model.hpp"

namespace mmate::bench {

enum class Kind { kAttention, kMMate };

std::string_view kind_name(Kind kind);
/// Throws std::invalid_argument naming the accepted kinds.
Kind parse_kind(std::string_view name);

struct BenchConfig {
  model::ModelConfig model;  // d=64, 4 heads, 2 layers by default
  std::size_t height = 8;    // frames = N / (height * width)
  std::size_t width = 8;
  std::size_t warmups = 2;
  std::size_t reps = 3;
  std::size_t gen_len = 32;
  bool decode = true;
  int threads = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BenchRecord {
  Kind kind = Kind::kAttention;
  std::size_t n = 0;
  double prefill_seconds = 0.0;  // NaN when skipped
  double decode_tps = 0.0;       // NaN when not measured
  std::uint64_t flops = 0;       // analytic, one prefill
  std::size_t reps = 0;
  int threads = 1;
  std::string precision = "f64";
  bool skipped = false;
};

/// Vision grid of frames x height x width covering n tokens, remainder as
/// text.
GridShape bench_shape(std::size_t n, const BenchConfig& config);

/// Randomly initialized model for a kind; cost does not depend on weights.
model::Model bench_model(Kind kind, const BenchConfig& config);

/// Median wall time of one full forward after the warmup passes. An
/// allocation failure yields a skipped record.
BenchRecord bench_prefill(const model::Model& model, Kind kind, std::size_t n, const BenchConfig& config);
/// Greedy decode throughput over gen_len tokens after an n-token context,
/// median over config.reps runs.
double bench_decode(const model::Model& model, std::size_t n, std::size_t gen_len, const BenchConfig& config);

struct ScalingFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

/// Least squares on (log n, log value). Needs at least 4 distinct n spanning
/// a factor of 16 and positive values.
ScalingFit fit_scaling(const std::vector<std::pair<double, double>>& points);
/// Prefill fit over the non-skipped records of one kind.
ScalingFit fit_prefill(const std::vector<BenchRecord>& records, Kind kind);

/// Runs every (kind, n) pair. Decode is measured when config.decode is set.
std::vector<BenchRecord> run_bench(const std::vector<Kind>& kinds, const std::vector<std::size_t>& lengths,
                                   const BenchConfig& config);

inline constexpr std::string_view kCsvHeader = "kind,N,prefill_seconds,decode_tps,flops,reps,threads,precision";

void write_csv(const std::filesystem::path& path, const std::vector<BenchRecord>& records);
std::vector<BenchRecord> read_csv(const std::filesystem::path& path);

/// attention / mmate prefill time at every N measured for both kinds.
std::map<std::size_t, double> prefill_speedups(const std::vector<BenchRecord>& records);

/// Writes bench.csv and summary.txt into `dir` (created if missing). Fits are
/// included for kinds with enough points.
void emit_report(const std::vector<BenchRecord>& records, const BenchConfig& config, const std::filesystem::path& dir);
std::string summary_text(const std::vector<BenchRecord>& records, const BenchConfig& config);

}  // namespace mmate::bench
