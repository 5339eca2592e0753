// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "mmate/bench/bench.hpp"
#include "mmate/distill/trainer.hpp"
#include "mmate/model/model.hpp"

namespace mmate::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs. The model section is shared by distillation and
/// benchmarks.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out;
  model::ModelConfig model;
  distill::DistillPlan distill;
  bench::BenchConfig bench;

  /// Plan with the top-level seed applied.
  distill::DistillPlan plan() const;
  /// Bench config with the shared model section applied.
  bench::BenchConfig bench_config() const;
  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
/// Starts from defaults and overrides every key present. Unknown keys and
/// wrongly typed values throw ConfigError naming the dotted key.
RunConfig from_json(const nlohmann::json& j);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace mmate::cli
