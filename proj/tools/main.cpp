// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"
#include "mmate/numerics/kernels.hpp"

using namespace mmate::cli;

int main(int argc, char** argv) {
  CLI::App app{"M-MATE distillation, benchmarks and self-checks"};
  app.require_subcommand(1);

  DistillOptions distill;
  std::string distill_config;
  auto* d = app.add_subcommand("distill", "Run distillation stages on the toy task");
  d->add_option("--config", distill_config, "JSON run config");
  d->add_option("--stage", distill.stage, "1, 2, 3, all or single")->capture_default_str();
  d->add_option("--out", distill.out, "Output directory");
  d->add_flag("--from-scratch", distill.from_scratch, "Allow a later stage without the prior checkpoint");

  BenchOptions bench;
  std::string bench_config;
  int threads = 0;
  auto* b = app.add_subcommand("bench", "Prefill and decode scaling benchmark");
  b->add_option("--config", bench_config, "JSON run config");
  b->add_option("--kinds", bench.kinds, "Comma-separated mixer kinds")->capture_default_str();
  b->add_option("--lengths", bench.lengths, "Comma-separated ascending token counts")->capture_default_str();
  b->add_option("--out", bench.out, "Output directory");
  b->add_flag("--no-decode", bench.no_decode, "Skip decode throughput");
  b->add_option("--threads", threads, "Intra-op threads (MMATE_NUM_THREADS also works)");

  std::string suite = "all";
  auto* v = app.add_subcommand("verify", "Run invariant suites");
  v->add_option("--suite", suite, "rms, flexma, swin, losses, grads or all")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (const auto env = env_threads()) {
      mmate::num::set_num_threads(*env);
      bench.threads = *env;
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
  if (threads > 0) bench.threads = threads;
  if (!distill_config.empty()) distill.config = distill_config;
  if (!bench_config.empty()) bench.config = bench_config;

  if (*d) return cmd_distill(distill, std::cout);
  if (*b) return cmd_bench(bench, std::cout);
  return cmd_verify(suite, std::cout);
}
