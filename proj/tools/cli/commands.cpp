// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <cstdlib>
#include <sstream>
#include <vector>

#include "mmate/model/checkpoint.hpp"
#include "mmate/numerics/kernels.hpp"

namespace mmate::cli {
namespace {

namespace fs = std::filesystem;

RunConfig resolve(const std::optional<fs::path>& path, const std::string& out, const char* default_out) {
  RunConfig c = path ? load_run_config(*path) : RunConfig{};
  if (!out.empty()) c.out = out;
  if (c.out.empty()) c.out = default_out;
  c.validate();
  return c;
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  for (std::string p; std::getline(ss, p, ',');) {
    if (!p.empty()) parts.push_back(p);
  }
  return parts;
}

fs::path stage_path(const fs::path& out, int stage) { return out / ("stage" + std::to_string(stage) + ".ckpt"); }

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<int> parse_stages(const std::string& stage) {
  if (stage == "all") return {1, 2, 3};
  if (stage == "single") return {};
  if (stage == "1" || stage == "2" || stage == "3") return {stage[0] - '0'};
  throw Usage("--stage must be 1, 2, 3, all or single, got '" + stage + "'");
}

model::Model load_teacher(const fs::path& out, const distill::DistillPlan& plan, const model::ModelConfig& config,
                          bool fresh, std::ostream& log) {
  const fs::path path = out / "teacher.ckpt";
  if (!fresh && fs::exists(path)) {
    auto loaded = model::load_model(path);
    const auto seed = loaded.meta.find("seed");
    if (seed == loaded.meta.end() || seed->second != static_cast<double>(plan.seed)) {
      throw Usage(path.string() + " was produced with a different seed");
    }
    return std::move(loaded.model);
  }
  log << "pretraining teacher (" << plan.teacher.steps << " steps)\n";
  model::Model teacher = distill::pretrain_teacher(config, plan);
  model::save_model(path, teacher, {{"seed", static_cast<double>(plan.seed)}});
  return teacher;
}

}  // namespace

std::optional<int> env_threads() {
  const char* v = std::getenv("MMATE_NUM_THREADS");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw ConfigError("MMATE_NUM_THREADS must be a positive integer, got '" + std::string(v) + "'");
  return static_cast<int>(n);
}

int cmd_distill(const DistillOptions& o, std::ostream& log) {
  try {
    const RunConfig cfg = resolve(o.config, o.out, "runs/distill");
    const distill::DistillPlan plan = cfg.plan();
    const std::vector<int> stages = parse_stages(o.stage);
    const fs::path out = cfg.out;
    const int first = stages.empty() ? 1 : stages.front();

    distill::Student student;
    std::vector<distill::TraceRow> trace;
    bool out_of_order = false;
    if (first > 1 && !o.from_scratch) {
      const fs::path prior = stage_path(out, first - 1);
      if (!fs::exists(prior)) {
        throw Usage("stage " + std::to_string(first) + " needs " + prior.string() + " from stage " +
                    std::to_string(first - 1) + "; run that stage first or pass --from-scratch");
      }
      auto loaded = model::load_model(prior);
      student = {std::move(loaded.model), static_cast<int>(loaded.meta.at("completed_stage"))};
      if (fs::exists(out / "trace.csv")) {
        for (const auto& r : distill::read_trace_csv(out / "trace.csv")) {
          if (r.stage >= 1 && r.stage < first) trace.push_back(r);
        }
      }
    }

    fs::create_directories(out);
    save_run_config(out / "config.json", cfg);
    const bool fresh_teacher = first == 1 || o.from_scratch;
    const model::Model teacher = load_teacher(out, plan, cfg.model, fresh_teacher, log);
    if (first == 1 || o.from_scratch) {
      student = distill::make_student(teacher, plan.seed);
      out_of_order = first > 1;
    }
    const auto eval = distill::make_eval_set(plan.seed, plan.eval_samples);
    log << "seed " << plan.seed << ", initial KL " << distill::evaluate_kl(student.model, teacher, eval) << "\n";

    try {
      if (stages.empty()) {
        distill::run_single_stage(student, teacher, plan, &trace);
        model::save_model(out / "single.ckpt", student.model,
                          {{"completed_stage", 3.0}, {"seed", static_cast<double>(plan.seed)}});
        log << "single stage: KL " << distill::evaluate_kl(student.model, teacher, eval) << "\n";
      }
      for (int stage : stages) {
        distill::run_stage(student, teacher, stage, plan, &trace, out_of_order);
        model::save_model(stage_path(out, stage), student.model,
                          {{"completed_stage", static_cast<double>(stage)}, {"seed", static_cast<double>(plan.seed)}});
        log << "stage " << stage << ": KL " << distill::evaluate_kl(student.model, teacher, eval) << "\n";
      }
    } catch (const distill::DistillError& e) {
      distill::write_trace_csv(out / "trace.csv", trace);
      log << "error: " << e.what() << "\n";
      return kDiverged;
    }
    distill::write_trace_csv(out / "trace.csv", trace);
    log << "wrote " << out.string() << "\n";
    return kOk;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Usage& e) {
    log << "error: " << e.what() << "\n";
    return kUsage;
  }
}

int cmd_bench(const BenchOptions& o, std::ostream& log) {
  try {
    RunConfig cfg = resolve(o.config, o.out, "runs/bench");
    if (o.no_decode) cfg.bench.decode = false;
    if (o.threads) cfg.bench.threads = *o.threads;
    std::vector<bench::Kind> kinds;
    for (const auto& k : split(o.kinds)) kinds.push_back(bench::parse_kind(k));
    if (kinds.empty()) throw Usage("--kinds is empty (expected some of: attention, mmate)");
    std::vector<std::size_t> lengths;
    for (const auto& s : split(o.lengths)) {
      std::size_t pos = 0;
      unsigned long long v = 0;
      try {
        v = std::stoull(s, &pos);
      } catch (const std::exception&) {
        pos = 0;
      }
      if (pos != s.size() || v == 0) throw Usage("--lengths entry '" + s + "' is not a positive integer");
      if (!lengths.empty() && v <= lengths.back()) throw Usage("--lengths must be strictly ascending");
      lengths.push_back(v);
    }
    if (lengths.empty()) throw Usage("--lengths is empty");
    cfg.validate();

    const fs::path out = cfg.out;
    fs::create_directories(out);
    save_run_config(out / "config.json", cfg);
    const bench::BenchConfig bc = cfg.bench_config();
    const auto records = bench::run_bench(kinds, lengths, bc);
    bench::emit_report(records, bc, out);
    log << bench::summary_text(records, bc);
    return kOk;
  } catch (const ConfigError& e) {
    log << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Usage& e) {
    log << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace mmate::cli
