// SPDX-License-Identifier: Apache-2.0
#include "mmate/bench/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <new>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mmate/numerics/kernels.hpp"

namespace mmate::bench {
namespace {

using Clock = std::chrono::steady_clock;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

TokenSequence synthetic_input(std::size_t n, const BenchConfig& config) {
  num::Rng rng = num::Rng::derive(config.seed, n);
  std::vector<int> ids(n);
  for (auto& id : ids) id = static_cast<int>(rng.integer(0, static_cast<std::int64_t>(config.model.vocab) - 1));
  return model::token_sequence(std::move(ids), bench_shape(n, config));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::string_view kind_name(Kind kind) { return kind == Kind::kAttention ? "attention" : "mmate"; }

Kind parse_kind(std::string_view name) {
  if (name == "attention") return Kind::kAttention;
  if (name == "mmate") return Kind::kMMate;
  throw std::invalid_argument("unknown kind '" + std::string(name) + "' (expected one of: attention, mmate)");
}

void BenchConfig::validate() const {
  model.validate();
  if (height == 0 || width == 0) throw std::invalid_argument("BenchConfig: grid height and width must be >= 1");
  if (warmups < 2) throw std::invalid_argument("BenchConfig: at least 2 warmups are required");
  if (reps == 0) throw std::invalid_argument("BenchConfig: reps must be >= 1");
  if (decode && gen_len < 8) throw std::invalid_argument("BenchConfig: gen_len must be >= 8");
  if (threads < 1) throw std::invalid_argument("BenchConfig: threads must be >= 1");
}

GridShape bench_shape(std::size_t n, const BenchConfig& config) {
  if (n == 0) throw std::invalid_argument("bench_shape: N must be >= 1");
  const std::size_t frame = config.height * config.width;
  if (n < frame) return GridShape::text(n);
  return GridShape{n / frame, config.height, config.width, n % frame, false};
}

model::Model bench_model(Kind kind, const BenchConfig& config) {
  num::Rng rng = num::Rng::derive(config.seed, 0xBE);
  model::Model teacher = model::Model::teacher(config.model, rng);
  if (kind == Kind::kAttention) return teacher;
  return model::Model::student_from(teacher, rng);
}

BenchRecord bench_prefill(const model::Model& m, Kind kind, std::size_t n, const BenchConfig& config) {
  config.validate();
  BenchRecord r;
  r.kind = kind;
  r.n = n;
  r.reps = config.reps;
  r.threads = num::num_threads();
  r.decode_tps = kNaN;
  const GridShape shape = bench_shape(n, config);
  r.flops = model::forward_flops(config.model, kind == Kind::kAttention ? model::MixerKind::kAttention
                                                                          : model::MixerKind::kMMate,
                                 shape);
  try {
    const TokenSequence seq = synthetic_input(n, config);
    num::NoGradGuard guard;
    for (std::size_t i = 0; i < config.warmups; ++i) (void)m.forward(seq);
    std::vector<double> times;
    for (std::size_t i = 0; i < config.reps; ++i) {
      const auto t0 = Clock::now();
      (void)m.forward(seq);
      times.push_back(seconds_since(t0));
    }
    r.prefill_seconds = median(std::move(times));
  } catch (const std::bad_alloc&) {
    r.skipped = true;
    r.prefill_seconds = kNaN;
  }
  return r;
}

double bench_decode(const model::Model& m, std::size_t n, std::size_t gen_len, const BenchConfig& config) {
  if (gen_len < 8) throw std::invalid_argument("bench_decode: gen_len must be >= 8");
  const TokenSequence seq = synthetic_input(n, config);
  (void)model::decode_greedy(m, seq, 1);
  std::vector<double> rates;
  for (std::size_t r = 0; r < config.reps; ++r) {
    const auto t0 = Clock::now();
    const auto out = model::decode_greedy(m, seq, gen_len);
    rates.push_back(static_cast<double>(out.size()) / seconds_since(t0));
  }
  return median(rates);
}

ScalingFit fit_scaling(const std::vector<std::pair<double, double>>& points) {
  std::set<double> distinct;
  for (const auto& [n, v] : points) {
    if (!(n > 0.0) || !(v > 0.0)) throw std::invalid_argument("fit_scaling: N and values must be positive");
    distinct.insert(n);
  }
  if (distinct.size() < 4) throw std::invalid_argument("fit_scaling: need at least 4 distinct N values");
  if (*distinct.rbegin() / *distinct.begin() < 16.0) throw std::invalid_argument("fit_scaling: N must span >= 16x");
  const double k = static_cast<double>(points.size());
  double sx = 0, sy = 0;
  for (const auto& [n, v] : points) {
    sx += std::log(n);
    sy += std::log(v);
  }
  const double mx = sx / k, my = sy / k;
  double sxx = 0, sxy = 0, syy = 0;
  for (const auto& [n, v] : points) {
    const double dx = std::log(n) - mx, dy = std::log(v) - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  ScalingFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
  f.points = points.size();
  return f;
}

ScalingFit fit_prefill(const std::vector<BenchRecord>& records, Kind kind) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& r : records) {
    if (r.kind == kind && !r.skipped) pts.emplace_back(static_cast<double>(r.n), r.prefill_seconds);
  }
  return fit_scaling(pts);
}

std::vector<BenchRecord> run_bench(const std::vector<Kind>& kinds, const std::vector<std::size_t>& lengths,
                                   const BenchConfig& config) {
  config.validate();
  if (kinds.empty() || lengths.empty()) throw std::invalid_argument("run_bench: need at least one kind and length");
  const int saved = num::num_threads();
  num::set_num_threads(config.threads);
  std::vector<BenchRecord> out;
  try {
    for (Kind kind : kinds) {
      const model::Model m = bench_model(kind, config);
      for (std::size_t n : lengths) {
        BenchRecord r = bench_prefill(m, kind, n, config);
        if (config.decode && !r.skipped) {
          try {
            r.decode_tps = bench_decode(m, n, config.gen_len, config);
          } catch (const std::bad_alloc&) {
            r.decode_tps = kNaN;
          }
        }
        out.push_back(r);
      }
    }
  } catch (...) {
    num::set_num_threads(saved);
    throw;
  }
  num::set_num_threads(saved);
  return out;
}

void write_csv(const std::filesystem::path& path, const std::vector<BenchRecord>& records) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot open " + path.string());
  out << kCsvHeader << '\n';
  for (const auto& r : records) {
    out << kind_name(r.kind) << ',' << r.n << ',' << (r.skipped ? std::string("skipped") : format_double(r.prefill_seconds))
        << ',' << format_double(r.decode_tps) << ',' << r.flops << ',' << r.reps << ',' << r.threads << ','
        << r.precision << '\n';
  }
  if (!out) throw std::runtime_error("write_csv: write failed for " + path.string());
}

std::vector<BenchRecord> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_csv: cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCsvHeader) throw std::runtime_error("read_csv: bad header in " + path.string());
  std::vector<BenchRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, ',');) f.push_back(field);
    if (f.size() != 8) throw std::runtime_error("read_csv: expected 8 fields: " + line);
    BenchRecord r;
    r.kind = parse_kind(f[0]);
    r.n = std::stoull(f[1]);
    r.skipped = f[2] == "skipped";
    r.prefill_seconds = r.skipped ? kNaN : std::stod(f[2]);
    r.decode_tps = std::stod(f[3]);
    r.flops = std::stoull(f[4]);
    r.reps = std::stoull(f[5]);
    r.threads = std::stoi(f[6]);
    r.precision = f[7];
    out.push_back(r);
  }
  return out;
}

std::map<std::size_t, double> prefill_speedups(const std::vector<BenchRecord>& records) {
  std::map<std::size_t, double> att, mm, out;
  for (const auto& r : records) {
    if (r.skipped) continue;
    (r.kind == Kind::kAttention ? att : mm)[r.n] = r.prefill_seconds;
  }
  for (const auto& [n, t] : att) {
    if (auto it = mm.find(n); it != mm.end()) out[n] = t / it->second;
  }
  return out;
}

std::string summary_text(const std::vector<BenchRecord>& records, const BenchConfig& config) {
  std::ostringstream os;
  const auto& m = config.model;
  os << "mixer benchmark\n";
  os << "model: d_model=" << m.d_model << " heads=" << m.heads << " layers=" << m.layers << " d_ff=" << m.d_ff
     << " vocab=" << m.vocab << " window=" << m.window.tau << "x" << m.window.s << "x" << m.window.s
     << " scan_chunk=" << m.scan.chunk << "\n";
  os << "input: frames x " << config.height << " x " << config.width << " vision grid, batch 1\n";
  os << "timing: median of " << config.reps << " after " << config.warmups << " warmups, gen_len "
     << config.gen_len << ", threads " << config.threads << ", precision f64\n";
  os << "machine: " << std::thread::hardware_concurrency() << " hardware threads\n";
  for (Kind kind : {Kind::kAttention, Kind::kMMate}) {
    try {
      const ScalingFit f = fit_prefill(records, kind);
      os << "prefill fit " << kind_name(kind) << ": slope " << f.slope << " intercept " << f.intercept << " r2 " << f.r2
         << " points " << f.points << "\n";
    } catch (const std::invalid_argument& e) {
      os << "prefill fit " << kind_name(kind) << ": not fitted (" << e.what() << ")\n";
    }
  }
  const auto speedups = prefill_speedups(records);
  for (const auto& [n, s] : speedups) os << "prefill speedup attention/mmate N=" << n << ": " << s << "\n";
  if (!speedups.empty()) {
    os << "prefill speedup at max N (" << speedups.rbegin()->first << "): " << speedups.rbegin()->second << "\n";
  }
  for (const auto& r : records) {
    if (r.skipped) os << "skipped " << kind_name(r.kind) << " N=" << r.n << " (out of memory)\n";
  }
  return os.str();
}

void emit_report(const std::vector<BenchRecord>& records, const BenchConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_csv(dir / "bench.csv", records);
  std::ofstream out(dir / "summary.txt");
  if (!out) throw std::runtime_error("emit_report: cannot open " + (dir / "summary.txt").string());
  out << summary_text(records, config);
}

}  // namespace mmate::bench
