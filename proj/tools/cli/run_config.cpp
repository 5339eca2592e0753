// SPDX-License-Identifier: Apache-2.0
#include "run_config.hpp"

#include <fstream>
#include <functional>
#include <map>

namespace mmate::cli {
namespace {

using nlohmann::json;
using Setter = std::function<void(const json&, const std::string&)>;
using Fields = std::map<std::string, Setter>;

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

[[noreturn]] void type_error(const std::string& key, const char* expected) {
  throw ConfigError("config key '" + key + "' must be " + expected);
}

void apply(const json& obj, const std::string& prefix, const Fields& fields) {
  if (!obj.is_object()) type_error(prefix.empty() ? "<root>" : prefix, "an object");
  for (const auto& [k, v] : obj.items()) {
    const auto it = fields.find(k);
    if (it == fields.end()) throw ConfigError("unknown config key '" + join(prefix, k) + "'");
    it->second(v, join(prefix, k));
  }
}

template <typename T>
Setter count(T& field) {
  return [&field](const json& v, const std::string& key) {
    if (!v.is_number_unsigned()) type_error(key, "a non-negative integer");
    field = v.get<T>();
  };
}

Setter real(double& field) {
  return [&field](const json& v, const std::string& key) {
    if (!v.is_number()) type_error(key, "a number");
    field = v.get<double>();
  };
}

Setter flag(bool& field) {
  return [&field](const json& v, const std::string& key) {
    if (!v.is_boolean()) type_error(key, "true or false");
    field = v.get<bool>();
  };
}

Setter section(const std::string& name, std::function<Fields()> make) {
  return [name, make](const json& v, const std::string& key) { apply(v, key, make()); };
}

Fields root_fields(RunConfig& c) {
  auto& m = c.model;
  auto& d = c.distill;
  auto& b = c.bench;
  return {
      {"seed", count(c.seed)},
      {"out",
       [&c](const json& v, const std::string& key) {
         if (!v.is_string()) type_error(key, "a string");
         c.out = v.get<std::string>();
       }},
      {"model", section("model",
                        [&m] {
                          return Fields{
                              {"vocab", count(m.vocab)},
                              {"d_model", count(m.d_model)},
                              {"heads", count(m.heads)},
                              {"layers", count(m.layers)},
                              {"d_ff", count(m.d_ff)},
                              {"scan_chunk", count(m.scan.chunk)},
                              {"scan_algorithm",
                               [&m](const json& v, const std::string& key) {
                                 if (v == "chunked") {
                                   m.scan.algorithm = flex::ScanAlgorithm::kChunked;
                                 } else if (v == "naive") {
                                   m.scan.algorithm = flex::ScanAlgorithm::kNaive;
                                 } else {
                                   type_error(key, "\"chunked\" or \"naive\"");
                                 }
                               }},
                          };
                        })},
      {"window", section("window",
                         [&m] {
                           return Fields{{"tau", count(m.window.tau)},
                                         {"s", count(m.window.s)},
                                         {"mask_wrapped", flag(m.window.mask_wrapped)}};
                         })},
      {"loss", section("loss",
                       [&d] {
                         auto& w = d.weights;
                         return Fields{{"lambda_hid", real(w.lambda_hid)},
                                       {"lambda_tok", real(w.lambda_tok)},
                                       {"lambda_seq", real(w.lambda_seq)},
                                       {"lambda_sup", real(w.lambda_sup)},
                                       {"tau", real(w.tau)}};
                       })},
      {"distill",
       section("distill",
               [&d] {
                 return Fields{
                     {"steps",
                      [&d](const json& v, const std::string& key) {
                        if (!v.is_array() || v.size() != 3) type_error(key, "an array of 3 step counts");
                        for (std::size_t i = 0; i < 3; ++i) {
                          if (!v[i].is_number_unsigned()) type_error(key, "an array of 3 step counts");
                          d.steps[i] = v[i].get<std::size_t>();
                        }
                      }},
                     {"batch", count(d.batch)},
                     {"lr_stage12", real(d.lr_stage12)},
                     {"lr_stage3", real(d.lr_stage3)},
                     {"lr_scale", real(d.lr_scale)},
                     {"lora_rank", count(d.lora_rank)},
                     {"disable_swin_stage1", flag(d.disable_swin_stage1)},
                     {"cache_pseudo_targets", flag(d.cache_pseudo_targets)},
                     {"eval_samples", count(d.eval_samples)},
                     {"adam", section("adam",
                                      [&d] {
                                        return Fields{{"beta1", real(d.adam.beta1)},
                                                      {"beta2", real(d.adam.beta2)},
                                                      {"eps", real(d.adam.eps)},
                                                      {"weight_decay", real(d.adam.weight_decay)}};
                                      })},
                     {"teacher", section("teacher",
                                         [&d] {
                                           return Fields{{"steps", count(d.teacher.steps)},
                                                         {"batch", count(d.teacher.batch)},
                                                         {"lr", real(d.teacher.lr)}};
                                         })},
                 };
               })},
      {"bench", section("bench",
                        [&b] {
                          return Fields{{"height", count(b.height)},   {"width", count(b.width)},
                                        {"warmups", count(b.warmups)}, {"reps", count(b.reps)},
                                        {"gen_len", count(b.gen_len)}, {"decode", flag(b.decode)},
                                        {"threads",
                                         [&b](const json& v, const std::string& key) {
                                           if (!v.is_number_integer() || v.get<long long>() < 1) {
                                             type_error(key, "a positive integer");
                                           }
                                           b.threads = v.get<int>();
                                         }}};
                        })},
  };
}

}  // namespace

distill::DistillPlan RunConfig::plan() const {
  distill::DistillPlan p = distill;
  p.seed = seed;
  return p;
}

bench::BenchConfig RunConfig::bench_config() const {
  bench::BenchConfig b = bench;
  b.model = model;
  b.seed = seed;
  return b;
}

void RunConfig::validate() const {
  try {
    model.validate();
    plan().validate();
    bench_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
}

json to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& d = c.distill;
  const auto& b = c.bench;
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"model",
       {{"vocab", m.vocab},
        {"d_model", m.d_model},
        {"heads", m.heads},
        {"layers", m.layers},
        {"d_ff", m.d_ff},
        {"scan_chunk", m.scan.chunk},
        {"scan_algorithm", m.scan.algorithm == flex::ScanAlgorithm::kChunked ? "chunked" : "naive"}}},
      {"window", {{"tau", m.window.tau}, {"s", m.window.s}, {"mask_wrapped", m.window.mask_wrapped}}},
      {"loss",
       {{"lambda_hid", d.weights.lambda_hid},
        {"lambda_tok", d.weights.lambda_tok},
        {"lambda_seq", d.weights.lambda_seq},
        {"lambda_sup", d.weights.lambda_sup},
        {"tau", d.weights.tau}}},
      {"distill",
       {{"steps", d.steps},
        {"batch", d.batch},
        {"lr_stage12", d.lr_stage12},
        {"lr_stage3", d.lr_stage3},
        {"lr_scale", d.lr_scale},
        {"lora_rank", d.lora_rank},
        {"disable_swin_stage1", d.disable_swin_stage1},
        {"cache_pseudo_targets", d.cache_pseudo_targets},
        {"eval_samples", d.eval_samples},
        {"adam",
         {{"beta1", d.adam.beta1}, {"beta2", d.adam.beta2}, {"eps", d.adam.eps}, {"weight_decay", d.adam.weight_decay}}},
        {"teacher", {{"steps", d.teacher.steps}, {"batch", d.teacher.batch}, {"lr", d.teacher.lr}}}}},
      {"bench",
       {{"height", b.height},
        {"width", b.width},
        {"warmups", b.warmups},
        {"reps", b.reps},
        {"gen_len", b.gen_len},
        {"decode", b.decode},
        {"threads", b.threads}}},
  };
}

RunConfig from_json(const json& j) {
  RunConfig c;
  apply(j, "", root_fields(c));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json(config).dump(2) << '\n';
}

}  // namespace mmate::cli
