// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "mmate/distill/losses.hpp"
#include "mmate/flex_ma/flex_ma.hpp"
#include "mmate/local_swin/local_swin.hpp"
#include "mmate/model/model.hpp"
#include "mmate/numerics/gradcheck.hpp"
#include "mmate/numerics/ops.hpp"
#include "mmate/rms.hpp"

namespace mmate::cli {
namespace {

struct Check {
  std::string name;
  bool pass = true;
  std::string detail;
};

using Suite = std::function<std::vector<Check>()>;

std::string sci(double v) {
  std::ostringstream os;
  os.precision(2);
  os << std::scientific << v;
  return os.str();
}

GridShape grid(std::size_t t, std::size_t h, std::size_t w, std::size_t text) { return {t, h, w, text, false}; }

std::vector<Check> rms_suite() {
  Check bijective{"rms.bijective", true, "T,H,W <= 8, layers 0..7"};
  Check periodic{"rms.period4", true, ""};
  Check two_patterns{"rms.single_frame_two_patterns", true, ""};
  for (std::size_t t = 1; t <= 8; ++t) {
    for (std::size_t h = 1; h <= 8; ++h) {
      for (std::size_t w = 1; w <= 8; ++w) {
        const GridShape g = grid(t, h, w, 0);
        std::set<std::vector<std::size_t>> orders;
        for (std::size_t l = 0; l < 8; ++l) {
          const rms::Permutation p(l, g);
          std::vector<bool> hit(p.size(), false);
          for (std::size_t c = 0; c < p.size(); ++c) {
            const std::size_t pos = p.forward()[c];
            if (pos >= p.size() || hit[pos] || p.inverse()[pos] != c) bijective.pass = false;
            if (pos < p.size()) hit[pos] = true;
          }
          if (p.forward() != rms::Permutation(l + 4, g).forward()) periodic.pass = false;
          if (l < 4) orders.insert(p.forward());
        }
        if (t == 1 && h > 1 && w > 1 && orders.size() != 2) {
          two_patterns.pass = false;
          two_patterns.detail = "1x" + std::to_string(h) + "x" + std::to_string(w) + " gave " +
                                std::to_string(orders.size()) + " patterns";
        }
      }
    }
  }
  return {bijective, periodic, two_patterns};
}

// Largest |d out_i / d in_j| over feature pairs, for all (i, j).
std::vector<std::vector<double>> jacobian_blocks(const std::function<num::Var(const num::Var&)>& f, std::size_t n,
                                                 std::size_t d, num::Rng& rng) {
  const num::Var x = num::Var::parameter(num::randn({n, d}, rng));
  std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    num::Array sel({n, d}, 0.0);
    for (std::size_t c = 0; c < d; ++c) sel(i, c) = rng.normal();
    num::Tape tape;
    tape.backward(num::sum(num::mul(f(x), num::Var(sel))));
    const num::Array g = tape.gradient(x);
    for (std::size_t j = 0; j < n; ++j) {
      for (std::size_t c = 0; c < d; ++c) out[i][j] = std::max(out[i][j], std::abs(g(j, c)));
    }
  }
  return out;
}

std::vector<Check> flexma_suite() {
  Check oracle{"flexma.chunked_matches_naive", true, ""};
  num::Rng rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = static_cast<std::size_t>(rng.integer(1, 256)), heads = static_cast<std::size_t>(rng.integer(1, 3));
    const std::size_t ds = static_cast<std::size_t>(rng.integer(1, 5)), dh = static_cast<std::size_t>(rng.integer(1, 5));
    flex::ScanTensors in{num::rand_uniform({n, heads}, rng, 0.0, 1.0), num::randn({n, heads * ds}, rng),
                         num::randn({n, heads * ds}, rng), num::randn({n, heads * dh}, rng), heads};
    const std::size_t chunk = static_cast<std::size_t>(rng.integer(1, 80));
    for (auto dir : {flex::ScanDirection::kForward, flex::ScanDirection::kReverse}) {
      const num::Array a = flex::scan_naive(in, dir), b = flex::scan_chunked(in, dir, chunk);
      worst = std::max(worst, num::max_abs_diff(a, b) / std::max(1.0, num::max_abs(a)));
    }
  }
  oracle.pass = worst < 1e-10;
  oracle.detail = "100 cases, max scaled diff " + sci(worst);

  Check field{"flexma.receptive_field", true, "2x2x2 grid + 2 text, 4 layers"};
  const GridShape g = grid(2, 2, 2, 2);
  const std::size_t nv = g.vision_tokens(), n = g.total_tokens(), d = 8;
  const auto p = flex::init_flex_ma(d, 2, 4, rng);
  for (std::size_t l = 0; l < 4; ++l) {
    const auto jac = jacobian_blocks([&](const num::Var& x) { return flex::flex_ma_forward({x, g, std::nullopt}, l, p); },
                                     n, d, rng);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i >= nv && j > i && jac[i][j] != 0.0) field.pass = false;  // text never sees later text
        if (j <= i && jac[i][j] == 0.0) field.pass = false;             // everything sees the past
        if (i < nv && j < nv && jac[i][j] == 0.0) field.pass = false;   // vision is dense
      }
    }
  }
  return {oracle, field};
}

std::vector<Check> swin_suite() {
  Check local{"swin.zero_outside_windows", true, ""};
  num::Rng rng(2);
  const std::size_t d = 8;
  const swin::WindowConfig wc;
  std::size_t probes = 0;
  for (const GridShape g : {grid(1, 4, 4, 2), grid(3, 3, 5, 1), grid(2, 2, 2, 2)}) {
    const auto p = swin::init_swin(d, 2, rng);
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& layout = swin::cached_layout(g, wc, l);
      const std::size_t n = g.total_tokens(), nv = g.vision_tokens();
      std::vector<std::vector<bool>> sees(n, std::vector<bool>(n, false));
      for (std::size_t w = 0; w < layout.windows; ++w) {
        for (std::size_t a = 0; a < layout.window_size; ++a) {
          if (layout.pad[w * layout.window_size + a]) continue;
          for (std::size_t b = 0; b < layout.window_size; ++b) {
            if (layout.allowed(w, a, b)) {
              sees[layout.token[w * layout.window_size + a]][layout.token[w * layout.window_size + b]] = true;
            }
          }
        }
      }
      const auto jac = jacobian_blocks(
          [&](const num::Var& x) { return swin::local_swin_forward({x, g, std::nullopt}, l, p, wc); }, n, d, rng);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const bool may = i < nv && j < nv && sees[i][j];
          if (!may && jac[i][j] != 0.0) local.pass = false;
          ++probes;
        }
      }
    }
  }
  local.detail = std::to_string(probes) + " token pairs";
  return {local};
}

std::vector<Check> losses_suite() {
  using num::Array;
  using num::Var;
  std::vector<Check> out;
  const auto golden = [&](const char* name, double got, double want, double tol) {
    std::ostringstream os;
    os.precision(10);
    os << "got " << got << " want " << want;
    out.push_back({name, std::abs(got - want) <= tol, os.str()});
  };
  golden("losses.token_kd_example",
         distill::loss_token_kd(Var(Array::from_rows({{std::log(2.0), 0.0}})), Array::from_rows({{0.0, 0.0}}), 1.0)
             .value()[0],
         0.0589, 1e-4);
  golden("losses.hidden_example",
         distill::loss_hidden({Var(Array::from_rows({{3.0, 4.0}}))}, {Var(Array::from_rows({{0.0, 0.0}}))}).value()[0],
         25.0, 0.0);
  const double l4 = std::log(0.25);
  golden("losses.sequence_uniform",
         distill::loss_sequence_kd(Var(Array::from_rows({{l4, l4, l4, l4}, {l4, l4, l4, l4}})), {0, 3}).value()[0],
         std::log(4.0), 1e-12);
  const distill::LossWeights w;
  const auto c = [](double v) { return Var(Array::scalar(v)); };
  golden("losses.stage1_objective", distill::stage_objective(1, {c(2.0), c(4.0), {}, {}}, w).value()[0], 3.0, 0.0);
  golden("losses.stage3_objective", distill::stage_objective(3, {{}, c(1.0), c(1.0), c(1.0)}, w).value()[0], 1.5, 0.0);
  return out;
}

std::vector<Check> grads_suite() {
  std::vector<Check> out;
  const auto record = [&](const std::string& name, const num::GradCheckReport& r) {
    out.push_back({name, r.max_rel_error() < 1e-4, "max rel error " + sci(r.max_rel_error())});
  };
  num::Rng rng(3);
  const num::Var s = num::Var::parameter(num::randn({3, 6}, rng));
  const num::Array t = num::randn({3, 6}, rng);
  const num::Var th(num::randn({3, 6}, rng));
  const std::vector<int> y{1, 5, 0};
  record("grads.loss_hidden", num::check_gradients([&] { return distill::loss_hidden({s}, {th}); }, {{"s", s}}));
  record("grads.loss_token_kd", num::check_gradients([&] { return distill::loss_token_kd(s, t, 2.0); }, {{"s", s}}));
  record("grads.loss_sequence_kd",
         num::check_gradients([&] { return distill::loss_sequence_kd(num::log_softmax_rows(s), y); }, {{"s", s}}));
  record("grads.loss_supervised",
         num::check_gradients([&] { return distill::loss_supervised(s, y).value; }, {{"s", s}}));

  model::ModelConfig cfg;
  cfg.vocab = 16;
  cfg.d_model = 8;
  cfg.heads = 2;
  cfg.d_ff = 16;
  const model::Model teacher = model::Model::teacher(cfg, rng);
  model::Model student = model::Model::student_from(teacher, rng);
  student.attach_lora(2, rng);
  student.set_trainable({model::ParamGroup::kFlex, model::ParamGroup::kSwin, model::ParamGroup::kFusion,
                         model::ParamGroup::kLora});
  for (auto& p : student.parameters()) {
    if (p.group == model::ParamGroup::kLora) p.var.mutable_value() = num::randn(p.var.shape(), rng, 0.3);
  }
  std::vector<int> ids(12);
  for (auto& id : ids) id = static_cast<int>(rng.integer(0, 15));
  const auto seq = model::token_sequence(ids, grid(2, 2, 2, 4));
  const num::Var probe(num::randn({12, 16}, rng));
  std::vector<num::NamedParam> params;
  for (const auto& p : student.parameters()) {
    if (p.var.requires_grad()) params.push_back({p.name, p.var});
  }
  record("grads.student_two_layer",
         num::check_gradients([&] { return num::sum(num::mul(student.forward(seq).logits, probe)); }, params));
  return out;
}

}  // namespace

int cmd_verify(const std::string& suite, std::ostream& log) {
  const std::vector<std::pair<std::string, Suite>> suites{
      {"rms", rms_suite}, {"flexma", flexma_suite}, {"swin", swin_suite}, {"losses", losses_suite}, {"grads", grads_suite}};
  bool known = suite == "all";
  for (const auto& [name, fn] : suites) known |= name == suite;
  if (!known) {
    log << "error: unknown suite '" << suite << "' (expected one of: rms, flexma, swin, losses, grads, all)\n";
    return kUsage;
  }
  std::size_t passed = 0, total = 0;
  for (const auto& [name, fn] : suites) {
    if (suite != "all" && suite != name) continue;
    for (const Check& c : fn()) {
      ++total;
      passed += c.pass;
      log << (c.pass ? "[PASS] " : "[FAIL] ") << c.name;
      if (!c.detail.empty()) log << "  " << c.detail;
      log << "\n";
    }
  }
  log << passed << "/" << total << " checks passed\n";
  return passed == total ? kOk : kFailed;
}

}  // namespace mmate::cli
