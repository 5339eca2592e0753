// SPDX-License-Identifier: Apache-2.0
#include "mmate/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmate::num {

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport check_gradients(const std::function<Var()>& loss_fn, const std::vector<NamedParam>& params,
                                double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("check_gradients: eps must lie in [1e-7, 1e-3]");

  std::vector<Array> analytic;
  {
    Tape tape;
    Var loss = loss_fn();
    if (loss.value().size() != 1) throw std::invalid_argument("check_gradients: loss is not a scalar");
    tape.backward(loss);
    for (const auto& p : params) analytic.push_back(tape.gradient(p.var));
  }

  auto eval = [&loss_fn] {
    NoGradGuard guard;
    return loss_fn().value()[0];
  };

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Var v = params[pi].var;
    Array& value = v.mutable_value();
    GradCheckEntry entry{params[pi].name, value.size(), 0.0, 0.0};
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = eval();
      value[i] = saved - eps;
      const double down = eval();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[pi][i];
      entry.max_abs_error = std::max(entry.max_abs_error, std::abs(a - numeric));
      entry.max_rel_error = std::max(entry.max_rel_error, relative_error(a, numeric));
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace mmate::num
