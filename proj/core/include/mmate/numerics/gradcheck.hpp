// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmate/numerics/tape.hpp"

namespace mmate::num {

struct GradCheckEntry {
  std::string name;
  std::size_t elements = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
};

struct NamedParam {
  std::string name;
  Var var;
};

/// Relative error of one gradient entry. The denominator is floored at
/// `floor` so entries whose true value is zero compare on absolute error.
double relative_error(double analytic, double numeric, double floor = 1e-6);

/// Compares tape gradients of `loss_fn` against central differences
/// (loss(p+eps) - loss(p-eps)) / (2 eps), perturbing every element of every
/// parameter in turn. `loss_fn` must rebuild its graph on each call.
GradCheckReport check_gradients(const std::function<Var()>& loss_fn, const std::vector<NamedParam>& params,
                                double eps = 1e-5);

}  // namespace mmate::num
