// SPDX-License-Identifier: Apache-2.0
#include "mmate/distill/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace mmate::distill {

void AdamWConfig::validate() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("AdamW: lr must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("AdamW: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("AdamW: eps must be > 0");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("AdamW: weight_decay must be >= 0");
}

AdamW::AdamW(std::vector<num::Var> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
  config_.validate();
  for (const auto& p : params_) {
    if (!p.is_leaf()) throw std::invalid_argument("AdamW: parameters must be leaves");
    m_.emplace_back(p.shape(), 0.0);
    v_.emplace_back(p.shape(), 0.0);
  }
}

void AdamW::step(const num::Tape& tape) {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const num::Array g = tape.gradient(params_[i]);
    num::Array& w = params_[i].mutable_value();
    num::Array& m = m_[i];
    num::Array& v = v_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * g[j];
      v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * g[j] * g[j];
      const double update = (m[j] / c1) / (std::sqrt(v[j] / c2) + config_.eps);
      w[j] -= config_.lr * (update + config_.weight_decay * w[j]);
    }
  }
}

}  // namespace mmate::distill
