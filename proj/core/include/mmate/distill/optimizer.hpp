// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "mmate/numerics/tape.hpp"

namespace mmate::distill {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;

  void validate() const;
};

/// Decoupled weight decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(std::vector<num::Var> params, AdamWConfig config);

  /// One update from the gradients of the tape's last backward pass.
  void step(const num::Tape& tape);
  void set_lr(double lr) { config_.lr = lr; }
  std::size_t steps() const noexcept { return t_; }
  const std::vector<num::Var>& params() const noexcept { return params_; }

 private:
  std::vector<num::Var> params_;
  AdamWConfig config_;
  std::vector<num::Array> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace mmate::distill
