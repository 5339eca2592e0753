// SPDX-License-Identifier: Apache-2.0
#include "mmate/flex_ma/flex_ma.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mmate/numerics/ops.hpp"
#include "mmate/rms.hpp"

namespace mmate::flex {
namespace {

void require_shape(const num::Var& v, const num::Shape& shape, const char* name) {
  if (!v.defined()) throw std::invalid_argument(std::string("flex_ma: missing parameter ") + name);
  num::require_shape(v.value(), shape, name);
}

void validate_projections(const ScanProjections& p, std::size_t d, std::size_t heads, std::size_t ds) {
  require_shape(p.w_b, {heads * ds, d}, "w_b");
  require_shape(p.w_c, {heads * ds, d}, "w_c");
  require_shape(p.w_x, {d, d}, "w_x");
  require_shape(p.w_dt, {heads, d}, "w_dt");
  require_shape(p.b_dt, {heads}, "b_dt");
  require_shape(p.a_log, {heads}, "a_log");
}

ScanProjections init_projections(std::size_t d, std::size_t heads, std::size_t ds, num::Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(d));
  ScanProjections p;
  p.w_b = num::Var::parameter(num::randn({heads * ds, d}, rng, std));
  p.w_c = num::Var::parameter(num::randn({heads * ds, d}, rng, std));
  p.w_x = num::Var::parameter(num::randn({d, d}, rng, std));
  p.w_dt = num::Var::parameter(num::randn({heads, d}, rng, std));
  num::Array b_dt({heads}), a_log({heads});
  for (std::size_t h = 0; h < heads; ++h) {
    const double dt = std::exp(rng.uniform(std::log(1e-3), std::log(1e-1)));
    b_dt[h] = dt + std::log(-std::expm1(-dt));  // inverse softplus
    a_log[h] = std::log(rng.uniform(1.0, 16.0));
  }
  p.b_dt = num::Var::parameter(std::move(b_dt));
  p.a_log = num::Var::parameter(std::move(a_log));
  return p;
}

// [heads x d] with ones on each head's column block.
num::Array head_expansion(std::size_t heads, std::size_t d) {
  num::Array e({heads, d}, 0.0);
  const std::size_t dh = d / heads;
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t j = 0; j < dh; ++j) e(h, h * dh + j) = 1.0;
  }
  return e;
}

}  // namespace

void FlexMAParams::validate() const {
  if (heads == 0 || d_model == 0 || d_model % heads) {
    throw std::invalid_argument("flex_ma: d_model must be a positive multiple of heads");
  }
  if (d_state == 0) throw std::invalid_argument("flex_ma: d_state must be >= 1");
  validate_projections(forward, d_model, heads, d_state);
  validate_projections(reverse, d_model, heads, d_state);
  require_shape(w_g, {d_model, d_model}, "w_g");
  require_shape(b_g, {d_model}, "b_g");
  require_shape(w_o, {d_model, d_model}, "w_o");
}

FlexMAParams init_flex_ma(std::size_t d_model, std::size_t heads, std::size_t d_state, num::Rng& rng) {
  if (heads == 0 || d_model % heads) throw std::invalid_argument("init_flex_ma: heads must divide d_model");
  FlexMAParams p;
  p.d_model = d_model;
  p.heads = heads;
  p.d_state = d_state;
  p.forward = init_projections(d_model, heads, d_state, rng);
  p.reverse = init_projections(d_model, heads, d_state, rng);
  const double std = 1.0 / std::sqrt(static_cast<double>(d_model));
  p.w_g = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  p.b_g = num::Var::parameter(num::Array({d_model}, 0.0));
  p.w_o = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  return p;
}

num::Var selective_scan(const num::Var& u, const ScanProjections& p, std::size_t heads, ScanDirection direction,
                        const VisionMask* mask, const ScanOptions& options) {
  num::require_matrix(u.value(), "selective_scan input");
  num::Var source = u;
  if (direction == ScanDirection::kReverse) {
    if (!mask) throw std::invalid_argument("selective_scan: reverse direction requires a vision mask");
    if (mask->size() != u.value().rows()) throw std::invalid_argument("selective_scan: mask length mismatch");
    source = num::mask_rows(u, mask->flags());
  }
  const num::Var dt = num::softplus(num::linear(u, p.w_dt, p.b_dt));  // [N x heads]
  const num::Var decay = num::exp(num::scale(num::mul_row(dt, num::exp(p.a_log)), -1.0));
  const num::Var b = num::linear(source, p.w_b);
  const num::Var c = num::linear(u, p.w_c);
  // Step size scales the input of each head, as in Mamba2.
  const num::Var x = num::mul(num::linear(source, p.w_x), num::matmul(dt, num::Var(head_expansion(heads, u.value().cols()))));
  return scan(decay, b, c, x, heads, direction, options);
}

num::Var gate_fuse(const num::Var& y_fwd, const num::Var& y_bwd, const num::Var& u, const FlexMAParams& p) {
  if (y_fwd.shape() != y_bwd.shape()) throw std::invalid_argument("gate_fuse: direction outputs differ in shape");
  const num::Var g = num::sigmoid(num::linear(u, p.w_g, p.b_g));
  const num::Var mixed = num::add(y_bwd, num::mul(g, num::sub(y_fwd, y_bwd)));
  return num::linear(mixed, p.w_o);
}

num::Var flex_ma_forward(const TokenSequence& seq, std::size_t layer, const FlexMAParams& p,
                         const ScanOptions& options) {
  seq.validate();
  const VisionMask mask = seq.mask();
  const num::Var u = rms::rms_apply(seq.embeddings, layer, seq.shape, rms::Direction::kForward);
  const num::Var y_fwd = selective_scan(u, p.forward, p.heads, ScanDirection::kForward, nullptr, options);
  const num::Var y_bwd = selective_scan(u, p.reverse, p.heads, ScanDirection::kReverse, &mask, options);
  const num::Var fused = gate_fuse(y_fwd, y_bwd, u, p);
  return rms::rms_apply(fused, layer, seq.shape, rms::Direction::kInverse);
}

std::uint64_t flex_ma_flops(std::size_t n, std::size_t d, std::size_t heads, std::size_t ds,
                            const ScanOptions& options) {
  const std::uint64_t rows = n;
  // dt, B, C, X projections plus the step-size expansion.
  const std::uint64_t direction = 2 * rows * d * heads + 4 * rows * d * heads * ds + 2 * rows * d * d +
                                  2 * rows * heads * d + scan_flops(n, heads, ds, d / heads, options);
  return 2 * direction + 4 * rows * d * d;
}

}  // namespace mmate::flex
