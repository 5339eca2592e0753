// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "mmate/numerics/array.hpp"
#include "mmate/numerics/random.hpp"
#include "mmate/numerics/tape.hpp"
#include "mmate/sequence.hpp"

namespace mmate::flex {

/// Input-conditioned projections of one scan direction.
///
/// For token u_t and head h:
///   dt_{t,h} = softplus(w_dt u_t + b_dt)_h, decay a_{t,h} = exp(-dt_{t,h} * exp(a_log_h))
///   B_t = w_b u_t (heads x d_state), C_t = w_c u_t, X_t = dt_t * w_x u_t (heads x d_head)
struct ScanProjections {
  num::Var w_b;    // [heads*d_state x d]
  num::Var w_c;    // [heads*d_state x d]
  num::Var w_x;    // [d x d]
  num::Var w_dt;   // [heads x d]
  num::Var b_dt;   // [heads]
  num::Var a_log;  // [heads]
};

struct FlexMAParams {
  std::size_t d_model = 0;
  std::size_t heads = 0;
  std::size_t d_state = 0;
  ScanProjections forward;
  ScanProjections reverse;
  num::Var w_g;  // [d x d]
  num::Var b_g;  // [d]
  num::Var w_o;  // [d x d]

  std::size_t d_head() const { return d_model / heads; }
  void validate() const;
};

/// Standard initialization: projections ~ N(0, 1/d), dt bias so that
/// softplus(b_dt) is log-uniform in [1e-3, 1e-1], exp(a_log) uniform in
/// [1, 16], gate bias 0.
FlexMAParams init_flex_ma(std::size_t d_model, std::size_t heads, std::size_t d_state, num::Rng& rng);

enum class ScanDirection { kForward, kReverse };
enum class ScanAlgorithm { kChunked, kNaive };

struct ScanOptions {
  ScanAlgorithm algorithm = ScanAlgorithm::kChunked;
  std::size_t chunk = 64;
};

/// Scan inputs after projection. decay [N x heads], b and c
/// [N x heads*d_state], x [N x heads*d_head].
struct ScanTensors {
  num::Array decay;
  num::Array b;
  num::Array c;
  num::Array x;
  std::size_t heads = 0;

  void validate() const;
};

/// Per-step recurrence S_t = a_t S_{t-1} + B_t X_t^T, y_t = S_t^T C_t, from a
/// zero state. kReverse runs from the last token to the first.
num::Array scan_naive(const ScanTensors& in, ScanDirection direction);
/// Same recurrence evaluated block-wise: intra-chunk decay-weighted products
/// plus a carried state between chunks.
num::Array scan_chunked(const ScanTensors& in, ScanDirection direction, std::size_t chunk);

/// Differentiable scan over already-projected tensors.
num::Var scan(const num::Var& decay, const num::Var& b, const num::Var& c, const num::Var& x, std::size_t heads,
              ScanDirection direction, const ScanOptions& options = {});

/// Projects u and runs one direction. The reverse direction requires the
/// vision mask, which zeroes text inputs before the B and X projections.
num::Var selective_scan(const num::Var& u, const ScanProjections& p, std::size_t heads, ScanDirection direction,
                        const VisionMask* mask, const ScanOptions& options = {});

/// W_o(g * y_fwd + (1 - g) * y_bwd) with g = sigmoid(W_g u + b_g).
num::Var gate_fuse(const num::Var& y_fwd, const num::Var& y_bwd, const num::Var& u, const FlexMAParams& p);

/// RMS permutation, masked bidirectional scan, gated fusion, inverse RMS.
num::Var flex_ma_forward(const TokenSequence& seq, std::size_t layer, const FlexMAParams& p,
                         const ScanOptions& options = {});

/// Contraction count of one scan evaluation (matches the flop counter).
std::uint64_t scan_flops(std::size_t n, std::size_t heads, std::size_t d_state, std::size_t d_head,
                         const ScanOptions& options);
/// Contraction count of one flex_ma_forward call on n tokens.
std::uint64_t flex_ma_flops(std::size_t n, std::size_t d_model, std::size_t heads, std::size_t d_state,
                            const ScanOptions& options = {});

}  // namespace mmate::flex
