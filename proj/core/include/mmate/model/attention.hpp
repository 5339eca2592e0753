// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>

#include "mmate/numerics/random.hpp"
#include "mmate/numerics/tape.hpp"

namespace mmate::model {

/// Projections of one causal self-attention layer, each [d x d].
struct AttentionParams {
  num::Var w_q, w_k, w_v, w_o;
};

AttentionParams init_attention(std::size_t d_model, num::Rng& rng);

/// Multi-head causal softmax(Q K^T / sqrt(d_h)) V, concatenated over heads.
/// Rows are processed in blocks, so the full N x N score matrix is never
/// materialized.
num::Var causal_attention(const num::Var& q, const num::Var& k, const num::Var& v, std::size_t heads,
                          std::size_t block = 128);

/// W_O applied to causal attention over x [N x d].
num::Var attention_forward(const num::Var& x, const AttentionParams& p, std::size_t heads);

/// Contractions of causal_attention: 4 * d_h per (query, visible key) pair
/// per head, i.e. 2 d N (N + 1).
std::uint64_t causal_attention_flops(std::size_t n, std::size_t d_model);
/// Including the four projections.
std::uint64_t attention_layer_flops(std::size_t n, std::size_t d_model);

}  // namespace mmate::model
