// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

#include "mmate/sequence.hpp"

namespace mmate::rms {

/// Position of vision token (t, y, x) in the layer-`layer` scan order. The
/// major axis rotates with layer mod 4:
///   0: t*(H*W) + y*W + x      1: t*(H*W) + x*H + y
///   2: y*(T*W) + x*T + t      3: x*(T*H) + y*T + t
/// Throws std::out_of_range for coordinates outside the grid.
std::size_t rms_index(std::size_t layer, std::size_t t, std::size_t y, std::size_t x, const GridShape& shape);

/// Bijection on the vision tokens for one layer.
class Permutation {
 public:
  Permutation(std::size_t layer, const GridShape& shape);

  std::size_t layer() const noexcept { return layer_; }
  /// forward()[c] is the scan position of the token with canonical index c.
  const std::vector<std::size_t>& forward() const noexcept { return forward_; }
  /// inverse()[n] is the canonical index of the token at scan position n.
  const std::vector<std::size_t>& inverse() const noexcept { return inverse_; }
  std::size_t size() const noexcept { return forward_.size(); }

 private:
  std::size_t layer_;
  std::vector<std::size_t> forward_;
  std::vector<std::size_t> inverse_;
};

/// Cached permutation for (layer mod 4, T, H, W). The returned reference stays
/// valid for the life of the process.
const Permutation& permutation(std::size_t layer, const GridShape& shape);

enum class Direction { kForward, kInverse };

/// Row order for applying the layer map to a full sequence (vision rows
/// permuted, trailing text rows in place).
std::vector<std::size_t> row_order(std::size_t layer, const GridShape& shape, Direction direction);

num::Var rms_apply(const num::Var& rows, std::size_t layer, const GridShape& shape, Direction direction);
TokenSequence rms_apply(const TokenSequence& seq, std::size_t layer, Direction direction);

}  // namespace mmate::rms
