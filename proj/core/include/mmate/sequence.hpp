// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mmate/numerics/tape.hpp"

namespace mmate {

/// Geometry of one multimodal sequence: a T x H x W vision grid flattened in
/// frame-major order, followed by a contiguous block of text tokens.
struct GridShape {
  std::size_t frames = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t text_tokens = 0;
  /// A sequence with no vision tokens at all.
  bool text_only = false;

  static GridShape text(std::size_t n);

  std::size_t vision_tokens() const noexcept { return text_only ? 0 : frames * height * width; }
  std::size_t total_tokens() const noexcept { return vision_tokens() + text_tokens; }
  /// Canonical (frame-major) flat index of vision coordinate (t, y, x).
  std::size_t canonical_index(std::size_t t, std::size_t y, std::size_t x) const noexcept {
    return (t * height + y) * width + x;
  }
  void validate() const;
  bool operator==(const GridShape&) const = default;
};

/// One flag per token: 1 for vision, 0 for text.
class VisionMask {
 public:
  explicit VisionMask(const GridShape& shape);
  const std::vector<double>& flags() const noexcept { return flags_; }
  std::size_t size() const noexcept { return flags_.size(); }
  bool is_vision(std::size_t i) const { return flags_.at(i) != 0.0; }

 private:
  std::vector<double> flags_;
};

/// Embeddings plus the geometry every branch needs.
struct TokenSequence {
  num::Var embeddings;  // [N x d]
  GridShape shape;
  std::optional<std::vector<int>> token_ids;

  std::size_t length() const { return shape.total_tokens(); }
  VisionMask mask() const { return VisionMask(shape); }
  /// Throws unless embeddings have exactly shape.total_tokens() rows.
  void validate() const;
};

}  // namespace mmate
