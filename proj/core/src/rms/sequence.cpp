// SPDX-License-Identifier: Apache-2.0
#include <stdexcept>
#include <string>

#include "mmate/sequence.hpp"

namespace mmate {

GridShape GridShape::text(std::size_t n) {
  GridShape s;
  s.text_tokens = n;
  s.text_only = true;
  return s;
}

void GridShape::validate() const {
  if (frames == 0 || height == 0 || width == 0) throw std::invalid_argument("GridShape: T, H and W must be >= 1");
  if (total_tokens() == 0) throw std::invalid_argument("GridShape: empty sequence");
}

VisionMask::VisionMask(const GridShape& shape) : flags_(shape.total_tokens(), 0.0) {
  for (std::size_t i = 0; i < shape.vision_tokens(); ++i) flags_[i] = 1.0;
}

void TokenSequence::validate() const {
  shape.validate();
  const auto& v = embeddings.value();
  if (v.rank() != 2 || v.rows() != shape.total_tokens()) {
    throw std::invalid_argument("TokenSequence: embeddings " + num::shape_string(v.shape()) + " do not match " +
                                std::to_string(shape.total_tokens()) + " tokens");
  }
  if (token_ids && token_ids->size() != shape.total_tokens()) {
    throw std::invalid_argument("TokenSequence: token id count does not match geometry");
  }
}

}  // namespace mmate
