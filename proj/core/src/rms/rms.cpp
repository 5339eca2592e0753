// SPDX-License-Identifier: Apache-2.0
#include "mmate/rms.hpp"

#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <tuple>

#include "mmate/numerics/ops.hpp"

namespace mmate::rms {

std::size_t rms_index(std::size_t layer, std::size_t t, std::size_t y, std::size_t x, const GridShape& shape) {
  const std::size_t T = shape.frames, H = shape.height, W = shape.width;
  if (t >= T || y >= H || x >= W) {
    throw std::out_of_range("rms_index: (" + std::to_string(t) + "," + std::to_string(y) + "," + std::to_string(x) +
                            ") outside " + std::to_string(T) + "x" + std::to_string(H) + "x" + std::to_string(W));
  }
  switch (layer % 4) {
    case 0:
      return t * (H * W) + y * W + x;
    case 1:
      return t * (H * W) + x * H + y;
    case 2:
      return y * (T * W) + x * T + t;
    default:
      return x * (T * H) + y * T + t;
  }
}

Permutation::Permutation(std::size_t layer, const GridShape& shape) : layer_(layer) {
  const std::size_t n = shape.vision_tokens();
  forward_.resize(n);
  inverse_.assign(n, n);
  for (std::size_t t = 0; t < shape.frames && n; ++t) {
    for (std::size_t y = 0; y < shape.height; ++y) {
      for (std::size_t x = 0; x < shape.width; ++x) {
        const std::size_t c = shape.canonical_index(t, y, x);
        const std::size_t p = rms_index(layer, t, y, x, shape);
        forward_[c] = p;
        if (inverse_[p] != n) throw std::logic_error("rms: scan map is not injective");
        inverse_[p] = c;
      }
    }
  }
}

const Permutation& permutation(std::size_t layer, const GridShape& shape) {
  using Key = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, bool>;
  static std::mutex mu;
  static std::map<Key, std::unique_ptr<Permutation>> cache;
  const Key key{layer % 4, shape.frames, shape.height, shape.width, shape.text_only};
  std::lock_guard lock(mu);
  auto& slot = cache[key];
  if (!slot) {
    GridShape vision_only = shape;
    vision_only.text_tokens = 0;
    slot = std::make_unique<Permutation>(layer % 4, vision_only);
  }
  return *slot;
}

std::vector<std::size_t> row_order(std::size_t layer, const GridShape& shape, Direction direction) {
  const std::size_t nv = shape.vision_tokens();
  std::vector<std::size_t> order(shape.total_tokens());
  if (nv) {
    const Permutation& p = permutation(layer, shape);
    // Gathering with inverse() places canonical token inverse()[n] at n.
    const auto& map = direction == Direction::kForward ? p.inverse() : p.forward();
    for (std::size_t i = 0; i < nv; ++i) order[i] = map[i];
  }
  for (std::size_t i = nv; i < order.size(); ++i) order[i] = i;
  return order;
}

num::Var rms_apply(const num::Var& rows, std::size_t layer, const GridShape& shape, Direction direction) {
  if (rows.value().rank() != 2 || rows.value().rows() != shape.total_tokens()) {
    throw std::invalid_argument("rms_apply: row count does not match sequence geometry");
  }
  if (shape.vision_tokens() <= 1) return rows;
  const auto order = row_order(layer, shape, direction);
  return num::gather_rows(rows, order);
}

TokenSequence rms_apply(const TokenSequence& seq, std::size_t layer, Direction direction) {
  seq.validate();
  TokenSequence out = seq;
  out.embeddings = rms_apply(seq.embeddings, layer, seq.shape, direction);
  if (seq.token_ids && seq.shape.vision_tokens() > 1) {
    const auto order = row_order(layer, seq.shape, direction);
    std::vector<int> ids(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) ids[i] = (*seq.token_ids)[order[i]];
    out.token_ids = std::move(ids);
  }
  return out;
}

}  // namespace mmate::rms
