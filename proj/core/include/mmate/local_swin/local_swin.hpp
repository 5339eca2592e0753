// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "mmate/numerics/random.hpp"
#include "mmate/numerics/tape.hpp"
#include "mmate/sequence.hpp"

namespace mmate::swin {

struct WindowConfig {
  std::size_t tau = 2;  // temporal extent
  std::size_t s = 2;    // spatial extent (height and width)
  /// Block attention between tokens that only became neighbours through the
  /// cyclic shift.
  bool mask_wrapped = true;

  void validate() const;
};

/// Window extents actually used on a grid: each is clamped to the grid
/// extent so small grids still tile.
std::array<std::size_t, 3> effective_window(const GridShape& shape, const WindowConfig& config);
/// (floor(tau/2), floor(s/2), floor(s/2)) of the effective window on odd
/// layers, zero on even layers.
std::array<std::size_t, 3> layer_shift(const GridShape& shape, const WindowConfig& config, std::size_t layer);

/// Tiling of the shifted, replication-padded vision grid.
struct WindowLayout {
  std::size_t windows = 0;
  std::size_t window_size = 0;
  std::array<std::size_t, 3> extent{};  // window (t, y, x)
  std::array<std::size_t, 3> padded{};  // padded grid (t, y, x)
  std::array<std::size_t, 3> shift{};
  /// Slot k of window w holds canonical vision token token[w*window_size + k].
  std::vector<std::size_t> token;
  /// 1 when the slot is a replica created by padding.
  std::vector<std::uint8_t> pad;
  /// Shift-region label of each slot; slots with different labels were only
  /// brought together by the wrap-around.
  std::vector<std::uint8_t> region;
  bool mask_wrapped = true;

  bool allowed(std::size_t w, std::size_t i, std::size_t j) const {
    return !mask_wrapped || region[w * window_size + i] == region[w * window_size + j];
  }
};

/// Shift (odd layers), pad by edge replication, tile. Requires at least one
/// vision token.
WindowLayout partition_windows(const GridShape& shape, const WindowConfig& config, std::size_t layer);
/// Cached partition; the reference stays valid for the life of the process.
const WindowLayout& cached_layout(const GridShape& shape, const WindowConfig& config, std::size_t layer);

struct SwinParams {
  std::size_t d_model = 0;
  std::size_t heads = 0;
  num::Var w_q, w_k, w_v, w_o;  // [d x d]

  std::size_t d_head() const { return d_model / heads; }
  void validate() const;
};

SwinParams init_swin(std::size_t d_model, std::size_t heads, num::Rng& rng);

/// Per window and head: softmax(Q K^T / sqrt(d_h) + mask) V over all slots of
/// the window, pads included as keys. Rows are canonical vision tokens;
/// returns the concatenated head outputs [N_vis x d] before W_O.
num::Var window_attention(const num::Var& q, const num::Var& k, const num::Var& v, const WindowLayout& layout,
                          std::size_t heads);

/// Attention over vision tokens only; text rows of the result are zero.
num::Var local_swin_forward(const TokenSequence& seq, std::size_t layer, const SwinParams& params,
                            const WindowConfig& config);

/// Contraction count of window_attention (scores and weighted values).
std::uint64_t window_attention_flops(const WindowLayout& layout, std::size_t d_model);
/// Projections plus window attention of one local_swin_forward call.
std::uint64_t local_swin_flops(const GridShape& shape, const WindowConfig& config, std::size_t layer,
                               std::size_t d_model);

}  // namespace mmate::swin
