// SPDX-License-Identifier: Apache-2.0
#include "mmate/local_swin/local_swin.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <tuple>

#include "mmate/numerics/kernels.hpp"
#include "mmate/numerics/ops.hpp"

namespace mmate::swin {

void WindowConfig::validate() const {
  if (tau == 0 || s == 0) throw std::invalid_argument("WindowConfig: window extents must be >= 1");
}

std::array<std::size_t, 3> effective_window(const GridShape& shape, const WindowConfig& config) {
  config.validate();
  return {std::min(config.tau, shape.frames), std::min(config.s, shape.height), std::min(config.s, shape.width)};
}

std::array<std::size_t, 3> layer_shift(const GridShape& shape, const WindowConfig& config, std::size_t layer) {
  if (layer % 2 == 0) return {0, 0, 0};
  const auto e = effective_window(shape, config);
  return {e[0] / 2, e[1] / 2, e[2] / 2};
}

WindowLayout partition_windows(const GridShape& shape, const WindowConfig& config, std::size_t layer) {
  shape.validate();
  if (shape.vision_tokens() == 0) throw std::invalid_argument("partition_windows: no vision tokens");
  WindowLayout out;
  const std::array<std::size_t, 3> n{shape.frames, shape.height, shape.width};
  out.extent = effective_window(shape, config);
  out.shift = layer_shift(shape, config, layer);
  out.mask_wrapped = config.mask_wrapped;
  std::array<std::size_t, 3> tiles{};
  for (int a = 0; a < 3; ++a) {
    tiles[a] = (n[a] + out.extent[a] - 1) / out.extent[a];
    out.padded[a] = tiles[a] * out.extent[a];
  }
  out.window_size = out.extent[0] * out.extent[1] * out.extent[2];
  out.windows = tiles[0] * tiles[1] * tiles[2];
  const std::size_t slots = out.windows * out.window_size;
  out.token.resize(slots);
  out.pad.resize(slots);
  out.region.resize(slots);

  for (std::size_t rt = 0; rt < out.padded[0]; ++rt) {
    for (std::size_t ry = 0; ry < out.padded[1]; ++ry) {
      for (std::size_t rx = 0; rx < out.padded[2]; ++rx) {
        const std::array<std::size_t, 3> r{rt, ry, rx};
        std::array<std::size_t, 3> src{};
        bool is_pad = false;
        std::uint8_t region = 0;
        for (int a = 0; a < 3; ++a) {
          const std::size_t clamped = std::min(r[a], n[a] - 1);
          is_pad = is_pad || r[a] >= n[a];
          src[a] = (clamped + out.shift[a]) % n[a];
          region = static_cast<std::uint8_t>(region * 2 + (clamped < n[a] - out.shift[a] ? 0 : 1));
        }
        const std::size_t w = ((rt / out.extent[0]) * tiles[1] + ry / out.extent[1]) * tiles[2] + rx / out.extent[2];
        const std::size_t k =
            ((rt % out.extent[0]) * out.extent[1] + ry % out.extent[1]) * out.extent[2] + rx % out.extent[2];
        const std::size_t slot = w * out.window_size + k;
        out.token[slot] = shape.canonical_index(src[0], src[1], src[2]);
        out.pad[slot] = is_pad ? 1 : 0;
        out.region[slot] = region;
      }
    }
  }
  return out;
}

const WindowLayout& cached_layout(const GridShape& shape, const WindowConfig& config, std::size_t layer) {
  using Key = std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, bool, bool>;
  static std::mutex mu;
  static std::map<Key, std::unique_ptr<WindowLayout>> cache;
  const Key key{shape.frames, shape.height, shape.width, config.tau, config.s, config.mask_wrapped, layer % 2 == 1};
  std::lock_guard lock(mu);
  auto& slot = cache[key];
  if (!slot) slot = std::make_unique<WindowLayout>(partition_windows(shape, config, layer));
  return *slot;
}

void SwinParams::validate() const {
  if (heads == 0 || d_model == 0 || d_model % heads) {
    throw std::invalid_argument("swin: d_model must be a positive multiple of heads");
  }
  for (const auto* w : {&w_q, &w_k, &w_v, &w_o}) {
    if (!w->defined()) throw std::invalid_argument("swin: missing projection");
    num::require_shape(w->value(), {d_model, d_model}, "swin projection");
  }
}

SwinParams init_swin(std::size_t d_model, std::size_t heads, num::Rng& rng) {
  if (heads == 0 || d_model % heads) throw std::invalid_argument("init_swin: heads must divide d_model");
  const double std = 1.0 / std::sqrt(static_cast<double>(d_model));
  SwinParams p;
  p.d_model = d_model;
  p.heads = heads;
  p.w_q = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  p.w_k = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  p.w_v = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  p.w_o = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  return p;
}

namespace {

struct HeadBuffers {
  num::Buffer q, k, v, s;
  explicit HeadBuffers(std::size_t ws, std::size_t dh) : q(ws * dh), k(ws * dh), v(ws * dh), s(ws * ws) {}
};

void gather_head(const num::Array& src, const WindowLayout& layout, std::size_t w, std::size_t col,
                 std::size_t dh, num::Buffer& dst) {
  const std::size_t ws = layout.window_size, d = src.cols();
  for (std::size_t i = 0; i < ws; ++i) {
    const double* row = src.data() + layout.token[w * ws + i] * d + col;
    std::copy(row, row + dh, dst.data() + i * dh);
  }
}

// Scaled, masked, softmaxed scores of one window and head, in place in b.s.
void attention_weights(const WindowLayout& layout, std::size_t w, std::size_t dh, HeadBuffers& b) {
  const std::size_t ws = layout.window_size;
  num::gemm_nt(b.q.data(), b.k.data(), b.s.data(), ws, dh, ws, false);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t i = 0; i < ws; ++i) {
    double* row = b.s.data() + i * ws;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < ws; ++j) {
      row[j] = layout.allowed(w, i, j) ? row[j] * inv : -std::numeric_limits<double>::infinity();
      top = std::max(top, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < ws; ++j) {
      row[j] = std::exp(row[j] - top);
      z += row[j];
    }
    for (std::size_t j = 0; j < ws; ++j) row[j] /= z;
  }
}

}  // namespace

num::Var window_attention(const num::Var& q, const num::Var& k, const num::Var& v, const WindowLayout& layout,
                          std::size_t heads) {
  const num::Array& qv = q.value();
  num::require_matrix(qv, "window_attention");
  if (k.shape() != qv.shape() || v.shape() != qv.shape()) {
    throw std::invalid_argument("window_attention: q, k, v shapes differ");
  }
  const std::size_t d = qv.cols(), ws = layout.window_size;
  if (heads == 0 || d % heads) throw std::invalid_argument("window_attention: heads must divide width");
  const std::size_t dh = d / heads;
  num::Array out({qv.rows(), d}, 0.0);

  num::parallel_for(0, layout.windows, [&](std::size_t w0, std::size_t w1) {
    HeadBuffers b(ws, dh);
    num::Buffer o(ws * dh);
    for (std::size_t w = w0; w < w1; ++w) {
      for (std::size_t h = 0; h < heads; ++h) {
        gather_head(qv, layout, w, h * dh, dh, b.q);
        gather_head(k.value(), layout, w, h * dh, dh, b.k);
        gather_head(v.value(), layout, w, h * dh, dh, b.v);
        attention_weights(layout, w, dh, b);
        num::gemm_nn(b.s.data(), b.v.data(), o.data(), ws, ws, dh, false);
        for (std::size_t i = 0; i < ws; ++i) {
          if (layout.pad[w * ws + i]) continue;
          std::copy(o.data() + i * dh, o.data() + (i + 1) * dh, out.data() + layout.token[w * ws + i] * d + h * dh);
        }
      }
    }
  });

  auto saved = std::make_shared<const WindowLayout>(layout);
  return num::record(std::move(out), {q, k, v}, [q, k, v, saved, heads](const num::Array& g,
                                                                        std::span<num::Array* const> gi) {
    const WindowLayout& layout = *saved;
    const std::size_t d = q.value().cols(), ws = layout.window_size, dh = d / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    HeadBuffers b(ws, dh);
    num::Buffer go(ws * dh), dp(ws * ws), dq(ws * dh), dk(ws * dh), dv(ws * dh);
    for (std::size_t w = 0; w < layout.windows; ++w) {
      for (std::size_t h = 0; h < heads; ++h) {
        gather_head(q.value(), layout, w, h * dh, dh, b.q);
        gather_head(k.value(), layout, w, h * dh, dh, b.k);
        gather_head(v.value(), layout, w, h * dh, dh, b.v);
        attention_weights(layout, w, dh, b);
        for (std::size_t i = 0; i < ws; ++i) {
          if (layout.pad[w * ws + i]) {
            std::fill(go.begin() + i * dh, go.begin() + (i + 1) * dh, 0.0);
          } else {
            const double* row = g.data() + layout.token[w * ws + i] * d + h * dh;
            std::copy(row, row + dh, go.begin() + i * dh);
          }
        }
        num::gemm_tn(b.s.data(), go.data(), dv.data(), ws, ws, dh, false);
        num::gemm_nt(go.data(), b.v.data(), dp.data(), ws, dh, ws, false);
        for (std::size_t i = 0; i < ws; ++i) {
          const double* p = b.s.data() + i * ws;
          double* r = dp.data() + i * ws;
          double dot = 0.0;
          for (std::size_t j = 0; j < ws; ++j) dot += p[j] * r[j];
          for (std::size_t j = 0; j < ws; ++j) r[j] = p[j] * (r[j] - dot) * inv;
        }
        num::gemm_nn(dp.data(), b.k.data(), dq.data(), ws, ws, dh, false);
        num::gemm_tn(dp.data(), b.q.data(), dk.data(), ws, ws, dh, false);
        for (std::size_t i = 0; i < ws; ++i) {
          const std::size_t off = layout.token[w * ws + i] * d + h * dh;
          for (std::size_t e = 0; e < dh; ++e) {
            if (gi[0]) gi[0]->data()[off + e] += dq[i * dh + e];
            if (gi[1]) gi[1]->data()[off + e] += dk[i * dh + e];
            if (gi[2]) gi[2]->data()[off + e] += dv[i * dh + e];
          }
        }
      }
    }
  });
}

num::Var local_swin_forward(const TokenSequence& seq, std::size_t layer, const SwinParams& params,
                            const WindowConfig& config) {
  seq.validate();
  const std::size_t n = seq.length(), nv = seq.shape.vision_tokens(), d = seq.embeddings.value().cols();
  if (d != params.d_model) throw std::invalid_argument("local_swin_forward: width mismatch");
  if (nv == 0) return num::Var(num::Array({n, d}, 0.0));
  const num::Var x = nv == n ? seq.embeddings : num::slice_rows(seq.embeddings, 0, nv);
  const WindowLayout& layout = cached_layout(seq.shape, config, layer);
  const num::Var attn = window_attention(num::linear(x, params.w_q), num::linear(x, params.w_k),
                                         num::linear(x, params.w_v), layout, params.heads);
  const num::Var y = num::linear(attn, params.w_o);
  if (nv == n) return y;
  return num::concat_rows(y, num::Var(num::Array({n - nv, d}, 0.0)));
}

std::uint64_t window_attention_flops(const WindowLayout& layout, std::size_t d_model) {
  return 4ULL * layout.windows * layout.window_size * layout.window_size * d_model;
}

std::uint64_t local_swin_flops(const GridShape& shape, const WindowConfig& config, std::size_t layer,
                               std::size_t d_model) {
  const std::uint64_t nv = shape.vision_tokens();
  if (nv == 0) return 0;
  const WindowLayout& layout = cached_layout(shape, config, layer);
  return 8ULL * nv * d_model * d_model + window_attention_flops(layout, d_model);
}

}  // namespace mmate::swin
