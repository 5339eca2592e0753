// SPDX-License-Identifier: Apache-2.0
#include "mmate/model/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "mmate/numerics/kernels.hpp"
#include "mmate/numerics/ops.hpp"

namespace mmate::model {
namespace {

num::Buffer head_columns(const num::Array& a, std::size_t col, std::size_t dh) {
  const std::size_t n = a.rows(), d = a.cols();
  num::Buffer out(n * dh);
  for (std::size_t r = 0; r < n; ++r) std::copy(a.data() + r * d + col, a.data() + r * d + col + dh, out.data() + r * dh);
  return out;
}

// Softmax weights of query rows [r0, r1) against keys [0, r1), in s.
void causal_weights(const double* q, const double* k, std::size_t r0, std::size_t r1, std::size_t dh,
                    num::Buffer& s) {
  const std::size_t m = r1 - r0;
  num::gemm_nt(q + r0 * dh, k, s.data(), m, dh, r1, false, false);
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t i = 0; i < m; ++i) {
    double* row = s.data() + i * r1;
    const std::size_t visible = r0 + i + 1;
    Eigen::Map<Eigen::ArrayXd> w(row, static_cast<Eigen::Index>(visible));
    w *= inv;
    w = (w - w.maxCoeff()).exp();
    w /= w.sum();
    std::fill(row + visible, row + r1, 0.0);
  }
}

}  // namespace

AttentionParams init_attention(std::size_t d_model, num::Rng& rng) {
  const double std = 1.0 / std::sqrt(static_cast<double>(d_model));
  AttentionParams p;
  p.w_q = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  p.w_k = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  p.w_v = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  p.w_o = num::Var::parameter(num::randn({d_model, d_model}, rng, std));
  return p;
}

num::Var causal_attention(const num::Var& q, const num::Var& k, const num::Var& v, std::size_t heads,
                          std::size_t block) {
  const num::Array& qv = q.value();
  num::require_matrix(qv, "causal_attention");
  if (k.shape() != qv.shape() || v.shape() != qv.shape()) {
    throw std::invalid_argument("causal_attention: q, k, v shapes differ");
  }
  const std::size_t n = qv.rows(), d = qv.cols();
  if (heads == 0 || d % heads) throw std::invalid_argument("causal_attention: heads must divide width");
  if (block == 0) throw std::invalid_argument("causal_attention: block must be >= 1");
  const std::size_t dh = d / heads;
  num::Array out({n, d}, 0.0);

  num::parallel_for(0, heads, [&](std::size_t h0, std::size_t h1) {
    num::Buffer s(std::min(block, n) * n), o(std::min(block, n) * dh);
    for (std::size_t h = h0; h < h1; ++h) {
      const auto qh = head_columns(qv, h * dh, dh);
      const auto kh = head_columns(k.value(), h * dh, dh);
      const auto vh = head_columns(v.value(), h * dh, dh);
      for (std::size_t r0 = 0; r0 < n; r0 += block) {
        const std::size_t r1 = std::min(n, r0 + block), m = r1 - r0;
        causal_weights(qh.data(), kh.data(), r0, r1, dh, s);
        num::gemm_nn(s.data(), vh.data(), o.data(), m, r1, dh, false, false);
        for (std::size_t i = 0; i < m; ++i) {
          std::copy(o.data() + i * dh, o.data() + (i + 1) * dh, out.data() + (r0 + i) * d + h * dh);
        }
      }
    }
  });
  num::add_flops(causal_attention_flops(n, d));

  return num::record(std::move(out), {q, k, v}, [q, k, v, heads, block](const num::Array& g,
                                                                        std::span<num::Array* const> gi) {
    const std::size_t n = q.value().rows(), d = q.value().cols(), dh = d / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    num::Buffer s(std::min(block, n) * n), dp(std::min(block, n) * n);
    num::Buffer dq(n * dh), dk(n * dh), dv(n * dh);
    for (std::size_t h = 0; h < heads; ++h) {
      const auto qh = head_columns(q.value(), h * dh, dh);
      const auto kh = head_columns(k.value(), h * dh, dh);
      const auto vh = head_columns(v.value(), h * dh, dh);
      const auto gh = head_columns(g, h * dh, dh);
      std::fill(dk.begin(), dk.end(), 0.0);
      std::fill(dv.begin(), dv.end(), 0.0);
      for (std::size_t r0 = 0; r0 < n; r0 += block) {
        const std::size_t r1 = std::min(n, r0 + block), m = r1 - r0;
        causal_weights(qh.data(), kh.data(), r0, r1, dh, s);
        const double* go = gh.data() + r0 * dh;
        num::gemm_tn(s.data(), go, dv.data(), r1, m, dh, true, false);
        num::gemm_nt(go, vh.data(), dp.data(), m, dh, r1, false, false);
        for (std::size_t i = 0; i < m; ++i) {
          const double* p = s.data() + i * r1;
          double* r = dp.data() + i * r1;
          double dot = 0.0;
          for (std::size_t j = 0; j < r1; ++j) dot += p[j] * r[j];
          for (std::size_t j = 0; j < r1; ++j) r[j] = p[j] * (r[j] - dot) * inv;
        }
        num::gemm_nn(dp.data(), kh.data(), dq.data() + r0 * dh, m, r1, dh, false, false);
        num::gemm_tn(dp.data(), qh.data() + r0 * dh, dk.data(), r1, m, dh, true, false);
      }
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t e = 0; e < dh; ++e) {
          const std::size_t off = r * d + h * dh + e;
          if (gi[0]) gi[0]->data()[off] += dq[r * dh + e];
          if (gi[1]) gi[1]->data()[off] += dk[r * dh + e];
          if (gi[2]) gi[2]->data()[off] += dv[r * dh + e];
        }
      }
    }
  });
}

num::Var attention_forward(const num::Var& x, const AttentionParams& p, std::size_t heads) {
  const num::Var attn =
      causal_attention(num::linear(x, p.w_q), num::linear(x, p.w_k), num::linear(x, p.w_v), heads);
  return num::linear(attn, p.w_o);
}

std::uint64_t causal_attention_flops(std::size_t n, std::size_t d_model) {
  return 2ULL * d_model * n * (n + 1);
}

std::uint64_t attention_layer_flops(std::size_t n, std::size_t d_model) {
  return 8ULL * n * d_model * d_model + causal_attention_flops(n, d_model);
}

}  // namespace mmate::model
