// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <limits>

namespace mmate::oracle {

template <typename Allowed>
Matrix attention(const Matrix& x, const Matrix& wq, const Matrix& wk, const Matrix& wv, const Matrix& wo,
                 std::size_t heads, Allowed allowed) {
  const Matrix q = linear(x, wq), k = linear(x, wk), v = linear(x, wv);
  const std::size_t n = x.size(), d = wq.size(), dh = d / heads;
  Matrix concat(n, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> logits(n, -std::numeric_limits<double>::infinity());
      double top = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        if (!allowed(i, j)) continue;
        double dot = 0.0;
        for (std::size_t e = 0; e < dh; ++e) dot += q[i][h * dh + e] * k[j][h * dh + e];
        logits[j] = dot / std::sqrt(static_cast<double>(dh));
        top = std::max(top, logits[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) z += std::isinf(logits[j]) ? 0.0 : std::exp(logits[j] - top);
      for (std::size_t j = 0; j < n; ++j) {
        if (std::isinf(logits[j])) continue;
        const double p = std::exp(logits[j] - top) / z;
        for (std::size_t e = 0; e < dh; ++e) concat[i][h * dh + e] += p * v[j][h * dh + e];
      }
    }
  }
  return linear(concat, wo);
}

}  // namespace mmate::oracle
