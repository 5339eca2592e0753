// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <stdexcept>
#include <vector>

#include "mmate/flex_ma/flex_ma.hpp"
#include "mmate/numerics/kernels.hpp"

namespace mmate::flex {
namespace {

struct Dims {
  std::size_t n, heads, ds, dh;
};

Dims dims_of(const ScanTensors& in) {
  in.validate();
  return {in.decay.rows(), in.heads, in.b.cols() / in.heads, in.x.cols() / in.heads};
}

inline std::size_t position(std::size_t i, std::size_t n, ScanDirection dir) {
  return dir == ScanDirection::kForward ? i : n - 1 - i;
}

}  // namespace

void ScanTensors::validate() const {
  if (heads == 0) throw std::invalid_argument("scan: heads must be >= 1");
  for (const auto* a : {&decay, &b, &c, &x}) num::require_matrix(*a, "scan input");
  const std::size_t n = decay.rows();
  if (b.rows() != n || c.rows() != n || x.rows() != n) throw std::invalid_argument("scan: row counts differ");
  if (decay.cols() != heads) throw std::invalid_argument("scan: decay must have one column per head");
  if (b.cols() != c.cols() || b.cols() % heads || x.cols() % heads) {
    throw std::invalid_argument("scan: B/C/X widths are not head-consistent");
  }
}

num::Array scan_naive(const ScanTensors& in, ScanDirection direction) {
  const auto [n, heads, ds, dh] = dims_of(in);
  num::Array y({n, heads * dh}, 0.0);
  num::Buffer state(ds * dh);
  for (std::size_t h = 0; h < heads; ++h) {
    std::fill(state.begin(), state.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t p = position(i, n, direction);
      const double a = in.decay(p, h);
      const double* bp = in.b.data() + p * in.b.cols() + h * ds;
      const double* cp = in.c.data() + p * in.c.cols() + h * ds;
      const double* xp = in.x.data() + p * in.x.cols() + h * dh;
      double* yp = y.data() + p * y.cols() + h * dh;
      for (std::size_t k = 0; k < ds; ++k) {
        double* sk = state.data() + k * dh;
        for (std::size_t j = 0; j < dh; ++j) sk[j] = a * sk[j] + bp[k] * xp[j];
      }
      for (std::size_t k = 0; k < ds; ++k) {
        const double* sk = state.data() + k * dh;
        for (std::size_t j = 0; j < dh; ++j) yp[j] += sk[j] * cp[k];
      }
    }
  }
  num::add_flops(4ULL * n * heads * ds * dh);
  return y;
}

num::Array scan_chunked(const ScanTensors& in, ScanDirection direction, std::size_t chunk) {
  if (chunk == 0) throw std::invalid_argument("scan_chunked: chunk size must be >= 1");
  const auto [n, heads, ds, dh] = dims_of(in);
  num::Array y({n, heads * dh}, 0.0);
  const std::size_t bw = in.b.cols(), xw = in.x.cols(), yw = y.cols();

  num::parallel_for(0, heads, [&](std::size_t h0, std::size_t h1) {
    num::Buffer state(ds * dh), next(ds * dh);
    num::Buffer decay_mat(chunk * chunk);  // decay_mat[t*chunk+s] = prod_{k=s+1..t} a_k
    num::Buffer prefix(chunk);             // prod_{k=start..t} a_k
    num::Buffer sc(ds);
    for (std::size_t h = h0; h < h1; ++h) {
      std::fill(state.begin(), state.end(), 0.0);
      for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t q = std::min(chunk, n - start);
        for (std::size_t t = 0; t < q; ++t) {
          const double a = in.decay(position(start + t, n, direction), h);
          prefix[t] = t == 0 ? a : prefix[t - 1] * a;
          double* row = decay_mat.data() + t * chunk;
          row[t] = 1.0;
          if (t > 0) {
            const double* prev = decay_mat.data() + (t - 1) * chunk;
            for (std::size_t s = 0; s < t; ++s) row[s] = prev[s] * a;
          }
        }
        for (std::size_t t = 0; t < q; ++t) {
          const std::size_t pt = position(start + t, n, direction);
          const double* ct = in.c.data() + pt * bw + h * ds;
          double* yt = y.data() + pt * yw + h * dh;
          // Carried state contribution.
          for (std::size_t k = 0; k < ds; ++k) {
            const double* sk = state.data() + k * dh;
            const double w = prefix[t] * ct[k];
            for (std::size_t j = 0; j < dh; ++j) yt[j] += w * sk[j];
          }
          // Intra-chunk contributions.
          const double* row = decay_mat.data() + t * chunk;
          for (std::size_t s = 0; s <= t; ++s) {
            const std::size_t ps = position(start + s, n, direction);
            const double* bs = in.b.data() + ps * bw + h * ds;
            const double* xs = in.x.data() + ps * xw + h * dh;
            double dot = 0.0;
            for (std::size_t k = 0; k < ds; ++k) dot += ct[k] * bs[k];
            const double w = row[s] * dot;
            for (std::size_t j = 0; j < dh; ++j) yt[j] += w * xs[j];
          }
        }
        // Carry the state to the end of the chunk.
        const double* last = decay_mat.data() + (q - 1) * chunk;
        for (std::size_t i = 0; i < ds * dh; ++i) next[i] = prefix[q - 1] * state[i];
        for (std::size_t s = 0; s < q; ++s) {
          const std::size_t ps = position(start + s, n, direction);
          const double* bs = in.b.data() + ps * bw + h * ds;
          const double* xs = in.x.data() + ps * xw + h * dh;
          for (std::size_t k = 0; k < ds; ++k) {
            const double w = last[s] * bs[k];
            double* nk = next.data() + k * dh;
            for (std::size_t j = 0; j < dh; ++j) nk[j] += w * xs[j];
          }
        }
        state.swap(next);
      }
    }
  });
  num::add_flops(scan_flops(n, heads, ds, dh, {ScanAlgorithm::kChunked, chunk}));
  return y;
}

std::uint64_t scan_flops(std::size_t n, std::size_t heads, std::size_t d_state, std::size_t d_head,
                         const ScanOptions& options) {
  if (options.algorithm == ScanAlgorithm::kNaive) return 4ULL * n * heads * d_state * d_head;
  std::uint64_t total = 0;
  for (std::size_t start = 0; start < n; start += options.chunk) {
    const std::uint64_t q = std::min(options.chunk, n - start);
    const std::uint64_t pairs = q * (q + 1) / 2;
    total += 2 * pairs * (d_state + d_head) + 4 * q * d_state * d_head;
  }
  return total * heads;
}

num::Var scan(const num::Var& decay, const num::Var& b, const num::Var& c, const num::Var& x, std::size_t heads,
              ScanDirection direction, const ScanOptions& options) {
  ScanTensors in{decay.value(), b.value(), c.value(), x.value(), heads};
  num::Array y = options.algorithm == ScanAlgorithm::kNaive ? scan_naive(in, direction)
                                                            : scan_chunked(in, direction, options.chunk);
  return num::record(
      std::move(y), {decay, b, c, x},
      [decay, b, c, x, heads, direction](const num::Array& g, std::span<num::Array* const> gi) {
        const num::Array& av = decay.value();
        const num::Array& bv = b.value();
        const num::Array& cv = c.value();
        const num::Array& xv = x.value();
        const std::size_t n = av.rows(), ds = bv.cols() / heads, dh = xv.cols() / heads;
        const std::size_t bw = bv.cols(), xw = xv.cols();
        const std::size_t sz = ds * dh;
        num::Buffer states(n * sz);  // states[i] = S_i in logical order
        num::Buffer adj(sz);
        for (std::size_t h = 0; h < heads; ++h) {
          for (std::size_t i = 0; i < n; ++i) {
            const std::size_t p = position(i, n, direction);
            const double a = av(p, h);
            const double* bp = bv.data() + p * bw + h * ds;
            const double* xp = xv.data() + p * xw + h * dh;
            double* s = states.data() + i * sz;
            const double* prev = i ? states.data() + (i - 1) * sz : nullptr;
            for (std::size_t k = 0; k < ds; ++k) {
              for (std::size_t j = 0; j < dh; ++j) {
                s[k * dh + j] = (prev ? a * prev[k * dh + j] : 0.0) + bp[k] * xp[j];
              }
            }
          }
          std::fill(adj.begin(), adj.end(), 0.0);
          for (std::size_t ii = n; ii-- > 0;) {
            const std::size_t p = position(ii, n, direction);
            const double* gp = g.data() + p * g.cols() + h * dh;
            const double* cp = cv.data() + p * bw + h * ds;
            const double* s = states.data() + ii * sz;
            // adj currently holds a_{i+1} G_{i+1}; add C_i dy_i^T.
            for (std::size_t k = 0; k < ds; ++k) {
              for (std::size_t j = 0; j < dh; ++j) adj[k * dh + j] += cp[k] * gp[j];
            }
            if (gi[2]) {
              double* dc = gi[2]->data() + p * bw + h * ds;
              for (std::size_t k = 0; k < ds; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < dh; ++j) acc += s[k * dh + j] * gp[j];
                dc[k] += acc;
              }
            }
            const double* bp = bv.data() + p * bw + h * ds;
            const double* xp = xv.data() + p * xw + h * dh;
            if (gi[1]) {
              double* db = gi[1]->data() + p * bw + h * ds;
              for (std::size_t k = 0; k < ds; ++k) {
                double acc = 0.0;
                for (std::size_t j = 0; j < dh; ++j) acc += adj[k * dh + j] * xp[j];
                db[k] += acc;
              }
            }
            if (gi[3]) {
              double* dx = gi[3]->data() + p * xw + h * dh;
              for (std::size_t j = 0; j < dh; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < ds; ++k) acc += adj[k * dh + j] * bp[k];
                dx[j] += acc;
              }
            }
            if (gi[0] && ii > 0) {
              const double* prev = states.data() + (ii - 1) * sz;
              double acc = 0.0;
              for (std::size_t e = 0; e < sz; ++e) acc += adj[e] * prev[e];
              (*gi[0])(p, h) += acc;
            }
            const double a = av(p, h);
            for (auto& v : adj) v *= a;
          }
        }
      });
}

}  // namespace mmate::flex
