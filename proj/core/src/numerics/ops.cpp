// SPDX-License-Identifier: Apache-2.0
#include "mmate/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "mmate/numerics/kernels.hpp"

namespace mmate::num {
namespace {

void require_same_shape(const Array& a, const Array& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                                shape_string(b.shape()));
  }
}

void axpy(Array& dst, const Array& src, double s = 1.0) {
  double* d = dst.data();
  const double* x = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s * x[i];
}

double sigmoid_scalar(double v) {
  if (v >= 0) {
    const double e = std::exp(-v);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double softplus_scalar(double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); }

template <class F, class D>
Var unary(const Var& a, F f, D df) {
  const Array& av = a.value();
  Array out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return record(std::move(out), {a}, [a, df](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    const Array& x = a.value();
    Array& dx = *gi[0];
    for (std::size_t i = 0; i < x.size(); ++i) dx[i] += g[i] * df(x[i]);
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Array out = matmul(a.value(), b.value());
  return record(std::move(out), {a, b}, [a, b](const Array& g, std::span<Array* const> gi) {
    const Array& av = a.value();
    const Array& bv = b.value();
    const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
    if (gi[0]) gemm_nt(g.data(), bv.data(), gi[0]->data(), m, n, k, true);
    if (gi[1]) gemm_tn(av.data(), g.data(), gi[1]->data(), k, m, n, true);
  });
}

Var linear(const Var& x, const Var& w) {
  Array out = matmul_nt(x.value(), w.value());
  return record(std::move(out), {x, w}, [x, w](const Array& g, std::span<Array* const> gi) {
    const Array& xv = x.value();
    const Array& wv = w.value();
    const std::size_t n = xv.rows(), in = xv.cols(), o = wv.rows();
    if (gi[0]) gemm_nn(g.data(), wv.data(), gi[0]->data(), n, o, in, true);
    if (gi[1]) gemm_tn(g.data(), xv.data(), gi[1]->data(), o, n, in, true);
  });
}

Var linear(const Var& x, const Var& w, const Var& bias) { return add_row(linear(x, w), bias); }

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Array out = a.value();
  axpy(out, b.value());
  return record(std::move(out), {a, b}, [](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) axpy(*gi[0], g);
    if (gi[1]) axpy(*gi[1], g);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "sub");
  Array out = a.value();
  axpy(out, b.value(), -1.0);
  return record(std::move(out), {a, b}, [](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) axpy(*gi[0], g);
    if (gi[1]) axpy(*gi[1], g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mul");
  Array out = a.value();
  const Array& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return record(std::move(out), {a, b}, [a, b](const Array& g, std::span<Array* const> gi) {
    const Array& av = a.value();
    const Array& bv = b.value();
    if (gi[0]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[0])[i] += g[i] * bv[i];
    }
    if (gi[1]) {
      for (std::size_t i = 0; i < g.size(); ++i) (*gi[1])[i] += g[i] * av[i];
    }
  });
}

Var add_row(const Var& x, const Var& row) {
  const Array& xv = x.value();
  const Array& rv = row.value();
  require_matrix(xv, "add_row");
  if (rv.rank() != 1 || rv.size() != xv.cols()) {
    throw std::invalid_argument("add_row: row " + shape_string(rv.shape()) + " does not fit " +
                                shape_string(xv.shape()));
  }
  Array out = xv;
  const std::size_t n = xv.rows(), d = xv.cols();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] += rv[c];
  }
  return record(std::move(out), {x, row}, [n, d](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) axpy(*gi[0], g);
    if (gi[1]) {
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < d; ++c) (*gi[1])[c] += g[r * d + c];
      }
    }
  });
}

Var mul_row(const Var& x, const Var& row) {
  const Array& xv = x.value();
  const Array& rv = row.value();
  require_matrix(xv, "mul_row");
  if (rv.rank() != 1 || rv.size() != xv.cols()) {
    throw std::invalid_argument("mul_row: row " + shape_string(rv.shape()) + " does not fit " +
                                shape_string(xv.shape()));
  }
  Array out = xv;
  const std::size_t n = xv.rows(), d = xv.cols();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] *= rv[c];
  }
  return record(std::move(out), {x, row}, [x, row, n, d](const Array& g, std::span<Array* const> gi) {
    const Array& xv = x.value();
    const Array& rv = row.value();
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < d; ++c) {
        if (gi[0]) (*gi[0])[r * d + c] += g[r * d + c] * rv[c];
        if (gi[1]) (*gi[1])[c] += g[r * d + c] * xv[r * d + c];
      }
    }
  });
}

Var scale(const Var& a, double s) {
  Array out = a.value();
  for (auto& v : out.values()) v *= s;
  return record(std::move(out), {a}, [s](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) axpy(*gi[0], g, s);
  });
}

Var scale(const Var& a, const Var& s) {
  if (s.value().size() != 1) throw std::invalid_argument("scale: factor must have one element");
  const double sv = s.value()[0];
  Array out = a.value();
  for (auto& v : out.values()) v *= sv;
  return record(std::move(out), {a, s}, [a, s](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) axpy(*gi[0], g, s.value()[0]);
    if (gi[1]) {
      const Array& av = a.value();
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      (*gi[1])[0] += acc;
    }
  });
}

Var affine(const Var& a, double m, double c) {
  Array out = a.value();
  for (auto& v : out.values()) v = v * m + c;
  return record(std::move(out), {a}, [m](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) axpy(*gi[0], g, m);
  });
}

Var sigmoid(const Var& a) {
  return unary(a, sigmoid_scalar, [](double v) {
    const double s = sigmoid_scalar(v);
    return s * (1.0 - s);
  });
}

Var softplus(const Var& a) { return unary(a, softplus_scalar, sigmoid_scalar); }

Var exp(const Var& a) {
  return unary(a, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt2pi](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        return cdf + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Var mask_rows(const Var& x, std::span<const double> flags) {
  const Array& xv = x.value();
  require_matrix(xv, "mask_rows");
  if (flags.size() != xv.rows()) {
    throw std::invalid_argument("mask_rows: " + std::to_string(flags.size()) + " flags for " +
                                std::to_string(xv.rows()) + " rows");
  }
  std::vector<double> f(flags.begin(), flags.end());
  Array out = xv;
  const std::size_t d = xv.cols();
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] *= f[r];
  }
  return record(std::move(out), {x}, [f = std::move(f), d](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (std::size_t r = 0; r < f.size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) (*gi[0])[r * d + c] += g[r * d + c] * f[r];
    }
  });
}

Array layer_norm(const Array& x, const Array& gamma, const Array& beta, double eps) {
  require_matrix(x, "layer_norm");
  const std::size_t n = x.rows(), d = x.cols();
  require_shape(gamma, {d}, "layer_norm gamma");
  require_shape(beta, {d}, "layer_norm beta");
  Array out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * d;
    double mu = 0.0;
    for (std::size_t c = 0; c < d; ++c) mu += xr[c];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < d; ++c) out[r * d + c] = (xr[c] - mu) * inv * gamma[c] + beta[c];
  }
  return out;
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
  Array out = layer_norm(x.value(), gamma.value(), beta.value(), eps);
  return record(std::move(out), {x, gamma, beta}, [x, gamma, eps](const Array& g, std::span<Array* const> gi) {
    const Array& xv = x.value();
    const Array& gm = gamma.value();
    const std::size_t n = xv.rows(), d = xv.cols();
    std::vector<double> xhat(d), dxhat(d);
    for (std::size_t r = 0; r < n; ++r) {
      const double* xr = xv.data() + r * d;
      const double* gr = g.data() + r * d;
      double mu = 0.0;
      for (std::size_t c = 0; c < d; ++c) mu += xr[c];
      mu /= static_cast<double>(d);
      double var = 0.0;
      for (std::size_t c = 0; c < d; ++c) var += (xr[c] - mu) * (xr[c] - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + eps);
      double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        xhat[c] = (xr[c] - mu) * inv;
        dxhat[c] = gr[c] * gm[c];
        mean_dxhat += dxhat[c];
        mean_dxhat_xhat += dxhat[c] * xhat[c];
      }
      mean_dxhat /= static_cast<double>(d);
      mean_dxhat_xhat /= static_cast<double>(d);
      if (gi[0]) {
        for (std::size_t c = 0; c < d; ++c) {
          (*gi[0])[r * d + c] += inv * (dxhat[c] - mean_dxhat - xhat[c] * mean_dxhat_xhat);
        }
      }
      if (gi[1]) {
        for (std::size_t c = 0; c < d; ++c) (*gi[1])[c] += gr[c] * xhat[c];
      }
      if (gi[2]) {
        for (std::size_t c = 0; c < d; ++c) (*gi[2])[c] += gr[c];
      }
    }
  });
}

Array softmax_rows(const Array& x) {
  require_matrix(x, "softmax_rows");
  if (!x.all_finite()) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(x[i])) {
        throw std::domain_error("softmax_rows: non-finite input at row " + std::to_string(i / x.cols()) +
                                ", column " + std::to_string(i % x.cols()));
      }
    }
  }
  const std::size_t n = x.rows(), d = x.cols();
  Array out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * d;
    double* o = out.data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      o[c] = std::exp(xr[c] - mx);
      z += o[c];
    }
    for (std::size_t c = 0; c < d; ++c) o[c] /= z;
  }
  return out;
}

Array log_softmax_rows(const Array& x) {
  require_matrix(x, "log_softmax_rows");
  if (!x.all_finite()) throw std::domain_error("log_softmax_rows: non-finite input");
  const std::size_t n = x.rows(), d = x.cols();
  Array out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.data() + r * d;
    double* o = out.data() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double z = 0.0;
    for (std::size_t c = 0; c < d; ++c) z += std::exp(xr[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < d; ++c) o[c] = xr[c] - lse;
  }
  return out;
}

Var softmax_rows(const Var& x) {
  Array out = softmax_rows(x.value());
  Array saved = out;
  return record(std::move(out), {x}, [y = std::move(saved)](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    const std::size_t n = y.rows(), d = y.cols();
    for (std::size_t r = 0; r < n; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
      for (std::size_t c = 0; c < d; ++c) (*gi[0])[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
    }
  });
}

Var log_softmax_rows(const Var& x) {
  Array out = log_softmax_rows(x.value());
  Array saved = out;
  return record(std::move(out), {x}, [ls = std::move(saved)](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    const std::size_t n = ls.rows(), d = ls.cols();
    for (std::size_t r = 0; r < n; ++r) {
      double gs = 0.0;
      for (std::size_t c = 0; c < d; ++c) gs += g[r * d + c];
      for (std::size_t c = 0; c < d; ++c) (*gi[0])[r * d + c] += g[r * d + c] - std::exp(ls[r * d + c]) * gs;
    }
  });
}

Var gather_rows(const Var& x, std::span<const std::size_t> indices) {
  const Array& xv = x.value();
  require_matrix(xv, "gather_rows");
  if (indices.empty()) throw std::invalid_argument("gather_rows: no indices");
  const std::size_t d = xv.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Array out({idx.size(), d});
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= xv.rows()) {
      throw std::out_of_range("gather_rows: index " + std::to_string(idx[i]) + " >= " + std::to_string(xv.rows()));
    }
    std::copy_n(xv.data() + idx[i] * d, d, out.data() + i * d);
  }
  return record(std::move(out), {x}, [idx = std::move(idx), d](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      double* dst = gi[0]->data() + idx[i] * d;
      const double* src = g.data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var scatter_rows(const Var& x, std::span<const std::size_t> indices, std::size_t rows) {
  const Array& xv = x.value();
  require_matrix(xv, "scatter_rows");
  if (indices.size() != xv.rows()) throw std::invalid_argument("scatter_rows: one index per row required");
  const std::size_t d = xv.cols();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  Array out({rows, d}, 0.0);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= rows) throw std::out_of_range("scatter_rows: index out of range");
    double* dst = out.data() + idx[i] * d;
    const double* src = xv.data() + i * d;
    for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
  }
  return record(std::move(out), {x}, [idx = std::move(idx), d](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const double* src = g.data() + idx[i] * d;
      double* dst = gi[0]->data() + i * d;
      for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
    }
  });
}

Var concat_rows(const Var& a, const Var& b) {
  const Array& av = a.value();
  const Array& bv = b.value();
  require_matrix(av, "concat_rows");
  require_matrix(bv, "concat_rows");
  if (av.cols() != bv.cols()) throw std::invalid_argument("concat_rows: column mismatch");
  const std::size_t d = av.cols(), na = av.rows();
  Array out({na + bv.rows(), d});
  std::copy_n(av.data(), av.size(), out.data());
  std::copy_n(bv.data(), bv.size(), out.data() + av.size());
  return record(std::move(out), {a, b}, [na, d](const Array& g, std::span<Array* const> gi) {
    if (gi[0]) {
      for (std::size_t i = 0; i < na * d; ++i) (*gi[0])[i] += g[i];
    }
    if (gi[1]) {
      for (std::size_t i = 0; i < gi[1]->size(); ++i) (*gi[1])[i] += g[na * d + i];
    }
  });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const Array& xv = x.value();
  require_matrix(xv, "slice_rows");
  if (begin >= end || end > xv.rows()) throw std::out_of_range("slice_rows: bad range");
  const std::size_t d = xv.cols();
  Array out({end - begin, d});
  std::copy_n(xv.data() + begin * d, out.size(), out.data());
  return record(std::move(out), {x}, [begin, d](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    double* dst = gi[0]->data() + begin * d;
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return record(Array::scalar(s), {a}, [](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    for (auto& v : gi[0]->values()) v += g[0];
  });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var sum_squares(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v * v;
  return record(Array::scalar(s), {a}, [a](const Array& g, std::span<Array* const> gi) {
    if (!gi[0]) return;
    const Array& av = a.value();
    for (std::size_t i = 0; i < av.size(); ++i) (*gi[0])[i] += 2.0 * av[i] * g[0];
  });
}

}  // namespace mmate::num
