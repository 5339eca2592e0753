// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mmate/numerics/array.hpp"
#include "mmate/numerics/tape.hpp"

namespace mmate::num {

// Differentiable primitives. Shapes are checked eagerly and mismatches throw
// std::invalid_argument.

Var matmul(const Var& a, const Var& b);
/// x[n x in] * w^T, w stored [out x in].
Var linear(const Var& x, const Var& w);
Var linear(const Var& x, const Var& w, const Var& bias);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// Adds a length-d row vector to every row of an [n x d] matrix.
Var add_row(const Var& x, const Var& row);
/// Multiplies every row of an [n x d] matrix elementwise by a length-d vector.
Var mul_row(const Var& x, const Var& row);
Var scale(const Var& a, double s);
/// Multiplies every element by a single-element Var.
Var scale(const Var& a, const Var& s);
/// a * m + c elementwise.
Var affine(const Var& a, double m, double c);

Var sigmoid(const Var& a);
Var softplus(const Var& a);
Var exp(const Var& a);
/// Exact (erf) GELU.
Var gelu(const Var& a);

/// Scales row r of x by flags[r].
Var mask_rows(const Var& x, std::span<const double> flags);

/// Per-row normalization, variance epsilon added before the square root.
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// Max-subtracted row softmax; rejects non-finite input.
Var softmax_rows(const Var& x);
Var log_softmax_rows(const Var& x);

/// out[i] = x[indices[i]]; indices may repeat.
Var gather_rows(const Var& x, std::span<const std::size_t> indices);
/// out[indices[i]] += x[i] into a zero matrix with `rows` rows.
Var scatter_rows(const Var& x, std::span<const std::size_t> indices, std::size_t rows);
Var concat_rows(const Var& a, const Var& b);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);

Var sum(const Var& a);
Var mean(const Var& a);
Var sum_squares(const Var& a);

// Plain-array forms used by both the ops above and by oracles.
Array softmax_rows(const Array& x);
Array log_softmax_rows(const Array& x);
Array layer_norm(const Array& x, const Array& gamma, const Array& beta, double eps = 1e-5);

}  // namespace mmate::num
