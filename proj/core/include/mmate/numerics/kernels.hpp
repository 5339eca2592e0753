// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

#include "mmate/numerics/array.hpp"

namespace mmate::num {

// Dense contractions on raw row-major buffers. Unless `count` is false, every
// call adds 2*m*n*k to the process-wide flop counter.

/// C[m x n] (+)= A[m x k] * B[k x n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, bool count = true);
/// C[m x n] (+)= A[m x k] * B[n x k]^T
void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, bool count = true);
/// C[m x n] (+)= A[k x m]^T * B[k x n]
void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, bool count = true);

Array matmul(const Array& a, const Array& b);
/// x * w^T with w stored [out x in].
Array matmul_nt(const Array& x, const Array& w);

// Flop accounting. Only contractions are counted (GEMMs, attention score and
// value products, scan state products); elementwise maps are not.
void add_flops(std::uint64_t n);
std::uint64_t flop_count();
void reset_flops();

// Intra-op parallelism. Defaults to 1 thread; results are independent of the
// thread count because every output row is owned by exactly one worker.
void set_num_threads(int n);
int num_threads();
void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace mmate::num
