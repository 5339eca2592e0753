// SPDX-License-Identifier: Apache-2.0
#include "mmate/numerics/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <thread>
#include <vector>

namespace mmate::num {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

std::atomic<std::uint64_t> g_flops{0};
std::atomic<int> g_threads{1};

}  // namespace

void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, bool count) {
  ConstMap A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  Map C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (accumulate) {
    C.noalias() += A * B;
  } else {
    C.noalias() = A * B;
  }
  if (count) add_flops(2ULL * m * n * k);
}

void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, bool count) {
  ConstMap A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
  ConstMap B(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  Map C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (accumulate) {
    C.noalias() += A * B.transpose();
  } else {
    C.noalias() = A * B.transpose();
  }
  if (count) add_flops(2ULL * m * n * k);
}

void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
             bool accumulate, bool count) {
  ConstMap A(a, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
  ConstMap B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
  Map C(c, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  if (accumulate) {
    C.noalias() += A.transpose() * B;
  } else {
    C.noalias() = A.transpose() * B;
  }
  if (count) add_flops(2ULL * m * n * k);
}

Array matmul(const Array& a, const Array& b) {
  require_matrix(a, "matmul lhs");
  require_matrix(b, "matmul rhs");
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions differ " + shape_string(a.shape()) + " * " +
                                shape_string(b.shape()));
  }
  Array c({a.rows(), b.cols()});
  gemm_nn(a.data(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), false);
  return c;
}

Array matmul_nt(const Array& x, const Array& w) {
  require_matrix(x, "matmul_nt lhs");
  require_matrix(w, "matmul_nt rhs");
  if (x.cols() != w.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimensions differ " + shape_string(x.shape()) + " * " +
                                shape_string(w.shape()) + "^T");
  }
  Array c({x.rows(), w.rows()});
  gemm_nt(x.data(), w.data(), c.data(), x.rows(), x.cols(), w.rows(), false);
  return c;
}

void add_flops(std::uint64_t n) { g_flops.fetch_add(n, std::memory_order_relaxed); }
std::uint64_t flop_count() { return g_flops.load(std::memory_order_relaxed); }
void reset_flops() { g_flops.store(0, std::memory_order_relaxed); }

void set_num_threads(int n) {
  if (n < 1) throw std::invalid_argument("set_num_threads: thread count must be >= 1");
  g_threads.store(n);
}

int num_threads() { return g_threads.load(); }

void parallel_for(std::size_t begin, std::size_t end, const std::function<void(std::size_t, std::size_t)>& body) {
  if (end <= begin) return;
  const std::size_t total = end - begin;
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(num_threads()), total);
  if (workers <= 1) {
    body(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t per = (total + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t lo = begin + w * per;
    const std::size_t hi = std::min(end, lo + per);
    if (lo >= hi) break;
    pool.emplace_back([&body, lo, hi] { body(lo, hi); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mmate::num
