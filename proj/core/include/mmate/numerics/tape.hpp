// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mmate/numerics/array.hpp"

namespace mmate::num {

namespace detail {
struct Node;
}

/// Handle to a value in a dynamic computation graph.
///
/// A Var is cheap to copy (shared ownership). Leaves are either constants or
/// parameters; a parameter participates in differentiation only while
/// requires_grad() is set. Results of operations record their inputs and a
/// backward closure only while a Tape is active on the current thread and at
/// least one input requires a gradient, so inference never retains
/// intermediates.
class Var {
 public:
  Var() = default;
  explicit Var(Array value);
  static Var parameter(Array value);

  bool defined() const noexcept { return node_ != nullptr; }
  const Array& value() const;
  /// Writable storage; only legal on leaves.
  Array& mutable_value();
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const;
  /// Only legal on leaves.
  void set_requires_grad(bool on);
  bool is_leaf() const;

  /// Deep copy as a fresh leaf with the same requires_grad flag.
  Var clone() const;
  /// Fresh constant leaf holding a copy of the value.
  Var detach() const;
  bool same_node(const Var& other) const noexcept { return node_ == other.node_; }

 private:
  explicit Var(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend class Tape;
  friend Var record(Array value, const std::vector<Var>& inputs,
                    std::function<void(const Array&, std::span<Array* const>)> backward);
};

/// Backward closure: receives d(loss)/d(output) and accumulates into the
/// gradient buffers of the inputs. Entries are null for inputs that do not
/// require a gradient.
using BackwardFn = std::function<void(const Array& grad_out, std::span<Array* const> grad_in)>;

/// Creates the result node of a primitive.
Var record(Array value, const std::vector<Var>& inputs, BackwardFn backward);

/// Reverse-mode tape. Construction makes it the active tape of the calling
/// thread until destruction. Owned by a single training step.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Back-propagates from a single-element loss.
  void backward(const Var& loss);
  /// Gradient of the last backward() w.r.t. v; zeros when v did not take part.
  Array gradient(const Var& v) const;

  std::size_t recorded() const noexcept { return nodes_.size(); }
  static Tape* active();

 private:
  friend Var record(Array value, const std::vector<Var>& inputs, BackwardFn backward);
  std::vector<std::shared_ptr<detail::Node>> nodes_;
  Tape* previous_ = nullptr;
  std::uint64_t serial_ = 0;
  std::uint64_t backward_epoch_ = 0;
};

/// Suspends gradient recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape* saved_;
};

}  // namespace mmate::num
