// SPDX-License-Identifier: Apache-2.0
#include "mmate/numerics/tape.hpp"

#include <atomic>
#include <stdexcept>

namespace mmate::num {

namespace detail {

struct Node {
  Array value;
  Array grad;
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;
  // Identifies the backward pass that last wrote `grad`.
  std::uint64_t grad_tape = 0;
  std::uint64_t grad_epoch = 0;
};

}  // namespace detail

namespace {

thread_local Tape* t_active = nullptr;
std::atomic<std::uint64_t> g_tape_serial{0};

const detail::Node& checked(const std::shared_ptr<detail::Node>& n) {
  if (!n) throw std::logic_error("Var: use of undefined variable");
  return *n;
}

}  // namespace

Var::Var(Array value) : node_(std::make_shared<detail::Node>()) { node_->value = std::move(value); }

Var Var::parameter(Array value) {
  Var v(std::move(value));
  v.node_->requires_grad = true;
  return v;
}

const Array& Var::value() const { return checked(node_).value; }

Array& Var::mutable_value() {
  if (!checked(node_).leaf) throw std::logic_error("Var::mutable_value on a non-leaf");
  return node_->value;
}

bool Var::requires_grad() const { return checked(node_).requires_grad; }

void Var::set_requires_grad(bool on) {
  if (!checked(node_).leaf) throw std::logic_error("Var::set_requires_grad on a non-leaf");
  node_->requires_grad = on;
}

bool Var::is_leaf() const { return checked(node_).leaf; }

Var Var::clone() const {
  Var v(value());
  v.node_->requires_grad = node_->leaf && node_->requires_grad;
  return v;
}

Var Var::detach() const { return Var(value()); }

Var record(Array value, const std::vector<Var>& inputs, BackwardFn backward) {
  Tape* tape = t_active;
  bool needs = false;
  if (tape) {
    for (const auto& in : inputs) needs = needs || in.requires_grad();
  }
  auto node = std::make_shared<detail::Node>();
  node->value = std::move(value);
  if (needs) {
    node->requires_grad = true;
    node->leaf = false;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node_);
    node->backward = std::move(backward);
    tape->nodes_.push_back(node);
  }
  return Var(std::move(node));
}

Tape::Tape() : previous_(t_active), serial_(++g_tape_serial) { t_active = this; }

Tape::~Tape() {
  t_active = previous_;
  // Release newest first so no node destruction cascades down the graph.
  while (!nodes_.empty()) nodes_.pop_back();
}

Tape* Tape::active() { return t_active; }

void Tape::backward(const Var& loss) {
  const auto& root = loss.node_;
  checked(root);
  if (root->value.size() != 1) {
    throw std::invalid_argument("Tape::backward: loss must be a single element, got " +
                                shape_string(root->value.shape()));
  }
  ++backward_epoch_;
  auto touch = [this](detail::Node& n) {
    if (n.grad_tape != serial_ || n.grad_epoch != backward_epoch_) {
      n.grad = Array(n.value.shape(), 0.0);
      n.grad_tape = serial_;
      n.grad_epoch = backward_epoch_;
    }
  };
  for (const auto& n : nodes_) {
    touch(*n);
    for (const auto& in : n->inputs) {
      if (in->requires_grad) touch(*in);
    }
  }
  if (!root->requires_grad) return;
  touch(*root);
  root->grad[0] += 1.0;

  std::vector<Array*> grads;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node& n = **it;
    grads.clear();
    for (const auto& in : n.inputs) grads.push_back(in->requires_grad ? &in->grad : nullptr);
    n.backward(n.grad, grads);
  }
}

Array Tape::gradient(const Var& v) const {
  const auto& n = checked(v.node_);
  if (n.grad_tape == serial_ && n.grad_epoch == backward_epoch_ && backward_epoch_ > 0) return n.grad;
  return Array(n.value.shape(), 0.0);
}

NoGradGuard::NoGradGuard() : saved_(t_active) { t_active = nullptr; }
NoGradGuard::~NoGradGuard() { t_active = saved_; }

}  // namespace mmate::num
