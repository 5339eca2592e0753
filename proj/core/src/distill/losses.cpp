// SPDX-License-Identifier: Apache-2.0
#include "mmate/distill/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "mmate/numerics/ops.hpp"

namespace mmate::distill {

void LossWeights::validate() const {
  for (double w : {lambda_hid, lambda_tok, lambda_seq, lambda_sup}) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("LossWeights: weights must be finite and >= 0");
  }
  if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("LossWeights: tau must be > 0");
}

num::Var loss_hidden(const std::vector<num::Var>& student, const std::vector<num::Var>& teacher,
                     const std::vector<std::size_t>& layers) {
  if (layers.empty()) throw std::invalid_argument("loss_hidden: the replaced-layer set is empty");
  if (student.size() != teacher.size()) throw std::invalid_argument("loss_hidden: layer counts differ");
  num::Var total;
  for (std::size_t l : layers) {
    if (l >= student.size()) throw std::out_of_range("loss_hidden: layer " + std::to_string(l) + " out of range");
    if (student[l].shape() != teacher[l].shape()) {
      throw std::invalid_argument("loss_hidden: shape mismatch at layer " + std::to_string(l));
    }
    const double n = static_cast<double>(student[l].value().rows());
    const num::Var term = num::scale(num::sum_squares(num::sub(student[l], num::Var(teacher[l].value()))), 1.0 / n);
    total = total.defined() ? num::add(total, term) : term;
  }
  return num::scale(total, 1.0 / static_cast<double>(layers.size()));
}

num::Var loss_hidden(const std::vector<num::Var>& student, const std::vector<num::Var>& teacher) {
  std::vector<std::size_t> all(student.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  return loss_hidden(student, teacher, all);
}

num::Var loss_token_kd(const num::Var& student_logits, const num::Array& teacher_logits, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("loss_token_kd: tau must be > 0");
  if (student_logits.shape() != teacher_logits.shape()) throw std::invalid_argument("loss_token_kd: shape mismatch");
  num::Array scaled = teacher_logits;
  for (auto& v : scaled.values()) v /= tau;
  const num::Array log_pt = num::log_softmax_rows(scaled);
  num::Array pt = log_pt;
  for (auto& v : pt.values()) v = std::exp(v);
  const num::Var log_ps = num::log_softmax_rows(num::scale(student_logits, 1.0 / tau));
  // KL = sum p_T (log p_T - log p_S); entries with p_T == 0 contribute 0.
  const num::Var kl = num::sum(num::mul(num::Var(pt), num::sub(num::Var(log_pt), log_ps)));
  const double rows = static_cast<double>(teacher_logits.rows());
  return num::scale(kl, tau * tau / rows);
}

num::Var loss_sequence_kd(const num::Var& student_logprobs, const std::vector<int>& targets) {
  const num::Array& lp = student_logprobs.value();
  num::require_matrix(lp, "loss_sequence_kd");
  if (targets.empty()) throw std::invalid_argument("loss_sequence_kd: empty target");
  if (targets.size() != lp.rows()) throw std::invalid_argument("loss_sequence_kd: one row per target required");
  num::Array pick(lp.shape(), 0.0);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] < 0 || static_cast<std::size_t>(targets[t]) >= lp.cols()) {
      throw std::out_of_range("loss_sequence_kd: target id " + std::to_string(targets[t]) + " outside vocab");
    }
    pick(t, static_cast<std::size_t>(targets[t])) = 1.0;
  }
  return num::scale(num::sum(num::mul(student_logprobs, num::Var(pick))), -1.0 / static_cast<double>(targets.size()));
}

SupervisedLoss loss_supervised(const num::Var& student_logits, const std::optional<std::vector<int>>& targets) {
  if (!targets || targets->empty()) return {num::Var(num::Array::scalar(0.0)), true};
  return {loss_sequence_kd(num::log_softmax_rows(student_logits), *targets), false};
}

namespace {

num::Var weighted(const num::Var& v, double w) { return num::scale(v, w); }

num::Var accumulate(const num::Var& total, const num::Var& term) {
  return total.defined() ? num::add(total, term) : term;
}

void require(bool ok, int stage, const char* what) {
  if (!ok) throw std::invalid_argument("stage_objective: stage " + std::to_string(stage) + " " + what);
}

}  // namespace

num::Var stage_objective(int stage, const StageLosses& l, const LossWeights& w) {
  w.validate();
  if (stage == 1 || stage == 2) {
    require(l.hid && l.tok, stage, "needs L_hid and L_tok");
    require(!l.seq && !l.sup, stage, "takes no L_seq or L_sup");
    return num::add(weighted(*l.hid, w.lambda_hid), weighted(*l.tok, w.lambda_tok));
  }
  if (stage == 3) {
    require(l.tok && l.seq && l.sup, stage, "needs L_tok, L_seq and L_sup");
    require(!l.hid, stage, "excludes L_hid");
    return num::add(num::add(weighted(*l.tok, w.lambda_tok), weighted(*l.seq, w.lambda_seq)),
                    weighted(*l.sup, w.lambda_sup));
  }
  throw std::invalid_argument("stage_objective: stage must be 1, 2 or 3, got " + std::to_string(stage));
}

num::Var combined_objective(const StageLosses& l, const LossWeights& w) {
  w.validate();
  num::Var total;
  if (l.hid) total = accumulate(total, weighted(*l.hid, w.lambda_hid));
  if (l.tok) total = accumulate(total, weighted(*l.tok, w.lambda_tok));
  if (l.seq) total = accumulate(total, weighted(*l.seq, w.lambda_seq));
  if (l.sup) total = accumulate(total, weighted(*l.sup, w.lambda_sup));
  if (!total.defined()) throw std::invalid_argument("combined_objective: no loss terms");
  return total;
}

double mean_kl(const num::Array& teacher_logits, const num::Array& student_logits) {
  if (teacher_logits.shape() != student_logits.shape()) throw std::invalid_argument("mean_kl: shape mismatch");
  const num::Array lt = num::log_softmax_rows(teacher_logits);
  const num::Array ls = num::log_softmax_rows(student_logits);
  double total = 0.0;
  for (std::size_t i = 0; i < lt.size(); ++i) total += std::exp(lt[i]) * (lt[i] - ls[i]);
  return total / static_cast<double>(lt.rows());
}

}  // namespace mmate::distill
