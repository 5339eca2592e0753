// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "mmate/numerics/tape.hpp"

namespace mmate::distill {

struct LossWeights {
  double lambda_hid = 0.5;
  double lambda_tok = 0.5;
  double lambda_seq = 0.5;
  double lambda_sup = 0.5;
  double tau = 2.0;

  void validate() const;
};

/// (1/|A|) sum_{l in A} (1/N) sum_t ||h_S - h_T||^2. Teacher hiddens are
/// treated as constants.
num::Var loss_hidden(const std::vector<num::Var>& student, const std::vector<num::Var>& teacher,
                     const std::vector<std::size_t>& layers);
/// Same with every layer selected.
num::Var loss_hidden(const std::vector<num::Var>& student, const std::vector<num::Var>& teacher);

/// (tau^2 / T) sum_t KL(softmax(z_T / tau) || softmax(z_S / tau)) over T rows.
num::Var loss_token_kd(const num::Var& student_logits, const num::Array& teacher_logits, double tau);

/// -(1/T) sum_t log p_S(target_t) from per-row log-probabilities [T x V].
num::Var loss_sequence_kd(const num::Var& student_logprobs, const std::vector<int>& targets);

struct SupervisedLoss {
  num::Var value;
  bool missing_ground_truth = false;
};
/// Cross-entropy of logits [T x V] against ground truth; a missing target
/// contributes 0 and is flagged.
SupervisedLoss loss_supervised(const num::Var& student_logits, const std::optional<std::vector<int>>& targets);

struct StageLosses {
  std::optional<num::Var> hid, tok, seq, sup;
};

/// Stages 1 and 2: lambda_hid L_hid + lambda_tok L_tok.
/// Stage 3: lambda_tok L_tok + lambda_seq L_seq + lambda_sup L_sup.
/// Throws when a required term is absent or an excluded term is present.
num::Var stage_objective(int stage, const StageLosses& losses, const LossWeights& weights);

/// Weighted sum of every present term (used by the single-stage schedule).
num::Var combined_objective(const StageLosses& losses, const LossWeights& weights);

/// Mean over rows of KL(softmax(teacher) || softmax(student)) at temperature 1.
double mean_kl(const num::Array& teacher_logits, const num::Array& student_logits);

}  // namespace mmate::distill
