// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmate/distill/losses.hpp"
#include "mmate/distill/optimizer.hpp"
#include "mmate/distill/toy_task.hpp"
#include "mmate/model/model.hpp"

namespace mmate::distill {

struct TeacherPlan {
  std::size_t steps = 400;
  std::size_t batch = 8;
  double lr = 1e-3;
};

struct DistillPlan {
  std::array<std::size_t, 3> steps{300, 450, 750};
  std::size_t batch = 8;
  double lr_stage12 = 5e-4;
  double lr_stage3 = 2e-5;
  /// Multiplies both stage learning rates.
  double lr_scale = 1.0;
  LossWeights weights;
  AdamWConfig adam;  // lr is taken from the stage
  std::size_t lora_rank = 8;
  /// Stage 1 runs Flex-MA alone instead of keeping a frozen window branch.
  bool disable_swin_stage1 = false;
  /// Reuse teacher pseudo-targets for prompts seen before.
  bool cache_pseudo_targets = false;
  std::uint64_t seed = 0;
  std::size_t eval_samples = 64;
  TeacherPlan teacher;

  void validate() const;
  double stage_lr(int stage) const;
  std::size_t total_steps() const { return steps[0] + steps[1] + steps[2]; }
};

/// Parameter groups updated in a stage (1, 2 or 3).
std::vector<model::ParamGroup> stage_groups(int stage);

/// Stage id used in traces for the single-stage schedule.
inline constexpr int kSingleStage = 0;

struct TraceRow {
  std::size_t step = 0;
  int stage = 0;
  double hid = 0.0, tok = 0.0, seq = 0.0, sup = 0.0;  // NaN when the term is absent
  double objective = 0.0;
};

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows);
std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path);

class DistillError : public std::runtime_error {
 public:
  DistillError(const std::string& what, int stage, std::size_t step)
      : std::runtime_error(what), stage_(stage), step_(step) {}
  int stage() const noexcept { return stage_; }
  std::size_t step() const noexcept { return step_; }

 private:
  int stage_;
  std::size_t step_;
};

struct Student {
  model::Model model;
  int completed_stage = 0;
};

/// Student initialized from the teacher with seed-derived randomness.
Student make_student(const model::Model& teacher, std::uint64_t seed);

/// Teacher built and trained with cross-entropy on the task's answers.
model::Model pretrain_teacher(const model::ModelConfig& config, const DistillPlan& plan,
                              std::vector<TraceRow>* trace = nullptr);

/// Runs one stage. Stages must follow each other unless `out_of_order` is set.
/// Throws DistillError on a non-finite objective.
void run_stage(Student& student, const model::Model& teacher, int stage, const DistillPlan& plan,
               std::vector<TraceRow>* trace = nullptr, bool out_of_order = false);

/// All stage-3 parameters and all four losses for the summed step budget at
/// the stage 1 and 2 learning rate.
void run_single_stage(Student& student, const model::Model& teacher, const DistillPlan& plan,
                      std::vector<TraceRow>* trace = nullptr);

/// Mean teacher-to-student token KL at temperature 1 over answer positions.
double evaluate_kl(const model::Model& student, const model::Model& teacher, const std::vector<ToySample>& eval);
/// Fraction of samples whose first answer token is predicted greedily.
double answer_accuracy(const model::Model& model, const std::vector<ToySample>& eval);

struct AblationResult {
  double teacher_accuracy = 0.0;
  std::array<double, 3> kl_after_stage{};  // 1, 1+2, 1+2+3
  double kl_single_stage = 0.0;
  double kl_initial = 0.0;
  double kl_flex_only = 0.0;
  double kl_swin_only = 0.0;
};

/// Teacher pretraining, the staged schedule, the single-stage schedule from
/// the same initialization, and single-branch evaluations of the final
/// student.
AblationResult run_ablation(const model::ModelConfig& config, const DistillPlan& plan);

}  // namespace mmate::distill
