// SPDX-License-Identifier: Apache-2.0
#include "mmate/distill/trainer.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "mmate/numerics/ops.hpp"

namespace mmate::distill {
namespace {

using model::ParamGroup;

constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

// Stream ids under the run seed.
constexpr std::uint64_t kTeacherInit = 1;
constexpr std::uint64_t kTeacherData = 2;
constexpr std::uint64_t kStudentInit = 3;
constexpr std::uint64_t kLoraInit = 4;
constexpr std::uint64_t kStageData = 10;  // + stage

struct Terms {
  bool hid = false, tok = false, seq = false, sup = false;
};

Terms stage_terms(int stage) {
  if (stage == 1 || stage == 2) return {true, true, false, false};
  if (stage == 3) return {false, true, true, true};
  return {true, true, true, true};
}

using PseudoCache = std::map<std::vector<int>, std::vector<int>>;

std::vector<int> pseudo_target(const model::Model& teacher, const ToySample& s, PseudoCache* cache) {
  if (cache) {
    if (auto it = cache->find(s.prompt); it != cache->end()) return it->second;
  }
  auto out = model::decode_greedy(teacher, model::token_sequence(s.prompt, s.grid), s.answer.size(), tokens::kEos);
  if (cache) cache->emplace(s.prompt, out);
  return out;
}

std::vector<std::size_t> shifted_rows(const ToySample& s, std::size_t n) {
  std::vector<std::size_t> rows(n);
  for (std::size_t i = 0; i < n; ++i) rows[i] = s.prompt.size() - 1 + i;
  return rows;
}

StageLosses sample_losses(const model::Model& student, const model::Model& teacher, const ToySample& s,
                          const Terms& terms, double tau, PseudoCache* cache) {
  const auto seq = model::token_sequence(s.teacher_forced(), s.teacher_forced_shape());
  const auto rows = s.answer_rows();
  model::ForwardResult t;
  {
    num::NoGradGuard guard;
    t = teacher.forward(seq);
  }
  const model::ForwardResult st = student.forward(seq);
  const num::Var s_ans = num::gather_rows(st.logits, rows);

  StageLosses l;
  if (terms.hid) l.hid = loss_hidden(st.mixer_outputs, t.mixer_outputs);
  if (terms.tok) l.tok = loss_token_kd(s_ans, num::gather_rows(t.logits, rows).value(), tau);
  if (terms.sup) l.sup = loss_supervised(s_ans, s.answer).value;
  if (terms.seq) {
    const std::vector<int> target = pseudo_target(teacher, s, cache);
    std::vector<int> ids = s.prompt;
    ids.insert(ids.end(), target.begin(), target.end() - 1);
    num::Var logits = st.logits;
    if (ids != *seq.token_ids) {
      GridShape shape = s.grid;
      shape.text_tokens += target.size() - 1;
      logits = student.forward(model::token_sequence(std::move(ids), shape)).logits;
    }
    const auto prows = shifted_rows(s, target.size());
    l.seq = loss_sequence_kd(num::log_softmax_rows(num::gather_rows(logits, prows)), target);
  }
  return l;
}

double value_or_absent(const std::optional<num::Var>& v) { return v ? v->value()[0] : kAbsent; }

std::vector<num::Var> trainable(const model::Model& m) {
  std::vector<num::Var> out;
  for (const auto& p : m.parameters()) {
    if (p.var.requires_grad()) out.push_back(p.var);
  }
  return out;
}

// Shared loop of the staged and single-stage schedules.
void train(model::Model& student, const model::Model& teacher, int stage_id, const Terms& terms, std::size_t steps,
           double lr, std::uint64_t data_seed, const DistillPlan& plan, std::vector<TraceRow>* trace) {
  AdamWConfig adam = plan.adam;
  adam.lr = lr;
  AdamW opt(trainable(student), adam);
  if (opt.params().empty()) throw std::logic_error("distill: no trainable parameters");
  ToyTask task(data_seed);
  PseudoCache cache;
  const double inv = 1.0 / static_cast<double>(plan.batch);
  const bool sums = terms.hid && terms.tok && terms.seq && terms.sup;

  for (std::size_t step = 0; step < steps; ++step) {
    num::Tape tape;
    num::Var objective;
    TraceRow row{step, stage_id, 0.0, 0.0, 0.0, 0.0, 0.0};
    try {
      for (const ToySample& s : task.batch(plan.batch)) {
        const StageLosses l = sample_losses(student, teacher, s, terms, plan.weights.tau,
                                            plan.cache_pseudo_targets ? &cache : nullptr);
        const num::Var o = sums ? combined_objective(l, plan.weights) : stage_objective(stage_id, l, plan.weights);
        objective = objective.defined() ? num::add(objective, o) : o;
        row.hid += value_or_absent(l.hid) * inv;
        row.tok += value_or_absent(l.tok) * inv;
        row.seq += value_or_absent(l.seq) * inv;
        row.sup += value_or_absent(l.sup) * inv;
      }
    } catch (const std::exception& e) {
      // Non-finite weights usually surface inside a softmax.
      throw DistillError("distill: stage " + std::to_string(stage_id) + " failed at step " + std::to_string(step) +
                             ": " + e.what(),
                         stage_id, step);
    }
    objective = num::scale(objective, inv);
    row.objective = objective.value()[0];
    if (trace) trace->push_back(row);
    if (!std::isfinite(row.objective)) {
      throw DistillError("distill: non-finite objective in stage " + std::to_string(stage_id) + " at step " +
                             std::to_string(step),
                         stage_id, step);
    }
    tape.backward(objective);
    opt.step(tape);
  }
}

void ensure_lora(model::Model& m, const DistillPlan& plan) {
  if (m.has_lora()) return;
  num::Rng rng = num::Rng::derive(plan.seed, kLoraInit);
  m.attach_lora(plan.lora_rank, rng);
}

}  // namespace

void DistillPlan::validate() const {
  if (batch == 0) throw std::invalid_argument("DistillPlan: batch must be >= 1");
  if (!(lr_stage12 > 0.0) || !(lr_stage3 > 0.0) || !(lr_scale > 0.0)) {
    throw std::invalid_argument("DistillPlan: learning rates must be > 0");
  }
  if (lora_rank == 0) throw std::invalid_argument("DistillPlan: lora_rank must be >= 1");
  if (eval_samples == 0) throw std::invalid_argument("DistillPlan: eval_samples must be >= 1");
  if (teacher.batch == 0 || !(teacher.lr > 0.0)) throw std::invalid_argument("DistillPlan: bad teacher plan");
  weights.validate();
  adam.validate();
}

double DistillPlan::stage_lr(int stage) const {
  return (stage == 3 ? lr_stage3 : lr_stage12) * lr_scale;
}

std::vector<ParamGroup> stage_groups(int stage) {
  switch (stage) {
    case 1: return {ParamGroup::kFlex};
    case 2: return {ParamGroup::kFlex, ParamGroup::kSwin};
    case 3: return {ParamGroup::kFlex, ParamGroup::kSwin, ParamGroup::kFusion, ParamGroup::kLora};
    default: throw std::invalid_argument("stage_groups: stage must be 1, 2 or 3, got " + std::to_string(stage));
  }
}

void write_trace_csv(const std::filesystem::path& path, const std::vector<TraceRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trace_csv: cannot open " + path.string());
  out << "step,stage,L_hid,L_tok,L_seq,L_sup,objective\n";
  out.precision(17);
  for (const auto& r : rows) {
    out << r.step << ',' << r.stage << ',' << r.hid << ',' << r.tok << ',' << r.seq << ',' << r.sup << ','
        << r.objective << '\n';
  }
  if (!out) throw std::runtime_error("write_trace_csv: write failed for " + path.string());
}

std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_trace_csv: cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "step,stage,L_hid,L_tok,L_seq,L_sup,objective") throw std::runtime_error("read_trace_csv: bad header");
  std::vector<TraceRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[7];
    for (auto& field : f) {
      if (!std::getline(ss, field, ',')) throw std::runtime_error("read_trace_csv: short row: " + line);
    }
    rows.push_back({std::stoull(f[0]), std::stoi(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                    std::stod(f[5]), std::stod(f[6])});
  }
  return rows;
}

Student make_student(const model::Model& teacher, std::uint64_t seed) {
  num::Rng rng = num::Rng::derive(seed, kStudentInit);
  return {model::Model::student_from(teacher, rng), 0};
}

model::Model pretrain_teacher(const model::ModelConfig& config, const DistillPlan& plan, std::vector<TraceRow>* trace) {
  plan.validate();
  num::Rng rng = num::Rng::derive(plan.seed, kTeacherInit);
  model::Model teacher = model::Model::teacher(config, rng);
  teacher.set_trainable({ParamGroup::kEmbedding, ParamGroup::kBackbone, ParamGroup::kHead, ParamGroup::kAttention});
  AdamWConfig adam = plan.adam;
  adam.lr = plan.teacher.lr;
  AdamW opt(trainable(teacher), adam);
  ToyTask task(num::Rng::derive(plan.seed, kTeacherData).engine()());
  const double inv = 1.0 / static_cast<double>(plan.teacher.batch);
  for (std::size_t step = 0; step < plan.teacher.steps; ++step) {
    num::Tape tape;
    num::Var loss;
    for (const ToySample& s : task.batch(plan.teacher.batch)) {
      const auto r = teacher.forward(model::token_sequence(s.teacher_forced(), s.teacher_forced_shape()));
      const num::Var ce = loss_supervised(num::gather_rows(r.logits, s.answer_rows()), s.answer).value;
      loss = loss.defined() ? num::add(loss, ce) : ce;
    }
    loss = num::scale(loss, inv);
    const double v = loss.value()[0];
    if (trace) trace->push_back({step, -1, kAbsent, kAbsent, kAbsent, v, v});
    if (!std::isfinite(v)) throw DistillError("pretrain_teacher: non-finite loss at step " + std::to_string(step), -1, step);
    tape.backward(loss);
    opt.step(tape);
  }
  teacher.set_trainable({});
  return teacher;
}

void run_stage(Student& student, const model::Model& teacher, int stage, const DistillPlan& plan,
               std::vector<TraceRow>* trace, bool out_of_order) {
  plan.validate();
  const auto groups = stage_groups(stage);
  if (!out_of_order && student.completed_stage != stage - 1) {
    throw std::logic_error("run_stage: stage " + std::to_string(stage) + " needs stage " + std::to_string(stage - 1) +
                           " first (completed " + std::to_string(student.completed_stage) + ")");
  }
  if (student.model.kind() != model::MixerKind::kMMate) throw std::invalid_argument("run_stage: not a student");
  if (stage == 3) ensure_lora(student.model, plan);
  student.model.set_trainable(groups);
  const model::BranchMode saved = student.model.branch_mode();
  if (stage == 1 && plan.disable_swin_stage1) student.model.set_branch_mode(model::BranchMode::kFlexOnly);
  const std::uint64_t data = num::Rng::derive(plan.seed, kStageData + static_cast<std::uint64_t>(stage)).engine()();
  try {
    train(student.model, teacher, stage, stage_terms(stage), plan.steps[static_cast<std::size_t>(stage - 1)],
          plan.stage_lr(stage), data, plan, trace);
  } catch (...) {
    student.model.set_branch_mode(saved);
    student.model.set_trainable({});
    throw;
  }
  student.model.set_branch_mode(saved);
  student.model.set_trainable({});
  student.completed_stage = std::max(student.completed_stage, stage);
}

void run_single_stage(Student& student, const model::Model& teacher, const DistillPlan& plan,
                      std::vector<TraceRow>* trace) {
  plan.validate();
  ensure_lora(student.model, plan);
  student.model.set_trainable(stage_groups(3));
  const std::uint64_t data = num::Rng::derive(plan.seed, kStageData).engine()();
  train(student.model, teacher, kSingleStage, stage_terms(kSingleStage), plan.total_steps(), plan.stage_lr(1), data,
        plan, trace);
  student.model.set_trainable({});
  student.completed_stage = 3;
}

double evaluate_kl(const model::Model& student, const model::Model& teacher, const std::vector<ToySample>& eval) {
  if (eval.empty()) throw std::invalid_argument("evaluate_kl: empty evaluation set");
  num::NoGradGuard guard;
  double total = 0.0;
  std::size_t rows = 0;
  for (const ToySample& s : eval) {
    const auto seq = model::token_sequence(s.teacher_forced(), s.teacher_forced_shape());
    const auto r = s.answer_rows();
    const num::Array t = num::gather_rows(teacher.forward(seq).logits, r).value();
    const num::Array st = num::gather_rows(student.forward(seq).logits, r).value();
    total += mean_kl(t, st) * static_cast<double>(r.size());
    rows += r.size();
  }
  return total / static_cast<double>(rows);
}

double answer_accuracy(const model::Model& m, const std::vector<ToySample>& eval) {
  if (eval.empty()) throw std::invalid_argument("answer_accuracy: empty evaluation set");
  num::NoGradGuard guard;
  std::size_t hits = 0;
  for (const ToySample& s : eval) {
    const auto r = m.forward(model::token_sequence(s.prompt, s.grid));
    hits += model::argmax_row(r.logits.value(), s.prompt.size() - 1) == s.answer[0];
  }
  return static_cast<double>(hits) / static_cast<double>(eval.size());
}

AblationResult run_ablation(const model::ModelConfig& config, const DistillPlan& plan) {
  AblationResult out;
  const model::Model teacher = pretrain_teacher(config, plan);
  const auto eval = make_eval_set(plan.seed, plan.eval_samples);
  out.teacher_accuracy = answer_accuracy(teacher, eval);

  Student staged = make_student(teacher, plan.seed);
  Student single{staged.model.clone(), 0};
  out.kl_initial = evaluate_kl(staged.model, teacher, eval);
  for (int stage = 1; stage <= 3; ++stage) {
    run_stage(staged, teacher, stage, plan);
    out.kl_after_stage[static_cast<std::size_t>(stage - 1)] = evaluate_kl(staged.model, teacher, eval);
  }
  run_single_stage(single, teacher, plan);
  out.kl_single_stage = evaluate_kl(single.model, teacher, eval);

  model::Model probe = staged.model.clone();
  probe.set_branch_mode(model::BranchMode::kFlexOnly);
  out.kl_flex_only = evaluate_kl(probe, teacher, eval);
  probe.set_branch_mode(model::BranchMode::kSwinOnly);
  out.kl_swin_only = evaluate_kl(probe, teacher, eval);
  return out;
}

}  // namespace mmate::distill
