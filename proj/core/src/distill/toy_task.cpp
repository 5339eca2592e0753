// SPDX-License-Identifier: Apache-2.0
#include "mmate/distill/toy_task.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace mmate::distill {
namespace {

int class_of(int id) { return (id - tokens::kVisionBase) / tokens::kVariants; }

std::array<int, tokens::kClasses> histogram(const std::vector<int>& vision) {
  std::array<int, tokens::kClasses> counts{};
  for (int id : vision) {
    if (id < tokens::kVisionBase || id >= tokens::kVisionBase + tokens::kClasses * tokens::kVariants) {
      throw std::invalid_argument("ToyTask: not a vision token");
    }
    ++counts[static_cast<std::size_t>(class_of(id))];
  }
  return counts;
}

}  // namespace

std::vector<int> ToySample::teacher_forced() const {
  std::vector<int> ids = prompt;
  ids.insert(ids.end(), answer.begin(), answer.end() - 1);
  return ids;
}

GridShape ToySample::teacher_forced_shape() const {
  GridShape s = grid;
  s.text_tokens += answer.size() - 1;
  return s;
}

std::vector<std::size_t> ToySample::answer_rows() const {
  std::vector<std::size_t> rows(answer.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = prompt.size() - 1 + i;
  return rows;
}

std::vector<int> ToyTask::solve(const std::vector<int>& vision, QuestionKind kind, int queried_class) {
  const auto counts = histogram(vision);
  int answer = tokens::kEos;
  switch (kind) {
    case QuestionKind::kMajority: {
      const auto it = std::max_element(counts.begin(), counts.end());
      if (std::count(counts.begin(), counts.end(), *it) != 1) {
        throw std::invalid_argument("ToyTask: majority is not unique");
      }
      answer = tokens::kClassBase + static_cast<int>(it - counts.begin());
      break;
    }
    case QuestionKind::kCount: {
      const int c = counts.at(static_cast<std::size_t>(queried_class));
      if (c > 15) throw std::invalid_argument("ToyTask: count exceeds number tokens");
      answer = tokens::kNumberBase + c;
      break;
    }
    case QuestionKind::kPresent:
      answer = counts.at(static_cast<std::size_t>(queried_class)) > 0 ? tokens::kYes : tokens::kNo;
      break;
  }
  return {answer, tokens::kEos};
}

ToySample ToyTask::sample() {
  ToySample s;
  s.grid = rng_.integer(0, 1) == 0 ? GridShape{1, 4, 4, 0, false} : GridShape{2, 3, 3, 0, false};
  const std::size_t n = s.grid.vision_tokens();
  s.kind = static_cast<QuestionKind>(rng_.integer(0, 2));

  // Few classes per image so counts and majorities are not degenerate.
  const int used = static_cast<int>(rng_.integer(2, 4));
  std::array<int, tokens::kClasses> perm{};
  for (int i = 0; i < tokens::kClasses; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng_.engine());

  std::vector<int> vision(n);
  for (;;) {
    for (auto& id : vision) {
      const int cls = perm[static_cast<std::size_t>(rng_.integer(0, used - 1))];
      id = tokens::vision(cls, static_cast<int>(rng_.integer(0, tokens::kVariants - 1)));
    }
    const auto counts = histogram(vision);
    const int top = *std::max_element(counts.begin(), counts.end());
    if (top > 15) continue;
    if (s.kind != QuestionKind::kMajority || std::count(counts.begin(), counts.end(), top) == 1) break;
  }

  int queried = -1;
  s.prompt = vision;
  s.prompt.push_back(tokens::kSep);
  if (s.kind == QuestionKind::kMajority) {
    s.prompt.push_back(tokens::kAskMajority);
  } else {
    // Presence questions ask about an absent class half of the time.
    const bool absent = s.kind == QuestionKind::kPresent && rng_.integer(0, 1) == 1;
    queried = perm[static_cast<std::size_t>(absent ? rng_.integer(used, tokens::kClasses - 1) : rng_.integer(0, used - 1))];
    s.prompt.push_back(s.kind == QuestionKind::kCount ? tokens::kAskCount : tokens::kAskPresent);
    s.prompt.push_back(tokens::kClassBase + queried);
  }
  s.grid.text_tokens = s.prompt.size() - n;
  s.answer = solve(vision, s.kind, queried);
  return s;
}

std::vector<ToySample> ToyTask::batch(std::size_t n) {
  std::vector<ToySample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample());
  return out;
}

std::vector<ToySample> make_eval_set(std::uint64_t seed, std::size_t n) {
  ToyTask task(num::Rng::derive(seed, 0xE7A1).engine()());
  return task.batch(n);
}

}  // namespace mmate::distill
