// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mmate/numerics/random.hpp"
#include "mmate/sequence.hpp"

namespace mmate::distill {

/// Token ids of the synthetic vision-language task. Vision tokens encode a
/// class and an appearance variant; questions are answered with a single
/// token followed by kEos.
namespace tokens {
inline constexpr int kEos = 0;
inline constexpr int kSep = 1;
inline constexpr int kAskMajority = 2;
inline constexpr int kAskCount = 3;
inline constexpr int kAskPresent = 4;
inline constexpr int kClassBase = 8;    // 8 classes
inline constexpr int kNumberBase = 16;  // 0..15
inline constexpr int kYes = 32;
inline constexpr int kNo = 33;
inline constexpr int kVisionBase = 64;  // 64 + class * 8 + variant
inline constexpr int kClasses = 8;
inline constexpr int kVariants = 8;
inline constexpr std::size_t kVocab = 128;

inline constexpr int vision(int cls, int variant) { return kVisionBase + cls * kVariants + variant; }
}  // namespace tokens

enum class QuestionKind { kMajority, kCount, kPresent };

struct ToySample {
  GridShape grid;            // text_tokens counts prompt text only
  std::vector<int> prompt;   // vision tokens, then question tokens
  std::vector<int> answer;   // answer token, kEos
  QuestionKind kind = QuestionKind::kMajority;

  /// Prompt plus all but the last answer token laid out on `grid`.
  std::vector<int> teacher_forced() const;
  GridShape teacher_forced_shape() const;
  /// Rows of the teacher-forced sequence whose next-token targets are the
  /// answer tokens.
  std::vector<std::size_t> answer_rows() const;
};

/// Sampler over grids of 1x4x4 or 2x3x3 vision tokens and three question
/// forms (majority class, class count, class presence).
class ToyTask {
 public:
  explicit ToyTask(std::uint64_t seed) : rng_(seed) {}

  ToySample sample();
  std::vector<ToySample> batch(std::size_t n);

  /// Answer implied by the vision tokens; used to build and to check samples.
  static std::vector<int> solve(const std::vector<int>& vision, QuestionKind kind, int queried_class);

 private:
  num::Rng rng_;
};

/// Fixed evaluation set drawn from its own stream.
std::vector<ToySample> make_eval_set(std::uint64_t seed, std::size_t n);

}  // namespace mmate::distill
