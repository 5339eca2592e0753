// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmate/flex_ma/flex_ma.hpp"
#include "mmate/local_swin/local_swin.hpp"
#include "mmate/model/attention.hpp"
#include "mmate/numerics/random.hpp"
#include "mmate/numerics/tape.hpp"
#include "mmate/sequence.hpp"

namespace mmate::model {

struct ModelConfig {
  std::size_t vocab = 128;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t d_ff = 256;
  swin::WindowConfig window;
  flex::ScanOptions scan;

  std::size_t d_head() const { return d_model / heads; }
  void validate() const;
};

enum class MixerKind { kAttention, kMMate };

/// Which M-MATE branches contribute. Single-branch modes drop the fusion
/// weight and normalize the remaining branch alone.
enum class BranchMode { kDual, kFlexOnly, kSwinOnly };

struct MMateParams {
  flex::FlexMAParams flex;
  swin::SwinParams swin;
  num::Var fusion_logit;  // [1], lambda = sigmoid(logit)
  num::Var norm_gamma;    // [d]
  num::Var norm_beta;     // [d]
};

num::Var mmate_forward(const TokenSequence& seq, std::size_t layer, const MMateParams& params,
                       const swin::WindowConfig& window, const flex::ScanOptions& scan = {},
                       BranchMode mode = BranchMode::kDual);

/// Weight-reuse initialization from one teacher attention layer. Both scan
/// directions take W_C <- W_Q, W_B <- W_K, W_X <- W_V and share W_o <- W_O; the
/// window branch copies all four projections. Everything else is drawn from
/// the standard initializers using `rng`.
MMateParams init_from_teacher(const AttentionParams& teacher, const ModelConfig& config, num::Rng& rng);

/// Low-rank update B A, scaled by alpha / rank.
struct LoraAdapter {
  num::Var a;  // [r x d_in]
  num::Var b;  // [d_out x r]
  std::size_t rank = 0;
  double alpha = 0.0;
};

/// A ~ N(0, 1/d_in), B = 0, alpha = rank.
LoraAdapter init_lora(std::size_t d_in, std::size_t d_out, std::size_t rank, num::Rng& rng);
/// W + (alpha / r) B A. W itself is never modified.
num::Var lora_apply(const num::Var& w, const LoraAdapter& adapter);

struct FeedForward {
  num::Var w1, b1;  // [d_ff x d], [d_ff]
  num::Var w2, b2;  // [d x d_ff], [d]
  std::optional<LoraAdapter> lora1, lora2;
};

struct Layer {
  num::Var norm1_gamma, norm1_beta;
  num::Var norm2_gamma, norm2_beta;
  AttentionParams attention;  // teacher mixer
  MMateParams mmate;          // student mixer
  FeedForward ffn;
};

enum class ParamGroup { kEmbedding, kBackbone, kHead, kAttention, kFlex, kSwin, kFusion, kLora };
const char* group_name(ParamGroup group);

struct NamedParameter {
  std::string name;
  ParamGroup group;
  num::Var var;
};

struct ForwardResult {
  num::Var logits;                    // [N x vocab]
  std::vector<num::Var> mixer_outputs;  // per layer, [N x d], before the residual add
};

class Model {
 public:
  Model() = default;
  Model(ModelConfig config, MixerKind kind);

  /// Teacher with freshly initialized weights.
  static Model teacher(const ModelConfig& config, num::Rng& rng);
  /// Student whose backbone is copied from `teacher` and whose mixers are
  /// initialized by weight reuse.
  static Model student_from(const Model& teacher, num::Rng& rng);

  const ModelConfig& config() const noexcept { return config_; }
  MixerKind kind() const noexcept { return kind_; }
  BranchMode branch_mode() const noexcept { return branch_; }
  void set_branch_mode(BranchMode mode) { branch_ = mode; }

  std::vector<Layer>& layers() noexcept { return layers_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  num::Var& embedding() noexcept { return embedding_; }
  const num::Var& embedding() const noexcept { return embedding_; }
  num::Var& head() noexcept { return head_; }

  /// Every parameter with a stable name and its group.
  std::vector<NamedParameter> parameters() const;
  /// Deep copy; parameters of the copy are independent leaves.
  Model clone() const;

  /// Rank-r adapters on both FFN linears of every layer.
  void attach_lora(std::size_t rank, num::Rng& rng);
  bool has_lora() const;

  /// Enables gradients exactly for the parameters whose group is listed.
  void set_trainable(const std::vector<ParamGroup>& groups);

  ForwardResult forward(const TokenSequence& seq) const;

 private:
  // Calls f(name, group, Var&) for every parameter slot in a fixed order.
  template <typename Self, typename F>
  static void visit(Self& self, F&& f);

  ModelConfig config_;
  MixerKind kind_ = MixerKind::kAttention;
  BranchMode branch_ = BranchMode::kDual;
  num::Var embedding_;  // [vocab x d]
  std::vector<Layer> layers_;
  num::Var final_gamma_, final_beta_;
  num::Var head_;  // [vocab x d]
};

/// Sequence for token ids laid out as `shape` (vision block then text).
TokenSequence token_sequence(std::vector<int> ids, const GridShape& shape);

ForwardResult model_forward(const Model& model, const TokenSequence& seq);

/// Greedy decoding with a full forward per generated token. Stops after
/// max_len tokens or right after emitting `eos` (which is included).
std::vector<int> decode_greedy(const Model& model, const TokenSequence& prompt, std::size_t max_len,
                               std::optional<int> eos = std::nullopt);

/// Contraction count of one forward of a model with `config` and mixer
/// `kind` over `shape` (no adapters).
std::uint64_t forward_flops(const ModelConfig& config, MixerKind kind, const GridShape& shape);

/// Index of the largest entry of row r; ties resolve to the lowest index.
int argmax_row(const num::Array& logits, std::size_t r);

}  // namespace mmate::model
