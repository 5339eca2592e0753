// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>

#include "mmate/model/checkpoint.hpp"
#include "mmate/model/model.hpp"
#include "mmate/numerics/gradcheck.hpp"
#include "mmate/numerics/kernels.hpp"
#include "mmate/numerics/ops.hpp"
#include "oracles.hpp"

using namespace mmate;
using namespace mmate::model;

namespace {

oracle::Matrix m(const num::Var& v) { return oracle::to_matrix(v.value()); }

ModelConfig tiny_config() {
  ModelConfig c;
  c.vocab = 16;
  c.d_model = 8;
  c.heads = 2;
  c.layers = 2;
  c.d_ff = 16;
  return c;
}

GridShape grid(std::size_t t, std::size_t h, std::size_t w, std::size_t text) {
  GridShape g;
  g.frames = t;
  g.height = h;
  g.width = w;
  g.text_tokens = text;
  return g;
}

std::vector<int> random_ids(std::size_t n, std::size_t vocab, num::Rng& rng) {
  std::vector<int> ids(n);
  for (auto& id : ids) id = static_cast<int>(rng.integer(0, static_cast<std::int64_t>(vocab) - 1));
  return ids;
}

}  // namespace

TEST(Attention, SingleTokenIsValueThenOutput) {
  num::Rng rng(1);
  const auto p = init_attention(6, rng);
  const num::Var x(num::randn({1, 6}, rng));
  const num::Array expect = num::linear(num::linear(x, p.w_v), p.w_o).value();
  EXPECT_LT(num::max_abs_diff(attention_forward(x, p, 3).value(), expect), 1e-14);
}

TEST(Attention, MatchesDenseCausalOracle) {
  num::Rng rng(2);
  const auto p = init_attention(6, rng);
  for (std::size_t n : {8u, 37u}) {
    const num::Var x(num::randn({n, 6}, rng));
    const num::Array ref = oracle::from_matrix(oracle::attention(m(x), m(p.w_q), m(p.w_k), m(p.w_v), m(p.w_o), 3,
                                                                 [](std::size_t i, std::size_t j) { return j <= i; }));
    EXPECT_LT(num::max_abs_diff(attention_forward(x, p, 3).value(), ref), 1e-10);
    const num::Var blocked = num::linear(
        causal_attention(num::linear(x, p.w_q), num::linear(x, p.w_k), num::linear(x, p.w_v), 3, 5), p.w_o);
    EXPECT_LT(num::max_abs_diff(blocked.value(), ref), 1e-10);
  }
}

TEST(Attention, LaterTokensDoNotLeak) {
  num::Rng rng(3);
  const auto p = init_attention(4, rng);
  num::Array x = num::randn({6, 4}, rng);
  const num::Array before = attention_forward(num::Var(x), p, 2).value();
  for (std::size_t c = 0; c < 4; ++c) x(4, c) += 1.0;
  const num::Array after = attention_forward(num::Var(x), p, 2).value();
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(before(r, c), after(r, c));
}

TEST(Attention, FlopsAreExactlyQuadratic) {
  num::Rng rng(4);
  const auto p = init_attention(8, rng);
  for (std::size_t n : {1u, 7u, 130u, 300u}) {
    const num::Var x(num::randn({n, 8}, rng));
    num::reset_flops();
    (void)attention_forward(x, p, 2);
    EXPECT_EQ(num::flop_count(), attention_layer_flops(n, 8));
    EXPECT_EQ(attention_layer_flops(n, 8), 8ULL * n * 64 + 16ULL * n * (n + 1));
  }
}

TEST(Attention, GradientCheck) {
  num::Rng rng(5);
  const auto p = init_attention(4, rng);
  const num::Var x = num::Var::parameter(num::randn({9, 4}, rng));
  const num::Var probe(num::randn({9, 4}, rng));
  const auto report = num::check_gradients(
      [&] {
        return num::sum(num::mul(
            num::linear(causal_attention(num::linear(x, p.w_q), num::linear(x, p.w_k), num::linear(x, p.w_v), 2, 4),
                        p.w_o),
            probe));
      },
      {{"x", x}, {"w_q", p.w_q}, {"w_k", p.w_k}, {"w_v", p.w_v}, {"w_o", p.w_o}});
  EXPECT_LT(report.max_rel_error(), 1e-4);
}

TEST(MMate, SaturatedFusionSelectsOneBranch) {
  num::Rng rng(6);
  const ModelConfig c = tiny_config();
  const auto teacher = init_attention(8, rng);
  auto p = init_from_teacher(teacher, c, rng);
  const GridShape g = grid(1, 2, 3, 3);
  const TokenSequence seq{num::Var(num::randn({9, 8}, rng)), g, std::nullopt};
  const num::Array flex_only =
      num::layer_norm(flex::flex_ma_forward(seq, 1, p.flex), p.norm_gamma, p.norm_beta).value();
  const num::Array swin_only =
      num::layer_norm(swin::local_swin_forward(seq, 1, p.swin, c.window), p.norm_gamma, p.norm_beta).value();
  p.fusion_logit = num::Var::parameter(num::Array({1}, 800.0));
  EXPECT_LT(num::max_abs_diff(mmate_forward(seq, 1, p, c.window).value(), flex_only), 1e-9);
  p.fusion_logit = num::Var::parameter(num::Array({1}, -800.0));
  EXPECT_LT(num::max_abs_diff(mmate_forward(seq, 1, p, c.window).value(), swin_only), 1e-9);
  EXPECT_TRUE(num::bitwise_equal(mmate_forward(seq, 1, p, c.window, {}, BranchMode::kFlexOnly).value(), flex_only));
  EXPECT_TRUE(num::bitwise_equal(mmate_forward(seq, 1, p, c.window, {}, BranchMode::kSwinOnly).value(), swin_only));
}

TEST(MMate, DropInShapeContract) {
  num::Rng rng(7);
  for (std::size_t d : {4u, 8u, 12u}) {
    ModelConfig c = tiny_config();
    c.d_model = d;
    const auto teacher = init_attention(d, rng);
    const auto p = init_from_teacher(teacher, c, rng);
    for (const GridShape g : {grid(1, 3, 3, 0), grid(2, 2, 3, 4), GridShape::text(5)}) {
      const num::Var x(num::randn({g.total_tokens(), d}, rng));
      const TokenSequence seq{x, g, std::nullopt};
      EXPECT_EQ(mmate_forward(seq, 0, p, c.window).shape(), attention_forward(x, teacher, 2).shape());
    }
  }
}

TEST(MMate, WeightReuseCopiesExactly) {
  num::Rng rng(8);
  const ModelConfig c = tiny_config();
  const auto t = init_attention(8, rng);
  const auto p = init_from_teacher(t, c, rng);
  for (const auto* dir : {&p.flex.forward, &p.flex.reverse}) {
    EXPECT_TRUE(num::bitwise_equal(dir->w_c.value(), t.w_q.value()));
    EXPECT_TRUE(num::bitwise_equal(dir->w_b.value(), t.w_k.value()));
    EXPECT_TRUE(num::bitwise_equal(dir->w_x.value(), t.w_v.value()));
  }
  EXPECT_TRUE(num::bitwise_equal(p.flex.w_o.value(), t.w_o.value()));
  EXPECT_TRUE(num::bitwise_equal(p.swin.w_q.value(), t.w_q.value()));
  EXPECT_TRUE(num::bitwise_equal(p.swin.w_k.value(), t.w_k.value()));
  EXPECT_TRUE(num::bitwise_equal(p.swin.w_v.value(), t.w_v.value()));
  EXPECT_TRUE(num::bitwise_equal(p.swin.w_o.value(), t.w_o.value()));
  EXPECT_FALSE(p.flex.forward.w_c.same_node(t.w_q));
  EXPECT_EQ(p.fusion_logit.value()[0], 0.0);
}

TEST(MMate, NonCopiedParametersFollowSeed) {
  const ModelConfig c = tiny_config();
  num::Rng trng(9);
  const auto t = init_attention(8, trng);
  num::Rng a(42), b(42);
  const auto pa = init_from_teacher(t, c, a);
  const auto pb = init_from_teacher(t, c, b);
  EXPECT_TRUE(num::bitwise_equal(pa.flex.forward.w_dt.value(), pb.flex.forward.w_dt.value()));
  EXPECT_TRUE(num::bitwise_equal(pa.flex.reverse.a_log.value(), pb.flex.reverse.a_log.value()));
  EXPECT_TRUE(num::bitwise_equal(pa.flex.w_g.value(), pb.flex.w_g.value()));
  const auto& a_log = pa.flex.forward.a_log.value();
  for (double v : a_log.values()) {
    EXPECT_GE(std::exp(v), 1.0);
    EXPECT_LE(std::exp(v), 16.0);
  }
  const auto& b_dt = pa.flex.forward.b_dt.value();
  for (double v : b_dt.values()) {
    const double dt = std::log1p(std::exp(v));
    EXPECT_GE(dt, 1e-3 * (1 - 1e-9));
    EXPECT_LE(dt, 1e-1 * (1 + 1e-9));
  }
}

TEST(MMate, DimensionMismatchRejected) {
  num::Rng rng(10);
  const auto t = init_attention(6, rng);
  EXPECT_THROW(init_from_teacher(t, tiny_config(), rng), std::invalid_argument);
}

TEST(ModelForward, ShapesAndFiniteness) {
  num::Rng rng(11);
  const Model teacher = Model::teacher(tiny_config(), rng);
  const Model student = Model::student_from(teacher, rng);
  const GridShape g = grid(2, 2, 2, 4);
  const auto seq = token_sequence(random_ids(12, 16, rng), g);
  for (const Model* model : {&teacher, &student}) {
    const ForwardResult r = model->forward(seq);
    EXPECT_EQ(r.logits.shape(), (num::Shape{12, 16}));
    EXPECT_TRUE(r.logits.value().all_finite());
    ASSERT_EQ(r.mixer_outputs.size(), 2u);
    for (const auto& h : r.mixer_outputs) EXPECT_EQ(h.shape(), (num::Shape{12, 8}));
  }
}

TEST(ModelForward, UnknownTokenRejected) {
  num::Rng rng(12);
  const Model teacher = Model::teacher(tiny_config(), rng);
  EXPECT_THROW(teacher.forward(token_sequence({1, 2, 16}, GridShape::text(3))), std::out_of_range);
  EXPECT_THROW(teacher.forward(token_sequence({1, -1}, GridShape::text(2))), std::out_of_range);
  EXPECT_THROW(teacher.forward(token_sequence({1, 2}, GridShape::text(3))), std::invalid_argument);
}

TEST(ModelForward, StudentSharesBackboneWithTeacher) {
  num::Rng rng(13);
  const Model teacher = Model::teacher(tiny_config(), rng);
  const Model student = Model::student_from(teacher, rng);
  std::map<std::string, num::Var> t;
  for (const auto& p : teacher.parameters()) t[p.name] = p.var;
  for (const auto& p : student.parameters()) {
    if (p.group == ParamGroup::kBackbone || p.group == ParamGroup::kEmbedding || p.group == ParamGroup::kHead) {
      ASSERT_TRUE(t.count(p.name)) << p.name;
      EXPECT_TRUE(num::bitwise_equal(p.var.value(), t[p.name].value())) << p.name;
      EXPECT_FALSE(p.var.same_node(t[p.name]));
    }
  }
}

TEST(Lora, ZeroBKeepsWeight) {
  num::Rng rng(14);
  const num::Var w(num::randn({5, 4}, rng));
  const LoraAdapter a = init_lora(4, 5, 2, rng);
  EXPECT_TRUE(num::bitwise_equal(lora_apply(w, a).value(), w.value()));
}

TEST(Lora, HandProduct) {
  LoraAdapter a;
  a.rank = 1;
  a.alpha = 1.0;
  a.a = num::Var(num::Array::from_rows({{1.0, 0.0}}));
  a.b = num::Var(num::Array::from_rows({{1.0}, {0.0}}));
  const num::Var w(num::Array({2, 2}, 0.0));
  const num::Array out = lora_apply(w, a).value();
  EXPECT_EQ(out(0, 0), 1.0);
  EXPECT_EQ(out(0, 1), 0.0);
  EXPECT_EQ(out(1, 0), 0.0);
  EXPECT_EQ(out(1, 1), 0.0);
  EXPECT_EQ(w.value()(0, 0), 0.0);
}

TEST(Lora, RankBound) {
  num::Rng rng(15);
  for (std::size_t r = 1; r <= 3; ++r) {
    LoraAdapter a = init_lora(6, 5, r, rng);
    a.b = num::Var(num::randn({5, r}, rng));
    const num::Var w(num::randn({5, 6}, rng));
    const num::Var delta = num::sub(lora_apply(w, a), w);
    EXPECT_LE(oracle::matrix_rank(m(delta)), r);
  }
  EXPECT_THROW(init_lora(4, 8, 4, rng), std::invalid_argument);
  LoraAdapter bad = init_lora(6, 5, 2, rng);
  bad.rank = 5;
  EXPECT_THROW(lora_apply(num::Var(num::Array({5, 6})), bad), std::invalid_argument);
}

TEST(Lora, ZeroAdaptersLeaveLogitsBitwise) {
  num::Rng rng(16);
  const Model teacher = Model::teacher(tiny_config(), rng);
  const Model student = Model::student_from(teacher, rng);
  Model adapted = student.clone();
  adapted.attach_lora(2, rng);
  const auto seq = token_sequence(random_ids(10, 16, rng), grid(1, 2, 3, 4));
  EXPECT_TRUE(num::bitwise_equal(student.forward(seq).logits.value(), adapted.forward(seq).logits.value()));
}

TEST(Decode, HeadFavouringZero) {
  num::Rng rng(17);
  Model teacher = Model::teacher(tiny_config(), rng);
  for (auto& p : teacher.parameters()) {
    if (p.name == "final.gamma") p.var.mutable_value().fill(0.0);
    if (p.name == "final.beta") p.var.mutable_value().fill(1.0);
  }
  teacher.head().mutable_value().fill(0.0);
  for (std::size_t c = 0; c < 8; ++c) teacher.head().mutable_value()(0, c) = 1.0;
  const auto prompt = token_sequence({3, 4, 5}, GridShape::text(3));
  EXPECT_EQ(decode_greedy(teacher, prompt, 6), std::vector<int>(6, 0));
  EXPECT_EQ(decode_greedy(teacher, prompt, 6, 0), std::vector<int>{0});
}

TEST(Decode, MaxLenOne) {
  num::Rng rng(18);
  const Model teacher = Model::teacher(tiny_config(), rng);
  EXPECT_EQ(decode_greedy(teacher, token_sequence({1, 2}, GridShape::text(2)), 1).size(), 1u);
  EXPECT_THROW(decode_greedy(teacher, token_sequence({1, 2}, GridShape::text(2)), 0), std::invalid_argument);
}

TEST(Decode, MatchesStepwiseRecompute) {
  num::Rng rng(19);
  const Model teacher = Model::teacher(tiny_config(), rng);
  const Model student = Model::student_from(teacher, rng);
  const GridShape g = grid(1, 2, 2, 2);
  const auto ids = random_ids(6, 16, rng);
  for (const Model* model : {&teacher, &student}) {
    const auto out = decode_greedy(*model, token_sequence(ids, g), 7);
    std::vector<int> seq = ids;
    GridShape shape = g;
    for (std::size_t step = 0; step < 7; ++step) {
      const num::Array logits = model->forward(token_sequence(seq, shape)).logits.value();
      int best = 0;
      for (std::size_t v = 1; v < 16; ++v) {
        if (logits(seq.size() - 1, v) > logits(seq.size() - 1, best)) best = static_cast<int>(v);
      }
      EXPECT_EQ(out[step], best);
      seq.push_back(best);
      shape.text_tokens++;
    }
  }
}

TEST(Checkpoint, RoundTripBitwise) {
  num::Rng rng(20);
  const Model teacher = Model::teacher(tiny_config(), rng);
  Model student = Model::student_from(teacher, rng);
  student.attach_lora(2, rng);
  const auto path = std::filesystem::temp_directory_path() / "mmate_test_roundtrip.ckpt";
  save_model(path, student, {{"completed_stage", 2.0}});
  const LoadedModel loaded = load_model(path);
  EXPECT_EQ(loaded.meta.at("completed_stage"), 2.0);
  EXPECT_EQ(parameter_hash(loaded.model), parameter_hash(student));
  const auto seq = token_sequence(random_ids(9, 16, rng), grid(1, 2, 2, 5));
  EXPECT_TRUE(num::bitwise_equal(loaded.model.forward(seq).logits.value(), student.forward(seq).logits.value()));
  std::filesystem::remove(path);
}

TEST(Checkpoint, ManifestAndFloat32) {
  const std::vector<TensorRecord> records{{"a", num::Array::from_rows({{1.5, -2.0}, {3.25, 1.0 / 3.0}})},
                                          {"b", num::Array::vector({7.0})}};
  const std::string bytes = encode_checkpoint(records, DType::kF32);
  EXPECT_EQ(bytes.rfind("mmate-checkpoint 1\nrecords 2\na f32 2 2 2\nb f32 1 1\nend\n", 0), 0u);
  const auto back = decode_checkpoint(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].value(0, 1), -2.0);
  EXPECT_NEAR(back[0].value(1, 1), 1.0 / 3.0, 1e-7);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 1)), std::runtime_error);
  EXPECT_THROW(decode_checkpoint("not a checkpoint\n"), std::runtime_error);
}

TEST(Checkpoint, HashChangesWithWeights) {
  num::Rng rng(21);
  Model teacher = Model::teacher(tiny_config(), rng);
  const auto h = parameter_hash(teacher);
  teacher.head().mutable_value()[3] += 1e-12;
  EXPECT_NE(parameter_hash(teacher), h);
}

TEST(ModelGradients, TwoLayerStudentEndToEnd) {
  num::Rng rng(22);
  const Model teacher = Model::teacher(tiny_config(), rng);
  Model student = Model::student_from(teacher, rng);
  student.attach_lora(2, rng);
  for (auto& p : student.parameters()) {
    if (p.group == ParamGroup::kLora) p.var.mutable_value() = num::randn(p.var.shape(), rng, 0.3);
  }
  const auto seq = token_sequence(random_ids(12, 16, rng), grid(2, 2, 2, 4));
  const num::Var probe(num::randn({12, 16}, rng));
  std::vector<num::NamedParam> params;
  for (const auto& p : student.parameters()) {
    if (p.group != ParamGroup::kEmbedding) params.push_back({p.name, p.var});
  }
  const auto report =
      num::check_gradients([&] { return num::sum(num::mul(student.forward(seq).logits, probe)); }, params);
  for (const auto& e : report.entries) EXPECT_LT(e.max_rel_error, 1e-4) << e.name << " abs " << e.max_abs_error;
}

TEST(ForwardFlops, MatchCounterForBothMixers) {
  num::Rng rng(41);
  const ModelConfig c = tiny_config();
  const Model teacher = Model::teacher(c, rng);
  const Model student = Model::student_from(teacher, rng);
  for (const GridShape g : {grid(1, 2, 3, 5), grid(3, 4, 4, 70), GridShape::text(9)}) {
    num::Rng ids_rng(1);
    const auto seq = token_sequence(random_ids(g.total_tokens(), c.vocab, ids_rng), g);
    num::reset_flops();
    (void)teacher.forward(seq);
    EXPECT_EQ(num::flop_count(), forward_flops(c, MixerKind::kAttention, g));
    num::reset_flops();
    (void)student.forward(seq);
    EXPECT_EQ(num::flop_count(), forward_flops(c, MixerKind::kMMate, g));
  }
}

TEST(ForwardFlops, QuadraticAttentionLinearMMate) {
  ModelConfig c;
  const std::uint64_t d = c.d_model;
  for (std::size_t t : {16u, 64u, 256u}) {
    const GridShape g = grid(t, 8, 8, 0);
    const std::uint64_t n = g.total_tokens();
    const std::uint64_t linear = 2 * n * d * c.vocab + c.layers * (8 * n * d * d + 4 * n * d * c.d_ff);
    EXPECT_EQ(forward_flops(c, MixerKind::kAttention, g) - linear, c.layers * 2 * d * n * (n + 1));
    EXPECT_EQ(forward_flops(c, MixerKind::kMMate, grid(2 * t, 8, 8, 0)), 2 * forward_flops(c, MixerKind::kMMate, g));
  }
}
