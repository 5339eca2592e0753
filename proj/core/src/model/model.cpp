// SPDX-License-Identifier: Apache-2.0
#include "mmate/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "mmate/numerics/ops.hpp"

namespace mmate::model {

void ModelConfig::validate() const {
  if (vocab < 2) throw std::invalid_argument("ModelConfig: vocab must be >= 2");
  if (d_model == 0 || heads == 0 || d_model % heads) {
    throw std::invalid_argument("ModelConfig: d_model must be a positive multiple of heads");
  }
  if (layers == 0) throw std::invalid_argument("ModelConfig: layers must be >= 1");
  if (d_ff == 0) throw std::invalid_argument("ModelConfig: d_ff must be >= 1");
  if (scan.chunk == 0) throw std::invalid_argument("ModelConfig: scan chunk must be >= 1");
  window.validate();
}

const char* group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kEmbedding: return "embedding";
    case ParamGroup::kBackbone: return "backbone";
    case ParamGroup::kHead: return "head";
    case ParamGroup::kAttention: return "attention";
    case ParamGroup::kFlex: return "flex";
    case ParamGroup::kSwin: return "swin";
    case ParamGroup::kFusion: return "fusion";
    case ParamGroup::kLora: return "lora";
  }
  return "unknown";
}

num::Var mmate_forward(const TokenSequence& seq, std::size_t layer, const MMateParams& params,
                       const swin::WindowConfig& window, const flex::ScanOptions& scan, BranchMode mode) {
  num::Var mixed;
  if (mode == BranchMode::kFlexOnly) {
    mixed = flex::flex_ma_forward(seq, layer, params.flex, scan);
  } else if (mode == BranchMode::kSwinOnly) {
    mixed = swin::local_swin_forward(seq, layer, params.swin, window);
  } else {
    const num::Var y_flex = flex::flex_ma_forward(seq, layer, params.flex, scan);
    const num::Var y_swin = swin::local_swin_forward(seq, layer, params.swin, window);
    // lambda * flex + (1 - lambda) * swin == swin + lambda * (flex - swin)
    const num::Var lambda = num::sigmoid(params.fusion_logit);
    mixed = num::add(y_swin, num::scale(num::sub(y_flex, y_swin), lambda));
  }
  return num::layer_norm(mixed, params.norm_gamma, params.norm_beta);
}

MMateParams init_from_teacher(const AttentionParams& teacher, const ModelConfig& config, num::Rng& rng) {
  config.validate();
  const std::size_t d = config.d_model;
  for (const auto* w : {&teacher.w_q, &teacher.w_k, &teacher.w_v, &teacher.w_o}) {
    if (!w->defined() || w->shape() != num::Shape{d, d}) {
      throw std::invalid_argument("init_from_teacher: teacher projection is not " + std::to_string(d) + "x" +
                                  std::to_string(d));
    }
  }
  MMateParams p;
  p.flex = flex::init_flex_ma(d, config.heads, config.d_head(), rng);
  for (flex::ScanProjections* dir : {&p.flex.forward, &p.flex.reverse}) {
    dir->w_c = teacher.w_q.clone();
    dir->w_b = teacher.w_k.clone();
    dir->w_x = teacher.w_v.clone();
  }
  p.flex.w_o = teacher.w_o.clone();
  p.swin.d_model = d;
  p.swin.heads = config.heads;
  p.swin.w_q = teacher.w_q.clone();
  p.swin.w_k = teacher.w_k.clone();
  p.swin.w_v = teacher.w_v.clone();
  p.swin.w_o = teacher.w_o.clone();
  p.fusion_logit = num::Var::parameter(num::Array({1}, 0.0));
  p.norm_gamma = num::Var::parameter(num::Array({d}, 1.0));
  p.norm_beta = num::Var::parameter(num::Array({d}, 0.0));
  return p;
}

LoraAdapter init_lora(std::size_t d_in, std::size_t d_out, std::size_t rank, num::Rng& rng) {
  if (rank == 0 || rank >= std::min(d_in, d_out)) {
    throw std::invalid_argument("init_lora: rank must lie in [1, min(d_in, d_out))");
  }
  LoraAdapter a;
  a.rank = rank;
  a.alpha = static_cast<double>(rank);
  a.a = num::Var::parameter(num::randn({rank, d_in}, rng, 1.0 / std::sqrt(static_cast<double>(d_in))));
  a.b = num::Var::parameter(num::Array({d_out, rank}, 0.0));
  return a;
}

num::Var lora_apply(const num::Var& w, const LoraAdapter& adapter) {
  num::require_matrix(w.value(), "lora_apply weight");
  const std::size_t d_out = w.value().rows(), d_in = w.value().cols(), r = adapter.rank;
  if (r == 0 || r >= std::min(d_in, d_out)) {
    throw std::invalid_argument("lora_apply: rank " + std::to_string(r) + " must be below min(d_in, d_out) = " +
                                std::to_string(std::min(d_in, d_out)));
  }
  num::require_shape(adapter.a.value(), {r, d_in}, "lora A");
  num::require_shape(adapter.b.value(), {d_out, r}, "lora B");
  return num::add(w, num::scale(num::matmul(adapter.b, adapter.a), adapter.alpha / static_cast<double>(r)));
}

namespace {

num::Var ones(std::size_t d) { return num::Var::parameter(num::Array({d}, 1.0)); }
num::Var zeros(std::size_t d) { return num::Var::parameter(num::Array({d}, 0.0)); }

num::Var ffn_forward(const num::Var& x, const FeedForward& f) {
  const num::Var w1 = f.lora1 ? lora_apply(f.w1, *f.lora1) : f.w1;
  const num::Var w2 = f.lora2 ? lora_apply(f.w2, *f.lora2) : f.w2;
  return num::linear(num::gelu(num::linear(x, w1, f.b1)), w2, f.b2);
}

}  // namespace

template <typename Self, typename F>
void Model::visit(Self& m, F&& f) {
  const MixerKind kind = m.kind_;
  f(std::string("embedding"), ParamGroup::kEmbedding, m.embedding_);
  for (std::size_t l = 0; l < m.layers_.size(); ++l) {
    auto& layer = m.layers_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    f(p + "norm1.gamma", ParamGroup::kBackbone, layer.norm1_gamma);
    f(p + "norm1.beta", ParamGroup::kBackbone, layer.norm1_beta);
    if (kind == MixerKind::kAttention) {
      f(p + "attn.w_q", ParamGroup::kAttention, layer.attention.w_q);
      f(p + "attn.w_k", ParamGroup::kAttention, layer.attention.w_k);
      f(p + "attn.w_v", ParamGroup::kAttention, layer.attention.w_v);
      f(p + "attn.w_o", ParamGroup::kAttention, layer.attention.w_o);
    } else {
      auto& mm = layer.mmate;
      for (auto [tag, dir] : {std::pair{"fwd", &mm.flex.forward}, std::pair{"rev", &mm.flex.reverse}}) {
        const std::string q = p + "flex." + tag + ".";
        f(q + "w_b", ParamGroup::kFlex, dir->w_b);
        f(q + "w_c", ParamGroup::kFlex, dir->w_c);
        f(q + "w_x", ParamGroup::kFlex, dir->w_x);
        f(q + "w_dt", ParamGroup::kFlex, dir->w_dt);
        f(q + "b_dt", ParamGroup::kFlex, dir->b_dt);
        f(q + "a_log", ParamGroup::kFlex, dir->a_log);
      }
      f(p + "flex.w_g", ParamGroup::kFlex, mm.flex.w_g);
      f(p + "flex.b_g", ParamGroup::kFlex, mm.flex.b_g);
      f(p + "flex.w_o", ParamGroup::kFlex, mm.flex.w_o);
      f(p + "swin.w_q", ParamGroup::kSwin, mm.swin.w_q);
      f(p + "swin.w_k", ParamGroup::kSwin, mm.swin.w_k);
      f(p + "swin.w_v", ParamGroup::kSwin, mm.swin.w_v);
      f(p + "swin.w_o", ParamGroup::kSwin, mm.swin.w_o);
      f(p + "fusion.logit", ParamGroup::kFusion, mm.fusion_logit);
      f(p + "fusion.norm.gamma", ParamGroup::kFusion, mm.norm_gamma);
      f(p + "fusion.norm.beta", ParamGroup::kFusion, mm.norm_beta);
    }
    f(p + "norm2.gamma", ParamGroup::kBackbone, layer.norm2_gamma);
    f(p + "norm2.beta", ParamGroup::kBackbone, layer.norm2_beta);
    f(p + "ffn.w1", ParamGroup::kBackbone, layer.ffn.w1);
    f(p + "ffn.b1", ParamGroup::kBackbone, layer.ffn.b1);
    f(p + "ffn.w2", ParamGroup::kBackbone, layer.ffn.w2);
    f(p + "ffn.b2", ParamGroup::kBackbone, layer.ffn.b2);
    if (layer.ffn.lora1) {
      f(p + "ffn.lora1.a", ParamGroup::kLora, layer.ffn.lora1->a);
      f(p + "ffn.lora1.b", ParamGroup::kLora, layer.ffn.lora1->b);
    }
    if (layer.ffn.lora2) {
      f(p + "ffn.lora2.a", ParamGroup::kLora, layer.ffn.lora2->a);
      f(p + "ffn.lora2.b", ParamGroup::kLora, layer.ffn.lora2->b);
    }
  }
  f(std::string("final.gamma"), ParamGroup::kBackbone, m.final_gamma_);
  f(std::string("final.beta"), ParamGroup::kBackbone, m.final_beta_);
  f(std::string("head"), ParamGroup::kHead, m.head_);
}

Model::Model(ModelConfig config, MixerKind kind) : config_(std::move(config)), kind_(kind) { config_.validate(); }

Model Model::teacher(const ModelConfig& config, num::Rng& rng) {
  Model m(config, MixerKind::kAttention);
  const std::size_t d = config.d_model, f = config.d_ff;
  m.embedding_ = num::Var::parameter(num::randn({config.vocab, d}, rng));
  for (std::size_t l = 0; l < config.layers; ++l) {
    Layer layer;
    layer.norm1_gamma = ones(d);
    layer.norm1_beta = zeros(d);
    layer.norm2_gamma = ones(d);
    layer.norm2_beta = zeros(d);
    layer.attention = init_attention(d, rng);
    layer.ffn.w1 = num::Var::parameter(num::randn({f, d}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
    layer.ffn.b1 = zeros(f);
    layer.ffn.w2 = num::Var::parameter(num::randn({d, f}, rng, 1.0 / std::sqrt(static_cast<double>(f))));
    layer.ffn.b2 = zeros(d);
    m.layers_.push_back(std::move(layer));
  }
  m.final_gamma_ = ones(d);
  m.final_beta_ = zeros(d);
  m.head_ = num::Var::parameter(num::randn({config.vocab, d}, rng, 1.0 / std::sqrt(static_cast<double>(d))));
  return m;
}

Model Model::student_from(const Model& teacher, num::Rng& rng) {
  if (teacher.kind_ != MixerKind::kAttention) throw std::invalid_argument("student_from: source is not a teacher");
  Model s = teacher.clone();
  s.kind_ = MixerKind::kMMate;
  for (auto& layer : s.layers_) {
    layer.mmate = init_from_teacher(layer.attention, s.config_, rng);
    layer.attention = {};
  }
  return s;
}

std::vector<NamedParameter> Model::parameters() const {
  std::vector<NamedParameter> out;
  visit(*this, [&](const std::string& name, ParamGroup g, const num::Var& v) {
    out.push_back({name, g, v});
  });
  return out;
}

Model Model::clone() const {
  Model c = *this;
  visit(c, [](const std::string&, ParamGroup, num::Var& v) { v = v.clone(); });
  return c;
}

void Model::attach_lora(std::size_t rank, num::Rng& rng) {
  for (auto& layer : layers_) {
    layer.ffn.lora1 = init_lora(config_.d_model, config_.d_ff, rank, rng);
    layer.ffn.lora2 = init_lora(config_.d_ff, config_.d_model, rank, rng);
  }
}

bool Model::has_lora() const {
  return std::any_of(layers_.begin(), layers_.end(), [](const Layer& l) { return l.ffn.lora1.has_value(); });
}

void Model::set_trainable(const std::vector<ParamGroup>& groups) {
  visit(*this, [&](const std::string&, ParamGroup g, num::Var& v) {
    v.set_requires_grad(std::find(groups.begin(), groups.end(), g) != groups.end());
  });
}

ForwardResult Model::forward(const TokenSequence& seq) const {
  if (!seq.token_ids) throw std::invalid_argument("model_forward: token ids are required");
  seq.shape.validate();
  const auto& ids = *seq.token_ids;
  if (ids.size() != seq.shape.total_tokens()) {
    throw std::invalid_argument("model_forward: " + std::to_string(ids.size()) + " ids for " +
                                std::to_string(seq.shape.total_tokens()) + " positions");
  }
  std::vector<std::size_t> rows(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= config_.vocab) {
      throw std::out_of_range("model_forward: token id " + std::to_string(ids[i]) + " at position " +
                              std::to_string(i) + " outside vocab of " + std::to_string(config_.vocab));
    }
    rows[i] = static_cast<std::size_t>(ids[i]);
  }

  ForwardResult out;
  num::Var x = num::gather_rows(embedding_, rows);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const num::Var h = num::layer_norm(x, layer.norm1_gamma, layer.norm1_beta);
    num::Var mixed;
    if (kind_ == MixerKind::kAttention) {
      mixed = attention_forward(h, layer.attention, config_.heads);
    } else {
      mixed = mmate_forward({h, seq.shape, std::nullopt}, l, layer.mmate, config_.window, config_.scan, branch_);
    }
    out.mixer_outputs.push_back(mixed);
    x = num::add(x, mixed);
    x = num::add(x, ffn_forward(num::layer_norm(x, layer.norm2_gamma, layer.norm2_beta), layer.ffn));
  }
  out.logits = num::linear(num::layer_norm(x, final_gamma_, final_beta_), head_);
  return out;
}

TokenSequence token_sequence(std::vector<int> ids, const GridShape& shape) {
  return {num::Var(), shape, std::move(ids)};
}

ForwardResult model_forward(const Model& model, const TokenSequence& seq) { return model.forward(seq); }

std::uint64_t forward_flops(const ModelConfig& config, MixerKind kind, const GridShape& shape) {
  const std::uint64_t n = shape.total_tokens(), d = config.d_model;
  const std::uint64_t ffn = 4 * n * d * config.d_ff;
  std::uint64_t total = 2 * n * d * config.vocab;
  for (std::size_t l = 0; l < config.layers; ++l) {
    std::uint64_t mixer = 0;
    if (kind == MixerKind::kAttention) {
      mixer = attention_layer_flops(n, d);
    } else {
      mixer = flex::flex_ma_flops(n, d, config.heads, config.d_head(), config.scan);
      if (shape.vision_tokens() > 0) mixer += swin::local_swin_flops(shape, config.window, l, d);
    }
    total += mixer + ffn;
  }
  return total;
}

int argmax_row(const num::Array& logits, std::size_t r) {
  const auto row = logits.row(r);
  return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
}

std::vector<int> decode_greedy(const Model& model, const TokenSequence& prompt, std::size_t max_len,
                               std::optional<int> eos) {
  if (max_len == 0) throw std::invalid_argument("decode_greedy: max_len must be >= 1");
  if (!prompt.token_ids) throw std::invalid_argument("decode_greedy: prompt needs token ids");
  num::NoGradGuard guard;
  TokenSequence seq = token_sequence(*prompt.token_ids, prompt.shape);
  std::vector<int> generated;
  while (generated.size() < max_len) {
    const ForwardResult r = model.forward(seq);
    const int next = argmax_row(r.logits.value(), seq.shape.total_tokens() - 1);
    generated.push_back(next);
    if (eos && next == *eos) break;
    seq.token_ids->push_back(next);
    seq.shape.text_tokens += 1;
  }
  return generated;
}

}  // namespace mmate::model
