#include "scopeformer/vit/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "scopeformer/core/ops.hpp"

namespace scopeformer::vit {

EncoderBlock::EncoderBlock(const std::string& prefix, const EncoderSpec& spec, core::Rng& rng)
    : attn_(prefix + ".attn", spec.dim, spec.heads, spec.attention, spec.norm, spec.uneven_heads, rng) {
  if (spec.mlp_dim == 0) throw core::ConfigError("mlp_dim must be positive");
  const std::size_t t = spec.dim, m = spec.mlp_dim;
  params_.extend(attn_.parameters());
  ln1_gamma_ = params_.add(prefix + ".ln1.gamma", "encoder", Tensor::full({t}, 1.0));
  ln1_beta_ = params_.add(prefix + ".ln1.beta", "encoder", Tensor::zeros({t}));
  ln2_gamma_ = params_.add(prefix + ".ln2.gamma", "encoder", Tensor::full({t}, 1.0));
  ln2_beta_ = params_.add(prefix + ".ln2.beta", "encoder", Tensor::zeros({t}));
  w1_ = params_.add(prefix + ".mlp.w1", "encoder", core::init_uniform({t, m}, 1.0 / std::sqrt(double(t)), rng));
  b1_ = params_.add(prefix + ".mlp.b1", "encoder", Tensor::zeros({m}));
  w2_ = params_.add(prefix + ".mlp.w2", "encoder", core::init_uniform({m, t}, 1.0 / std::sqrt(double(m)), rng));
  b2_ = params_.add(prefix + ".mlp.b2", "encoder", Tensor::zeros({t}));
}

Tensor EncoderBlock::forward(const Tensor& x, std::vector<Tensor>* score_maps) const {
  Tensor y = core::add(x, attn_.forward(core::layer_norm(x, ln1_gamma_, ln1_beta_), score_maps));
  Tensor hidden = core::gelu(core::add(core::matmul(core::layer_norm(y, ln2_gamma_, ln2_beta_), w1_), b1_));
  return core::add(y, core::add(core::matmul(hidden, w2_), b2_));
}

void EncoderBlock::zero_branch_outputs() {
  for (Tensor* t : {&attn_.weights().wo, &attn_.weights().bo, &w2_, &b2_}) {
    core::visit_dtype(t->dtype(), [&](auto tag) {
      using T = decltype(tag);
      T* p = t->template mutable_data<T>();
      std::fill(p, p + t->numel(), T(0));
    });
  }
}

std::size_t encoder_block_parameter_count(std::size_t t, std::size_t mlp_dim, std::size_t heads, AttentionKind kind) {
  std::size_t n = 4 * t * t + 4 * t + 2 * (2 * t) + 2 * t * mlp_dim + mlp_dim + t;
  if (kind == AttentionKind::mhra) n += heads * heads;
  return n;
}

EncoderStack::EncoderStack(const EncoderSpec& spec, std::size_t layers, core::Rng& rng) {
  if (layers == 0) throw core::ConfigError("the encoder stack needs at least one layer");
  blocks_.reserve(layers);
  for (std::size_t i = 0; i < layers; ++i) blocks_.emplace_back("encoder" + std::to_string(i), spec, rng);
}

StackOutput EncoderStack::forward(const Tensor& x, bool record_outputs, bool record_attention) const {
  StackOutput out;
  Tensor h = x;
  for (const EncoderBlock& b : blocks_) {
    std::vector<Tensor> maps;
    h = b.forward(h, record_attention ? &maps : nullptr);
    if (record_outputs) out.block_outputs.push_back(h);
    if (record_attention) out.score_maps.push_back(std::move(maps));
  }
  out.output = h;
  return out;
}

core::ParameterRegistry EncoderStack::parameters() const {
  core::ParameterRegistry reg;
  for (const EncoderBlock& b : blocks_) reg.extend(b.parameters());
  return reg;
}

}  // namespace scopeformer::vit
