#include "scopeformer/model/model.hpp"

#include <cmath>

#include "scopeformer/core/ops.hpp"

namespace scopeformer::model {

using vit::ClsAxis;
using vit::VitKind;

namespace {
// Independent streams so that adding a module never reseeds another.
core::Rng stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return core::Rng(seq);
}
}  // namespace

ScopeformerModel::ScopeformerModel(const ScopeformerConfig& config) : config_(config) {
  config_.validate();
  geometry_ = token_geometry(config_);
  const ClsAxis cls = config_.resolved_cls_axis();

  if (config_.has_backbone()) {
    backbone_ = std::make_unique<backbone::Backbone>(config_.backbone_specs(), config_.d, config_.image_size,
                                                     config_.grid);
    params_.extend(backbone_->parameters());
  } else {
    core::Rng rng = stream(config_.seed, 1);
    const double bound = 1.0 / std::sqrt(static_cast<double>(geometry_.patch_dim));
    patch_weight_ = params_.add("patch_embed.weight", "embedding",
                                core::init_uniform({geometry_.patch_dim, config_.d}, bound, rng));
    patch_bias_ = params_.add("patch_embed.bias", "embedding", Tensor::zeros({config_.d}));
  }

  core::Rng embed_rng = stream(config_.seed, 2);
  embedding_ = std::make_unique<vit::TokenEmbedding>(config_.vit_kind, cls, geometry_.rows, geometry_.cols, embed_rng);
  params_.extend(embedding_->parameters());

  vit::EncoderSpec spec{geometry_.dim, config_.heads, config_.mlp_dim, config_.attention, config_.reattention_norm,
                        config_.uneven_heads};
  core::Rng encoder_rng = stream(config_.seed, 3);
  encoder_ = std::make_unique<vit::EncoderStack>(spec, config_.layers, encoder_rng);
  params_.extend(encoder_->parameters());

  core::Rng head_rng = stream(config_.seed, 4);
  if (cls == ClsAxis::none) {
    efficient_head_ = std::make_unique<heads::EfficientHead>(geometry_.head_input, head_rng);
    params_.extend(efficient_head_->parameters());
  } else {
    cls_head_ = std::make_unique<heads::ClsHead>(geometry_.head_input, config_.head_hidden, head_rng);
    params_.extend(cls_head_->parameters());
  }
}

vit::TokenSequence ScopeformerModel::tokenize(const backbone::GlobalFeatureMap& features) const {
  vit::TokenSequence seq = vit::extract_patches(features.map, config_.patch);
  if (config_.vit_kind == VitKind::tr || config_.vit_kind == VitKind::efficient) seq = vit::transpose_tokens(seq);
  return seq;
}

ForwardResult ScopeformerModel::forward(const Tensor& image, const ForwardOptions& options) const {
  if (!backbone_) {
    vit::TokenSequence patches = vit::extract_patches(image, config_.patch);
    patches.tokens = core::add(core::matmul(patches.tokens, patch_weight_), patch_bias_);
    return run_tokens(patches, options);
  }
  return forward_from_aligned(backbone_->aligned_features(image), options);
}

ForwardResult ScopeformerModel::forward_from_aligned(const std::vector<Tensor>& aligned,
                                                     const ForwardOptions& options) const {
  if (!backbone_) throw core::ConfigError("raw-vit models have no backbone features");
  backbone::GlobalFeatureMap features = backbone_->project_aligned(aligned);
  ForwardResult r = run_tokens(tokenize(features), options);
  r.features = std::move(features);
  return r;
}

ForwardResult ScopeformerModel::run_tokens(vit::TokenSequence tokens, const ForwardOptions& options) const {
  ForwardResult r;
  r.tokens = embedding_->apply(tokens);
  r.stack = encoder_->forward(r.tokens.tokens, options.record_block_outputs, options.record_attention);
  if (efficient_head_) {
    r.head = efficient_head_->forward(r.stack.output);
  } else {
    r.head = cls_head_->forward(cls_vector(r.stack.output, r.tokens.cls_axis));
  }
  return r;
}

Tensor cls_vector(const Tensor& encoder_out, ClsAxis axis) {
  switch (axis) {
    case ClsAxis::sequence: return core::slice(encoder_out, 0, 0, 1);
    case ClsAxis::token_dim: return core::slice(encoder_out, 1, encoder_out.extent(1) - 1, 1);
    case ClsAxis::none: break;
  }
  throw core::ConfigError("this configuration has no CLS token");
}

Tensor strip_cls(const Tensor& encoder_out, ClsAxis axis) {
  switch (axis) {
    case ClsAxis::sequence: return core::slice(encoder_out, 0, 1, encoder_out.extent(0) - 1);
    case ClsAxis::token_dim: return core::slice(encoder_out, 1, 0, encoder_out.extent(1) - 1);
    case ClsAxis::none: break;
  }
  return encoder_out;
}

}  // namespace scopeformer::model
