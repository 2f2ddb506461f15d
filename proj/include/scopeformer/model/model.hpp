#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "scopeformer/backbone/backbone.hpp"
#include "scopeformer/heads/heads.hpp"
#include "scopeformer/model/config.hpp"
#include "scopeformer/vit/encoder.hpp"
#include "scopeformer/vit/tokens.hpp"

namespace scopeformer::model {

using core::Tensor;

struct ForwardOptions {
  bool record_block_outputs = false;
  bool record_attention = false;
};

struct ForwardResult {
  heads::HeadOutput head;
  vit::TokenSequence tokens;                    // encoder input (after positions / CLS)
  vit::StackOutput stack;                       // encoder output and recordings
  std::optional<backbone::GlobalFeatureMap> features;
};

/// End-to-end Scopeformer: image -> backbones -> global feature map ->
/// patches -> (transpose) -> positions / CLS -> encoder stack -> head.
class ScopeformerModel {
 public:
  explicit ScopeformerModel(const ScopeformerConfig& config);

  ForwardResult forward(const Tensor& image, const ForwardOptions& options = {}) const;

  /// Forward from cached aligned backbone features (see Backbone::aligned_features).
  ForwardResult forward_from_aligned(const std::vector<Tensor>& aligned, const ForwardOptions& options = {}) const;

  /// Token sequence the encoder receives for a given global feature map.
  vit::TokenSequence tokenize(const backbone::GlobalFeatureMap& features) const;

  const ScopeformerConfig& config() const { return config_; }
  const TokenGeometry& geometry() const { return geometry_; }
  bool has_backbone() const { return backbone_ != nullptr; }
  backbone::Backbone& backbone() { return *backbone_; }
  const backbone::Backbone& backbone() const { return *backbone_; }
  const vit::EncoderStack& encoder() const { return *encoder_; }
  vit::EncoderStack& encoder() { return *encoder_; }
  const vit::TokenEmbedding& embedding() const { return *embedding_; }

  /// Every parameter, in a fixed order: backbone stages, projections, patch
  /// embedding, positions/CLS, encoder blocks, head.
  const core::ParameterRegistry& parameters() const { return params_; }
  core::ParameterRegistry& parameters() { return params_; }

 private:
  ForwardResult run_tokens(vit::TokenSequence tokens, const ForwardOptions& options) const;

  ScopeformerConfig config_;
  TokenGeometry geometry_;
  std::unique_ptr<backbone::Backbone> backbone_;
  Tensor patch_weight_, patch_bias_;  // raw-vit patch embedding
  std::unique_ptr<vit::TokenEmbedding> embedding_;
  std::unique_ptr<vit::EncoderStack> encoder_;
  std::unique_ptr<heads::ClsHead> cls_head_;
  std::unique_ptr<heads::EfficientHead> efficient_head_;
  core::ParameterRegistry params_;
};

/// The CLS vector the classifier reads from an encoder output.
Tensor cls_vector(const Tensor& encoder_out, vit::ClsAxis axis);

/// Encoder output with the CLS row or column removed.
Tensor strip_cls(const Tensor& encoder_out, vit::ClsAxis axis);

}  // namespace scopeformer::model
