#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "scopeformer/backbone/backbone.hpp"
#include "scopeformer/heads/loss_metrics.hpp"
#include "scopeformer/vit/attention.hpp"
#include "scopeformer/vit/tokens.hpp"

namespace scopeformer::model {

/// Full description of one architecture and its training run.
struct ScopeformerConfig {
  std::string variant = "custom";

  // Architecture.
  vit::VitKind vit_kind = vit::VitKind::baseline;
  std::size_t n_backbones = 1;
  std::vector<std::string> backbone_arch{"toy-a"};  // one entry, or one per backbone
  std::uint64_t backbone_seed = 1;                  // backbone i is seeded with backbone_seed + i
  std::vector<backbone::PretrainTag> pretrain_tags{backbone::PretrainTag::none};
  std::size_t d = 0;
  std::size_t layers = 0;
  std::size_t mlp_dim = 0;
  std::size_t heads = 0;
  vit::AttentionKind attention = vit::AttentionKind::mhsa;
  vit::ReattentionNorm reattention_norm = vit::ReattentionNorm::row_sum;
  std::size_t patch = 1;
  std::optional<vit::ClsAxis> cls_axis;  // unset: configuration default
  bool uneven_heads = false;
  std::size_t head_hidden = 0;  // 0: same as the classifier input width
  std::size_t image_size = 64;
  std::size_t grid = 8;

  // Freezing and the pretrain-then-freeze mode.
  double frozen_fraction = 0.0;
  bool pretrain_backbone = false;
  std::size_t pretrain_epochs = 3;

  // Optimization.
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;
  double val_fraction = 0.25;
  bool flip = false;
  std::size_t early_stop_patience = 0;  // 0 disables early stopping
  heads::ClassWeights class_weights;
  std::uint64_t seed = 1;

  vit::ClsAxis resolved_cls_axis() const { return cls_axis.value_or(vit::default_cls_axis(vit_kind)); }
  bool has_backbone() const { return vit_kind != vit::VitKind::raw_vit; }
  std::vector<backbone::BackboneSpec> backbone_specs() const;

  /// Throws ConfigError describing the first inconsistency.
  void validate() const;
};

/// Shapes of the token grid handed to the encoder stack.
struct TokenGeometry {
  std::size_t patches = 0;     // N
  std::size_t patch_dim = 0;   // values per patch before any embedding
  std::size_t rows = 0;        // sequence shape before CLS insertion
  std::size_t cols = 0;
  std::size_t length = 0;      // S, after CLS insertion
  std::size_t dim = 0;         // t, after CLS insertion
  std::size_t head_input = 0;  // width of the vector the classifier reads
};

TokenGeometry token_geometry(const ScopeformerConfig& config);

}  // namespace scopeformer::model
