#include "scopeformer/model/config.hpp"

namespace scopeformer::model {

using core::ConfigError;
using vit::ClsAxis;
using vit::VitKind;

std::vector<backbone::BackboneSpec> ScopeformerConfig::backbone_specs() const {
  std::vector<backbone::BackboneSpec> specs;
  if (!has_backbone()) return specs;
  for (std::size_t i = 0; i < n_backbones; ++i) {
    backbone::BackboneSpec s;
    s.arch_id = backbone_arch.size() == 1 ? backbone_arch[0] : backbone_arch.at(i);
    s.init_seed = backbone_seed + i;
    s.pretrain_tag = pretrain_tags.size() == 1 ? pretrain_tags[0] : pretrain_tags.at(i);
    s.frozen_fraction = frozen_fraction;
    specs.push_back(s);
  }
  return specs;
}

TokenGeometry token_geometry(const ScopeformerConfig& c) {
  TokenGeometry g;
  const ClsAxis cls = c.resolved_cls_axis();
  if (c.vit_kind == VitKind::raw_vit) {
    if (c.patch == 0 || c.image_size % c.patch != 0) throw ConfigError("patch must divide image_size");
    g.patches = (c.image_size / c.patch) * (c.image_size / c.patch);
    g.patch_dim = c.patch * c.patch * 3;
    g.rows = g.patches;
    g.cols = c.d;
  } else {
    if (c.patch == 0 || c.grid % c.patch != 0) throw ConfigError("patch must divide the feature grid");
    g.patches = (c.grid / c.patch) * (c.grid / c.patch);
    g.patch_dim = c.patch * c.patch * c.d;
    const bool transposed = c.vit_kind == VitKind::tr || c.vit_kind == VitKind::efficient;
    g.rows = transposed ? g.patch_dim : g.patches;
    g.cols = transposed ? g.patches : g.patch_dim;
  }
  g.length = g.rows + (cls == ClsAxis::sequence ? 1 : 0);
  g.dim = g.cols + (cls == ClsAxis::token_dim ? 1 : 0);
  if (cls == ClsAxis::sequence) g.head_input = g.dim;
  else if (cls == ClsAxis::token_dim) g.head_input = g.length;
  else g.head_input = g.rows;
  return g;
}

void ScopeformerConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (d == 0) fail("d must be positive");
  if (layers == 0) fail("layers must be positive");
  if (mlp_dim == 0) fail("mlp_dim must be positive");
  if (heads == 0) fail("heads must be positive");
  if (image_size == 0 || grid == 0) fail("image_size and grid must be positive");
  if (has_backbone()) {
    if (n_backbones == 0) fail("n_backbones must be at least 1 unless vit_kind = raw-vit");
    if (d % n_backbones != 0) {
      fail("d = " + std::to_string(d) + " is not divisible by n_backbones = " + std::to_string(n_backbones));
    }
    if (backbone_arch.size() != 1 && backbone_arch.size() != n_backbones) {
      fail("backbone_arch lists " + std::to_string(backbone_arch.size()) + " entries for " +
           std::to_string(n_backbones) + " backbones");
    }
    if (pretrain_tags.size() != 1 && pretrain_tags.size() != n_backbones) {
      fail("pretrain_tag lists " + std::to_string(pretrain_tags.size()) + " entries for " +
           std::to_string(n_backbones) + " backbones");
    }
    for (const std::string& a : backbone_arch) backbone::architecture(a);
    if (pretrain_backbone) {
      bool any = false;
      for (auto tag : pretrain_tags) any = any || tag == backbone::PretrainTag::task_pretrained;
      if (!any) fail("pretrain_backbone = true but no backbone has pretrain_tag = task-pretrained");
    }
  } else if (pretrain_backbone) {
    fail("pretrain_backbone needs a backbone (vit_kind = raw-vit has none)");
  }
  const ClsAxis cls = resolved_cls_axis();
  if (vit_kind == VitKind::efficient && cls != ClsAxis::none) {
    fail("vit_kind = efficient discards the CLS token; cls_axis must be none");
  }
  if (vit_kind != VitKind::efficient && cls == ClsAxis::none) {
    fail("vit_kind = " + vit::to_string(vit_kind) + " classifies from the CLS token; cls_axis cannot be none");
  }
  if (!(frozen_fraction >= 0.0 && frozen_fraction <= 1.0)) fail("frozen_fraction must lie in [0, 1]");
  if (!(learning_rate > 0.0)) fail("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("beta1 and beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("val_fraction must lie in [0, 1)");
  class_weights.validate();

  const TokenGeometry g = token_geometry(*this);
  vit::head_partition(g.dim, heads, uneven_heads);
  if (vit_kind == VitKind::efficient) {
    std::size_t side = 1;
    while (side * side < g.patches) ++side;
    if (side * side != g.patches) fail("efficient head needs a square token grid");
  }
}

}  // namespace scopeformer::model
