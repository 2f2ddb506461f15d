#include "scopeformer/runner/param_count.hpp"

#include "scopeformer/heads/heads.hpp"

namespace scopeformer::runner {

std::size_t ParameterCount::total() const { return trainable() + frozen(); }

std::size_t ParameterCount::trainable() const {
  std::size_t n = 0;
  for (const auto& [name, c] : modules) n += c.trainable;
  return n;
}

std::size_t ParameterCount::frozen() const {
  std::size_t n = 0;
  for (const auto& [name, c] : modules) n += c.frozen;
  return n;
}

std::size_t ParameterCount::without_backbone() const {
  const auto it = modules.find("backbone");
  return total() - (it == modules.end() ? 0 : it->second.total());
}

ParameterCount count_parameters(const model::ScopeformerModel& model) {
  ParameterCount out;
  for (const auto& p : model.parameters().all()) {
    ModuleCount& m = out.modules[p.module];
    (p.trainable() ? m.trainable : m.frozen) += p.value.numel();
  }
  return out;
}

std::map<std::string, std::size_t> closed_form_parameter_count(const model::ScopeformerConfig& c) {
  c.validate();
  const model::TokenGeometry g = model::token_geometry(c);
  std::map<std::string, std::size_t> out;

  if (c.has_backbone()) {
    const std::size_t share = c.d / c.n_backbones;
    std::size_t stages = 0, proj = 0;
    for (const auto& spec : c.backbone_specs()) {
      std::size_t in = 3;
      for (const auto& s : backbone::architecture(spec.arch_id)) {
        stages += in * s.kernel * s.kernel * s.channels + s.channels;
        in = s.channels;
      }
      proj += in * share + share;
    }
    out["backbone"] = stages;
    out["projection"] = proj;
  }

  std::size_t embedding = g.rows * g.cols;
  switch (c.resolved_cls_axis()) {
    case vit::ClsAxis::sequence: embedding += g.cols; break;
    case vit::ClsAxis::token_dim: embedding += g.rows; break;
    case vit::ClsAxis::none: break;
  }
  if (!c.has_backbone()) embedding += g.patch_dim * c.d + c.d;
  out["embedding"] = embedding;

  out["encoder"] = c.layers * vit::encoder_block_parameter_count(g.dim, c.mlp_dim, c.heads, c.attention);

  const std::size_t in = g.head_input;
  if (c.resolved_cls_axis() == vit::ClsAxis::none) {
    out["head"] = in * heads::kOutputs + heads::kOutputs;
  } else {
    const std::size_t hidden = c.head_hidden == 0 ? in : c.head_hidden;
    out["head"] = in * hidden + hidden + hidden * heads::kOutputs + heads::kOutputs;
  }
  return out;
}

}  // namespace scopeformer::runner
