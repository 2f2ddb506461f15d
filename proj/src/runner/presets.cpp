#include "scopeformer/runner/presets.hpp"

#include <map>

namespace scopeformer::runner {

using model::ScopeformerConfig;
using vit::AttentionKind;
using vit::VitKind;

namespace {

struct Row {
  VitKind kind;
  std::size_t n_backbones, layers, d, mlp, heads;
  AttentionKind attention;
  double published;
};

ScopeformerConfig from_row(const std::string& name, const Row& r) {
  ScopeformerConfig c;
  c.variant = name;
  c.vit_kind = r.kind;
  c.n_backbones = r.n_backbones;
  c.backbone_arch = {"toy-wide"};
  c.d = r.d;
  c.layers = r.layers;
  c.mlp_dim = r.mlp;
  c.heads = r.heads;
  c.attention = r.attention;
  // 65 feature-wise tokens do not split evenly over 16 heads.
  c.uneven_heads = r.kind == VitKind::tr;
  return c;
}

const std::map<std::string, Row>& rows() {
  static const std::map<std::string, Row> table = {
      {"scopeformer-s", {VitKind::baseline, 4, 8, 516, 3072, 12, AttentionKind::mhsa, 34e6}},
      {"scopeformer-b", {VitKind::baseline, 4, 8, 512, 4096, 16, AttentionKind::mhsa, 42e6}},
      {"scopeformer-m", {VitKind::baseline, 4, 8, 512, 5120, 16, AttentionKind::mhsa, 43e6}},
      {"scopeformer-l-4", {VitKind::baseline, 4, 4, 1024, 4096, 16, AttentionKind::mhsa, 51e6}},
      {"scopeformer-l-8", {VitKind::baseline, 4, 8, 1024, 4096, 16, AttentionKind::mhsa, 102e6}},
      {"scopeformer-l-16", {VitKind::baseline, 4, 16, 1024, 4096, 16, AttentionKind::mhsa, 203e6}},
      {"deep-scopeformer-l-8", {VitKind::baseline, 4, 8, 1024, 4096, 16, AttentionKind::mhra, 102e6}},
      {"deep-scopeformer-tr-l-8", {VitKind::tr, 3, 8, 384, 4096, 16, AttentionKind::mhra, 6e6}},
      {"efficient-scopeformer", {VitKind::efficient, 3, 8, 384, 4096, 16, AttentionKind::mhra, 6e6}},
  };
  return table;
}

}  // namespace

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "scopeformer-s",         "scopeformer-b",           "scopeformer-m",
      "scopeformer-l-4",       "scopeformer-l-8",         "scopeformer-l-16",
      "deep-scopeformer-l-8",  "deep-scopeformer-tr-l-8", "efficient-scopeformer",
      "efficient-desk",        "raw-vit"};
  return names;
}

ScopeformerConfig preset(const std::string& name) {
  if (const auto it = rows().find(name); it != rows().end()) return from_row(name, it->second);
  if (name == "efficient-desk") {
    ScopeformerConfig c;
    c.variant = name;
    c.vit_kind = VitKind::efficient;
    c.n_backbones = 3;
    c.backbone_arch = {"toy-a", "toy-b", "toy-a"};
    c.pretrain_tags = {backbone::PretrainTag::task_pretrained};
    c.pretrain_backbone = true;
    c.d = 96;
    c.layers = 4;
    c.mlp_dim = 128;
    c.heads = 16;
    c.attention = AttentionKind::mhra;
    c.flip = true;
    return c;
  }
  if (name == "raw-vit") {
    ScopeformerConfig c;
    c.variant = name;
    c.vit_kind = VitKind::raw_vit;
    c.n_backbones = 0;
    c.patch = 8;
    c.d = 192;
    c.layers = 4;
    c.mlp_dim = 384;
    c.heads = 4;
    return c;
  }
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw core::ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

double published_parameter_count(const std::string& name) {
  const auto it = rows().find(name);
  return it == rows().end() ? 0.0 : it->second.published;
}

}  // namespace scopeformer::runner
