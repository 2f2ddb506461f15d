#include "scopeformer/vit/tokens.hpp"

#include "scopeformer/core/ops.hpp"

namespace scopeformer::vit {

using core::ConfigError;
using core::DimensionError;

std::string to_string(VitKind kind) {
  switch (kind) {
    case VitKind::baseline: return "baseline";
    case VitKind::tr: return "tr";
    case VitKind::efficient: return "efficient";
    case VitKind::raw_vit: return "raw-vit";
  }
  return "?";
}

std::string to_string(ClsAxis axis) {
  switch (axis) {
    case ClsAxis::none: return "none";
    case ClsAxis::sequence: return "sequence";
    case ClsAxis::token_dim: return "token-dim";
  }
  return "?";
}

VitKind vit_kind_from_string(const std::string& text) {
  if (text == "baseline") return VitKind::baseline;
  if (text == "tr") return VitKind::tr;
  if (text == "efficient") return VitKind::efficient;
  if (text == "raw-vit") return VitKind::raw_vit;
  throw ConfigError("unknown vit_kind '" + text + "' (expected baseline, tr, efficient or raw-vit)");
}

ClsAxis cls_axis_from_string(const std::string& text) {
  if (text == "none") return ClsAxis::none;
  if (text == "sequence") return ClsAxis::sequence;
  if (text == "token-dim") return ClsAxis::token_dim;
  throw ConfigError("unknown cls_axis '" + text + "' (expected none, sequence or token-dim)");
}

ClsAxis default_cls_axis(VitKind kind) {
  switch (kind) {
    case VitKind::tr: return ClsAxis::token_dim;
    case VitKind::efficient: return ClsAxis::none;
    default: return ClsAxis::sequence;
  }
}

TokenSequence extract_patches(const Tensor& map, std::size_t p) {
  if (map.rank() != 3) throw DimensionError("patch extraction expects an h x w x c map");
  const std::size_t h = map.extent(0), w = map.extent(1), c = map.extent(2);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw DimensionError("patch size " + std::to_string(p) + " does not divide " + std::to_string(h) + "x" +
                         std::to_string(w));
  }
  const std::size_t n = (h / p) * (w / p);
  if (p == 1) return {core::reshape(map, {n, c}), Layout::channel_wise, ClsAxis::none};
  // (by*p + py, bx*p + px, ch) -> (by, py, bx, px*c + ch) -> (by, bx, py, px*c + ch)
  Tensor blocks = core::permute(core::reshape(map, {h / p, p, w / p, p * c}), {0, 2, 1, 3});
  return {core::reshape(blocks, {n, p * p * c}), Layout::channel_wise, ClsAxis::none};
}

Tensor assemble_patches(const TokenSequence& seq, std::size_t height, std::size_t width, std::size_t p) {
  if (seq.layout != Layout::channel_wise || seq.cls_present()) {
    throw DimensionError("only channel-wise sequences without CLS can be reassembled");
  }
  if (p == 0 || height % p != 0 || width % p != 0) throw DimensionError("patch size does not divide the map");
  const std::size_t n = (height / p) * (width / p);
  if (seq.length() != n || seq.dim() % (p * p) != 0) throw DimensionError("token grid does not match the map");
  const std::size_t c = seq.dim() / (p * p);
  if (p == 1) return core::reshape(seq.tokens, {height, width, c});
  Tensor blocks = core::reshape(seq.tokens, {height / p, width / p, p, p * c});
  return core::reshape(core::permute(blocks, {0, 2, 1, 3}), {height, width, c});
}

TokenSequence transpose_tokens(const TokenSequence& seq) {
  ClsAxis axis = seq.cls_axis;
  if (axis == ClsAxis::sequence) axis = ClsAxis::token_dim;
  else if (axis == ClsAxis::token_dim) axis = ClsAxis::sequence;
  return {core::transpose(seq.tokens),
          seq.layout == Layout::channel_wise ? Layout::feature_wise : Layout::channel_wise, axis};
}

TokenEmbedding::TokenEmbedding(VitKind kind, ClsAxis cls_axis, std::size_t rows, std::size_t cols, core::Rng& rng)
    : kind_(kind), cls_axis_(cls_axis) {
  if (kind == VitKind::efficient && cls_axis != ClsAxis::none) {
    throw ConfigError("the efficient configuration has no CLS token");
  }
  positions_ = params_.add("embed.positions", "embedding", core::init_normal({rows, cols}, 0.02, rng));
  if (cls_axis == ClsAxis::sequence) cls_ = params_.add("embed.cls", "embedding", core::init_normal({1, cols}, 0.02, rng));
  if (cls_axis == ClsAxis::token_dim) cls_ = params_.add("embed.cls", "embedding", core::init_normal({rows, 1}, 0.02, rng));
}

TokenSequence TokenEmbedding::apply(const TokenSequence& seq) const {
  const bool wants_feature_wise = kind_ == VitKind::tr || kind_ == VitKind::efficient;
  if ((seq.layout == Layout::feature_wise) != wants_feature_wise) {
    throw ConfigError("token layout does not match the " + to_string(kind_) + " configuration");
  }
  if (seq.cls_present()) throw ConfigError("sequence already carries a CLS token");
  if (seq.tokens.shape() != positions_.shape()) {
    throw DimensionError("position table " + core::shape_to_string(positions_.shape()) + " does not match tokens " +
                         core::shape_to_string(seq.tokens.shape()));
  }
  Tensor x = core::add(seq.tokens, positions_);
  if (cls_axis_ == ClsAxis::sequence) x = core::concat({cls_, x}, 0);
  if (cls_axis_ == ClsAxis::token_dim) x = core::concat({x, cls_}, 1);
  return {x, seq.layout, cls_axis_};
}

TokenSequence add_positions_and_cls(const TokenSequence& seq, const TokenEmbedding& embedding) {
  return embedding.apply(seq);
}

}  // namespace scopeformer::vit
