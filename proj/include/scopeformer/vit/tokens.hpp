#pragma once

#include <string>

#include "scopeformer/core/parameters.hpp"
#include "scopeformer/core/tensor.hpp"

namespace scopeformer::vit {

using core::Tensor;

enum class Layout { channel_wise, feature_wise };
enum class ClsAxis { none, sequence, token_dim };

/// How tokens are formed and classified.
///   baseline   N x d tokens, CLS prepended along the sequence axis
///   tr         transposed to d x N, CLS appended along the token dimension
///   efficient  transposed to d x N, no CLS; pooled head
///   raw_vit    no backbone; patches of the image, linearly embedded to d
enum class VitKind { baseline, tr, efficient, raw_vit };

std::string to_string(VitKind kind);
std::string to_string(ClsAxis axis);
VitKind vit_kind_from_string(const std::string& text);
ClsAxis cls_axis_from_string(const std::string& text);

struct TokenSequence {
  Tensor tokens;  // S x t
  Layout layout = Layout::channel_wise;
  ClsAxis cls_axis = ClsAxis::none;

  bool cls_present() const { return cls_axis != ClsAxis::none; }
  std::size_t length() const { return tokens.extent(0); }
  std::size_t dim() const { return tokens.extent(1); }
};

/// h x w x c map -> (h/p)(w/p) tokens of p*p*c values, row-major over
/// patches; each token flattens its block as (row, column, channel).
TokenSequence extract_patches(const Tensor& map, std::size_t p);

/// Inverse of extract_patches for a channel-wise sequence without CLS.
Tensor assemble_patches(const TokenSequence& seq, std::size_t height, std::size_t width, std::size_t p);

/// Matrix transpose of the token grid; flips the layout tag.
TokenSequence transpose_tokens(const TokenSequence& seq);

/// Trainable position table and optional CLS token for one configuration.
class TokenEmbedding {
 public:
  /// rows x cols is the sequence shape before CLS insertion. Positions and
  /// the CLS token start as N(0, 0.02^2).
  TokenEmbedding(VitKind kind, ClsAxis cls_axis, std::size_t rows, std::size_t cols, core::Rng& rng);

  TokenSequence apply(const TokenSequence& seq) const;

  const Tensor& positions() const { return positions_; }
  const Tensor& cls() const { return cls_; }
  VitKind kind() const { return kind_; }
  ClsAxis cls_axis() const { return cls_axis_; }
  core::ParameterRegistry& parameters() { return params_; }
  const core::ParameterRegistry& parameters() const { return params_; }

 private:
  VitKind kind_;
  ClsAxis cls_axis_;
  Tensor positions_;
  Tensor cls_;
  core::ParameterRegistry params_;
};

/// Add positions (shape of `seq`) and insert the CLS token along the axis
/// the configuration prescribes; see TokenEmbedding.
TokenSequence add_positions_and_cls(const TokenSequence& seq, const TokenEmbedding& embedding);

/// Default CLS placement for each configuration.
ClsAxis default_cls_axis(VitKind kind);

}  // namespace scopeformer::vit
