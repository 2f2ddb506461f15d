#pragma once

#include <string>

#include "scopeformer/core/parameters.hpp"
#include "scopeformer/core/tensor.hpp"

namespace scopeformer::heads {

using core::Tensor;

inline constexpr std::size_t kOutputs = 6;

struct HeadOutput {
  Tensor logits;         // length 6
  Tensor probabilities;  // sigmoid(logits)
};

/// dense(d -> hidden, GELU) then dense(hidden -> 6, sigmoid), applied to the
/// CLS vector.
class ClsHead {
 public:
  ClsHead(std::size_t d, std::size_t hidden, core::Rng& rng);

  HeadOutput forward(const Tensor& cls_vector) const;

  core::ParameterRegistry& parameters() { return params_; }
  const core::ParameterRegistry& parameters() const { return params_; }

 private:
  std::size_t d_;
  Tensor w1_, b1_, w2_, b2_;
  core::ParameterRegistry params_;
};

/// Transpose the d x N encoder output to N x d, reshape to a sqrt(N) grid,
/// average-pool to one d-vector, then dense(d -> 6) with sigmoid.
class EfficientHead {
 public:
  EfficientHead(std::size_t d, core::Rng& rng);

  HeadOutput forward(const Tensor& vit_out) const;

  /// The d x N tokens as a g x g x d map (g = sqrt(N)).
  static Tensor to_feature_map(const Tensor& vit_out);
  /// Global average of the feature map, length d.
  static Tensor pooled(const Tensor& vit_out);

  core::ParameterRegistry& parameters() { return params_; }
  const core::ParameterRegistry& parameters() const { return params_; }

 private:
  std::size_t d_;
  Tensor w_, b_;
  core::ParameterRegistry params_;
};

/// Single dense layer used as the backbone pretraining head:
/// per-backbone global average pool, concat, dense(sum f -> 6).
class LinearProbe {
 public:
  LinearProbe(std::size_t in, core::Rng& rng);
  HeadOutput forward(const Tensor& features) const;
  core::ParameterRegistry& parameters() { return params_; }

 private:
  Tensor w_, b_;
  core::ParameterRegistry params_;
};

}  // namespace scopeformer::heads
