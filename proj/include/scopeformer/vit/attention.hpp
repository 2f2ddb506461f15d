#pragma once

#include <string>
#include <vector>

#include "scopeformer/core/parameters.hpp"
#include "scopeformer/core/tensor.hpp"

namespace scopeformer::vit {

using core::Tensor;

enum class AttentionKind { mhsa, mhra };

/// Renormalization applied after re-attention mixing. `row_sum` divides each
/// row by its sum (rows whose sum is below 1e-8 in magnitude keep their
/// unmixed values); `identity` leaves the mixed maps as they are.
enum class ReattentionNorm { row_sum, identity };

std::string to_string(AttentionKind kind);
std::string to_string(ReattentionNorm norm);
AttentionKind attention_kind_from_string(const std::string& text);
ReattentionNorm reattention_norm_from_string(const std::string& text);

struct HeadSlice {
  std::size_t offset;
  std::size_t width;
};

/// Split t feature columns over h heads. When h does not divide t and
/// `allow_uneven` is set, the first t mod h heads get one extra column;
/// otherwise that case is a ConfigError.
std::vector<HeadSlice> head_partition(std::size_t t, std::size_t heads, bool allow_uneven);

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;  // t x t weights, length-t biases
  Tensor m;                               // h x h, present for re-attention only
};

class MultiHeadAttention {
 public:
  MultiHeadAttention(const std::string& prefix, std::size_t t, std::size_t heads, AttentionKind kind,
                     ReattentionNorm norm, bool allow_uneven, core::Rng& rng);

  /// Dispatches to mhsa or mhra according to the block's kind.
  Tensor forward(const Tensor& x, std::vector<Tensor>* score_maps = nullptr) const;

  AttentionKind kind() const { return kind_; }
  ReattentionNorm norm() const { return norm_; }
  std::size_t dim() const { return t_; }
  std::size_t heads() const { return heads_.size(); }
  const std::vector<HeadSlice>& head_slices() const { return heads_; }
  const AttentionWeights& weights() const { return w_; }
  /// Weights are shared tensors; writing through these handles changes the block.
  AttentionWeights& weights() { return w_; }
  core::ParameterRegistry& parameters() { return params_; }
  const core::ParameterRegistry& parameters() const { return params_; }

 private:
  std::size_t t_;
  AttentionKind kind_;
  ReattentionNorm norm_;
  std::vector<HeadSlice> heads_;
  AttentionWeights w_;
  core::ParameterRegistry params_;
};

/// softmax(Q K^T / sqrt(d_k)) V per head, concatenated, then projected.
/// Per-head S x S score maps are appended to `score_maps` when given.
Tensor mhsa(const Tensor& x, const MultiHeadAttention& block, std::vector<Tensor>* score_maps = nullptr);

/// Re-attention: per-head score maps mixed by M (A'_i = sum_j M[j,i] A_j) and
/// renormalized before multiplying V. `score_maps` receives post-Norm maps.
Tensor mhra(const Tensor& x, const MultiHeadAttention& block, std::vector<Tensor>* score_maps = nullptr);

}  // namespace scopeformer::vit
