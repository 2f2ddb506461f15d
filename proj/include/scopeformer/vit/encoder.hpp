#pragma once

#include <string>
#include <vector>

#include "scopeformer/vit/attention.hpp"

namespace scopeformer::vit {

struct EncoderSpec {
  std::size_t dim = 0;  // token width t
  std::size_t heads = 1;
  std::size_t mlp_dim = 0;
  AttentionKind attention = AttentionKind::mhsa;
  ReattentionNorm norm = ReattentionNorm::row_sum;
  bool uneven_heads = false;
};

/// Pre-norm encoder block:
///   y   = x + Attn(LN1(x))
///   out = y + W2 GELU(W1 LN2(y) + b1) + b2
class EncoderBlock {
 public:
  EncoderBlock(const std::string& prefix, const EncoderSpec& spec, core::Rng& rng);

  Tensor forward(const Tensor& x, std::vector<Tensor>* score_maps = nullptr) const;

  const MultiHeadAttention& attention() const { return attn_; }
  MultiHeadAttention& attention() { return attn_; }
  /// Zero the output projections of both residual branches.
  void zero_branch_outputs();

  core::ParameterRegistry& parameters() { return params_; }
  const core::ParameterRegistry& parameters() const { return params_; }

 private:
  MultiHeadAttention attn_;
  Tensor ln1_gamma_, ln1_beta_, ln2_gamma_, ln2_beta_;
  Tensor w1_, b1_, w2_, b2_;
  core::ParameterRegistry params_;
};

/// Closed-form parameter count of one block:
/// 4t^2 + 4t (+h^2 for re-attention) + 2(2t) + 2 t mlp + mlp + t.
std::size_t encoder_block_parameter_count(std::size_t t, std::size_t mlp_dim, std::size_t heads, AttentionKind kind);

struct StackOutput {
  Tensor output;
  std::vector<Tensor> block_outputs;             // one per block, when recorded
  std::vector<std::vector<Tensor>> score_maps;   // [block][head], when recorded
};

class EncoderStack {
 public:
  EncoderStack(const EncoderSpec& spec, std::size_t layers, core::Rng& rng);

  StackOutput forward(const Tensor& x, bool record_outputs = false, bool record_attention = false) const;

  std::size_t size() const { return blocks_.size(); }
  const EncoderBlock& block(std::size_t i) const { return blocks_.at(i); }
  EncoderBlock& block(std::size_t i) { return blocks_.at(i); }
  core::ParameterRegistry parameters() const;

 private:
  std::vector<EncoderBlock> blocks_;
};

}  // namespace scopeformer::vit
