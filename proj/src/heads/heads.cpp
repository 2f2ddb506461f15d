#include "scopeformer/heads/heads.hpp"

#include <cmath>

#include "scopeformer/core/ops.hpp"

namespace scopeformer::heads {

using core::DimensionError;

namespace {

Tensor dense_weight(core::ParameterRegistry& reg, const std::string& name, std::size_t in, std::size_t out,
                    core::Rng& rng) {
  return reg.add(name, "head", core::init_uniform({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng));
}

HeadOutput finish(const Tensor& logits_row) {
  Tensor logits = core::reshape(logits_row, {kOutputs});
  return {logits, core::sigmoid(logits)};
}

}  // namespace

ClsHead::ClsHead(std::size_t d, std::size_t hidden, core::Rng& rng) : d_(d) {
  if (hidden == 0) hidden = d;
  w1_ = dense_weight(params_, "head.w1", d, hidden, rng);
  b1_ = params_.add("head.b1", "head", Tensor::zeros({hidden}));
  w2_ = dense_weight(params_, "head.w2", hidden, kOutputs, rng);
  b2_ = params_.add("head.b2", "head", Tensor::zeros({kOutputs}));
}

HeadOutput ClsHead::forward(const Tensor& cls_vector) const {
  if (cls_vector.numel() != d_) {
    throw DimensionError("CLS vector has " + std::to_string(cls_vector.numel()) + " values, head expects " +
                         std::to_string(d_));
  }
  Tensor x = core::reshape(cls_vector, {1, d_});
  Tensor hidden = core::gelu(core::add(core::matmul(x, w1_), b1_));
  return finish(core::add(core::matmul(hidden, w2_), b2_));
}

EfficientHead::EfficientHead(std::size_t d, core::Rng& rng) : d_(d) {
  w_ = dense_weight(params_, "head.w", d, kOutputs, rng);
  b_ = params_.add("head.b", "head", Tensor::zeros({kOutputs}));
}

Tensor EfficientHead::to_feature_map(const Tensor& vit_out) {
  if (vit_out.rank() != 2) throw DimensionError("efficient head expects a d x N token matrix");
  const std::size_t d = vit_out.extent(0), n = vit_out.extent(1);
  const auto g = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (g * g != n) throw DimensionError("token count " + std::to_string(n) + " is not a square grid");
  return core::reshape(core::transpose(vit_out), {g, g, d});
}

Tensor EfficientHead::pooled(const Tensor& vit_out) {
  Tensor map = to_feature_map(vit_out);
  return core::reshape(core::pool_adaptive_avg(map, 1, 1), {map.extent(2)});
}

HeadOutput EfficientHead::forward(const Tensor& vit_out) const {
  if (vit_out.rank() != 2 || vit_out.extent(0) != d_) {
    throw DimensionError("efficient head expects " + std::to_string(d_) + " feature rows, got " +
                         core::shape_to_string(vit_out.shape()));
  }
  Tensor v = core::reshape(pooled(vit_out), {1, d_});
  return finish(core::add(core::matmul(v, w_), b_));
}

LinearProbe::LinearProbe(std::size_t in, core::Rng& rng) {
  w_ = params_.add("probe.w", "probe", core::init_uniform({in, kOutputs}, 1.0 / std::sqrt(double(in)), rng));
  b_ = params_.add("probe.b", "probe", Tensor::zeros({kOutputs}));
}

HeadOutput LinearProbe::forward(const Tensor& features) const {
  Tensor x = core::reshape(features, {1, features.numel()});
  return finish(core::add(core::matmul(x, w_), b_));
}

}  // namespace scopeformer::heads
