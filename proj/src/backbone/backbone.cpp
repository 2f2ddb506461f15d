#include "scopeformer/backbone/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "scopeformer/core/ops.hpp"

namespace scopeformer::backbone {

using core::ConfigError;
using core::DimensionError;

std::string to_string(PretrainTag tag) { return tag == PretrainTag::none ? "none" : "task-pretrained"; }

PretrainTag pretrain_tag_from_string(const std::string& text) {
  if (text == "none") return PretrainTag::none;
  if (text == "task-pretrained") return PretrainTag::task_pretrained;
  throw ConfigError("unknown pretrain tag '" + text + "' (expected none or task-pretrained)");
}

std::vector<StageSpec> architecture(const std::string& arch_id) {
  if (arch_id == "toy-a") return {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}};
  if (arch_id == "toy-b") return {{16, 5, 2}, {32, 3, 2}, {48, 3, 2}, {48, 3, 1}};
  if (arch_id == "toy-c") return {{16, 3, 2}, {32, 3, 2}, {64, 3, 1}};
  if (arch_id == "toy-wide") return {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {2048, 1, 1}};
  throw ConfigError("unknown backbone architecture '" + arch_id + "'");
}

ToyCnn::ToyCnn(const std::string& prefix, std::vector<StageSpec> stages, std::uint64_t seed)
    : stages_(std::move(stages)) {
  if (stages_.empty()) throw ConfigError("a toy CNN needs at least one stage");
  core::Rng rng(seed);
  std::size_t in = 3;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    const StageSpec& st = stages_[s];
    if (st.kernel % 2 == 0 || st.stride == 0 || st.channels == 0) throw ConfigError("invalid stage in " + prefix);
    const double fan_in = static_cast<double>(st.kernel * st.kernel * in);
    const std::string name = prefix + ".stage" + std::to_string(s);
    weights_.push_back(params_.add(name + ".weight", "backbone",
                                   core::init_uniform({st.kernel, st.kernel, in, st.channels},
                                                      std::sqrt(6.0 / fan_in), rng)));
    biases_.push_back(params_.add(name + ".bias", "backbone", Tensor::zeros({st.channels})));
    in = st.channels;
  }
}

Shape ToyCnn::output_shape(std::size_t height, std::size_t width) const {
  for (const StageSpec& st : stages_) {
    if (height % st.stride != 0 || width % st.stride != 0) {
      throw DimensionError("input " + std::to_string(height) + "x" + std::to_string(width) +
                           " is not divisible by stage stride " + std::to_string(st.stride));
    }
    height /= st.stride;
    width /= st.stride;
  }
  return {height, width, out_channels()};
}

Tensor ToyCnn::forward(const Tensor& image) const {
  if (image.rank() != 3 || image.extent(2) != 3) throw DimensionError("backbone input must be h x w x 3");
  output_shape(image.extent(0), image.extent(1));
  Tensor x = image;
  for (std::size_t s = 0; s < stages_.size(); ++s) {
    x = core::relu(core::conv2d(x, weights_[s], biases_[s], stages_[s].stride, core::Padding::same));
  }
  return x;
}

std::size_t ToyCnn::stage_parameter_count(std::size_t stage) const {
  return weights_.at(stage).numel() + biases_.at(stage).numel();
}

void ToyCnn::set_stage_trainable(std::size_t stage, bool flag) {
  weights_.at(stage).set_requires_grad(flag);
  biases_.at(stage).set_requires_grad(flag);
}

Projection::Projection(const std::string& prefix, std::size_t in_channels, std::size_t target_channels,
                       std::uint64_t seed, bool identity_init)
    : out_(target_channels) {
  if (target_channels == 0) throw ConfigError("projection width must be at least 1");
  if (identity_init) {
    if (in_channels != target_channels) throw ConfigError("identity projection needs equal widths");
    weight_ = core::reshape(core::init_identity(in_channels), {1, 1, in_channels, target_channels});
  } else {
    core::Rng rng(seed);
    weight_ = core::init_uniform({1, 1, in_channels, target_channels}, std::sqrt(3.0 / in_channels), rng);
  }
  weight_ = params_.add(prefix + ".proj.weight", "projection", weight_);
  bias_ = params_.add(prefix + ".proj.bias", "projection", Tensor::zeros({target_channels}));
}

Tensor Projection::forward(const Tensor& features) const {
  return core::conv2d(features, weight_, bias_, 1, core::Padding::same);
}

Tensor project_1x1(const Tensor& features, const Projection& projection) { return projection.forward(features); }

Tensor align_spatial(const Tensor& features, std::size_t out_h, std::size_t out_w) {
  if (features.rank() != 3) throw DimensionError("align_spatial expects h x w x c");
  if (features.extent(0) < out_h || features.extent(1) < out_w) {
    throw ConfigError("feature map " + core::shape_to_string(features.shape()) + " is smaller than the " +
                      std::to_string(out_h) + "x" + std::to_string(out_w) + " grid; upsampling is not supported");
  }
  if (features.extent(0) == out_h && features.extent(1) == out_w) return features;
  return core::pool_adaptive_avg(features, out_h, out_w);
}

Tensor GlobalFeatureMap::backbone_channels(std::size_t i) const {
  return core::slice(map, 2, offsets.at(i), widths.at(i));
}

GlobalFeatureMap build_global_feature_map(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ConfigError("global feature map needs at least one backbone");
  GlobalFeatureMap g;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 3 || p.extent(0) != parts[0].extent(0) || p.extent(1) != parts[0].extent(1)) {
      throw DimensionError("backbone feature maps differ in spatial extent");
    }
    g.offsets.push_back(offset);
    g.widths.push_back(p.extent(2));
    offset += p.extent(2);
  }
  g.map = parts.size() == 1 ? parts[0] : core::concat(parts, 2);
  return g;
}

std::size_t apply_freeze_policy(ToyCnn& cnn, double frozen_fraction) {
  if (!(frozen_fraction >= 0.0 && frozen_fraction <= 1.0)) throw ConfigError("frozen fraction must lie in [0, 1]");
  std::size_t total = 0;
  for (std::size_t s = 0; s < cnn.stage_count(); ++s) total += cnn.stage_parameter_count(s);
  const double target = frozen_fraction * static_cast<double>(total);
  std::size_t frozen = 0;
  for (std::size_t s = 0; s < cnn.stage_count(); ++s) {
    const bool freeze = frozen_fraction > 0.0 && static_cast<double>(frozen) < target;
    cnn.set_stage_trainable(s, !freeze);
    if (freeze) frozen += cnn.stage_parameter_count(s);
  }
  return frozen;
}

Backbone::Backbone(std::vector<BackboneSpec> specs, std::size_t d, std::size_t image_size, std::size_t grid)
    : specs_(std::move(specs)), d_(d), grid_(grid) {
  if (specs_.empty()) throw ConfigError("at least one backbone is required");
  if (d == 0 || d % specs_.size() != 0) {
    throw ConfigError("feature width d=" + std::to_string(d) + " is not divisible by the backbone count " +
                      std::to_string(specs_.size()));
  }
  const std::size_t per = d / specs_.size();
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const std::string prefix = "backbone" + std::to_string(i);
    cnns_.emplace_back(prefix, architecture(specs_[i].arch_id), specs_[i].init_seed);
    const Shape out = cnns_.back().output_shape(image_size, image_size);
    if (out[0] < grid || out[1] < grid) {
      throw ConfigError("backbone " + std::to_string(i) + " (" + specs_[i].arch_id + ") yields " +
                        std::to_string(out[0]) + "x" + std::to_string(out[1]) + " features, below the " +
                        std::to_string(grid) + "x" + std::to_string(grid) + " grid");
    }
    projections_.emplace_back(prefix, cnns_.back().out_channels(), per, specs_[i].init_seed ^ 0x9e3779b97f4a7c15ULL);
  }
  apply_freeze_policies();
}

// Average pooling and a 1x1 projection commute, so the CNN output is pooled
// first and the projection runs on the small grid.
std::vector<Tensor> Backbone::aligned_features(const Tensor& image) const {
  std::vector<Tensor> out;
  out.reserve(cnns_.size());
  for (const ToyCnn& cnn : cnns_) out.push_back(align_spatial(cnn.forward(image), grid_, grid_));
  return out;
}

GlobalFeatureMap Backbone::project_aligned(const std::vector<Tensor>& aligned) const {
  if (aligned.size() != projections_.size()) throw DimensionError("one aligned feature map per backbone expected");
  std::vector<Tensor> parts;
  parts.reserve(aligned.size());
  for (std::size_t i = 0; i < aligned.size(); ++i) parts.push_back(projections_[i].forward(aligned[i]));
  return build_global_feature_map(parts);
}

GlobalFeatureMap Backbone::forward(const Tensor& image) const { return project_aligned(aligned_features(image)); }

void Backbone::apply_freeze_policies(double override_fraction) {
  for (std::size_t i = 0; i < cnns_.size(); ++i) {
    apply_freeze_policy(cnns_[i], override_fraction >= 0.0 ? override_fraction : specs_[i].frozen_fraction);
  }
}

bool Backbone::cnns_frozen() const {
  for (const ToyCnn& cnn : cnns_) {
    for (const core::Parameter& p : cnn.parameters().all()) {
      if (p.trainable()) return false;
    }
  }
  return true;
}

ParameterRegistry Backbone::parameters() const {
  ParameterRegistry reg;
  for (const ToyCnn& cnn : cnns_) reg.extend(cnn.parameters());
  for (const Projection& p : projections_) reg.extend(p.parameters());
  return reg;
}

}  // namespace scopeformer::backbone
