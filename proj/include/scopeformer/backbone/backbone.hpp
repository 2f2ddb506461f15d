#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scopeformer/core/parameters.hpp"
#include "scopeformer/core/tensor.hpp"

namespace scopeformer::backbone {

using core::ParameterRegistry;
using core::Shape;
using core::Tensor;

enum class PretrainTag { none, task_pretrained };

std::string to_string(PretrainTag tag);
PretrainTag pretrain_tag_from_string(const std::string& text);

/// One conv stage: conv2d(kernel, stride, same padding) followed by ReLU.
struct StageSpec {
  std::size_t channels;
  std::size_t kernel;
  std::size_t stride;
};

/// Known toy architectures:
///   toy-a     3x3 convs 16-32-64, all stride 2             (64x64 -> 8x8x64)
///   toy-b     5x5/3x3 convs 16-32-48-48, strides 2-2-2-1   (64x64 -> 8x8x48)
///   toy-c     3x3 convs 16-32-64, strides 2-2-1            (64x64 -> 16x16x64)
///   toy-wide  toy-a plus a 1x1 expansion to 2048 channels  (64x64 -> 8x8x2048)
std::vector<StageSpec> architecture(const std::string& arch_id);

struct BackboneSpec {
  std::string arch_id = "toy-a";
  std::uint64_t init_seed = 1;
  PretrainTag pretrain_tag = PretrainTag::none;
  double frozen_fraction = 0.0;
};

class ToyCnn {
 public:
  ToyCnn(const std::string& prefix, std::vector<StageSpec> stages, std::uint64_t seed);

  /// image h x w x 3 -> features h' x w' x f.
  Tensor forward(const Tensor& image) const;

  /// Feature shape for an h x w input; throws DimensionError when a stage
  /// stride does not divide its input extent.
  Shape output_shape(std::size_t height, std::size_t width) const;
  std::size_t out_channels() const { return stages_.back().channels; }
  const std::vector<StageSpec>& stages() const { return stages_; }

  /// Per-stage parameter groups in forward order (weight, bias).
  std::size_t stage_count() const { return stages_.size(); }
  std::size_t stage_parameter_count(std::size_t stage) const;
  void set_stage_trainable(std::size_t stage, bool flag);

  ParameterRegistry& parameters() { return params_; }
  const ParameterRegistry& parameters() const { return params_; }

 private:
  std::vector<StageSpec> stages_;
  std::vector<Tensor> weights_;
  std::vector<Tensor> biases_;
  ParameterRegistry params_;
};

/// Trainable 1x1 convolution from f to `target` channels.
class Projection {
 public:
  /// Uniform fan-in initialization; with `identity_init` and in == out the
  /// weight starts as the identity and the bias as zero.
  Projection(const std::string& prefix, std::size_t in_channels, std::size_t target_channels, std::uint64_t seed,
             bool identity_init = false);

  Tensor forward(const Tensor& features) const;
  std::size_t out_channels() const { return out_; }
  ParameterRegistry& parameters() { return params_; }
  const ParameterRegistry& parameters() const { return params_; }

 private:
  std::size_t out_;
  Tensor weight_;
  Tensor bias_;
  ParameterRegistry params_;
};

Tensor project_1x1(const Tensor& features, const Projection& projection);

/// Average-pool features down to out_h x out_w; identity when already there.
/// Smaller inputs would require upsampling and raise ConfigError.
Tensor align_spatial(const Tensor& features, std::size_t out_h = 8, std::size_t out_w = 8);

struct GlobalFeatureMap {
  Tensor map;                        // h x w x d
  std::vector<std::size_t> offsets;  // first channel of each backbone
  std::vector<std::size_t> widths;   // channels contributed by each backbone

  std::size_t backbone_count() const { return offsets.size(); }
  /// Channels of backbone i, sliced back out of the map.
  Tensor backbone_channels(std::size_t i) const;
};

GlobalFeatureMap build_global_feature_map(const std::vector<Tensor>& parts);

/// Freeze the earliest stages of `cnn` until the frozen parameter count is the
/// smallest stage prefix reaching fraction * total. Returns the frozen count.
std::size_t apply_freeze_policy(ToyCnn& cnn, double frozen_fraction);

/// Module 1: n toy CNNs, each followed by spatial alignment and a 1x1
/// projection to d/n channels, concatenated into the global feature map.
class Backbone {
 public:
  Backbone(std::vector<BackboneSpec> specs, std::size_t d, std::size_t image_size, std::size_t grid = 8);

  GlobalFeatureMap forward(const Tensor& image) const;

  /// Aligned but unprojected per-backbone features (grid x grid x f). With
  /// frozen CNNs these can be cached and fed to project_aligned().
  std::vector<Tensor> aligned_features(const Tensor& image) const;
  GlobalFeatureMap project_aligned(const std::vector<Tensor>& aligned) const;

  std::size_t size() const { return cnns_.size(); }
  std::size_t width() const { return d_; }
  std::size_t grid() const { return grid_; }
  const BackboneSpec& spec(std::size_t i) const { return specs_.at(i); }
  ToyCnn& cnn(std::size_t i) { return cnns_.at(i); }
  const ToyCnn& cnn(std::size_t i) const { return cnns_.at(i); }
  const Projection& projection(std::size_t i) const { return projections_.at(i); }

  /// Apply each spec's frozen_fraction (or `override_fraction` when >= 0).
  void apply_freeze_policies(double override_fraction = -1.0);
  bool cnns_frozen() const;

  /// All parameters: CNN stages (module "backbone") then projections
  /// (module "projection").
  ParameterRegistry parameters() const;

 private:
  std::vector<BackboneSpec> specs_;
  std::size_t d_;
  std::size_t grid_;
  std::vector<ToyCnn> cnns_;
  std::vector<Projection> projections_;
};

}  // namespace scopeformer::backbone
