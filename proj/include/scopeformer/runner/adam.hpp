#pragma once

#include <vector>

#include "scopeformer/core/parameters.hpp"

namespace scopeformer::runner {

struct AdamSettings {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment optimizer with bias correction and no schedule. Moments
/// are kept in double precision regardless of parameter storage. Parameters
/// whose trainable flag is off are skipped entirely, including their
/// moments, so a frozen tensor is never written.
class Adam {
 public:
  Adam(core::ParameterRegistry& params, AdamSettings settings);

  /// One update from the gradients currently accumulated on the parameters.
  void step();
  std::size_t steps() const { return t_; }

 private:
  core::ParameterRegistry& params_;
  AdamSettings settings_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace scopeformer::runner
