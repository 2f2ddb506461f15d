#pragma once

#include <functional>
#include <vector>

#include "scopeformer/core/tensor.hpp"

namespace scopeformer::core {

using ScalarFunction = std::function<Tensor(const std::vector<Tensor>&)>;

/// Compare reverse-mode gradients of a scalar function against central
/// differences. Inputs must be f64 leaves; they are marked requires_grad for
/// the duration of the check and restored bit-exactly afterwards.
///
/// Returns max over all input coordinates of |g_ad - g_fd| / max(1, |g_fd|).
double grad_check(const ScalarFunction& fn, std::vector<Tensor> inputs, double eps = 1e-5);

}  // namespace scopeformer::core
