#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "scopeformer/core/tensor.hpp"

namespace scopeformer::core {

// All ops are differentiable unless noted; they record onto the active tape
// when an input needs gradients. Inputs must share one dtype.

/// [m x k] x [k x n] -> [m x n].
Tensor matmul(const Tensor& a, const Tensor& b);

// Elementwise with numpy-style trailing broadcast.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
Tensor neg(const Tensor& x);

Tensor relu(const Tensor& x);
/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
/// Clamp into [lo, hi]; gradient is zero where clamping is active.
Tensor clamp(const Tensor& x, double lo, double hi);

/// Max-subtracted softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);

/// Normalize over the last axis, then scale by gamma and shift by beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

enum class Padding { same, valid };

/// Cross-correlation of an [h x w x cin] map with [k x k x cin x cout]
/// kernels. `bias` may be undefined. "same" padding gives ceil(h/stride)
/// outputs with the extra pad row/column on the bottom/right.
Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride, Padding padding);

/// Adaptive average pooling of an [h x w x c] map to [out_h x out_w x c].
/// Window i spans [floor(i*h/out_h), ceil((i+1)*h/out_h)).
Tensor pool_adaptive_avg(const Tensor& x, std::size_t out_h, std::size_t out_w);

Tensor permute(const Tensor& x, std::span<const std::size_t> axes);
Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes);
/// 2-D transpose.
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, const Shape& shape);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

/// Sum of all elements, shape [1].
Tensor sum(const Tensor& x);
/// Sum along one axis, keeping it with extent 1.
Tensor sum(const Tensor& x, std::size_t axis);
/// Mean of all elements, shape [1].
Tensor mean(const Tensor& x);

/// Reduce `g` by summation onto a broadcast-compatible `shape`. Not recorded.
Tensor sum_to(const Tensor& g, const Shape& shape);

/// Shape resulting from broadcasting `a` against `b`.
Shape broadcast_shape(const Shape& a, const Shape& b);

}  // namespace scopeformer::core
