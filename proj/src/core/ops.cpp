#include "scopeformer/core/ops.hpp"

#include "scopeformer/core/gemm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>

namespace scopeformer::core {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  if (a.dtype() != b.dtype()) throw DimensionError(std::string(op) + ": mixed precision inputs");
}

template <class T>
const std::vector<T>& vals(const Tensor& t) {
  return t.buffer().as<T>();
}
template <class T>
std::vector<T>& mvals(Tensor& t) {
  return t.mutable_buffer().as<T>();
}

// ---------------------------------------------------------------------------
// GEMM kernels, row-major. The main path packs MR rows of A into a
// contiguous panel and walks C in MR x NR tiles whose accumulators stay in
// registers for the whole k loop. Outputs with only a few columns use
// multi-accumulator dot products against a transposed B instead.

constexpr std::size_t kTileRows = 8;
constexpr std::size_t kTileCols = 32;
constexpr std::size_t kNarrowCols = 8;

template <class T>
std::vector<T> transpose_copy(const T* src, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
  }
  return out;
}

// C tile (mr x nr) = panel (k x MR, zero padded) * B columns (ldb-strided).
template <class T, std::size_t MR, std::size_t NR>
void gemm_tile(const T* __restrict panel, const T* __restrict B, std::size_t ldb, T* __restrict C, std::size_t ldc,
               std::size_t k, std::size_t mr, std::size_t nr) {
  T acc[MR][NR] = {};
  if (nr == NR) {
    for (std::size_t p = 0; p < k; ++p) {
      const T* b = B + p * ldb;
      const T* a = panel + p * MR;
      for (std::size_t i = 0; i < MR; ++i)
        for (std::size_t j = 0; j < NR; ++j) acc[i][j] += a[i] * b[j];
    }
  } else {
    T bb[NR];
    for (std::size_t p = 0; p < k; ++p) {
      const T* b = B + p * ldb;
      const T* a = panel + p * MR;
      for (std::size_t j = 0; j < NR; ++j) bb[j] = j < nr ? b[j] : T(0);
      for (std::size_t i = 0; i < MR; ++i)
        for (std::size_t j = 0; j < NR; ++j) acc[i][j] += a[i] * bb[j];
    }
  }
  for (std::size_t i = 0; i < mr; ++i) {
    for (std::size_t j = 0; j < nr; ++j) C[i * ldc + j] = acc[i][j];
  }
}

// C[m x n] = op(A) * B where op(A) is A [m x k] or, with `a_transposed`, the
// transpose of A stored [k x m].
template <class T>
void gemm_panels(const T* A, bool a_transposed, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
  std::vector<T> panel(k * kTileRows);
  for (std::size_t i0 = 0; i0 < m; i0 += kTileRows) {
    const std::size_t mr = std::min(kTileRows, m - i0);
    for (std::size_t p = 0; p < k; ++p) {
      T* dst = panel.data() + p * kTileRows;
      for (std::size_t i = 0; i < kTileRows; ++i) {
        if (i >= mr) dst[i] = T(0);
        else dst[i] = a_transposed ? A[p * m + i0 + i] : A[(i0 + i) * k + p];
      }
    }
    for (std::size_t j0 = 0; j0 < n; j0 += kTileCols) {
      gemm_tile<T, kTileRows, kTileCols>(panel.data(), B + j0, n, C + i0 * n + j0, n, k, mr,
                                         std::min(kTileCols, n - j0));
    }
  }
}

// NJ output columns at once: C[i, j] = dot(A row i, Bt row j).
template <class T, std::size_t NJ>
void gemm_dot_cols(const T* __restrict A, const T* __restrict Bt, T* __restrict C, std::size_t ldc, std::size_t m,
                   std::size_t k) {
  constexpr std::size_t L = 64 / sizeof(T);
  for (std::size_t i = 0; i < m; ++i) {
    const T* a = A + i * k;
    T acc[NJ][L] = {};
    std::size_t p = 0;
    for (; p + L <= k; p += L)
      for (std::size_t j = 0; j < NJ; ++j)
        for (std::size_t l = 0; l < L; ++l) acc[j][l] += a[p + l] * Bt[j * k + p + l];
    for (std::size_t j = 0; j < NJ; ++j) {
      T s = 0;
      for (std::size_t l = 0; l < L; ++l) s += acc[j][l];
      for (std::size_t q = p; q < k; ++q) s += a[q] * Bt[j * k + q];
      C[i * ldc + j] = s;
    }
  }
}

/// C[m x n] = A[m x k] * Bt^T, with Bt stored [n x k].
template <class T>
void gemm_dot(const T* A, const T* Bt, T* C, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t j0 = 0; j0 < n; j0 += kNarrowCols) {
    const T* b = Bt + j0 * k;
    T* c = C + j0;
    switch (std::min(kNarrowCols, n - j0)) {
      case 1: gemm_dot_cols<T, 1>(A, b, c, n, m, k); break;
      case 2: gemm_dot_cols<T, 2>(A, b, c, n, m, k); break;
      case 3: gemm_dot_cols<T, 3>(A, b, c, n, m, k); break;
      case 4: gemm_dot_cols<T, 4>(A, b, c, n, m, k); break;
      case 5: gemm_dot_cols<T, 5>(A, b, c, n, m, k); break;
      case 6: gemm_dot_cols<T, 6>(A, b, c, n, m, k); break;
      case 7: gemm_dot_cols<T, 7>(A, b, c, n, m, k); break;
      default: gemm_dot_cols<T, 8>(A, b, c, n, m, k); break;
    }
  }
}

}  // namespace

template <class T>
void gemm_nn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
  if (k == 0) {
    std::fill(C, C + m * n, T(0));
    return;
  }
  if (n <= kNarrowCols) {
    const std::vector<T> bt = transpose_copy(B, k, n);
    gemm_dot(A, bt.data(), C, m, k, n);
    return;
  }
  gemm_panels(A, false, B, C, m, k, n);
}

template <class T>
void gemm_tn(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
  if (k == 0) {
    std::fill(C, C + m * n, T(0));
    return;
  }
  if (n <= kNarrowCols && m > kNarrowCols) {
    // C^T = B^T A keeps the wide dimension m in the register tile.
    const std::vector<T> bt = transpose_copy(B, k, n);
    std::vector<T> ct(n * m);
    gemm_panels(bt.data(), false, A, ct.data(), n, k, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) C[i * n + j] = ct[j * m + i];
    return;
  }
  gemm_panels(A, true, B, C, m, k, n);
}

template <class T>
void gemm_nt(const T* A, const T* B, T* C, std::size_t m, std::size_t k, std::size_t n) {
  if (n <= kNarrowCols || k >= 16 * n) {
    gemm_dot(A, B, C, m, k, n);
    return;
  }
  const std::vector<T> bt = transpose_copy(B, n, k);
  gemm_nn(A, bt.data(), C, m, k, n);
}

template void gemm_nn<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_nn<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template void gemm_tn<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_tn<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
template void gemm_nt<float>(const float*, const float*, float*, std::size_t, std::size_t, std::size_t);
template void gemm_nt<double>(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);

namespace {

// ---------------------------------------------------------------------------
// Broadcasting

struct Broadcast4 {
  std::array<std::size_t, 4> extent{1, 1, 1, 1};
  std::array<std::size_t, 4> stride_a{0, 0, 0, 0};
  std::array<std::size_t, 4> stride_b{0, 0, 0, 0};
};

std::array<std::size_t, 4> pad4(const Shape& s) {
  std::array<std::size_t, 4> p{1, 1, 1, 1};
  std::copy(s.begin(), s.end(), p.begin() + (4 - s.size()));
  return p;
}

std::array<std::size_t, 4> strides4(const std::array<std::size_t, 4>& ext, const std::array<std::size_t, 4>& out) {
  std::array<std::size_t, 4> st{};
  std::size_t acc = 1;
  for (int d = 3; d >= 0; --d) {
    st[d] = (ext[d] == out[d]) ? acc : 0;
    acc *= ext[d];
  }
  return st;
}

Broadcast4 plan_broadcast(const Shape& a, const Shape& b) {
  Shape out = broadcast_shape(a, b);
  Broadcast4 plan;
  plan.extent = pad4(out);
  plan.stride_a = strides4(pad4(a), plan.extent);
  plan.stride_b = strides4(pad4(b), plan.extent);
  return plan;
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.begin(), small.end(), big.end() - small.size());
}

template <class T, class F>
void broadcast_apply(const std::vector<T>& a, const Shape& sa, const std::vector<T>& b, const Shape& sb,
                     std::vector<T>& out, F f) {
  if (sa == sb) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a[i], b[i]);
    return;
  }
  if (is_suffix(sb, sa)) {
    const std::size_t nb = b.size();
    for (std::size_t r = 0; r < out.size(); r += nb)
      for (std::size_t j = 0; j < nb; ++j) out[r + j] = f(a[r + j], b[j]);
    return;
  }
  if (is_suffix(sa, sb)) {
    const std::size_t na = a.size();
    for (std::size_t r = 0; r < out.size(); r += na)
      for (std::size_t j = 0; j < na; ++j) out[r + j] = f(a[j], b[r + j]);
    return;
  }
  Broadcast4 p = plan_broadcast(sa, sb);
  std::size_t idx = 0;
  for (std::size_t i0 = 0; i0 < p.extent[0]; ++i0)
    for (std::size_t i1 = 0; i1 < p.extent[1]; ++i1)
      for (std::size_t i2 = 0; i2 < p.extent[2]; ++i2)
        for (std::size_t i3 = 0; i3 < p.extent[3]; ++i3) {
          std::size_t ia = i0 * p.stride_a[0] + i1 * p.stride_a[1] + i2 * p.stride_a[2] + i3 * p.stride_a[3];
          std::size_t ib = i0 * p.stride_b[0] + i1 * p.stride_b[1] + i2 * p.stride_b[2] + i3 * p.stride_b[3];
          out[idx++] = f(a[ia], b[ib]);
        }
}

template <class F>
Tensor binary_forward(const Tensor& a, const Tensor& b, const char* op, F f) {
  require_same_dtype(a, b, op);
  Tensor out = Tensor::zeros(broadcast_shape(a.shape(), b.shape()), a.dtype());
  visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    broadcast_apply<T>(vals<T>(a), a.shape(), vals<T>(b), b.shape(), mvals<T>(out), [&](T x, T y) { return f(x, y); });
  });
  return out;
}

template <class F>
Tensor unary_forward(const Tensor& x, F f) {
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& in = vals<T>(x);
    auto& o = mvals<T>(out);
    for (std::size_t i = 0; i < in.size(); ++i) o[i] = f(in[i]);
  });
  return out;
}

/// out[i] = g[i] * d(x[i], y[i]) for same-shape tensors.
template <class F>
Tensor chain_elementwise(const Tensor& g, const Tensor& x, const Tensor& y, F d) {
  Tensor out = Tensor::zeros(g.shape(), g.dtype());
  visit_dtype(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& gv = vals<T>(g);
    const auto& xv = vals<T>(x);
    const auto& yv = vals<T>(y);
    auto& o = mvals<T>(out);
    for (std::size_t i = 0; i < gv.size(); ++i) o[i] = gv[i] * d(xv[i], yv[i]);
  });
  return out;
}

std::size_t checked_axis(const Tensor& x, std::size_t axis, const char* op) {
  if (axis >= x.rank()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(x.shape()));
  }
  return axis;
}

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t d = 0; d < axis; ++d) r.outer *= s[d];
  r.extent = s[axis];
  for (std::size_t d = axis + 1; d < s.size(); ++d) r.inner *= s[d];
  return r;
}

// ---------------------------------------------------------------------------
// conv2d geometry

struct ConvGeometry {
  std::size_t h, w, cin, cout, k, stride;
  std::size_t out_h, out_w;
  std::size_t pad_top, pad_left;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& kernels, std::size_t stride, Padding padding) {
  if (x.rank() != 3) throw DimensionError("conv2d: input must be [h x w x cin], got " + shape_to_string(x.shape()));
  if (kernels.rank() != 4) throw DimensionError("conv2d: kernels must be [k x k x cin x cout]");
  ConvGeometry g{};
  g.h = x.extent(0);
  g.w = x.extent(1);
  g.cin = x.extent(2);
  g.k = kernels.extent(0);
  g.cout = kernels.extent(3);
  g.stride = stride;
  if (kernels.extent(1) != g.k) throw DimensionError("conv2d: kernels must be square");
  if (g.k % 2 == 0) throw DimensionError("conv2d: kernel size must be odd");
  if (kernels.extent(2) != g.cin) {
    throw DimensionError("conv2d: channel mismatch, input has " + std::to_string(g.cin) + " channels, kernels expect " +
                         std::to_string(kernels.extent(2)));
  }
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (padding == Padding::same) {
    g.out_h = (g.h + stride - 1) / stride;
    g.out_w = (g.w + stride - 1) / stride;
    std::size_t need_h = (g.out_h - 1) * stride + g.k;
    std::size_t need_w = (g.out_w - 1) * stride + g.k;
    g.pad_top = need_h > g.h ? (need_h - g.h) / 2 : 0;
    g.pad_left = need_w > g.w ? (need_w - g.w) / 2 : 0;
  } else {
    if (g.h < g.k || g.w < g.k) throw DimensionError("conv2d: input smaller than kernel with valid padding");
    g.out_h = (g.h - g.k) / stride + 1;
    g.out_w = (g.w - g.k) / stride + 1;
    g.pad_top = g.pad_left = 0;
  }
  return g;
}

bool is_pointwise(const ConvGeometry& g) { return g.k == 1 && g.stride == 1; }

template <class T>
std::vector<T> im2col(const T* x, const ConvGeometry& g) {
  const std::size_t patch = g.k * g.k * g.cin;
  std::vector<T> cols(g.out_h * g.out_w * patch, T(0));
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      T* row = cols.data() + (oy * g.out_w + ox) * patch;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad_top);
        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad_left);
          if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
          const T* src = x + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          std::copy(src, src + g.cin, row + (ky * g.k + kx) * g.cin);
        }
      }
    }
  }
  return cols;
}

template <class T>
void col2im(const T* cols, const ConvGeometry& g, T* x) {
  const std::size_t patch = g.k * g.k * g.cin;
  for (std::size_t oy = 0; oy < g.out_h; ++oy) {
    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
      const T* row = cols + (oy * g.out_w + ox) * patch;
      for (std::size_t ky = 0; ky < g.k; ++ky) {
        const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad_top);
        if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
        for (std::size_t kx = 0; kx < g.k; ++kx) {
          const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad_left);
          if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
          T* dst = x + (static_cast<std::size_t>(iy) * g.w + static_cast<std::size_t>(ix)) * g.cin;
          const T* src = row + (ky * g.k + kx) * g.cin;
          for (std::size_t c = 0; c < g.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

struct PoolWindow {
  std::size_t begin, end;
};

PoolWindow pool_window(std::size_t i, std::size_t in, std::size_t out) {
  return {(i * in) / out, ((i + 1) * in + out - 1) / out};
}

std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size());
  std::size_t acc = 1;
  for (std::size_t d = s.size(); d-- > 0;) {
    st[d] = acc;
    acc *= s[d];
  }
  return st;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
    std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
    if (ea != eb && ea != 1 && eb != 1) {
      throw DimensionError("shapes " + shape_to_string(a) + " and " + shape_to_string(b) + " do not broadcast");
    }
    out[i] = std::max(ea, eb);
  }
  return out;
}

Tensor sum_to(const Tensor& g, const Shape& shape) {
  if (g.shape() == shape) return g;
  if (broadcast_shape(g.shape(), shape) != g.shape()) {
    throw DimensionError("sum_to: " + shape_to_string(shape) + " is not broadcastable to " + shape_to_string(g.shape()));
  }
  Tensor out = Tensor::zeros(shape, g.dtype());
  visit_dtype(g.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& gv = vals<T>(g);
    auto& o = mvals<T>(out);
    if (is_suffix(shape, g.shape())) {
      const std::size_t n = o.size();
      for (std::size_t r = 0; r < gv.size(); r += n)
        for (std::size_t j = 0; j < n; ++j) o[j] += gv[r + j];
      return;
    }
    auto ext = pad4(g.shape());
    auto st = strides4(pad4(shape), ext);
    std::size_t idx = 0;
    for (std::size_t i0 = 0; i0 < ext[0]; ++i0)
      for (std::size_t i1 = 0; i1 < ext[1]; ++i1)
        for (std::size_t i2 = 0; i2 < ext[2]; ++i2)
          for (std::size_t i3 = 0; i3 < ext[3]; ++i3)
            o[i0 * st[0] + i1 * st[1] + i2 * st[2] + i3 * st[3]] += gv[idx++];
  });
  return out;
}

// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "matmul");
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul expects 2-D operands, got " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  if (b.extent(0) != k) {
    throw DimensionError("matmul inner extents differ: " + shape_to_string(a.shape()) + " x " +
                         shape_to_string(b.shape()));
  }
  Tensor out = Tensor::zeros({m, n}, a.dtype());
  visit_dtype(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    gemm_nn(a.data<T>(), b.data<T>(), out.mutable_data<T>(), m, k, n);
  });
  return record_op(out, {a, b}, [a, b, m, k, n](const Tensor& g) {
    std::vector<Tensor> grads(2);
    visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      if (a.needs_grad()) {
        Tensor ga = Tensor::zeros({m, k}, g.dtype());
        gemm_nt(g.data<T>(), b.data<T>(), ga.mutable_data<T>(), m, n, k);
        grads[0] = ga;
      }
      if (b.needs_grad()) {
        Tensor gb = Tensor::zeros({k, n}, g.dtype());
        gemm_tn(a.data<T>(), g.data<T>(), gb.mutable_data<T>(), k, m, n);
        grads[1] = gb;
      }
    });
    return grads;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = binary_forward(a, b, "add", [](auto x, auto y) { return x + y; });
  Shape sa = a.shape(), sb = b.shape();
  return record_op(out, {a, b}, [sa, sb](const Tensor& g) {
    return std::vector<Tensor>{sum_to(g, sa), sum_to(g, sb)};
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Tensor out = binary_forward(a, b, "sub", [](auto x, auto y) { return x - y; });
  Shape sa = a.shape(), sb = b.shape();
  return record_op(out, {a, b}, [sa, sb](const Tensor& g) {
    NoGradScope ng;
    return std::vector<Tensor>{sum_to(g, sa), neg(sum_to(g, sb))};
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Tensor out = binary_forward(a, b, "mul", [](auto x, auto y) { return x * y; });
  return record_op(out, {a, b}, [a, b](const Tensor& g) {
    std::vector<Tensor> grads(2);
    if (a.needs_grad()) grads[0] = sum_to(binary_forward(g, b, "mul", [](auto x, auto y) { return x * y; }), a.shape());
    if (b.needs_grad()) grads[1] = sum_to(binary_forward(g, a, "mul", [](auto x, auto y) { return x * y; }), b.shape());
    return grads;
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  Tensor out = binary_forward(a, b, "div", [](auto x, auto y) { return x / y; });
  return record_op(out, {a, b}, [a, b, out](const Tensor& g) {
    std::vector<Tensor> grads(2);
    Tensor g_over_b = binary_forward(g, b, "div", [](auto x, auto y) { return x / y; });
    if (a.needs_grad()) grads[0] = sum_to(g_over_b, a.shape());
    if (b.needs_grad()) {
      // d(a/b)/db = -(a/b)/b
      Tensor t = binary_forward(g_over_b, out, "mul", [](auto x, auto y) { return -x * y; });
      grads[1] = sum_to(t, b.shape());
    }
    return grads;
  });
}

Tensor scale(const Tensor& x, double factor) {
  Tensor out = unary_forward(x, [factor](auto v) { return v * static_cast<decltype(v)>(factor); });
  return record_op(out, {x}, [factor](const Tensor& g) {
    return std::vector<Tensor>{unary_forward(g, [factor](auto v) { return v * static_cast<decltype(v)>(factor); })};
  });
}

Tensor add_scalar(const Tensor& x, double value) {
  Tensor out = unary_forward(x, [value](auto v) { return v + static_cast<decltype(v)>(value); });
  return record_op(out, {x}, [](const Tensor& g) { return std::vector<Tensor>{g}; });
}

Tensor neg(const Tensor& x) { return scale(x, -1.0); }

Tensor relu(const Tensor& x) {
  Tensor out = unary_forward(x, [](auto v) { return v > 0 ? v : decltype(v)(0); });
  return record_op(out, {x}, [x](const Tensor& g) {
    return std::vector<Tensor>{chain_elementwise(g, x, x, [](auto v, auto) { return v > 0 ? decltype(v)(1) : decltype(v)(0); })};
  });
}

Tensor gelu(const Tensor& x) {
  Tensor out = unary_forward(x, [](auto v) {
    using T = decltype(v);
    return static_cast<T>(0.5) * v * (static_cast<T>(1) + std::erf(v * static_cast<T>(kInvSqrt2)));
  });
  return record_op(out, {x}, [x](const Tensor& g) {
    return std::vector<Tensor>{chain_elementwise(g, x, x, [](auto v, auto) {
      using T = decltype(v);
      T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(v * static_cast<T>(kInvSqrt2)));
      T pdf = static_cast<T>(kInvSqrt2Pi) * std::exp(static_cast<T>(-0.5) * v * v);
      return cdf + v * pdf;
    })};
  });
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = unary_forward(x, [](auto v) {
    using T = decltype(v);
    if (v >= 0) return static_cast<T>(1) / (static_cast<T>(1) + std::exp(-v));
    T e = std::exp(v);
    return e / (static_cast<T>(1) + e);
  });
  return record_op(out, {x}, [out](const Tensor& g) {
    return std::vector<Tensor>{chain_elementwise(g, out, out, [](auto s, auto) { return s * (decltype(s)(1) - s); })};
  });
}

Tensor exp(const Tensor& x) {
  Tensor out = unary_forward(x, [](auto v) { return std::exp(v); });
  return record_op(out, {x}, [out](const Tensor& g) {
    return std::vector<Tensor>{chain_elementwise(g, out, out, [](auto y, auto) { return y; })};
  });
}

Tensor log(const Tensor& x) {
  Tensor out = unary_forward(x, [](auto v) { return std::log(v); });
  return record_op(out, {x}, [x](const Tensor& g) {
    return std::vector<Tensor>{chain_elementwise(g, x, x, [](auto v, auto) { return decltype(v)(1) / v; })};
  });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) throw DimensionError("clamp: lo must not exceed hi");
  Tensor out = unary_forward(x, [lo, hi](auto v) {
    using T = decltype(v);
    return std::clamp(v, static_cast<T>(lo), static_cast<T>(hi));
  });
  return record_op(out, {x}, [x, lo, hi](const Tensor& g) {
    return std::vector<Tensor>{chain_elementwise(g, x, x, [lo, hi](auto v, auto) {
      using T = decltype(v);
      return (v > static_cast<T>(lo) && v < static_cast<T>(hi)) ? T(1) : T(0);
    })};
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  checked_axis(x, axis, "softmax");
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* in = x.data<T>();
    T* o = out.mutable_data<T>();
    for (std::size_t a = 0; a < sp.outer; ++a) {
      for (std::size_t c = 0; c < sp.inner; ++c) {
        const std::size_t base = a * sp.extent * sp.inner + c;
        T mx = in[base];
        for (std::size_t i = 1; i < sp.extent; ++i) mx = std::max(mx, in[base + i * sp.inner]);
        T total = 0;
        for (std::size_t i = 0; i < sp.extent; ++i) {
          T e = std::exp(in[base + i * sp.inner] - mx);
          o[base + i * sp.inner] = e;
          total += e;
        }
        const T inv = T(1) / total;
        for (std::size_t i = 0; i < sp.extent; ++i) o[base + i * sp.inner] *= inv;
      }
    }
  });
  return record_op(out, {x}, [out, sp](const Tensor& g) {
    Tensor gx = Tensor::zeros(g.shape(), g.dtype());
    visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* y = out.data<T>();
      const T* gy = g.data<T>();
      T* r = gx.mutable_data<T>();
      for (std::size_t a = 0; a < sp.outer; ++a) {
        for (std::size_t c = 0; c < sp.inner; ++c) {
          const std::size_t base = a * sp.extent * sp.inner + c;
          T dot = 0;
          for (std::size_t i = 0; i < sp.extent; ++i) dot += gy[base + i * sp.inner] * y[base + i * sp.inner];
          for (std::size_t i = 0; i < sp.extent; ++i) {
            const std::size_t j = base + i * sp.inner;
            r[j] = y[j] * (gy[j] - dot);
          }
        }
      }
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  require_same_dtype(x, gamma, "layer_norm");
  require_same_dtype(x, beta, "layer_norm");
  const std::size_t n = x.shape().back();
  if (gamma.numel() != n || beta.numel() != n) {
    throw DimensionError("layer_norm: gamma/beta must match last extent " + std::to_string(n));
  }
  const std::size_t rows = x.numel() / n;
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  Tensor xhat = Tensor::zeros(x.shape(), x.dtype());
  Tensor rstd = Tensor::zeros({rows}, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* in = x.data<T>();
    const T* gm = gamma.data<T>();
    const T* bt = beta.data<T>();
    T* o = out.mutable_data<T>();
    T* xh = xhat.mutable_data<T>();
    T* rs = rstd.mutable_data<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = in + r * n;
      T mu = 0;
      for (std::size_t i = 0; i < n; ++i) mu += row[i];
      mu /= static_cast<T>(n);
      T var = 0;
      for (std::size_t i = 0; i < n; ++i) var += (row[i] - mu) * (row[i] - mu);
      var /= static_cast<T>(n);
      const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
      rs[r] = inv;
      for (std::size_t i = 0; i < n; ++i) {
        const T h = (row[i] - mu) * inv;
        xh[r * n + i] = h;
        o[r * n + i] = h * gm[i] + bt[i];
      }
    }
  });
  return record_op(out, {x, gamma, beta}, [xhat, rstd, gamma, n, rows](const Tensor& g) {
    Tensor gx = Tensor::zeros(g.shape(), g.dtype());
    Tensor ggamma = Tensor::zeros(gamma.shape(), g.dtype());
    Tensor gbeta = Tensor::zeros(gamma.shape(), g.dtype());
    visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* gy = g.data<T>();
      const T* xh = xhat.data<T>();
      const T* rs = rstd.data<T>();
      const T* gm = gamma.data<T>();
      T* rx = gx.mutable_data<T>();
      T* rg = ggamma.mutable_data<T>();
      T* rb = gbeta.mutable_data<T>();
      for (std::size_t r = 0; r < rows; ++r) {
        T mean_g = 0, mean_gx = 0;
        for (std::size_t i = 0; i < n; ++i) {
          const T gh = gy[r * n + i] * gm[i];
          mean_g += gh;
          mean_gx += gh * xh[r * n + i];
          rg[i] += gy[r * n + i] * xh[r * n + i];
          rb[i] += gy[r * n + i];
        }
        mean_g /= static_cast<T>(n);
        mean_gx /= static_cast<T>(n);
        for (std::size_t i = 0; i < n; ++i) {
          const T gh = gy[r * n + i] * gm[i];
          rx[r * n + i] = rs[r] * (gh - mean_g - xh[r * n + i] * mean_gx);
        }
      }
    });
    return std::vector<Tensor>{gx, ggamma, gbeta};
  });
}

Tensor conv2d(const Tensor& x, const Tensor& kernels, const Tensor& bias, std::size_t stride, Padding padding) {
  require_same_dtype(x, kernels, "conv2d");
  const ConvGeometry geo = conv_geometry(x, kernels, stride, padding);
  if (bias.defined()) {
    require_same_dtype(x, bias, "conv2d");
    if (bias.numel() != geo.cout) throw DimensionError("conv2d: bias must have cout entries");
  }
  const std::size_t patch = geo.k * geo.k * geo.cin;
  const std::size_t pixels = geo.out_h * geo.out_w;
  Tensor out = Tensor::zeros({geo.out_h, geo.out_w, geo.cout}, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* o = out.mutable_data<T>();
    if (is_pointwise(geo)) {
      gemm_nn(x.data<T>(), kernels.data<T>(), o, pixels, patch, geo.cout);
    } else {
      std::vector<T> cols = im2col(x.data<T>(), geo);
      gemm_nn(cols.data(), kernels.data<T>(), o, pixels, patch, geo.cout);
    }
    if (bias.defined()) {
      const T* b = bias.data<T>();
      for (std::size_t p = 0; p < pixels; ++p)
        for (std::size_t c = 0; c < geo.cout; ++c) o[p * geo.cout + c] += b[c];
    }
  });
  std::vector<Tensor> inputs{x, kernels};
  if (bias.defined()) inputs.push_back(bias);
  const bool has_bias = bias.defined();
  return record_op(out, std::move(inputs), [x, kernels, geo, has_bias, patch, pixels](const Tensor& g) {
    std::vector<Tensor> grads(has_bias ? 3 : 2);
    visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* gy = g.data<T>();
      const bool pointwise = is_pointwise(geo);
      std::vector<T> cols;
      if (kernels.needs_grad() && !pointwise) cols = im2col(x.data<T>(), geo);
      if (kernels.needs_grad()) {
        Tensor gk = Tensor::zeros(kernels.shape(), g.dtype());
        const T* src = pointwise ? x.data<T>() : cols.data();
        gemm_tn(src, gy, gk.mutable_data<T>(), patch, pixels, geo.cout);
        grads[1] = gk;
      }
      if (x.needs_grad()) {
        Tensor gx = Tensor::zeros(x.shape(), g.dtype());
        if (pointwise) {
          gemm_nt(gy, kernels.data<T>(), gx.mutable_data<T>(), pixels, geo.cout, patch);
        } else {
          std::vector<T> gcols(pixels * patch);
          gemm_nt(gy, kernels.data<T>(), gcols.data(), pixels, geo.cout, patch);
          col2im(gcols.data(), geo, gx.mutable_data<T>());
        }
        grads[0] = gx;
      }
      if (has_bias) {
        Tensor gb = Tensor::zeros({geo.cout}, g.dtype());
        T* b = gb.mutable_data<T>();
        for (std::size_t p = 0; p < pixels; ++p)
          for (std::size_t c = 0; c < geo.cout; ++c) b[c] += gy[p * geo.cout + c];
        grads[2] = gb;
      }
    });
    return grads;
  });
}

Tensor pool_adaptive_avg(const Tensor& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() != 3) throw DimensionError("pool_adaptive_avg: input must be [h x w x c]");
  const std::size_t h = x.extent(0), w = x.extent(1), c = x.extent(2);
  if (out_h == 0 || out_w == 0 || out_h > h || out_w > w) {
    throw DimensionError("pool_adaptive_avg: output " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                         " must be within input " + std::to_string(h) + "x" + std::to_string(w));
  }
  Tensor out = Tensor::zeros({out_h, out_w, c}, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* in = x.data<T>();
    T* o = out.mutable_data<T>();
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const PoolWindow wy = pool_window(oy, h, out_h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const PoolWindow wx = pool_window(ox, w, out_w);
        T* dst = o + (oy * out_w + ox) * c;
        for (std::size_t y = wy.begin; y < wy.end; ++y)
          for (std::size_t xx = wx.begin; xx < wx.end; ++xx) {
            const T* src = in + (y * w + xx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch];
          }
        const T inv = T(1) / static_cast<T>((wy.end - wy.begin) * (wx.end - wx.begin));
        for (std::size_t ch = 0; ch < c; ++ch) dst[ch] *= inv;
      }
    }
  });
  return record_op(out, {x}, [h, w, c, out_h, out_w](const Tensor& g) {
    Tensor gx = Tensor::zeros({h, w, c}, g.dtype());
    visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* gy = g.data<T>();
      T* r = gx.mutable_data<T>();
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        const PoolWindow wy = pool_window(oy, h, out_h);
        for (std::size_t ox = 0; ox < out_w; ++ox) {
          const PoolWindow wx = pool_window(ox, w, out_w);
          const T inv = T(1) / static_cast<T>((wy.end - wy.begin) * (wx.end - wx.begin));
          const T* src = gy + (oy * out_w + ox) * c;
          for (std::size_t y = wy.begin; y < wy.end; ++y)
            for (std::size_t xx = wx.begin; xx < wx.end; ++xx) {
              T* dst = r + (y * w + xx) * c;
              for (std::size_t ch = 0; ch < c; ++ch) dst[ch] += src[ch] * inv;
            }
        }
      }
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> axes) {
  const std::size_t rank = x.rank();
  if (axes.size() != rank) throw DimensionError("permute: axes count must equal rank");
  std::vector<bool> seen(rank);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: axes must be a permutation");
    seen[a] = true;
  }
  const Shape& in_shape = x.shape();
  Shape out_shape(rank);
  for (std::size_t d = 0; d < rank; ++d) out_shape[d] = in_shape[axes[d]];
  const auto in_strides = row_major_strides(in_shape);
  // Stride in the input for each output axis, padded to rank 4.
  std::array<std::size_t, 4> ext{1, 1, 1, 1}, st{0, 0, 0, 0};
  for (std::size_t d = 0; d < rank; ++d) {
    ext[4 - rank + d] = out_shape[d];
    st[4 - rank + d] = in_strides[axes[d]];
  }
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* in = x.data<T>();
    T* o = out.mutable_data<T>();
    std::size_t idx = 0;
    for (std::size_t i0 = 0; i0 < ext[0]; ++i0)
      for (std::size_t i1 = 0; i1 < ext[1]; ++i1)
        for (std::size_t i2 = 0; i2 < ext[2]; ++i2) {
          const T* base = in + i0 * st[0] + i1 * st[1] + i2 * st[2];
          for (std::size_t i3 = 0; i3 < ext[3]; ++i3) o[idx++] = base[i3 * st[3]];
        }
  });
  std::vector<std::size_t> inverse(rank);
  for (std::size_t d = 0; d < rank; ++d) inverse[axes[d]] = d;
  return record_op(out, {x}, [inverse](const Tensor& g) {
    NoGradScope ng;
    return std::vector<Tensor>{permute(g, inverse)};
  });
}

Tensor permute(const Tensor& x, std::initializer_list<std::size_t> axes) {
  return permute(x, std::span<const std::size_t>(axes.begin(), axes.size()));
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw DimensionError("transpose expects a 2-D tensor");
  return permute(x, {1, 0});
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  Tensor out = Tensor::from_buffer(shape, x.buffer());
  Shape original = x.shape();
  return record_op(out, {x}, [original](const Tensor& g) {
    return std::vector<Tensor>{Tensor::from_buffer(original, g.buffer())};
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Tensor& first = parts.front();
  checked_axis(first, axis, "concat");
  Shape out_shape = first.shape();
  out_shape[axis] = 0;
  for (const Tensor& p : parts) {
    require_same_dtype(first, p, "concat");
    if (p.rank() != first.rank()) throw DimensionError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.extent(d) != first.extent(d)) {
        throw DimensionError("concat: extent mismatch " + shape_to_string(p.shape()) + " vs " +
                             shape_to_string(first.shape()) + " off axis " + std::to_string(axis));
      }
    }
    out_shape[axis] += p.extent(axis);
  }
  const AxisSplit sp = split_axis(out_shape, axis);
  Tensor out = Tensor::zeros(out_shape, first.dtype());
  std::vector<std::size_t> offsets;
  visit_dtype(first.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T* o = out.mutable_data<T>();
    std::size_t offset = 0;
    for (const Tensor& p : parts) {
      offsets.push_back(offset);
      const std::size_t chunk = p.extent(axis) * sp.inner;
      const T* src = p.data<T>();
      for (std::size_t a = 0; a < sp.outer; ++a) {
        std::copy(src + a * chunk, src + (a + 1) * chunk, o + a * sp.extent * sp.inner + offset * sp.inner);
      }
      offset += p.extent(axis);
    }
  });
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> lengths;
  for (const Tensor& p : parts) lengths.push_back(p.extent(axis));
  return record_op(out, std::move(inputs), [axis, offsets, lengths](const Tensor& g) {
    NoGradScope ng;
    std::vector<Tensor> grads;
    for (std::size_t i = 0; i < offsets.size(); ++i) grads.push_back(slice(g, axis, offsets[i], lengths[i]));
    return grads;
  });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  checked_axis(x, axis, "slice");
  if (length == 0 || start + length > x.extent(axis)) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range for extent " + std::to_string(x.extent(axis)));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  const AxisSplit sp = split_axis(x.shape(), axis);
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* in = x.data<T>();
    T* o = out.mutable_data<T>();
    const std::size_t chunk = length * sp.inner;
    for (std::size_t a = 0; a < sp.outer; ++a) {
      const T* src = in + a * sp.extent * sp.inner + start * sp.inner;
      std::copy(src, src + chunk, o + a * chunk);
    }
  });
  Shape in_shape = x.shape();
  return record_op(out, {x}, [in_shape, sp, start, length](const Tensor& g) {
    Tensor gx = Tensor::zeros(in_shape, g.dtype());
    visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* gy = g.data<T>();
      T* r = gx.mutable_data<T>();
      const std::size_t chunk = length * sp.inner;
      for (std::size_t a = 0; a < sp.outer; ++a) {
        std::copy(gy + a * chunk, gy + (a + 1) * chunk, r + a * sp.extent * sp.inner + start * sp.inner);
      }
    });
    return std::vector<Tensor>{gx};
  });
}

Tensor sum(const Tensor& x) {
  Tensor out = Tensor::zeros({1}, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    T total = 0;
    for (T v : vals<T>(x)) total += v;
    mvals<T>(out)[0] = total;
  });
  Shape in_shape = x.shape();
  return record_op(out, {x}, [in_shape](const Tensor& g) {
    return std::vector<Tensor>{Tensor::full(in_shape, g.item(0), g.dtype())};
  });
}

Tensor sum(const Tensor& x, std::size_t axis) {
  checked_axis(x, axis, "sum");
  const AxisSplit sp = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  Tensor out = Tensor::zeros(out_shape, x.dtype());
  visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* in = x.data<T>();
    T* o = out.mutable_data<T>();
    for (std::size_t a = 0; a < sp.outer; ++a)
      for (std::size_t i = 0; i < sp.extent; ++i)
        for (std::size_t c = 0; c < sp.inner; ++c) o[a * sp.inner + c] += in[(a * sp.extent + i) * sp.inner + c];
  });
  Shape in_shape = x.shape();
  return record_op(out, {x}, [in_shape](const Tensor& g) {
    Tensor ones = Tensor::full(in_shape, 1.0, g.dtype());
    return std::vector<Tensor>{binary_forward(ones, g, "mul", [](auto a, auto b) { return a * b; })};
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace scopeformer::core
