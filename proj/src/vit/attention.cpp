#include "scopeformer/vit/attention.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cmath>

#include "scopeformer/core/gemm.hpp"
#include "scopeformer/core/ops.hpp"

namespace scopeformer::vit {

using core::ConfigError;
using core::DimensionError;

std::string to_string(AttentionKind kind) { return kind == AttentionKind::mhsa ? "mhsa" : "mhra"; }
std::string to_string(ReattentionNorm norm) { return norm == ReattentionNorm::row_sum ? "row-sum" : "identity"; }

AttentionKind attention_kind_from_string(const std::string& text) {
  if (text == "mhsa") return AttentionKind::mhsa;
  if (text == "mhra") return AttentionKind::mhra;
  throw ConfigError("unknown attention '" + text + "' (expected mhsa or mhra)");
}

ReattentionNorm reattention_norm_from_string(const std::string& text) {
  if (text == "row-sum") return ReattentionNorm::row_sum;
  if (text == "identity") return ReattentionNorm::identity;
  throw ConfigError("unknown reattention_norm '" + text + "' (expected row-sum or identity)");
}

std::vector<HeadSlice> head_partition(std::size_t t, std::size_t heads, bool allow_uneven) {
  if (heads == 0 || heads > t) {
    throw ConfigError(std::to_string(heads) + " heads cannot split a token dimension of " + std::to_string(t));
  }
  if (t % heads != 0 && !allow_uneven) {
    throw ConfigError(std::to_string(heads) + " heads do not divide the token dimension " + std::to_string(t) +
                      " (set uneven_heads = true to allow unequal head widths)");
  }
  std::vector<HeadSlice> out;
  const std::size_t base = t / heads, extra = t % heads;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < heads; ++i) {
    const std::size_t w = base + (i < extra ? 1 : 0);
    out.push_back({offset, w});
    offset += w;
  }
  return out;
}

MultiHeadAttention::MultiHeadAttention(const std::string& prefix, std::size_t t, std::size_t heads,
                                       AttentionKind kind, ReattentionNorm norm, bool allow_uneven, core::Rng& rng)
    : t_(t), kind_(kind), norm_(norm), heads_(head_partition(t, heads, allow_uneven)) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(t));
  auto weight = [&](const char* name) {
    return params_.add(prefix + "." + name, "encoder", core::init_uniform({t, t}, bound, rng));
  };
  auto bias = [&](const char* name) { return params_.add(prefix + "." + name, "encoder", Tensor::zeros({t})); };
  w_.wq = weight("wq");
  w_.bq = bias("bq");
  w_.wk = weight("wk");
  w_.bk = bias("bk");
  w_.wv = weight("wv");
  w_.bv = bias("bv");
  w_.wo = weight("wo");
  w_.bo = bias("bo");
  if (kind == AttentionKind::mhra) w_.m = params_.add(prefix + ".reattention", "encoder", core::init_identity(heads));
}

Tensor MultiHeadAttention::forward(const Tensor& x, std::vector<Tensor>* score_maps) const {
  return kind_ == AttentionKind::mhra ? mhra(x, *this, score_maps) : mhsa(x, *this, score_maps);
}

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) { return core::add(core::matmul(x, w), b); }

struct Projected {
  Tensor q, k, v;
};

Projected project(const Tensor& x, const MultiHeadAttention& block) {
  if (x.rank() != 2 || x.extent(1) != block.dim()) {
    throw DimensionError("attention input " + core::shape_to_string(x.shape()) + " does not have token width " +
                         std::to_string(block.dim()));
  }
  const AttentionWeights& w = block.weights();
  return {linear(x, w.wq, w.bq), linear(x, w.wk, w.bk), linear(x, w.wv, w.bv)};
}

// exp for softmax arguments (always <= 0). Doubles use the library call;
// floats use a branch-free range reduction plus a degree-6 polynomial
// (about 2 ulp) that the compiler can vectorize.
inline double softmax_exp(double x) { return std::exp(x); }

inline float softmax_exp(float x) {
  x = std::max(x, -87.0f);
  const float n = std::floor(x * 1.44269504088896341f + 0.5f);
  const float r = x - n * 0.693359375f + n * 2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * r + 1.3981999507e-3f;
  p = p * r + 8.3334519073e-3f;
  p = p * r + 4.1665795894e-2f;
  p = p * r + 1.6666665459e-1f;
  p = p * r + 5.0000001201e-1f;
  const float y = p * r * r + r + 1.0f;
  const std::int32_t bits = (static_cast<std::int32_t>(n) + 127) << 23;
  return y * std::bit_cast<float>(bits);
}

// Columns [offset, offset + width) of a row-major [rows x cols] buffer.
template <class T>
void gather_cols(const T* src, std::size_t rows, std::size_t cols, const HeadSlice& h, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < h.width; ++c) dst[r * h.width + c] = src[r * cols + h.offset + c];
}

template <class T>
void scatter_cols(const T* src, std::size_t rows, std::size_t cols, const HeadSlice& h, T* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < h.width; ++c) dst[r * cols + h.offset + c] = src[r * h.width + c];
}

// Every head's softmax(Q_h K_h^T / sqrt(width_h)), stacked into [h*S x S].
// One fused op so the tape holds a single node per block instead of a
// slice/matmul/scale/softmax chain per head.
Tensor head_scores(const Projected& p, const MultiHeadAttention& block) {
  const std::vector<HeadSlice>& heads = block.head_slices();
  const std::size_t s = p.q.extent(0), t = p.q.extent(1), h = heads.size();
  Tensor out = Tensor::zeros({h * s, s}, p.q.dtype());
  core::visit_dtype(p.q.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> qh, kh;
    T* o = out.mutable_data<T>();
    for (std::size_t i = 0; i < h; ++i) {
      qh.resize(s * heads[i].width);
      kh.resize(s * heads[i].width);
      gather_cols(p.q.data<T>(), s, t, heads[i], qh.data());
      gather_cols(p.k.data<T>(), s, t, heads[i], kh.data());
      T* y = o + i * s * s;
      core::gemm_nt(qh.data(), kh.data(), y, s, heads[i].width, s);
      const T scale = T(1) / std::sqrt(static_cast<T>(heads[i].width));
      for (std::size_t r = 0; r < s; ++r) {
        T* row = y + r * s;
        T mx = row[0] * scale;
#pragma omp simd reduction(max : mx)
        for (std::size_t c = 0; c < s; ++c) {
          row[c] *= scale;
          mx = std::max(mx, row[c]);
        }
        T total = 0;
#pragma omp simd reduction(+ : total)
        for (std::size_t c = 0; c < s; ++c) {
          row[c] = softmax_exp(row[c] - mx);
          total += row[c];
        }
        const T inv = T(1) / total;
        for (std::size_t c = 0; c < s; ++c) row[c] *= inv;
      }
    }
  });
  const Tensor q = p.q, k = p.k;
  return core::record_op(out, {q, k}, [out, q, k, heads](const Tensor& g) {
    const std::size_t s = q.extent(0), t = q.extent(1);
    Tensor gq = Tensor::zeros(q.shape(), q.dtype());
    Tensor gk = Tensor::zeros(k.shape(), k.dtype());
    core::visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      std::vector<T> qh, kh, dl(s * s), part;
      for (std::size_t i = 0; i < heads.size(); ++i) {
        const std::size_t w = heads[i].width;
        const T scale = T(1) / std::sqrt(static_cast<T>(w));
        const T* y = out.data<T>() + i * s * s;
        const T* gy = g.data<T>() + i * s * s;
        for (std::size_t r = 0; r < s; ++r) {
          T dot = 0;
#pragma omp simd reduction(+ : dot)
          for (std::size_t c = 0; c < s; ++c) dot += gy[r * s + c] * y[r * s + c];
          for (std::size_t c = 0; c < s; ++c) dl[r * s + c] = y[r * s + c] * (gy[r * s + c] - dot) * scale;
        }
        qh.resize(s * w);
        kh.resize(s * w);
        part.resize(s * w);
        gather_cols(q.data<T>(), s, t, heads[i], qh.data());
        gather_cols(k.data<T>(), s, t, heads[i], kh.data());
        core::gemm_nn(dl.data(), kh.data(), part.data(), s, s, w);
        scatter_cols(part.data(), s, t, heads[i], gq.mutable_data<T>());
        core::gemm_tn(dl.data(), qh.data(), part.data(), s, s, w);
        scatter_cols(part.data(), s, t, heads[i], gk.mutable_data<T>());
      }
    });
    return std::vector<Tensor>{gq, gk};
  });
}

// Row-block i of `maps` ([h*S x S]) applied to head i's value columns, heads
// concatenated back to [S x t], then the output projection.
Tensor combine(const Tensor& maps, const Projected& p, const MultiHeadAttention& block) {
  const std::vector<HeadSlice>& heads = block.head_slices();
  const std::size_t s = p.v.extent(0), t = p.v.extent(1);
  Tensor joined = Tensor::zeros({s, t}, p.v.dtype());
  core::visit_dtype(p.v.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> vh, part;
    for (std::size_t i = 0; i < heads.size(); ++i) {
      vh.resize(s * heads[i].width);
      part.resize(s * heads[i].width);
      gather_cols(p.v.data<T>(), s, t, heads[i], vh.data());
      core::gemm_nn(maps.data<T>() + i * s * s, vh.data(), part.data(), s, s, heads[i].width);
      scatter_cols(part.data(), s, t, heads[i], joined.mutable_data<T>());
    }
  });
  const Tensor v = p.v;
  joined = core::record_op(joined, {maps, v}, [maps, v, heads](const Tensor& g) {
    const std::size_t s = v.extent(0), t = v.extent(1);
    Tensor gm = Tensor::zeros(maps.shape(), maps.dtype());
    Tensor gv = Tensor::zeros(v.shape(), v.dtype());
    core::visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      std::vector<T> vh, gh, part;
      for (std::size_t i = 0; i < heads.size(); ++i) {
        const std::size_t w = heads[i].width;
        vh.resize(s * w);
        gh.resize(s * w);
        part.resize(s * w);
        gather_cols(v.data<T>(), s, t, heads[i], vh.data());
        gather_cols(g.data<T>(), s, t, heads[i], gh.data());
        core::gemm_nt(gh.data(), vh.data(), gm.mutable_data<T>() + i * s * s, s, w, s);
        core::gemm_tn(maps.data<T>() + i * s * s, gh.data(), part.data(), s, s, w);
        scatter_cols(part.data(), s, t, heads[i], gv.mutable_data<T>());
      }
    });
    return std::vector<Tensor>{gm, gv};
  });
  return linear(joined, block.weights().wo, block.weights().bo);
}

// y = x / rowsum(x); every row sum must be nonzero.
Tensor normalize_rows(const Tensor& x, const std::vector<double>& sums) {
  const std::size_t rows = x.extent(0), cols = x.extent(1);
  Tensor out = Tensor::zeros(x.shape(), x.dtype());
  core::visit_dtype(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T* in = x.data<T>();
    T* o = out.mutable_data<T>();
    for (std::size_t r = 0; r < rows; ++r) {
      const T inv = static_cast<T>(1.0 / sums[r]);
      for (std::size_t c = 0; c < cols; ++c) o[r * cols + c] = in[r * cols + c] * inv;
    }
  });
  return core::record_op(out, {x}, [out, sums](const Tensor& g) {
    const std::size_t rows = out.extent(0), cols = out.extent(1);
    Tensor gx = Tensor::zeros(out.shape(), out.dtype());
    core::visit_dtype(g.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* y = out.data<T>();
      const T* gy = g.data<T>();
      T* r = gx.mutable_data<T>();
      for (std::size_t i = 0; i < rows; ++i) {
        T dot = 0;
#pragma omp simd reduction(+ : dot)
        for (std::size_t c = 0; c < cols; ++c) dot += gy[i * cols + c] * y[i * cols + c];
        const T inv = static_cast<T>(1.0 / sums[i]);
        for (std::size_t c = 0; c < cols; ++c) r[i * cols + c] = (gy[i * cols + c] - dot) * inv;
      }
    });
    return std::vector<Tensor>{gx};
  });
}

void append_maps(const Tensor& stacked, std::size_t heads, std::vector<Tensor>* score_maps) {
  if (!score_maps) return;
  const std::size_t s = stacked.extent(1);
  for (std::size_t i = 0; i < heads; ++i) score_maps->push_back(core::slice(stacked, 0, i * s, s));
}

}  // namespace

Tensor mhsa(const Tensor& x, const MultiHeadAttention& block, std::vector<Tensor>* score_maps) {
  Projected p = project(x, block);
  Tensor maps = head_scores(p, block);
  append_maps(maps, block.head_slices().size(), score_maps);
  return combine(maps, p, block);
}

Tensor mhra(const Tensor& x, const MultiHeadAttention& block, std::vector<Tensor>* score_maps) {
  const Tensor& m = block.weights().m;
  if (!m.defined()) throw ConfigError("re-attention requires a block built with attention = mhra");
  Projected p = project(x, block);
  Tensor maps = head_scores(p, block);
  const std::size_t s = x.extent(0), h = block.head_slices().size();

  // Row i of `stack` is head i's map flattened; M^T mixes whole maps.
  Tensor stack = core::reshape(maps, {h, s * s});
  Tensor mixed = core::reshape(core::matmul(core::transpose(m), stack), {h * s, s});

  if (block.norm() == ReattentionNorm::row_sum) {
    std::vector<double> sums(h * s, 0.0);
    core::visit_dtype(mixed.dtype(), [&](auto tag) {
      using T = decltype(tag);
      const T* v = mixed.data<T>();
      for (std::size_t r = 0; r < h * s; ++r) {
        T total = 0;
#pragma omp simd reduction(+ : total)
        for (std::size_t c = 0; c < s; ++c) total += v[r * s + c];
        sums[r] = total;
      }
    });
    std::vector<double> keep(h * s);
    bool all_ok = true;
    for (std::size_t r = 0; r < h * s; ++r) {
      keep[r] = std::abs(sums[r]) >= 1e-8 ? 1.0 : 0.0;
      all_ok = all_ok && keep[r] == 1.0;
    }
    if (all_ok) {
      mixed = normalize_rows(mixed, sums);
    } else {
      // Rows whose mixed mass vanishes fall back to the unmixed head map.
      Tensor row_sums = core::sum(mixed, 1);
      Tensor ok = Tensor::from_values({h * s, 1}, keep);
      Tensor not_ok = core::add_scalar(core::neg(ok), 1.0);
      Tensor denom = core::add(core::mul(row_sums, ok), not_ok);
      mixed = core::add(core::mul(core::div(mixed, denom), ok), core::mul(maps, not_ok));
    }
  }

  append_maps(mixed, h, score_maps);
  return combine(mixed, p, block);
}

}  // namespace scopeformer::vit
