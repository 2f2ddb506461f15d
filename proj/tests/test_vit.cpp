#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "scopeformer/core/grad_check.hpp"
#include "scopeformer/core/ops.hpp"
#include "scopeformer/vit/encoder.hpp"
#include "scopeformer/vit/tokens.hpp"

using namespace scopeformer::vit;
using namespace scopeformer::core;

namespace {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, dist(rng));
  return t;
}

void assign(Tensor& dst, const std::vector<double>& values) {
  REQUIRE(values.size() == dst.numel());
  for (std::size_t i = 0; i < values.size(); ++i) dst.set_item(i, values[i]);
}

void randomize(MultiHeadAttention& attn, std::uint64_t seed) {
  std::uint64_t s = seed;
  for (Tensor* t : {&attn.weights().wq, &attn.weights().bq, &attn.weights().wk, &attn.weights().bk,
                    &attn.weights().wv, &attn.weights().bv, &attn.weights().wo, &attn.weights().bo}) {
    assign(*t, random_tensor(t->shape(), ++s).to_vector());
  }
}

using Matrix = std::vector<std::vector<double>>;

Matrix to_matrix(const Tensor& t) {
  Matrix m(t.extent(0), std::vector<double>(t.extent(1)));
  for (std::size_t i = 0; i < t.extent(0); ++i)
    for (std::size_t j = 0; j < t.extent(1); ++j) m[i][j] = t.at({i, j});
  return m;
}

Matrix affine(const Matrix& x, const Tensor& w, const Tensor& b) {
  Matrix out(x.size(), std::vector<double>(w.extent(1)));
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < w.extent(1); ++j) {
      double acc = b.item(j);
      for (std::size_t k = 0; k < w.extent(0); ++k) acc += x[i][k] * w.at({k, j});
      out[i][j] = acc;
    }
  return out;
}

// Loop-level evaluation of multi-head attention written directly from the
// equations, independent of the tensor library's op graph.
Matrix reference_attention(const Tensor& x_t, const MultiHeadAttention& attn, bool reattention,
                           std::vector<Matrix>* maps_out = nullptr) {
  const AttentionWeights& w = attn.weights();
  Matrix x = to_matrix(x_t);
  Matrix q = affine(x, w.wq, w.bq), k = affine(x, w.wk, w.bk), v = affine(x, w.wv, w.bv);
  const std::size_t s = x.size(), t = x[0].size();
  std::vector<Matrix> maps;
  for (const HeadSlice& h : attn.head_slices()) {
    Matrix a(s, std::vector<double>(s));
    for (std::size_t i = 0; i < s; ++i) {
      double mx = -1e300;
      for (std::size_t j = 0; j < s; ++j) {
        double dot = 0;
        for (std::size_t c = h.offset; c < h.offset + h.width; ++c) dot += q[i][c] * k[j][c];
        a[i][j] = dot / std::sqrt(double(h.width));
        mx = std::max(mx, a[i][j]);
      }
      double z = 0;
      for (std::size_t j = 0; j < s; ++j) z += (a[i][j] = std::exp(a[i][j] - mx));
      for (std::size_t j = 0; j < s; ++j) a[i][j] /= z;
    }
    maps.push_back(a);
  }
  if (reattention) {
    const std::size_t nh = maps.size();
    std::vector<Matrix> mixed(nh, Matrix(s, std::vector<double>(s, 0.0)));
    for (std::size_t i = 0; i < nh; ++i)
      for (std::size_t j = 0; j < nh; ++j)
        for (std::size_t r = 0; r < s; ++r)
          for (std::size_t c = 0; c < s; ++c) mixed[i][r][c] += w.m.at({j, i}) * maps[j][r][c];
    for (std::size_t i = 0; i < nh; ++i)
      for (std::size_t r = 0; r < s; ++r) {
        double z = std::accumulate(mixed[i][r].begin(), mixed[i][r].end(), 0.0);
        if (std::abs(z) < 1e-8) mixed[i][r] = maps[i][r];
        else
          for (double& e : mixed[i][r]) e /= z;
      }
    maps = mixed;
  }
  Matrix joined(s, std::vector<double>(t, 0.0));
  for (std::size_t hi = 0; hi < maps.size(); ++hi) {
    const HeadSlice& h = attn.head_slices()[hi];
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t c = h.offset; c < h.offset + h.width; ++c)
        for (std::size_t j = 0; j < s; ++j) joined[i][c] += maps[hi][i][j] * v[j][c];
  }
  if (maps_out) *maps_out = maps;
  return affine(joined, w.wo, w.bo);
}

double max_diff(const Tensor& a, const Matrix& b) {
  double m = 0;
  for (std::size_t i = 0; i < b.size(); ++i)
    for (std::size_t j = 0; j < b[i].size(); ++j) m = std::max(m, std::abs(a.at({i, j}) - b[i][j]));
  return m;
}

double max_diff(const Tensor& a, const Tensor& b) {
  auto x = a.to_vector(), y = b.to_vector();
  REQUIRE(x.size() == y.size());
  double m = 0;
  for (std::size_t i = 0; i < x.size(); ++i) m = std::max(m, std::abs(x[i] - y[i]));
  return m;
}

}  // namespace

TEST_CASE("extract_patches examples") {
  Tensor map = random_tensor({8, 8, 12}, 1);
  TokenSequence p1 = extract_patches(map, 1);
  CHECK(p1.tokens.shape() == Shape{64, 12});
  CHECK(p1.layout == Layout::channel_wise);
  for (std::size_t k : {0u, 9u, 37u, 63u})
    for (std::size_t c = 0; c < 12; ++c) CHECK(p1.tokens.at({k, c}) == map.at({k / 8, k % 8, c}));
  CHECK(assemble_patches(p1, 8, 8, 1).to_vector() == map.to_vector());

  TokenSequence p2 = extract_patches(map, 2);
  CHECK(p2.tokens.shape() == Shape{16, 48});
  // token (by, bx) holds its 2x2 block flattened as (row, column, channel).
  for (std::size_t by = 0; by < 4; ++by)
    for (std::size_t bx = 0; bx < 4; ++bx)
      for (std::size_t py = 0; py < 2; ++py)
        for (std::size_t px = 0; px < 2; ++px)
          for (std::size_t c = 0; c < 12; ++c)
            CHECK(p2.tokens.at({by * 4 + bx, (py * 2 + px) * 12 + c}) == map.at({by * 2 + py, bx * 2 + px, c}));
  CHECK(assemble_patches(p2, 8, 8, 2).to_vector() == map.to_vector());

  CHECK_THROWS_AS(extract_patches(map, 3), DimensionError);
}

TEST_CASE("raw image patches") {
  TokenSequence s = extract_patches(random_tensor({64, 64, 3}, 2), 8);
  CHECK(s.tokens.shape() == Shape{64, 192});
}

TEST_CASE("transpose_tokens examples") {
  TokenSequence seq{random_tensor({64, 1024}, 3), Layout::channel_wise, ClsAxis::none};
  TokenSequence tr = transpose_tokens(seq);
  CHECK(tr.tokens.shape() == Shape{1024, 64});
  CHECK(tr.layout == Layout::feature_wise);
  TokenSequence back = transpose_tokens(tr);
  CHECK(back.tokens.to_vector() == seq.tokens.to_vector());
  CHECK(back.layout == Layout::channel_wise);
  std::mt19937_64 rng(4);
  for (int i = 0; i < 50; ++i) {
    std::size_t r = rng() % 64, c = rng() % 1024;
    CHECK(tr.tokens.at({c, r}) == seq.tokens.at({r, c}));
  }
}

TEST_CASE("add_positions_and_cls examples") {
  Rng rng(5);
  TokenSequence base{random_tensor({64, 1024}, 6), Layout::channel_wise, ClsAxis::none};
  TokenEmbedding be(VitKind::baseline, ClsAxis::sequence, 64, 1024, rng);
  TokenSequence b = add_positions_and_cls(base, be);
  CHECK(b.tokens.shape() == Shape{65, 1024});
  CHECK(b.cls_axis == ClsAxis::sequence);
  CHECK(b.tokens.at({0, 17}) == be.cls().at({0, 17}));
  CHECK(b.tokens.at({1 + 10, 5}) == doctest::Approx(base.tokens.at({10, 5}) + be.positions().at({10, 5})));

  TokenSequence fw = transpose_tokens({random_tensor({64, 384}, 7), Layout::channel_wise, ClsAxis::none});
  TokenEmbedding te(VitKind::tr, ClsAxis::token_dim, 384, 64, rng);
  TokenSequence t = add_positions_and_cls(fw, te);
  CHECK(t.tokens.shape() == Shape{384, 65});
  CHECK(t.tokens.at({100, 64}) == te.cls().at({100, 0}));
  CHECK(t.tokens.at({100, 3}) == doctest::Approx(fw.tokens.at({100, 3}) + te.positions().at({100, 3})));

  TokenEmbedding ee(VitKind::efficient, ClsAxis::none, 384, 64, rng);
  CHECK(add_positions_and_cls(fw, ee).tokens.shape() == Shape{384, 64});

  CHECK_THROWS_AS(TokenEmbedding(VitKind::efficient, ClsAxis::sequence, 384, 64, rng), ConfigError);
  CHECK_THROWS_AS(add_positions_and_cls(base, te), ConfigError);  // channel-wise into TR
  CHECK_THROWS_AS(add_positions_and_cls(fw, be), ConfigError);    // feature-wise into baseline
}

TEST_CASE("head_partition") {
  auto even = head_partition(64, 16, false);
  CHECK(even.size() == 16);
  CHECK(even[15].offset == 60);
  CHECK_THROWS_AS(head_partition(65, 16, false), ConfigError);
  auto uneven = head_partition(65, 16, true);
  std::size_t total = 0;
  for (auto h : uneven) {
    CHECK((h.width == 4 || h.width == 5));
    total += h.width;
  }
  CHECK(total == 65);
  CHECK(uneven[0].width == 5);
}

TEST_CASE("mhsa examples") {
  PrecisionScope f64(DType::f64);
  Rng rng(8);
  MultiHeadAttention attn("a", 4, 2, AttentionKind::mhsa, ReattentionNorm::row_sum, false, rng);
  randomize(attn, 10);

  SUBCASE("single token") {
    Tensor x = random_tensor({1, 4}, 11);
    std::vector<Tensor> maps;
    Tensor y = mhsa(x, attn, &maps);
    for (const Tensor& m : maps) CHECK(m.item(0) == 1.0);
    // With A = [[1]] the output is the output projection of V.
    const auto& w = attn.weights();
    Tensor v = add(matmul(x, w.wv), w.bv);
    CHECK(max_diff(y, add(matmul(v, w.wo), w.bo)) <= 1e-12);
  }

  SUBCASE("identical tokens attend uniformly") {
    Tensor row = random_tensor({1, 4}, 12);
    Tensor x = concat({row, row, row, row, row}, 0);
    std::vector<Tensor> maps;
    mhsa(x, attn, &maps);
    for (const Tensor& m : maps)
      for (double v : m.to_vector()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
  }
}

TEST_CASE("mhsa hand-computed two-token case") {
  PrecisionScope f64(DType::f64);
  Rng rng(0);
  MultiHeadAttention attn("a", 2, 1, AttentionKind::mhsa, ReattentionNorm::row_sum, false, rng);
  auto& w = attn.weights();
  assign(w.wq, {1, 0, 0, 1});
  assign(w.wk, {2, 0, 0, 1});
  assign(w.wv, {1, 1, 0, 1});
  assign(w.wo, {1, 0, 0, 1});
  for (Tensor* b : {&w.bq, &w.bk, &w.bv, &w.bo}) assign(*b, {0, 0});
  Tensor x = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  // Q = x, K = [[2,0],[0,1]], V = [[1,1],[0,1]], logits = Q K^T / sqrt(2):
  //   row 0: [2, 0]/sqrt2, row 1: [0, 1]/sqrt2.
  const double r = std::sqrt(2.0);
  const double a00 = std::exp(2 / r) / (std::exp(2 / r) + 1.0), a01 = 1.0 - a00;
  const double a11 = std::exp(1 / r) / (1.0 + std::exp(1 / r)), a10 = 1.0 - a11;
  const std::vector<double> expected{a00 * 1 + a01 * 0, a00 * 1 + a01 * 1, a10 * 1 + a11 * 0, a10 * 1 + a11 * 1};
  auto y = mhsa(x, attn).to_vector();
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(y[i] - expected[i]) <= 1e-6);
}

TEST_CASE("attention matches the loop-level reference") {
  PrecisionScope f64(DType::f64);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const bool uneven = seed % 2 == 1;
    const std::size_t t = uneven ? 9 : 8, heads = uneven ? 2 : 4;
    MultiHeadAttention attn("a", t, heads, AttentionKind::mhra, ReattentionNorm::row_sum, uneven, rng);
    randomize(attn, 100 + seed);
    assign(attn.weights().m, random_tensor({heads, heads}, 200 + seed, 0.0, 1.0).to_vector());
    Tensor x = random_tensor({5, t}, 300 + seed);
    CHECK(max_diff(mhsa(x, attn), reference_attention(x, attn, false)) <= 1e-10);
    CHECK(max_diff(mhra(x, attn), reference_attention(x, attn, true)) <= 1e-10);
  }
}

TEST_CASE("mhra examples") {
  PrecisionScope f64(DType::f64);
  Rng rng(9);
  MultiHeadAttention attn("a", 8, 4, AttentionKind::mhra, ReattentionNorm::row_sum, false, rng);
  randomize(attn, 20);
  Tensor x = random_tensor({6, 8}, 21);

  SUBCASE("identity M reduces to mhsa") { CHECK(max_diff(mhra(x, attn), mhsa(x, attn)) <= 1e-6); }

  SUBCASE("permutation M permutes head maps") {
    const std::size_t sigma[4] = {2, 0, 3, 1};
    std::vector<double> m(16, 0.0);
    for (std::size_t i = 0; i < 4; ++i) m[sigma[i] * 4 + i] = 1.0;  // M[sigma(i), i] = 1
    assign(attn.weights().m, m);
    std::vector<Tensor> before, after;
    mhsa(x, attn, &before);
    mhra(x, attn, &after);
    for (std::size_t i = 0; i < 4; ++i) CHECK(max_diff(after[i], before[sigma[i]]) <= 1e-12);
  }

  SUBCASE("zero row sums fall back to the unmixed map") {
    std::vector<double> m(16, 0.0);
    m[0 * 4 + 0] = 1.0;
    m[1 * 4 + 0] = -1.0;  // head 0 mixes A_0 - A_1, whose rows sum to 0
    for (std::size_t i = 1; i < 4; ++i) m[i * 4 + i] = 1.0;
    assign(attn.weights().m, m);
    std::vector<Tensor> before, after;
    mhsa(x, attn, &before);
    Tensor y = mhra(x, attn, &after);
    CHECK(max_diff(after[0], before[0]) <= 1e-12);
    for (double v : y.to_vector()) CHECK(std::isfinite(v));
  }

  SUBCASE("identity norm leaves mixed maps unnormalized") {
    Rng r2(9);
    MultiHeadAttention raw("b", 8, 4, AttentionKind::mhra, ReattentionNorm::identity, false, r2);
    randomize(raw, 20);
    assign(raw.weights().m, std::vector<double>(16, 0.5));
    std::vector<Tensor> maps;
    mhra(x, raw, &maps);
    for (const Tensor& a : maps) {
      Tensor sums = sum(a, 1);
      for (std::size_t r = 0; r < 6; ++r) CHECK(sums.item(r) == doctest::Approx(2.0));
    }
  }
}

TEST_CASE("re-attention adds exactly h^2 parameters") {
  Rng r1(1), r2(1);
  MultiHeadAttention sa("a", 64, 16, AttentionKind::mhsa, ReattentionNorm::row_sum, false, r1);
  MultiHeadAttention ra("a", 64, 16, AttentionKind::mhra, ReattentionNorm::row_sum, false, r2);
  CHECK(ra.parameters().total_count() - sa.parameters().total_count() == 256);
  CHECK(ra.weights().m.to_vector() == init_identity(16).to_vector());
}

TEST_CASE("attention rows sum to one") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    MultiHeadAttention attn("a", 12, 3, seed % 2 ? AttentionKind::mhra : AttentionKind::mhsa,
                            ReattentionNorm::row_sum, false, rng);
    randomize(attn, seed * 7);
    if (seed % 2) assign(attn.weights().m, random_tensor({3, 3}, seed, 0.1, 1.0).to_vector());
    std::vector<Tensor> maps;
    attn.forward(random_tensor({7, 12}, seed + 50, -3, 3), &maps);
    REQUIRE(maps.size() == 3);
    for (const Tensor& a : maps) {
      Tensor sums = sum(a, 1);
      for (std::size_t r = 0; r < 7; ++r) CHECK(std::abs(sums.item(r) - 1.0) <= 1e-6);
      for (double v : a.to_vector()) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("encoder block examples") {
  Rng rng(30);
  EncoderSpec spec{16, 4, 32, AttentionKind::mhra, ReattentionNorm::row_sum, false};
  EncoderBlock block("b", spec, rng);
  Tensor x = random_tensor({10, 16}, 31);
  CHECK(block.forward(x).shape() == x.shape());
  block.zero_branch_outputs();
  CHECK(block.forward(x).to_vector() == x.to_vector());
}

TEST_CASE("encoder block passes finite-difference checks") {
  PrecisionScope f64(DType::f64);
  for (AttentionKind kind : {AttentionKind::mhsa, AttentionKind::mhra}) {
    Rng rng(40);
    EncoderSpec spec{8, 2, 16, kind, ReattentionNorm::row_sum, false};
    EncoderBlock block("b", spec, rng);
    if (kind == AttentionKind::mhra) {
      assign(block.attention().weights().m, {0.9, 0.3, 0.2, 1.1});
    }
    std::vector<Tensor> inputs{random_tensor({4, 8}, 41)};
    for (const Parameter& p : block.parameters().all()) inputs.push_back(p.value);
    double err = grad_check([&](const std::vector<Tensor>& in) { return sum(mul(block.forward(in[0]), in[0])); },
                            inputs);
    INFO(to_string(kind));
    CHECK(err <= 1e-4);
  }
}

TEST_CASE("encoder stack examples") {
  Rng r1(50), r2(50);
  EncoderSpec spec{8, 2, 16, AttentionKind::mhsa, ReattentionNorm::row_sum, false};
  EncoderStack one(spec, 1, r1);
  EncoderBlock single("encoder0", spec, r2);
  Tensor x = random_tensor({5, 8}, 51);
  CHECK(one.forward(x).output.to_vector() == single.forward(x).to_vector());

  Rng r3(52);
  EncoderStack eight(spec, 8, r3);
  StackOutput out = eight.forward(x, true, true);
  CHECK(out.output.shape() == x.shape());
  REQUIRE(out.block_outputs.size() == 8);
  CHECK(out.block_outputs.back().to_vector() == out.output.to_vector());
  CHECK(out.score_maps.size() == 8);
  CHECK(out.score_maps[0].size() == 2);
  CHECK(eight.forward(x).block_outputs.empty());
}

TEST_CASE("block parameter count matches the closed form") {
  struct Case {
    std::size_t t, mlp, heads;
    AttentionKind kind;
  };
  for (Case c : {Case{8, 16, 2, AttentionKind::mhsa}, Case{12, 7, 3, AttentionKind::mhra},
                 Case{64, 128, 16, AttentionKind::mhra}, Case{65, 64, 16, AttentionKind::mhra}}) {
    Rng rng(1);
    EncoderBlock b("b", {c.t, c.heads, c.mlp, c.kind, ReattentionNorm::row_sum, true}, rng);
    CHECK(b.parameters().total_count() == encoder_block_parameter_count(c.t, c.mlp, c.heads, c.kind));
  }
}
