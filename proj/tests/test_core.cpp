#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "scopeformer/core/checkpoint.hpp"
#include "scopeformer/core/grad_check.hpp"
#include "scopeformer/core/ops.hpp"
#include "scopeformer/core/parameters.hpp"

using namespace scopeformer::core;

namespace {

Tensor random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t = Tensor::zeros(shape);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, dist(rng));
  return t;
}

bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  return a.to_vector() == b.to_vector();
}

}  // namespace

TEST_CASE("matmul examples") {
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(a, eye).to_vector() == std::vector<double>{1, 2, 3, 4});

  Tensor col = Tensor::from_values({2, 1}, {5, 6});
  Tensor c = matmul(a, col);
  CHECK(c.shape() == Shape{2, 1});
  CHECK(c.to_vector() == std::vector<double>{17, 39});

  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 1})), DimensionError);
}

TEST_CASE("matmul gradient matches central differences") {
  PrecisionScope f64(DType::f64);
  std::mt19937_64 rng(7);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  double err = grad_check([](const std::vector<Tensor>& in) { return sum(matmul(in[0], in[1])); }, {a, b});
  CHECK(err <= 1e-4);
}

TEST_CASE("softmax examples") {
  Tensor s = softmax(Tensor::from_values({2}, {0, 0}), 0);
  CHECK(s.item(0) == doctest::Approx(0.5));
  CHECK(s.item(1) == doctest::Approx(0.5));

  PrecisionScope f64(DType::f64);
  Tensor t = softmax(Tensor::from_values({2}, {std::log(2.0), 0.0}), 0);
  CHECK(t.item(0) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(t.item(1) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  Tensor big = softmax(Tensor::from_values({2}, {1000.0, 0.0}), 0);
  CHECK(std::isfinite(big.item(0)));
  CHECK(big.item(0) == doctest::Approx(1.0));
  CHECK(big.item(1) == doctest::Approx(0.0));
}

TEST_CASE("softmax rows are distributions for arbitrary finite inputs") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({5, 7}, rng, -50.0, 50.0);
    for (std::size_t axis : {0u, 1u}) {
      Tensor y = softmax(x, axis);
      Tensor sums = sum(y, axis);
      for (std::size_t i = 0; i < sums.numel(); ++i) CHECK(std::abs(sums.item(i) - 1.0) <= 1e-6);
      for (double v : y.to_vector()) CHECK(v >= 0.0);
    }
  }
}

TEST_CASE("layer_norm examples") {
  PrecisionScope f64(DType::f64);
  Tensor ones = Tensor::full({4}, 1.0);
  Tensor zeros = Tensor::zeros({4});
  Tensor c = layer_norm(Tensor::full({4}, 3.0), ones, zeros);
  for (double v : c.to_vector()) CHECK(v == 0.0);

  Tensor y = layer_norm(Tensor::from_values({2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-5);
  CHECK(y.item(0) == doctest::Approx(-1.0).epsilon(1e-3));
  CHECK(y.item(1) == doctest::Approx(1.0).epsilon(1e-3));

  Tensor beta = Tensor::from_values({3}, {0.5, -2, 7});
  Tensor z = layer_norm(Tensor::from_values({2, 3}, {1, 5, 2, -3, 0, 9}), Tensor::zeros({3}), beta);
  CHECK(z.to_vector() == std::vector<double>{0.5, -2, 7, 0.5, -2, 7});

  CHECK_THROWS_AS(layer_norm(Tensor::zeros({2, 3}), Tensor::zeros({2}), Tensor::zeros({2})), DimensionError);
}

TEST_CASE("conv2d examples") {
  Tensor img = Tensor::from_values({2, 2, 1}, {1, 2, 3, 4});
  Tensor k = Tensor::full({1, 1, 1, 1}, 1.0);
  CHECK(conv2d(img, k, Tensor::zeros({1}), 1, Padding::same).to_vector() == img.to_vector());

  Tensor ones = Tensor::full({3, 3, 1}, 1.0);
  Tensor box = Tensor::full({3, 3, 1, 1}, 1.0);
  Tensor out = conv2d(ones, box, Tensor(), 1, Padding::valid);
  CHECK(out.shape() == Shape{1, 1, 1});
  CHECK(out.item(0) == 9.0);

  CHECK_THROWS_AS(conv2d(Tensor::zeros({4, 4, 2}), Tensor::zeros({3, 3, 3, 1}), Tensor(), 1, Padding::same),
                  DimensionError);
  CHECK_THROWS_AS(conv2d(Tensor::zeros({4, 4, 1}), Tensor::zeros({2, 2, 1, 1}), Tensor(), 1, Padding::same),
                  DimensionError);
}

TEST_CASE("1x1 conv equals per-pixel matmul") {
  PrecisionScope f64(DType::f64);
  std::mt19937_64 rng(3);
  Tensor x = random_tensor({5, 6, 4}, rng);
  Tensor w = random_tensor({1, 1, 4, 3}, rng);
  Tensor via_conv = conv2d(x, w, Tensor(), 1, Padding::same);
  Tensor via_matmul = reshape(matmul(reshape(x, {30, 4}), reshape(w, {4, 3})), {5, 6, 3});
  auto a = via_conv.to_vector();
  auto b = via_matmul.to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-12));
}

TEST_CASE("strided same conv geometry and brute-force values") {
  PrecisionScope f64(DType::f64);
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({7, 6, 2}, rng);
  Tensor w = random_tensor({3, 3, 2, 3}, rng);
  Tensor b = random_tensor({3}, rng);
  Tensor y = conv2d(x, w, b, 2, Padding::same);
  REQUIRE(y.shape() == Shape{4, 3, 3});
  // pad_total = (out-1)*s + k - in; top/left get the floor half.
  const long pad_top = ((4 - 1) * 2 + 3 - 7) / 2;
  const long pad_left = ((3 - 1) * 2 + 3 - 6) / 2;
  for (std::size_t oy = 0; oy < 4; ++oy)
    for (std::size_t ox = 0; ox < 3; ++ox)
      for (std::size_t co = 0; co < 3; ++co) {
        double acc = b.item(co);
        for (std::size_t ky = 0; ky < 3; ++ky)
          for (std::size_t kx = 0; kx < 3; ++kx) {
            long iy = static_cast<long>(oy * 2 + ky) - pad_top;
            long ix = static_cast<long>(ox * 2 + kx) - pad_left;
            if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
            for (std::size_t ci = 0; ci < 2; ++ci)
              acc += x.at({static_cast<std::size_t>(iy), static_cast<std::size_t>(ix), ci}) * w.at({ky, kx, ci, co});
          }
        CHECK(y.at({oy, ox, co}) == doctest::Approx(acc).epsilon(1e-12));
      }
}

TEST_CASE("pool_adaptive_avg examples") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({8, 8, 3}, rng);
  CHECK(bit_equal(pool_adaptive_avg(x, 8, 8), x));

  Tensor small = Tensor::from_values({2, 2, 1}, {1, 2, 3, 4});
  CHECK(pool_adaptive_avg(small, 1, 1).item(0) == doctest::Approx(2.5));

  Tensor c = Tensor::full({6, 6, 2}, 0.75);
  for (std::size_t o : {1u, 2u, 3u, 4u, 5u, 6u}) {
    for (double v : pool_adaptive_avg(c, o, o).to_vector()) CHECK(v == doctest::Approx(0.75));
  }
  CHECK_THROWS_AS(pool_adaptive_avg(c, 7, 7), DimensionError);
}

TEST_CASE("shape suite") {
  std::mt19937_64 rng(13);
  Tensor s = random_tensor({5, 9}, rng);
  CHECK(bit_equal(permute(permute(s, {1, 0}), {1, 0}), s));

  Tensor m = random_tensor({8, 8, 6}, rng);
  CHECK(bit_equal(reshape(reshape(m, {64, 6}), {8, 8, 6}), m));

  std::vector<Tensor> parts;
  for (int i = 0; i < 4; ++i) parts.push_back(random_tensor({64, 256}, rng));
  Tensor cat = concat(parts, 1);
  CHECK(cat.shape() == Shape{64, 1024});
  for (std::size_t i = 0; i < 4; ++i) CHECK(bit_equal(slice(cat, 1, i * 256, 256), parts[i]));

  CHECK_THROWS_AS(concat({Tensor::zeros({2, 3}), Tensor::zeros({3, 3})}, 1), DimensionError);
  CHECK_THROWS_AS(reshape(m, {7, 7}), DimensionError);
}

TEST_CASE("permute and reshape are bijections (random shapes)") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<std::size_t> ext(1, 5);
  for (int trial = 0; trial < 40; ++trial) {
    Shape shape{ext(rng), ext(rng), ext(rng), ext(rng)};
    Tensor x = random_tensor(shape, rng);
    std::vector<std::size_t> axes{0, 1, 2, 3};
    std::shuffle(axes.begin(), axes.end(), rng);
    std::vector<std::size_t> inverse(4);
    for (std::size_t d = 0; d < 4; ++d) inverse[axes[d]] = d;
    CHECK(bit_equal(permute(permute(x, axes), inverse), x));
    CHECK(bit_equal(reshape(reshape(x, {x.numel()}), shape), x));
  }
}

TEST_CASE("activation suite") {
  CHECK(sigmoid(Tensor::zeros({1})).item(0) == 0.5);
  Tensor r = relu(Tensor::from_values({2}, {-1, 2}));
  CHECK(r.item(0) == 0.0);
  CHECK(r.item(1) == 2.0);

  PrecisionScope f64(DType::f64);
  std::mt19937_64 rng(21);
  Tensor x = random_tensor({6}, rng, -3.0, 3.0);
  CHECK(grad_check([](const std::vector<Tensor>& in) { return sum(gelu(in[0])); }, {x}) <= 1e-4);
}

TEST_CASE("broadcasting elementwise ops") {
  Tensor a = Tensor::from_values({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_values({3}, {10, 20, 30});
  CHECK(add(a, b).to_vector() == std::vector<double>{11, 22, 33, 14, 25, 36});
  Tensor col = Tensor::from_values({2, 1}, {2, 4});
  CHECK(div(a, col).to_vector() == std::vector<double>{0.5, 1, 1.5, 1, 1.25, 1.5});
  CHECK_THROWS_AS(add(a, Tensor::zeros({2})), DimensionError);
}

TEST_CASE("backward examples") {
  PrecisionScope f64(DType::f64);
  std::mt19937_64 rng(23);
  Tensor x = random_tensor({2, 3, 2}, rng);
  x.set_requires_grad(true);
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(x));
  }
  for (double g : x.grad().to_vector()) CHECK(g == 1.0);

  x.zero_grad();
  {
    Tape tape;
    TapeScope scope(tape);
    tape.backward(sum(mul(x, x)));
  }
  auto xv = x.to_vector();
  auto gv = x.grad().to_vector();
  for (std::size_t i = 0; i < xv.size(); ++i) CHECK(gv[i] == doctest::Approx(2 * xv[i]));

  SUBCASE("repeated backward accumulates") {
    x.zero_grad();
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(x);
    tape.backward(loss);
    tape.backward(loss);
    for (double g : x.grad().to_vector()) CHECK(g == 2.0);
  }

  SUBCASE("non-scalar root is rejected") {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = mul(x, x);
    CHECK_THROWS_AS(tape.backward(y), DimensionError);
  }

  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  double err = grad_check(
      [](const std::vector<Tensor>& in) {
        Tensor p = softmax(matmul(in[0], in[1]), 1);
        return sum(mul(p, p));
      },
      {a, b});
  CHECK(err <= 1e-4);
}

TEST_CASE("every differentiable primitive passes grad_check") {
  PrecisionScope f64(DType::f64);
  std::mt19937_64 rng(29);
  auto check = [&](const char* name, const ScalarFunction& fn, std::vector<Tensor> inputs) {
    INFO(name);
    CHECK(grad_check(fn, std::move(inputs)) <= 1e-4);
  };
  // A fixed random weighting makes each check sensitive to every output.
  auto weigh = [](const Tensor& y) {
    std::mt19937_64 r(99);
    std::uniform_real_distribution<double> d(-1, 1);
    Tensor w = Tensor::zeros(y.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) w.set_item(i, d(r));
    return sum(mul(y, w));
  };
  check("add", [&](auto& in) { return weigh(add(in[0], in[1])); }, {random_tensor({3, 4}, rng), random_tensor({4}, rng)});
  check("sub", [&](auto& in) { return weigh(sub(in[0], in[1])); }, {random_tensor({3, 4}, rng), random_tensor({3, 1}, rng)});
  check("mul", [&](auto& in) { return weigh(mul(in[0], in[1])); }, {random_tensor({2, 3, 4}, rng), random_tensor({3, 4}, rng)});
  check("div", [&](auto& in) { return weigh(div(in[0], in[1])); },
        {random_tensor({3, 4}, rng), random_tensor({3, 1}, rng, 0.5, 2.0)});
  check("scale", [&](auto& in) { return weigh(scale(in[0], -1.7)); }, {random_tensor({5}, rng)});
  check("add_scalar", [&](auto& in) { return weigh(add_scalar(in[0], 0.3)); }, {random_tensor({5}, rng)});
  check("relu", [&](auto& in) { return weigh(relu(in[0])); }, {random_tensor({12}, rng)});
  check("gelu", [&](auto& in) { return weigh(gelu(in[0])); }, {random_tensor({12}, rng, -3, 3)});
  check("sigmoid", [&](auto& in) { return weigh(sigmoid(in[0])); }, {random_tensor({12}, rng, -4, 4)});
  check("exp", [&](auto& in) { return weigh(exp(in[0])); }, {random_tensor({6}, rng)});
  check("log", [&](auto& in) { return weigh(log(in[0])); }, {random_tensor({6}, rng, 0.2, 3.0)});
  check("clamp", [&](auto& in) { return weigh(clamp(in[0], -0.5, 0.5)); }, {random_tensor({12}, rng)});
  check("softmax axis 0", [&](auto& in) { return weigh(softmax(in[0], 0)); }, {random_tensor({4, 3}, rng)});
  check("softmax axis 1", [&](auto& in) { return weigh(softmax(in[0], 1)); }, {random_tensor({4, 3}, rng)});
  check("layer_norm", [&](auto& in) { return weigh(layer_norm(in[0], in[1], in[2])); },
        {random_tensor({3, 5}, rng), random_tensor({5}, rng), random_tensor({5}, rng)});
  check("conv2d same stride 2", [&](auto& in) { return weigh(conv2d(in[0], in[1], in[2], 2, Padding::same)); },
        {random_tensor({5, 6, 2}, rng), random_tensor({3, 3, 2, 3}, rng), random_tensor({3}, rng)});
  check("conv2d 1x1", [&](auto& in) { return weigh(conv2d(in[0], in[1], in[2], 1, Padding::same)); },
        {random_tensor({3, 3, 4}, rng), random_tensor({1, 1, 4, 2}, rng), random_tensor({2}, rng)});
  check("conv2d valid", [&](auto& in) { return weigh(conv2d(in[0], in[1], Tensor(), 1, Padding::valid)); },
        {random_tensor({5, 5, 1}, rng), random_tensor({3, 3, 1, 2}, rng)});
  check("pool", [&](auto& in) { return weigh(pool_adaptive_avg(in[0], 2, 3)); }, {random_tensor({5, 7, 2}, rng)});
  check("permute", [&](auto& in) { return weigh(permute(in[0], {2, 0, 1})); }, {random_tensor({2, 3, 4}, rng)});
  check("reshape", [&](auto& in) { return weigh(reshape(in[0], {6, 4})); }, {random_tensor({2, 3, 4}, rng)});
  check("concat", [&](auto& in) { return weigh(concat({in[0], in[1]}, 1)); },
        {random_tensor({3, 2}, rng), random_tensor({3, 5}, rng)});
  check("slice", [&](auto& in) { return weigh(slice(in[0], 1, 1, 2)); }, {random_tensor({3, 4}, rng)});
  check("sum axis", [&](auto& in) { return weigh(sum(in[0], 0)); }, {random_tensor({3, 4}, rng)});
  check("mean", [&](auto& in) { return mean(mul(in[0], in[0])); }, {random_tensor({3, 4}, rng)});
}

TEST_CASE("grad_check sensitivity") {
  PrecisionScope f64(DType::f64);
  std::mt19937_64 rng(31);
  Tensor w = random_tensor({4, 3}, rng);
  Tensor x = random_tensor({3}, rng);
  double linear = grad_check(
      [](const std::vector<Tensor>& in) { return sum(matmul(in[0], reshape(in[1], {3, 1}))); }, {w, x});
  CHECK(linear <= 1e-9);

  // A square op whose backward rule is deliberately off by a factor.
  auto broken_square = [](const Tensor& t) {
    Tensor out = Tensor::zeros(t.shape());
    for (std::size_t i = 0; i < t.numel(); ++i) out.set_item(i, t.item(i) * t.item(i));
    return record_op(out, {t}, [t](const Tensor& g) {
      Tensor r = Tensor::zeros(t.shape());
      for (std::size_t i = 0; i < t.numel(); ++i) r.set_item(i, 3.0 * t.item(i) * g.item(i));
      return std::vector<Tensor>{r};
    });
  };
  double corrupted = grad_check([&](const std::vector<Tensor>& in) { return sum(broken_square(in[0])); }, {x});
  CHECK(corrupted >= 1e-2);
}

TEST_CASE("grad_check rejects f32 inputs") {
  PrecisionScope f32(DType::f32);
  CHECK_THROWS(grad_check([](const std::vector<Tensor>& in) { return sum(in[0]); }, {Tensor::zeros({2})}));
}

TEST_CASE("debug checks catch non-finite values") {
  const bool previous = debug_checks_enabled();
  set_debug_checks(true);
  CHECK_THROWS_AS(log(Tensor::from_values({2}, {0.0, -1.0})), NonFiniteError);
  set_debug_checks(false);
  CHECK_NOTHROW(log(Tensor::from_values({2}, {0.0, -1.0})));
  set_debug_checks(previous);
}

TEST_CASE("frozen leaves receive no gradient") {
  Tensor w = Tensor::full({2, 2}, 0.5);
  Tensor x = Tensor::full({1, 2}, 1.0).set_requires_grad(true);
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(matmul(x, w)));
  CHECK_FALSE(w.has_grad());
  CHECK(x.has_grad());
}

TEST_CASE("independent tapes merge leaf gradients deterministically") {
  Tensor w = Tensor::from_values({2}, {1, 2}).set_requires_grad(true);
  Tape t1, t2;
  Tensor l1, l2;
  {
    TapeScope s(t1);
    l1 = sum(mul(w, Tensor::from_values({2}, {3, 4})));
  }
  {
    TapeScope s(t2);
    l2 = sum(mul(w, w));
  }
  t1.backward_local(l1);
  t2.backward_local(l2);
  CHECK_FALSE(w.has_grad());
  t1.accumulate_into_leaves();
  t2.accumulate_into_leaves();
  CHECK(w.grad().to_vector() == std::vector<double>{3 + 2, 4 + 4});
}

TEST_CASE("checkpoint round trip and corruption") {
  std::mt19937_64 rng(37);
  ParameterRegistry reg;
  reg.add("a.weight", "m", random_tensor({3, 4}, rng));
  reg.add("b.bias", "m", random_tensor({5}, rng));
  auto bytes = encode_checkpoint(reg);

  ParameterRegistry other;
  other.add("a.weight", "m", Tensor::zeros({3, 4}));
  other.add("b.bias", "m", Tensor::zeros({5}));
  apply_checkpoint(decode_checkpoint(bytes), other);
  CHECK(encode_checkpoint(other) == bytes);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad), FormatError);
  auto truncated = bytes;
  truncated.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(truncated), FormatError);

  ParameterRegistry missing;
  missing.add("a.weight", "m", Tensor::zeros({3, 4}));
  missing.add("c", "m", Tensor::zeros({1}));
  CHECK_THROWS_AS(apply_checkpoint(decode_checkpoint(bytes), missing), FormatError);
  CHECK(missing.find("a.weight")->value.to_vector() == std::vector<double>(12, 0.0));
}
