#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "scopeformer/core/binary_io.hpp"
#include "scopeformer/diag/diagnostics.hpp"
#include "scopeformer/ingest/synth.hpp"
#include "scopeformer/runner/presets.hpp"

using namespace scopeformer;
using core::Tensor;
namespace fs = std::filesystem;

namespace {

Tensor from_values(const core::Shape& shape, const std::vector<double>& v) {
  Tensor t = Tensor::zeros(shape, core::DType::f64);
  for (std::size_t i = 0; i < v.size(); ++i) t.set_item(i, v[i]);
  return t;
}

Tensor random_tensor(const core::Shape& shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Tensor t = Tensor::zeros(shape, core::DType::f64);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, dist(rng));
  return t;
}

double oracle_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / std::sqrt(na * nb);
}

const ingest::Dataset& phantoms() {
  static const ingest::Dataset data = ingest::synth_generate(21, 4, 64);
  return data;
}

model::ScopeformerConfig desk() {
  model::ScopeformerConfig c = runner::preset("efficient-desk");
  c.pretrain_backbone = false;
  c.pretrain_tags = {backbone::PretrainTag::none};
  return c;
}

double mean_abs_diff(const diag::GrayImage& a, const diag::GrayImage& b) {
  REQUIRE(a.pixels.size() == b.pixels.size());
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(double(a.pixels[i]) - double(b.pixels[i]));
  return s / static_cast<double>(a.pixels.size());
}

}  // namespace

TEST_CASE("cosine_similarity examples") {
  bool zero = true;
  CHECK(diag::cosine_similarity({1, 2, 3}, {1, 2, 3}, &zero) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK_FALSE(zero);
  CHECK(diag::cosine_similarity({1, 0, 0}, {0, 5, 0}) == 0.0);
  CHECK(diag::cosine_similarity({1, -2, 3}, {-1, 2, -3}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(diag::cosine_similarity({0, 0}, {1, 1}, &zero) == 0.0);
  CHECK(zero);
  CHECK_THROWS_AS(diag::cosine_similarity({1}, {1, 2}), core::DimensionError);
}

TEST_CASE("encoder_cosine_similarity examples") {
  const Tensor last = from_values({2, 2}, {1, 0, 0, 0});
  const Tensor orth = from_values({2, 2}, {0, 1, 0, 0});
  const Tensor anti = from_values({2, 2}, {-3, 0, 0, 0});
  const auto curve = diag::encoder_cosine_similarity({{orth, anti, last}}, vit::ClsAxis::none);
  REQUIRE(curve.values.size() == 3);
  CHECK(curve.values[0] == 0.0);
  CHECK(curve.values[1] == -1.0);
  CHECK(curve.values[2] == 1.0);
  CHECK_FALSE(curve.cls_excluded);
  CHECK(curve.samples == 1);

  SUBCASE("zero-norm block is flagged and scored 0") {
    const auto c = diag::encoder_cosine_similarity({{Tensor::zeros({2, 2}, core::DType::f64), last}},
                                                   vit::ClsAxis::none);
    CHECK(c.values[0] == 0.0);
    CHECK(c.zero_norm[0]);
    CHECK_FALSE(c.zero_norm[1]);
  }
  SUBCASE("batch mean") {
    const auto c = diag::encoder_cosine_similarity({{orth, last}, {last, last}}, vit::ClsAxis::none);
    CHECK(c.values[0] == 0.5);
    CHECK(c.samples == 2);
  }
  SUBCASE("no recordings") {
    CHECK_THROWS_AS(diag::encoder_cosine_similarity({}, vit::ClsAxis::none), std::invalid_argument);
    CHECK_THROWS_AS(diag::encoder_cosine_similarity({{}}, vit::ClsAxis::none), std::invalid_argument);
  }
}

TEST_CASE("random recordings: last entry exactly 1, bounded, matches a direct oracle") {
  std::vector<std::vector<Tensor>> rec;
  for (std::uint64_t n = 0; n < 5; ++n) {
    std::vector<Tensor> layers;
    for (std::uint64_t l = 0; l < 6; ++l) layers.push_back(random_tensor({5, 4}, 100 * n + l));
    rec.push_back(layers);
  }
  const auto curve = diag::encoder_cosine_similarity(rec, vit::ClsAxis::sequence);
  CHECK(curve.values.back() == 1.0);
  CHECK(curve.cls_excluded);
  for (std::size_t l = 0; l < 6; ++l) {
    CHECK(curve.values[l] >= -1.0);
    CHECK(curve.values[l] <= 1.0);
    double expected = 0;
    for (const auto& sample : rec) {
      const auto a = sample[l].to_vector(), b = sample.back().to_vector();
      // Row 0 is CLS: compare rows 1..4 only.
      expected += oracle_cosine({a.begin() + 4, a.end()}, {b.begin() + 4, b.end()});
    }
    CHECK(curve.values[l] == doctest::Approx(expected / 5).epsilon(1e-12));
  }
}

TEST_CASE("CLS exclusion differs from the full comparison only through the CLS slice") {
  // Token rows agree between layers; only the CLS entries move.
  SUBCASE("CLS row (baseline)") {
    const Tensor a = from_values({3, 2}, {9, -9, 1, 2, 3, 4});
    const Tensor b = from_values({3, 2}, {-1, 5, 1, 2, 3, 4});
    CHECK(diag::encoder_cosine_similarity({{a, b}}, vit::ClsAxis::sequence).values[0] ==
          doctest::Approx(1.0).epsilon(1e-15));
    CHECK(diag::encoder_cosine_similarity({{a, b}}, vit::ClsAxis::none).values[0] < 0.9);
  }
  SUBCASE("CLS column (tr)") {
    const Tensor a = from_values({2, 3}, {1, 2, 7, 3, 4, -7});
    const Tensor b = from_values({2, 3}, {1, 2, 0, 3, 4, 1});
    CHECK(diag::encoder_cosine_similarity({{a, b}}, vit::ClsAxis::token_dim).values[0] ==
          doctest::Approx(1.0).epsilon(1e-15));
    CHECK(diag::encoder_cosine_similarity({{a, b}}, vit::ClsAxis::none).values[0] < 0.9);
  }
  SUBCASE("the excluded comparison equals the full one on explicitly sliced tensors") {
    const Tensor a = random_tensor({4, 3}, 1), b = random_tensor({4, 3}, 2);
    const Tensor as = model::strip_cls(a, vit::ClsAxis::sequence), bs = model::strip_cls(b, vit::ClsAxis::sequence);
    CHECK(diag::encoder_cosine_similarity({{a, b}}, vit::ClsAxis::sequence).values[0] ==
          diag::encoder_cosine_similarity({{as, bs}}, vit::ClsAxis::none).values[0]);
  }
}

TEST_CASE("similarity curve of a model and its CSV export") {
  core::PrecisionScope precision(core::DType::f32);
  const model::ScopeformerModel m(desk());
  const auto curve = diag::similarity_curve(m, phantoms(), 3);
  REQUIRE(curve.values.size() == 4);
  CHECK(curve.samples == 3);
  CHECK(curve.values.back() == 1.0);
  for (double v : curve.values) {
    CHECK(v >= -1.0);
    CHECK(v <= 1.0);
  }
  CHECK_FALSE(curve.cls_excluded);  // efficient tokens carry no CLS

  const fs::path dir = fs::temp_directory_path() / "scopeformer_test_diag_csv";
  fs::create_directories(dir);
  const std::string csv = (dir / "sim.csv").string();
  diag::write_similarity_csv(csv, curve);
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "layer_index,cosine_similarity");
  std::size_t rows = 0;
  std::string last;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.rfind(std::to_string(rows) + ",", 0) == 0);
    last = line;
  }
  CHECK(rows == 4);
  CHECK(last == "4,1.0000000000");
  std::ifstream meta_in(csv + ".json");
  const auto meta = nlohmann::json::parse(meta_in);
  CHECK(meta["reduction"] == "batch-mean");
  CHECK(meta["samples"] == 3);
  CHECK(meta["cls_excluded"] == false);
  fs::remove_all(dir);
}

TEST_CASE("PGM encoding") {
  diag::GrayImage img{3, 2, {0, 17, 255, 128, 1, 254}};
  SUBCASE("round trip preserves pixels") {
    const auto bytes = diag::encode_pgm(img);
    const std::string header(bytes.begin(), bytes.begin() + 11);
    CHECK(header == "P5\n3 2\n255\n");
    const auto back = diag::decode_pgm(bytes);
    CHECK(back.width == 3);
    CHECK(back.height == 2);
    CHECK(back.pixels == img.pixels);
  }
  SUBCASE("file round trip") {
    const std::string path = (fs::temp_directory_path() / "scopeformer_test_diag.pgm").string();
    diag::write_pgm(path, img);
    CHECK(diag::read_pgm(path).pixels == img.pixels);
    fs::remove(path);
  }
  SUBCASE("header comments are accepted") {
    const std::string text = "P5\n# made by hand\n3 2\n255\n";
    std::vector<std::uint8_t> bytes(text.begin(), text.end());
    bytes.insert(bytes.end(), img.pixels.begin(), img.pixels.end());
    CHECK(diag::decode_pgm(bytes).pixels == img.pixels);
  }
  SUBCASE("malformed files are rejected") {
    auto bytes = diag::encode_pgm(img);
    auto wrong_magic = bytes;
    wrong_magic[1] = '2';
    CHECK_THROWS_AS(diag::decode_pgm(wrong_magic), core::FormatError);
    bytes.pop_back();
    CHECK_THROWS_AS(diag::decode_pgm(bytes), core::FormatError);
    const std::string deep = "P5\n1 1\n65535\n\x01\x02";
    CHECK_THROWS_AS(diag::decode_pgm({deep.begin(), deep.end()}), core::FormatError);
  }
}

TEST_CASE("to_gray scaling") {
  SUBCASE("uniform attention gives a constant mid-gray image") {
    const auto g = diag::to_gray(std::vector<double>(16, 1.0 / 4), 4, 4);
    for (auto p : g.pixels) CHECK(p == 128);
  }
  SUBCASE("min maps to 0, max to 255, linear between") {
    const auto g = diag::to_gray({-1.0, 0.0, 1.0, 0.5}, 2, 2);
    CHECK(g.pixels == std::vector<std::uint8_t>{0, 128, 255, 191});
  }
  CHECK_THROWS(diag::to_gray({1.0, 2.0}, 2, 2));
}

TEST_CASE("efficient preset, first and last layer -> 16 maps of 384 x 384 each") {
  core::PrecisionScope precision(core::DType::f32);
  const model::ScopeformerModel m(runner::preset("efficient-scopeformer"));
  const auto img = ingest::image_tensor(phantoms(), 0);
  const auto maps = diag::attention_maps(m, img, {1, 8});
  REQUIRE(maps.size() == 2);
  for (const auto& e : maps) {
    CHECK(e.heads.size() == 16);
    for (const auto& h : e.heads) {
      CHECK(h.width == 384);
      CHECK(h.height == 384);
    }
  }
  CHECK(maps[0].layer == 1);
  CHECK(maps[1].layer == 8);
  CHECK_THROWS_AS(diag::attention_maps(m, img, {0}), std::out_of_range);
  CHECK_THROWS_AS(diag::attention_maps(m, img, {9}), std::out_of_range);
}

TEST_CASE("attention export writes one file per layer and head, deterministically") {
  core::PrecisionScope precision(core::DType::f32);
  const model::ScopeformerModel m(desk());
  const auto img = ingest::image_tensor(phantoms(), 1);
  const fs::path dir = fs::temp_directory_path() / "scopeformer_test_diag_att";
  fs::remove_all(dir);
  const auto paths = diag::export_attention_maps(m, img, {1, 4}, dir.string());
  CHECK(paths.size() == 32);
  CHECK(fs::exists(dir / "layer1_head1.pgm"));
  CHECK(fs::exists(dir / "layer4_head16.pgm"));
  const auto first = diag::read_pgm((dir / "layer4_head3.pgm").string());
  CHECK(first.width == 96);
  diag::export_attention_maps(m, img, {4}, dir.string());
  CHECK(diag::read_pgm((dir / "layer4_head3.pgm").string()).pixels == first.pixels);
  fs::remove_all(dir);
}

TEST_CASE("feature grids") {
  core::PrecisionScope precision(core::DType::f32);
  model::ScopeformerModel m(desk());
  const auto img = ingest::image_tensor(phantoms(), 2);

  SUBCASE("tile count is min(K, d/n)") {
    CHECK(diag::feature_grids(m, img, 16).front().tiles == 16);
    CHECK(diag::feature_grids(m, img, 40).front().tiles == 32);
    const auto grids = diag::feature_grids(m, img, 16, 8);
    REQUIRE(grids.size() == 3);
    const auto& g = grids.front();
    CHECK(g.columns == 4);
    CHECK(g.tile_size == 64);
    CHECK(g.image.width == 4 * 64 + 5);
    CHECK(g.image.height == 4 * 64 + 5);
  }
  SUBCASE("zero channels give uniform tiles") {
    for (auto& p : m.parameters().all()) {
      if (p.name.rfind("backbone0", 0) == 0 && p.module == "projection") {
        for (std::size_t i = 0; i < p.value.numel(); ++i) p.value.set_item(i, 0.0);
      }
    }
    const auto g = diag::feature_grids(m, img, 4, 2).front();
    // Tile interiors are mid-gray; the 1-pixel separators stay black.
    for (std::size_t y = 0; y < g.image.height; ++y) {
      for (std::size_t x = 0; x < g.image.width; ++x) {
        const bool border = (y % (g.tile_size + 1)) == 0 || (x % (g.tile_size + 1)) == 0;
        CHECK(g.image.at(y, x) == (border ? 0 : 128));
      }
    }
  }
  SUBCASE("two backbones with different seeds give different grids") {
    // Backbones 0 and 2 share toy-a but are seeded differently.
    const auto grids = diag::feature_grids(m, img);
    CHECK(mean_abs_diff(grids[0].image, grids[2].image) > 0.0);
  }
  SUBCASE("exports are deterministic") {
    const fs::path dir = fs::temp_directory_path() / "scopeformer_test_diag_feat";
    fs::remove_all(dir);
    const auto paths = diag::export_feature_maps(m, img, dir.string());
    REQUIRE(paths.size() == 3);
    const auto a = diag::read_pgm(paths[1]);
    diag::export_feature_maps(m, img, dir.string());
    CHECK(diag::read_pgm(paths[1]).pixels == a.pixels);
    CHECK(fs::path(paths[1]).filename() == "backbone1_features.pgm");
    fs::remove_all(dir);
  }
  SUBCASE("a model without backbones has no feature maps") {
    const model::ScopeformerModel raw(runner::preset("raw-vit"));
    CHECK_THROWS_AS(diag::feature_grids(raw, img), core::ConfigError);
  }
}
