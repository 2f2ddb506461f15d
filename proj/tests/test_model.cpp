#include <cmath>

#include "doctest.h"
#include "scopeformer/ingest/synth.hpp"
#include "scopeformer/model/model.hpp"
#include "scopeformer/runner/presets.hpp"

using namespace scopeformer;
using model::ScopeformerConfig;
using model::ScopeformerModel;

namespace {

// The preset with the encoder cut down to one block: token shapes only depend
// on the width, and a single block keeps the wide presets cheap to build.
ScopeformerConfig shallow(const std::string& name) {
  ScopeformerConfig cfg = runner::preset(name);
  cfg.layers = 1;
  cfg.mlp_dim = 32;
  return cfg;
}

core::Tensor phantom_image(std::uint64_t seed) {
  return ingest::image_tensor(ingest::synth_generate(seed, 1, 64), 0);
}

}  // namespace

TEST_CASE("token geometry of the three token configurations") {
  SUBCASE("baseline: (N+1) x d") {
    const auto g = model::token_geometry(runner::preset("scopeformer-l-8"));
    CHECK(g.patches == 64);
    CHECK(g.length == 65);
    CHECK(g.dim == 1024);
  }
  SUBCASE("tr: d x (N+1)") {
    const auto g = model::token_geometry(runner::preset("deep-scopeformer-tr-l-8"));
    CHECK(g.length == 384);
    CHECK(g.dim == 65);
  }
  SUBCASE("efficient: d x N") {
    const auto g = model::token_geometry(runner::preset("efficient-scopeformer"));
    CHECK(g.length == 384);
    CHECK(g.dim == 64);
  }
  SUBCASE("raw-vit: N x d from 8x8 image patches") {
    const auto g = model::token_geometry(runner::preset("raw-vit"));
    CHECK(g.patches == 64);
    CHECK(g.patch_dim == 8 * 8 * 3);
    CHECK(g.length == 64 + 1);
    CHECK(g.dim == 192);
  }
}

TEST_CASE("forward pass produces the documented shapes") {
  core::PrecisionScope precision(core::DType::f32);
  struct Case {
    const char* preset;
    std::size_t rows, cols;  // encoder input, CLS included
  };
  for (const Case c : {Case{"scopeformer-l-8", 65, 1024}, Case{"deep-scopeformer-tr-l-8", 384, 65},
                       Case{"efficient-scopeformer", 384, 64}, Case{"raw-vit", 65, 192}}) {
    CAPTURE(c.preset);
    ScopeformerModel m(shallow(c.preset));
    const auto r = m.forward(phantom_image(3));
    CHECK(r.tokens.tokens.shape() == core::Shape{c.rows, c.cols});
    CHECK(r.stack.output.shape() == core::Shape{c.rows, c.cols});
    CHECK(r.head.probabilities.numel() == 6);
    for (double p : r.head.probabilities.to_vector()) {
      CHECK(p > 0.0);
      CHECK(p < 1.0);
    }
  }
}

TEST_CASE("efficient model: global feature map is 8 x 8 x d and transposes into d x 64") {
  core::PrecisionScope precision(core::DType::f32);
  ScopeformerModel m(shallow("efficient-scopeformer"));
  const auto r = m.forward(phantom_image(5));
  REQUIRE(r.features.has_value());
  CHECK(r.features->map.shape() == core::Shape{8, 8, 384});
  CHECK(r.features->backbone_count() == 3);
  for (std::size_t b = 0; b < 3; ++b) CHECK(r.features->widths[b] == 128);
  CHECK(r.tokens.layout == vit::Layout::feature_wise);
  CHECK_FALSE(r.tokens.cls_present());

  // Before positions are added, token row c is channel c of the map read in
  // row-major spatial order.
  const auto raw = vit::transpose_tokens(vit::extract_patches(r.features->map, 1));
  const auto map = r.features->map.to_vector();
  const auto tok = raw.tokens.to_vector();
  for (std::size_t c : {std::size_t{0}, std::size_t{127}, std::size_t{383}}) {
    for (std::size_t s : {std::size_t{0}, std::size_t{9}, std::size_t{63}}) {
      CHECK(tok[c * 64 + s] == map[s * 384 + c]);
    }
  }
}

TEST_CASE("recording options fill the stack recordings") {
  core::PrecisionScope precision(core::DType::f32);
  ScopeformerConfig cfg = runner::preset("efficient-desk");
  cfg.pretrain_backbone = false;
  ScopeformerModel m(cfg);
  model::ForwardOptions opts;
  opts.record_block_outputs = true;
  opts.record_attention = true;
  const auto r = m.forward(phantom_image(1), opts);
  REQUIRE(r.stack.block_outputs.size() == cfg.layers);
  REQUIRE(r.stack.score_maps.size() == cfg.layers);
  CHECK(r.stack.score_maps[0].size() == cfg.heads);
  CHECK(r.stack.score_maps[0][0].shape() == core::Shape{96, 96});
  CHECK(r.stack.block_outputs.back().to_vector() == r.stack.output.to_vector());

  const auto plain = m.forward(phantom_image(1));
  CHECK(plain.stack.block_outputs.empty());
  CHECK(plain.head.probabilities.to_vector() == r.head.probabilities.to_vector());
}

TEST_CASE("forward is deterministic for a fixed configuration") {
  core::PrecisionScope precision(core::DType::f32);
  ScopeformerConfig cfg = runner::preset("efficient-desk");
  const auto img = phantom_image(9);
  const ScopeformerModel a(cfg), b(cfg);
  CHECK(a.forward(img).head.probabilities.to_vector() == b.forward(img).head.probabilities.to_vector());
  cfg.seed += 1;
  const ScopeformerModel c(cfg);
  CHECK(a.forward(img).head.probabilities.to_vector() != c.forward(img).head.probabilities.to_vector());
}

TEST_CASE("forward from cached aligned features matches the full forward") {
  core::PrecisionScope precision(core::DType::f32);
  const ScopeformerModel m(runner::preset("efficient-desk"));
  const auto img = phantom_image(2);
  const auto aligned = m.backbone().aligned_features(img);
  CHECK(m.forward_from_aligned(aligned).head.probabilities.to_vector() ==
        m.forward(img).head.probabilities.to_vector());
}

TEST_CASE("CLS helpers slice the right row or column") {
  core::Tensor x = core::Tensor::zeros({3, 4});
  for (std::size_t i = 0; i < 12; ++i) x.set_item(i, static_cast<double>(i));
  CHECK(model::cls_vector(x, vit::ClsAxis::sequence).to_vector() == std::vector<double>{0, 1, 2, 3});
  CHECK(model::cls_vector(x, vit::ClsAxis::token_dim).to_vector() == std::vector<double>{3, 7, 11});
  CHECK(model::strip_cls(x, vit::ClsAxis::sequence).shape() == core::Shape{2, 4});
  CHECK(model::strip_cls(x, vit::ClsAxis::token_dim).to_vector() ==
        std::vector<double>{0, 1, 2, 4, 5, 6, 8, 9, 10});
  CHECK(model::strip_cls(x, vit::ClsAxis::none).to_vector() == x.to_vector());
}

TEST_CASE("configuration validation") {
  ScopeformerConfig good = runner::preset("efficient-desk");
  CHECK_NOTHROW(good.validate());

  SUBCASE("heads must divide the token dimension") {
    ScopeformerConfig c = runner::preset("scopeformer-b");
    c.heads = 7;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
  }
  SUBCASE("efficient forbids a CLS token") {
    ScopeformerConfig c = good;
    c.cls_axis = vit::ClsAxis::sequence;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
  }
  SUBCASE("CLS-based kinds need a CLS token") {
    ScopeformerConfig c = runner::preset("scopeformer-b");
    c.cls_axis = vit::ClsAxis::none;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
  }
  SUBCASE("at least one backbone unless raw-vit") {
    ScopeformerConfig c = good;
    c.n_backbones = 0;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
    CHECK_NOTHROW(runner::preset("raw-vit").validate());
  }
  SUBCASE("d must split evenly across backbones") {
    ScopeformerConfig c = good;
    c.d = 97;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
  }
  SUBCASE("pretraining needs a task-pretrained backbone") {
    ScopeformerConfig c = good;
    c.pretrain_tags = {backbone::PretrainTag::none};
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
  }
  SUBCASE("raw-vit patch must divide the image") {
    ScopeformerConfig c = runner::preset("raw-vit");
    c.patch = 7;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
  }
  SUBCASE("numeric ranges") {
    ScopeformerConfig c = good;
    c.frozen_fraction = 1.5;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
    c = good;
    c.val_fraction = 1.0;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
    c = good;
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), core::ConfigError);
  }
}
