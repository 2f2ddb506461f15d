// Construction smoke suite: every preset builds, runs one forward/backward
// pass at batch 2 and produces the expected shapes and gradients.

#include <cmath>

#include "doctest.h"
#include "scopeformer/core/ops.hpp"
#include "scopeformer/heads/loss_metrics.hpp"
#include "scopeformer/ingest/synth.hpp"
#include "scopeformer/model/model.hpp"
#include "scopeformer/runner/presets.hpp"

using namespace scopeformer;
using core::Tensor;

TEST_CASE("every preset runs forward and backward at batch 2") {
  core::PrecisionScope precision(core::DType::f32);
  const ingest::Dataset data = ingest::synth_generate(4, 2, 64);
  for (const auto& name : runner::preset_names()) {
    CAPTURE(name);
    model::ScopeformerModel m(runner::preset(name));
    const auto geometry = m.geometry();
    auto& params = m.parameters();
    params.zero_grad();
    for (std::size_t i = 0; i < data.size(); ++i) {
      core::Tape tape;
      core::TapeScope scope(tape);
      const auto r = m.forward(ingest::image_tensor(data, i));
      REQUIRE(r.tokens.tokens.shape() == core::Shape{geometry.length, geometry.dim});
      REQUIRE(r.stack.output.shape() == core::Shape{geometry.length, geometry.dim});
      REQUIRE(r.head.probabilities.numel() == 6);
      const Tensor loss = heads::weighted_multilabel_log_loss(r.head.probabilities,
                                                              ingest::label_tensor(data.samples[i].label));
      REQUIRE(std::isfinite(loss.item()));
      tape.backward(core::scale(loss, 0.5));
    }
    std::size_t with_grad = 0, trainable = 0;
    bool finite = true;
    for (const auto& p : params.all()) {
      if (!p.trainable()) continue;
      ++trainable;
      if (!p.value.has_grad()) continue;
      ++with_grad;
      for (double g : p.value.grad().to_vector()) finite = finite && std::isfinite(g);
    }
    CHECK(trainable > 0);
    CHECK(with_grad == trainable);
    CHECK(finite);
  }
}
