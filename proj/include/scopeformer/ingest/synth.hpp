#pragma once

#include <array>
#include <cstdint>

#include "scopeformer/ingest/dataset.hpp"
#include "scopeformer/ingest/hu.hpp"

namespace scopeformer::ingest {

/// Independent per-subtype presence probabilities, ordered [EDH, IPH, IVH, SAH, SDH].
struct SynthMixture {
  std::array<double, 5> subtype_rate{0.2, 0.2, 0.2, 0.2, 0.2};

  /// Expected prevalence of class `c` (0 = any) under this mixture.
  double prevalence(std::size_t c) const;
};

/// Phantom geometry and intensity constants. Lengths are fractions of the
/// image size unless named `_px`.
struct PhantomGeometry {
  double head_semi_axis_x = 0.42;
  double head_semi_axis_y = 0.38;
  double skull_thickness_px = 2.5;
  double skull_hu_low = 250.0;
  double skull_hu_high = 1000.0;
  double brain_hu_low = 20.0;
  double brain_hu_high = 45.0;
  double csf_hu = 5.0;
  double bleed_hu_low = 50.0;
  double bleed_hu_high = 90.0;
  double air_hu = -1000.0;
  double noise_hu = 2.0;
};

struct Phantom {
  HuSlice slice;
  Label label{};
  std::array<int, 5> signature_count{};  // bleeds injected per subtype
};

/// The index-th phantom of the stream defined by `seed`. Each phantom draws
/// from its own generator, so samples are independent of `n`.
Phantom synth_phantom(std::uint64_t seed, std::size_t index, std::size_t image_size,
                      const SynthMixture& mixture = {}, const PhantomGeometry& geometry = {});

Dataset synth_generate(std::uint64_t seed, std::size_t n, std::size_t image_size, const SynthMixture& mixture = {},
                       const PhantomGeometry& geometry = {});

}  // namespace scopeformer::ingest
