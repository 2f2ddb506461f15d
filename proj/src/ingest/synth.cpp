#include "scopeformer/ingest/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace scopeformer::ingest {

double SynthMixture::prevalence(std::size_t c) const {
  if (c == kAny) {
    double none = 1.0;
    for (double p : subtype_rate) none *= 1.0 - p;
    return 1.0 - none;
  }
  return subtype_rate.at(c - 1);
}

namespace {

using Rng = std::mt19937_64;

enum class Tissue : std::uint8_t { air, skull, brain, csf, bleed };

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  return a - std::numbers::pi;
}

class Canvas {
 public:
  Canvas(std::size_t size, const PhantomGeometry& g, Rng& rng) : size_(size), g_(g), rng_(rng) {
    const double s = static_cast<double>(size);
    cx_ = s / 2 + uniform(rng, -0.03, 0.03) * s;
    cy_ = s / 2 + uniform(rng, -0.03, 0.03) * s;
    ax_ = g.head_semi_axis_x * s * uniform(rng, 0.95, 1.05);
    ay_ = g.head_semi_axis_y * s * uniform(rng, 0.95, 1.05);
    mean_radius_ = 0.5 * (ax_ + ay_);
    inner_ = 1.0 - g.skull_thickness_px / std::min(ax_, ay_);
    hu_.assign(size * size, g.air_hu);
    tissue_.assign(size * size, Tissue::air);
    ventricle_[0] = {cx_ - 0.13 * ax_, cy_ - 0.02 * ay_};
    ventricle_[1] = {cx_ + 0.13 * ax_, cy_ - 0.02 * ay_};
  }

  void paint_anatomy() {
    const double skull_hu = uniform(rng_, g_.skull_hu_low, g_.skull_hu_high);
    const double base = uniform(rng_, 28.0, 36.0);
    const double kx = uniform(rng_, 0.15, 0.35), ky = uniform(rng_, 0.15, 0.35);
    const double px = uniform(rng_, 0.0, 6.3), py = uniform(rng_, 0.0, 6.3);
    std::normal_distribution<double> noise(0.0, g_.noise_hu);
    for (std::size_t y = 0; y < size_; ++y) {
      for (std::size_t x = 0; x < size_; ++x) {
        const double r = radius(x, y);
        const std::size_t i = y * size_ + x;
        if (r > 1.0) continue;
        if (r >= inner_) {
          tissue_[i] = Tissue::skull;
          hu_[i] = std::clamp(skull_hu + 3.0 * noise(rng_), g_.skull_hu_low, g_.skull_hu_high);
          continue;
        }
        tissue_[i] = Tissue::brain;
        const double texture = 4.0 * std::sin(kx * cxp(x) + px) * std::sin(ky * cyp(y) + py);
        hu_[i] = std::clamp(base + texture + noise(rng_), g_.brain_hu_low, g_.brain_hu_high);
      }
    }
    for (int v = 0; v < 2; ++v) fill_ventricle(v, 1.0, Tissue::csf, g_.csf_hu, 0.0);
  }

  // Convex lens hugging the inner skull table.
  void epidural() {
    const double theta0 = uniform(rng_, -std::numbers::pi, std::numbers::pi);
    const double half = uniform(rng_, 0.28, 0.42);
    const double depth = uniform(rng_, 4.0, 6.0);
    paint_rim(theta0, half, [&](double t) { return depth * (1.0 - t * t); });
  }

  // Long thin crescent along the skull.
  void subdural() {
    const double theta0 = uniform(rng_, -std::numbers::pi, std::numbers::pi);
    const double half = uniform(rng_, 0.8, 1.3);
    const double depth = uniform(rng_, 1.8, 2.8);
    paint_rim(theta0, half, [&](double t) { return depth * (1.0 - std::pow(t, 4)); });
  }

  // Irregular blob in the parenchyma, away from the ventricles.
  void intraparenchymal() {
    const double theta0 = uniform(rng_, -std::numbers::pi, std::numbers::pi);
    const double r0 = uniform(rng_, 0.4, 0.62);
    const double bx = cx_ + r0 * ax_ * std::cos(theta0);
    const double by = cy_ + r0 * ay_ * std::sin(theta0);
    const double rad = uniform(rng_, 2.5, 4.5);
    const double phase = uniform(rng_, 0.0, 6.3);
    const double value = bleed_value();
    for_each_brain_pixel([&](std::size_t x, std::size_t y) {
      const double dx = cxp(x) - bx, dy = cyp(y) - by;
      const double limit = rad * (1.0 + 0.2 * std::sin(3.0 * std::atan2(dy, dx) + phase));
      return dx * dx + dy * dy <= limit * limit;
    }, value);
  }

  // Blood filling one ventricle, or both on the second call.
  void intraventricular(int which) { fill_ventricle(which, 1.15, Tissue::bleed, bleed_value(), 1.5); }

  // Thin curvilinear streak in a cortical sulcus.
  void subarachnoid() {
    const double theta0 = uniform(rng_, -std::numbers::pi, std::numbers::pi);
    const double r0 = uniform(rng_, 0.72, 0.86);
    const double length = uniform(rng_, 0.5, 0.9);
    const double wiggle = uniform(rng_, 0.02, 0.04);
    const double freq = uniform(rng_, 8.0, 14.0);
    const double value = bleed_value();
    std::normal_distribution<double> noise(0.0, g_.noise_hu);
    constexpr int kSteps = 160;
    for (int k = 0; k <= kSteps; ++k) {
      const double t = -0.5 + static_cast<double>(k) / kSteps;
      const double th = theta0 + t * length;
      const double r = r0 + wiggle * std::sin(freq * t * length);
      const double fx = cx_ + r * ax_ * std::cos(th);
      const double fy = cy_ + r * ay_ * std::sin(th);
      const long ix = static_cast<long>(std::floor(fx)), iy = static_cast<long>(std::floor(fy));
      if (ix < 0 || iy < 0 || ix >= static_cast<long>(size_) || iy >= static_cast<long>(size_)) continue;
      const std::size_t i = static_cast<std::size_t>(iy) * size_ + static_cast<std::size_t>(ix);
      if (tissue_[i] == Tissue::brain || tissue_[i] == Tissue::csf) set_bleed(i, value, noise);
    }
  }

  std::vector<double> raw(double intercept) const {
    std::vector<double> out(hu_.size());
    for (std::size_t i = 0; i < hu_.size(); ++i) out[i] = hu_[i] - intercept;
    return out;
  }

 private:
  struct Point {
    double x, y;
  };

  double cxp(std::size_t x) const { return static_cast<double>(x) + 0.5; }
  double cyp(std::size_t y) const { return static_cast<double>(y) + 0.5; }
  double radius(std::size_t x, std::size_t y) const {
    const double u = (cxp(x) - cx_) / ax_, v = (cyp(y) - cy_) / ay_;
    return std::sqrt(u * u + v * v);
  }
  double angle(std::size_t x, std::size_t y) const { return std::atan2((cyp(y) - cy_) / ay_, (cxp(x) - cx_) / ax_); }

  double bleed_value() { return uniform(rng_, g_.bleed_hu_low + 8.0, g_.bleed_hu_high - 8.0); }

  void set_bleed(std::size_t i, double value, std::normal_distribution<double>& noise) {
    tissue_[i] = Tissue::bleed;
    hu_[i] = std::clamp(value + noise(rng_), g_.bleed_hu_low, g_.bleed_hu_high);
  }

  template <typename Inside>
  void for_each_brain_pixel(Inside inside, double value) {
    std::normal_distribution<double> noise(0.0, g_.noise_hu);
    for (std::size_t y = 0; y < size_; ++y) {
      for (std::size_t x = 0; x < size_; ++x) {
        const std::size_t i = y * size_ + x;
        if (tissue_[i] == Tissue::air || tissue_[i] == Tissue::skull) continue;
        if (inside(x, y)) set_bleed(i, value, noise);
      }
    }
  }

  // Region between the inner skull table and a depth profile over the
  // normalized angular offset t in [-1, 1].
  template <typename Profile>
  void paint_rim(double theta0, double half, Profile depth_px) {
    const double value = bleed_value();
    for_each_brain_pixel([&](std::size_t x, std::size_t y) {
      const double t = wrap_angle(angle(x, y) - theta0) / half;
      if (std::abs(t) >= 1.0) return false;
      const double dist = (inner_ - radius(x, y)) * mean_radius_;
      return dist >= -0.5 && dist < depth_px(t);
    }, value);
  }

  void fill_ventricle(int which, double grow, Tissue kind, double value, double noise_sd) {
    const Point c = ventricle_[which];
    const double sx = 0.07 * ax_ * grow, sy = 0.17 * ay_ * grow;
    std::normal_distribution<double> noise(0.0, std::max(noise_sd, 1e-9));
    for (std::size_t y = 0; y < size_; ++y) {
      for (std::size_t x = 0; x < size_; ++x) {
        const double u = (cxp(x) - c.x) / sx, v = (cyp(y) - c.y) / sy;
        const std::size_t i = y * size_ + x;
        if (u * u + v * v > 1.0 || tissue_[i] == Tissue::air || tissue_[i] == Tissue::skull) continue;
        if (kind == Tissue::bleed) {
          set_bleed(i, value, noise);
        } else {
          tissue_[i] = kind;
          hu_[i] = value;
        }
      }
    }
  }

  std::size_t size_;
  const PhantomGeometry& g_;
  Rng& rng_;
  double cx_, cy_, ax_, ay_, mean_radius_, inner_;
  Point ventricle_[2];
  std::vector<double> hu_;
  std::vector<Tissue> tissue_;
};

constexpr double kRescaleIntercept = -1024.0;

}  // namespace

Phantom synth_phantom(std::uint64_t seed, std::size_t index, std::size_t image_size, const SynthMixture& mixture,
                      const PhantomGeometry& geometry) {
  if (image_size < 16) throw std::invalid_argument("phantom image size must be at least 16");
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  Rng rng(seq);

  std::array<int, 5> counts{};
  for (std::size_t k = 0; k < 5; ++k) {
    const bool present = std::bernoulli_distribution(mixture.subtype_rate[k])(rng);
    counts[k] = present ? 1 + static_cast<int>(std::bernoulli_distribution(0.5)(rng)) : 0;
  }

  Canvas canvas(image_size, geometry, rng);
  canvas.paint_anatomy();
  for (int i = 0; i < counts[kEdh - 1]; ++i) canvas.epidural();
  for (int i = 0; i < counts[kSdh - 1]; ++i) canvas.subdural();
  for (int i = 0; i < counts[kIph - 1]; ++i) canvas.intraparenchymal();
  if (counts[kIvh - 1] > 0) {
    const int first = static_cast<int>(std::bernoulli_distribution(0.5)(rng));
    canvas.intraventricular(first);
    if (counts[kIvh - 1] > 1) canvas.intraventricular(1 - first);
  }
  for (int i = 0; i < counts[kSah - 1]; ++i) canvas.subarachnoid();

  Phantom p{HuSlice(image_size, image_size, canvas.raw(kRescaleIntercept), 1.0, kRescaleIntercept), {}, counts};
  p.slice.standardize();
  for (std::size_t k = 0; k < 5; ++k) {
    p.label[k + 1] = counts[k] > 0 ? 1 : 0;
    p.label[kAny] |= p.label[k + 1];
  }
  return p;
}

Dataset synth_generate(std::uint64_t seed, std::size_t n, std::size_t image_size, const SynthMixture& mixture,
                       const PhantomGeometry& geometry) {
  if (n == 0) throw std::invalid_argument("synthetic dataset needs at least one sample");
  Dataset data;
  data.height = static_cast<std::uint32_t>(image_size);
  data.width = static_cast<std::uint32_t>(image_size);
  data.samples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Phantom p = synth_phantom(seed, i, image_size, mixture, geometry);
    data.samples.push_back(Sample{stack_windows(p.slice), p.label});
  }
  return data;
}

}  // namespace scopeformer::ingest
