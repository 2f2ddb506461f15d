#include "scopeformer/ingest/hu.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace scopeformer::ingest {

HuSlice::HuSlice(std::size_t height, std::size_t width, std::vector<double> raw, double rescale_slope,
                 double rescale_intercept)
    : height_(height), width_(width), values_(std::move(raw)), slope_(rescale_slope), intercept_(rescale_intercept) {
  if (height == 0 || width == 0) throw std::invalid_argument("slice extents must be positive");
  if (values_.size() != height * width) {
    throw std::invalid_argument("slice has " + std::to_string(values_.size()) + " values, expected " +
                                std::to_string(height * width));
  }
}

HuSlice HuSlice::from_hu(std::size_t height, std::size_t width, std::vector<double> hu) {
  HuSlice s(height, width, std::move(hu), 1.0, 0.0);
  s.standardized_ = true;
  return s;
}

void HuSlice::standardize() {
  if (standardized_) return;
  for (double& v : values_) v = slope_ * v + intercept_;
  standardized_ = true;
}

double window_value(double hu, HuWindow window) {
  if (!(window.low < window.high)) throw std::invalid_argument("degenerate HU window");
  return std::clamp((hu - window.low) / (window.high - window.low), 0.0, 1.0);
}

std::vector<double> hu_window_channel(const HuSlice& slice, HuWindow window) {
  if (!slice.standardized()) throw std::logic_error("HU slice must be standardized before windowing");
  if (!(window.low < window.high)) throw std::invalid_argument("degenerate HU window");
  std::vector<double> out(slice.values().size());
  std::transform(slice.values().begin(), slice.values().end(), out.begin(),
                 [&](double v) { return window_value(v, window); });
  return out;
}

std::vector<float> stack_windows(const HuSlice& slice) {
  const std::size_t pixels = slice.height() * slice.width();
  std::vector<float> image(pixels * 3);
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> channel = hu_window_channel(slice, kWindowOrder[c]);
    for (std::size_t p = 0; p < pixels; ++p) image[p * 3 + c] = static_cast<float>(channel[p]);
  }
  return image;
}

}  // namespace scopeformer::ingest
