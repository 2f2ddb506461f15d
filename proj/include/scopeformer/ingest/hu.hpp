#pragma once

#include <cstddef>
#include <vector>

namespace scopeformer::ingest {

struct HuWindow {
  double low;
  double high;
};

inline constexpr HuWindow kBrainWindow{40.0, 80.0};
inline constexpr HuWindow kSubduralWindow{80.0, 200.0};
inline constexpr HuWindow kSoftTissueWindow{40.0, 380.0};

/// Channel order of every pseudo-RGB image produced by stack_windows.
inline constexpr HuWindow kWindowOrder[3] = {kBrainWindow, kSubduralWindow, kSoftTissueWindow};

/// One CT slice. Raw scanner values are mapped to Hounsfield units with
/// `slope * raw + intercept`; the flag makes standardize() idempotent.
class HuSlice {
 public:
  HuSlice(std::size_t height, std::size_t width, std::vector<double> raw, double rescale_slope,
          double rescale_intercept);

  /// A slice whose values are already in HU.
  static HuSlice from_hu(std::size_t height, std::size_t width, std::vector<double> hu);

  void standardize();

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  bool standardized() const { return standardized_; }
  const std::vector<double>& values() const { return values_; }

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> values_;
  double slope_;
  double intercept_;
  bool standardized_ = false;
};

double window_value(double hu, HuWindow window);

/// Linear clamp of every pixel into [0,1]; row-major height x width.
std::vector<double> hu_window_channel(const HuSlice& slice, HuWindow window);

/// Channel-last H x W x 3 image in [0,1], channels in kWindowOrder.
std::vector<float> stack_windows(const HuSlice& slice);

}  // namespace scopeformer::ingest
