#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "scopeformer/core/tensor.hpp"

namespace scopeformer::ingest {

inline constexpr std::size_t kNumClasses = 6;
inline constexpr std::array<const char*, kNumClasses> kClassNames = {"any", "edh", "iph", "ivh", "sah", "sdh"};

enum ClassIndex : std::size_t { kAny = 0, kEdh = 1, kIph = 2, kIvh = 3, kSah = 4, kSdh = 5 };

using Label = std::array<std::uint8_t, kNumClasses>;

struct Sample {
  std::vector<float> image;  // H x W x 3, channel-last, values in [0,1]
  Label label{};
};

struct Dataset {
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  std::vector<Sample> samples;

  std::size_t size() const { return samples.size(); }
};

// Dataset layout (little-endian):
//   "SCPF" | version u32 | n_samples u32 | H u32 | W u32 | C u32 (= 3)
//   per sample: C*H*W float32 (channel-last, row-major) | 6 label bytes in {0,1}
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::uint32_t kChannels = 3;

std::vector<std::uint8_t> encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::vector<std::uint8_t>& bytes);
void dataset_write(const std::string& path, const Dataset& data);
Dataset dataset_read(const std::string& path);

/// Image as an H x W x 3 tensor in the current default precision.
core::Tensor image_tensor(const Dataset& data, std::size_t index, bool flip_horizontal = false);

/// Label as a length-6 tensor of 0/1 values.
core::Tensor label_tensor(const Label& label);

/// Contiguous split [begin, begin + count) sharing the geometry of `data`.
Dataset subset(const Dataset& data, std::size_t begin, std::size_t count);

}  // namespace scopeformer::ingest
