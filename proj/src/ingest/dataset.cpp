#include "scopeformer/ingest/dataset.hpp"

#include <stdexcept>

#include "scopeformer/core/binary_io.hpp"

namespace scopeformer::ingest {

using core::FormatError;

namespace {
constexpr char kMagic[4] = {'S', 'C', 'P', 'F'};

std::size_t image_values(const Dataset& data) {
  return static_cast<std::size_t>(data.height) * data.width * kChannels;
}
}  // namespace

std::vector<std::uint8_t> encode_dataset(const Dataset& data) {
  const std::size_t per_image = image_values(data);
  core::ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(data.samples.size()));
  w.u32(data.height);
  w.u32(data.width);
  w.u32(kChannels);
  for (const Sample& s : data.samples) {
    if (s.image.size() != per_image) throw std::invalid_argument("sample image size does not match dataset geometry");
    for (float v : s.image) w.f32(v);
    for (std::uint8_t b : s.label) {
      if (b > 1) throw std::invalid_argument("label bytes must be 0 or 1");
      w.u8(b);
    }
  }
  return w.bytes();
}

Dataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  core::ByteReader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("not a dataset file: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  const std::uint32_t n = r.u32();
  Dataset data;
  data.height = r.u32();
  data.width = r.u32();
  const std::uint32_t channels = r.u32();
  if (channels != kChannels) throw FormatError("dataset must have 3 channels, found " + std::to_string(channels));
  if (data.height == 0 || data.width == 0) throw FormatError("dataset image extents must be positive");

  const std::size_t per_image = image_values(data);
  const std::size_t record = per_image * 4 + kNumClasses;
  if (r.remaining() < static_cast<std::size_t>(n) * record) {
    throw FormatError("truncated file: header declares " + std::to_string(n) + " samples, payload holds " +
                      std::to_string(r.remaining() / record));
  }
  if (r.remaining() > static_cast<std::size_t>(n) * record) throw FormatError("trailing bytes after dataset payload");

  data.samples.resize(n);
  for (Sample& s : data.samples) {
    s.image.resize(per_image);
    for (float& v : s.image) v = r.f32();
    for (std::uint8_t& b : s.label) {
      b = r.u8();
      if (b > 1) throw FormatError("label byte out of range");
    }
  }
  return data;
}

void dataset_write(const std::string& path, const Dataset& data) { core::write_file_bytes(path, encode_dataset(data)); }

Dataset dataset_read(const std::string& path) { return decode_dataset(core::read_file_bytes(path)); }

core::Tensor image_tensor(const Dataset& data, std::size_t index, bool flip_horizontal) {
  const Sample& s = data.samples.at(index);
  if (!flip_horizontal) return core::Tensor::from_floats({data.height, data.width, kChannels}, s.image);
  std::vector<float> flipped(s.image.size());
  for (std::size_t y = 0; y < data.height; ++y) {
    for (std::size_t x = 0; x < data.width; ++x) {
      const std::size_t src = (y * data.width + x) * kChannels;
      const std::size_t dst = (y * data.width + (data.width - 1 - x)) * kChannels;
      for (std::size_t c = 0; c < kChannels; ++c) flipped[dst + c] = s.image[src + c];
    }
  }
  return core::Tensor::from_floats({data.height, data.width, kChannels}, flipped);
}

core::Tensor label_tensor(const Label& label) {
  std::vector<double> v(label.begin(), label.end());
  return core::Tensor::from_values({kNumClasses}, v);
}

Dataset subset(const Dataset& data, std::size_t begin, std::size_t count) {
  if (begin + count > data.samples.size()) throw std::out_of_range("subset exceeds dataset size");
  Dataset out;
  out.height = data.height;
  out.width = data.width;
  out.samples.assign(data.samples.begin() + static_cast<std::ptrdiff_t>(begin),
                     data.samples.begin() + static_cast<std::ptrdiff_t>(begin + count));
  return out;
}

}  // namespace scopeformer::ingest
