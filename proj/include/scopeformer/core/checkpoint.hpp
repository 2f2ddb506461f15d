#pragma once

#include <string>
#include <vector>

#include "scopeformer/core/binary_io.hpp"
#include "scopeformer/core/parameters.hpp"

namespace scopeformer::core {

// Checkpoint layout (little-endian):
//   "SCKP" | version u32 | param_count u32
//   per parameter: name_len u16 | name bytes (UTF-8) | rank u8 | extents u32 x rank | float32 values

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void save_checkpoint(const std::string& path, const ParameterRegistry& params);
std::vector<std::uint8_t> encode_checkpoint(const ParameterRegistry& params);

std::vector<CheckpointEntry> read_checkpoint(const std::string& path);
std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Copy checkpoint values into `params` by name. The whole file is validated
/// first (names, shapes); on any error nothing is modified.
void load_checkpoint(const std::string& path, ParameterRegistry& params);
void apply_checkpoint(const std::vector<CheckpointEntry>& entries, ParameterRegistry& params);

}  // namespace scopeformer::core
