#include "scopeformer/core/checkpoint.hpp"

#include <limits>
#include <unordered_map>
#include <unordered_set>

namespace scopeformer::core {

namespace {
constexpr char kMagic[4] = {'S', 'C', 'K', 'P'};
}

std::vector<std::uint8_t> encode_checkpoint(const ParameterRegistry& params) {
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Parameter& p : params.all()) {
    if (p.name.size() > std::numeric_limits<std::uint16_t>::max()) throw FormatError("parameter name too long");
    w.u16(static_cast<std::uint16_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.u8(static_cast<std::uint8_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) w.u32(static_cast<std::uint32_t>(e));
    for (float v : p.value.to_floats()) w.f32(v);
  }
  return w.bytes();
}

void save_checkpoint(const std::string& path, const ParameterRegistry& params) {
  write_file_bytes(path, encode_checkpoint(params));
}

std::vector<CheckpointEntry> decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw FormatError("not a checkpoint: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  std::vector<CheckpointEntry> entries;
  entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry e;
    e.name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    if (rank < 1 || rank > 4) throw FormatError("parameter " + e.name + " has invalid rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      e.shape.push_back(r.u32());
      n *= e.shape.back();
    }
    if (n * 4 > r.remaining()) throw FormatError("truncated file: parameter " + e.name);
    e.values.resize(n);
    for (float& v : e.values) v = r.f32();
    entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint payload");
  return entries;
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

void apply_checkpoint(const std::vector<CheckpointEntry>& entries, ParameterRegistry& params) {
  std::unordered_map<std::string, const CheckpointEntry*> by_name;
  for (const CheckpointEntry& e : entries) {
    if (!by_name.emplace(e.name, &e).second) throw FormatError("duplicate parameter in checkpoint: " + e.name);
  }
  for (const Parameter& p : params.all()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing parameter " + p.name);
    if (it->second->shape != p.value.shape()) {
      throw FormatError("shape mismatch for " + p.name + ": checkpoint " + shape_to_string(it->second->shape) +
                        ", model " + shape_to_string(p.value.shape()));
    }
  }
  if (by_name.size() != params.size()) {
    for (const CheckpointEntry& e : entries) {
      if (!params.find(e.name)) throw FormatError("checkpoint has unknown parameter " + e.name);
    }
  }
  for (Parameter& p : params.all()) {
    const CheckpointEntry& e = *by_name.at(p.name);
    visit_dtype(p.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      T* dst = p.value.template mutable_data<T>();
      for (std::size_t i = 0; i < e.values.size(); ++i) dst[i] = static_cast<T>(e.values[i]);
    });
  }
}

void load_checkpoint(const std::string& path, ParameterRegistry& params) { apply_checkpoint(read_checkpoint(path), params); }

}  // namespace scopeformer::core
