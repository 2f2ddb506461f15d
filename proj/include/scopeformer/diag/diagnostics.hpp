#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "scopeformer/ingest/dataset.hpp"
#include "scopeformer/model/model.hpp"

namespace scopeformer::diag {

using core::Tensor;

// ---------------------------------------------------------------------------
// Inter-encoder similarity

/// s_i = mean over samples of cos(v_i, v_L), where v_i is block i's output
/// flattened with the CLS row/column removed.
struct SimilarityCurve {
  std::vector<double> values;      // one per block, last is 1
  std::vector<bool> zero_norm;     // some sample had a zero-norm vector at this block
  bool cls_excluded = true;
  std::size_t samples = 0;

  double mean() const;
};

/// Cosine similarity; returns 0 and sets `zero_norm` when either vector has zero norm.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b, bool* zero_norm = nullptr);

/// `block_outputs[n][i]` is block i's output for sample n. Throws
/// std::invalid_argument when nothing was recorded.
SimilarityCurve encoder_cosine_similarity(const std::vector<std::vector<Tensor>>& block_outputs, vit::ClsAxis cls_axis);

/// Forward the first `max_samples` samples with block recording and reduce.
SimilarityCurve similarity_curve(const model::ScopeformerModel& model, const ingest::Dataset& data,
                                 std::size_t max_samples = 64);

/// CSV `layer_index,cosine_similarity` (layer_index is 1-based) plus a JSON
/// metadata file at `csv_path + ".json"`.
void write_similarity_csv(const std::string& csv_path, const SimilarityCurve& curve);

// ---------------------------------------------------------------------------
// Grayscale images

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
};

/// Binary PGM, P5, maxval 255.
std::vector<std::uint8_t> encode_pgm(const GrayImage& image);
GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes);
void write_pgm(const std::string& path, const GrayImage& image);
GrayImage read_pgm(const std::string& path);

/// Min-max scale to 0..255 (rounded). A constant input maps to mid-gray 128.
GrayImage to_gray(const std::vector<double>& values, std::size_t height, std::size_t width);

// ---------------------------------------------------------------------------
// Attention and feature exports

struct AttentionExport {
  std::size_t layer = 0;  // 1-based
  std::vector<GrayImage> heads;
};

/// Post-normalization score maps of the selected 1-based layers, one image per
/// head. Throws std::out_of_range for a layer outside 1..L.
std::vector<AttentionExport> attention_maps(const model::ScopeformerModel& model, const Tensor& image,
                                            const std::vector<std::size_t>& layers);

/// Writes `layer{L}_head{H}.pgm` into `out_dir`; returns the paths.
std::vector<std::string> export_attention_maps(const model::ScopeformerModel& model, const Tensor& image,
                                               const std::vector<std::size_t>& layers, const std::string& out_dir);

struct FeatureGrid {
  std::size_t backbone = 0;
  std::size_t tiles = 0;  // min(K, channels contributed by this backbone)
  std::size_t tile_size = 0;
  std::size_t columns = 0;
  GrayImage image;
};

/// For each backbone, its first K projected channels as a tiled grid, each
/// tile min-max scaled on its own and upsampled by `scale` (nearest).
/// Tiles are separated by a 1-pixel black border.
std::vector<FeatureGrid> feature_grids(const model::ScopeformerModel& model, const Tensor& image, std::size_t k = 16,
                                       std::size_t scale = 8);

/// Writes `backbone{i}_features.pgm` into `out_dir`; returns the paths.
std::vector<std::string> export_feature_maps(const model::ScopeformerModel& model, const Tensor& image,
                                             const std::string& out_dir, std::size_t k = 16);

}  // namespace scopeformer::diag
