#include "scopeformer/diag/diagnostics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "scopeformer/core/binary_io.hpp"
#include "scopeformer/core/ops.hpp"

namespace scopeformer::diag {

namespace fs = std::filesystem;

double SimilarityCurve::mean() const {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b, bool* zero_norm) {
  if (a.size() != b.size()) throw core::DimensionError("cosine_similarity: vectors differ in length");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) {
    if (zero_norm) *zero_norm = true;
    return 0.0;
  }
  if (zero_norm) *zero_norm = false;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

SimilarityCurve encoder_cosine_similarity(const std::vector<std::vector<Tensor>>& block_outputs,
                                          vit::ClsAxis cls_axis) {
  if (block_outputs.empty() || block_outputs.front().empty()) {
    throw std::invalid_argument("encoder_cosine_similarity: no recorded block outputs");
  }
  const std::size_t layers = block_outputs.front().size();
  SimilarityCurve curve;
  curve.values.assign(layers, 0.0);
  curve.zero_norm.assign(layers, false);
  curve.cls_excluded = cls_axis != vit::ClsAxis::none;
  curve.samples = block_outputs.size();
  for (const auto& sample : block_outputs) {
    if (sample.size() != layers) throw std::invalid_argument("encoder_cosine_similarity: ragged recordings");
    const std::vector<double> last = model::strip_cls(sample.back(), cls_axis).to_vector();
    for (std::size_t i = 0; i < layers; ++i) {
      bool zero = false;
      double s = 0.0;
      if (i + 1 == layers) {
        // Self-similarity is pinned to exactly 1 rather than left to rounding.
        cosine_similarity(last, last, &zero);
        s = zero ? 0.0 : 1.0;
      } else {
        s = cosine_similarity(model::strip_cls(sample[i], cls_axis).to_vector(), last, &zero);
      }
      curve.values[i] += s;
      curve.zero_norm[i] = curve.zero_norm[i] || zero;
    }
  }
  for (double& v : curve.values) v /= static_cast<double>(block_outputs.size());
  return curve;
}

SimilarityCurve similarity_curve(const model::ScopeformerModel& model, const ingest::Dataset& data,
                                 std::size_t max_samples) {
  core::NoGradScope no_grad;
  std::vector<std::vector<Tensor>> recorded;
  const std::size_t n = std::min(max_samples, data.size());
  model::ForwardOptions options;
  options.record_block_outputs = true;
  for (std::size_t i = 0; i < n; ++i) {
    recorded.push_back(model.forward(ingest::image_tensor(data, i), options).stack.block_outputs);
  }
  return encoder_cosine_similarity(recorded, model.config().resolved_cls_axis());
}

void write_similarity_csv(const std::string& csv_path, const SimilarityCurve& curve) {
  std::ofstream out(csv_path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + csv_path);
  out << "layer_index,cosine_similarity\n";
  char buf[64];
  for (std::size_t i = 0; i < curve.values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.10f\n", i + 1, curve.values[i]);
    out << buf;
  }
  nlohmann::ordered_json meta;
  meta["reduction"] = "batch-mean";
  meta["samples"] = curve.samples;
  meta["cls_excluded"] = curve.cls_excluded;
  meta["reference_layer"] = curve.values.size();
  std::vector<std::size_t> flagged;
  for (std::size_t i = 0; i < curve.zero_norm.size(); ++i)
    if (curve.zero_norm[i]) flagged.push_back(i + 1);
  meta["zero_norm_layers"] = flagged;
  meta["mean_similarity"] = curve.mean();
  std::ofstream(csv_path + ".json", std::ios::binary) << meta.dump(2) << "\n";
}

// ---------------------------------------------------------------------------

std::vector<std::uint8_t> encode_pgm(const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height) throw std::invalid_argument("encode_pgm: pixel count");
  const std::string header =
      "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

GrayImage decode_pgm(const std::vector<std::uint8_t>& bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw core::FormatError("PGM header is malformed");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw core::FormatError("not a binary PGM (P5)");
  pos = 2;
  GrayImage img;
  img.width = number();
  img.height = number();
  if (number() != 255) throw core::FormatError("only maxval 255 PGM files are supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw core::FormatError("PGM header is malformed");
  ++pos;
  if (bytes.size() - pos != img.width * img.height) throw core::FormatError("PGM pixel data has the wrong length");
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void write_pgm(const std::string& path, const GrayImage& image) { core::write_file_bytes(path, encode_pgm(image)); }

GrayImage read_pgm(const std::string& path) { return decode_pgm(core::read_file_bytes(path)); }

GrayImage to_gray(const std::vector<double>& values, std::size_t height, std::size_t width) {
  if (values.size() != height * width) throw std::invalid_argument("to_gray: value count does not match the shape");
  GrayImage img{width, height, std::vector<std::uint8_t>(values.size(), 128)};
  if (values.empty()) return img;
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  const double range = *hi - *lo;
  if (!(range > 0.0)) return img;
  for (std::size_t i = 0; i < values.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / range));
  }
  return img;
}

// ---------------------------------------------------------------------------

std::vector<AttentionExport> attention_maps(const model::ScopeformerModel& model, const Tensor& image,
                                            const std::vector<std::size_t>& layers) {
  const std::size_t depth = model.encoder().size();
  for (std::size_t l : layers) {
    if (l == 0 || l > depth) {
      throw std::out_of_range("layer " + std::to_string(l) + " is outside 1.." + std::to_string(depth));
    }
  }
  core::NoGradScope no_grad;
  model::ForwardOptions options;
  options.record_attention = true;
  const model::ForwardResult r = model.forward(image, options);
  std::vector<AttentionExport> out;
  for (std::size_t l : layers) {
    AttentionExport e{l, {}};
    for (const Tensor& map : r.stack.score_maps.at(l - 1)) {
      e.heads.push_back(to_gray(map.to_vector(), map.extent(0), map.extent(1)));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::string> export_attention_maps(const model::ScopeformerModel& model, const Tensor& image,
                                               const std::vector<std::size_t>& layers, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const AttentionExport& e : attention_maps(model, image, layers)) {
    for (std::size_t h = 0; h < e.heads.size(); ++h) {
      const std::string path =
          (fs::path(out_dir) / ("layer" + std::to_string(e.layer) + "_head" + std::to_string(h + 1) + ".pgm")).string();
      write_pgm(path, e.heads[h]);
      paths.push_back(path);
    }
  }
  return paths;
}

std::vector<FeatureGrid> feature_grids(const model::ScopeformerModel& model, const Tensor& image, std::size_t k,
                                       std::size_t scale) {
  if (!model.has_backbone()) throw core::ConfigError("feature maps need a model with backbones");
  if (scale == 0) scale = 1;
  core::NoGradScope no_grad;
  const backbone::GlobalFeatureMap features = model.backbone().forward(image);
  std::vector<FeatureGrid> grids;
  for (std::size_t b = 0; b < features.backbone_count(); ++b) {
    const Tensor part = features.backbone_channels(b);  // h x w x c
    const std::size_t h = part.extent(0), w = part.extent(1), c = part.extent(2);
    FeatureGrid g;
    g.backbone = b;
    g.tiles = std::min(k, c);
    g.tile_size = h * scale;
    g.columns = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(g.tiles))));
    const std::size_t rows = (g.tiles + g.columns - 1) / g.columns;
    const std::size_t tw = w * scale, th = h * scale;
    g.image.width = g.columns * tw + (g.columns + 1);
    g.image.height = rows * th + (rows + 1);
    g.image.pixels.assign(g.image.width * g.image.height, 0);
    const std::vector<double> v = part.to_vector();
    for (std::size_t t = 0; t < g.tiles; ++t) {
      std::vector<double> channel(h * w);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) channel[y * w + x] = v[(y * w + x) * c + t];
      const GrayImage tile = to_gray(channel, h, w);
      const std::size_t oy = 1 + (t / g.columns) * (th + 1), ox = 1 + (t % g.columns) * (tw + 1);
      for (std::size_t y = 0; y < th; ++y)
        for (std::size_t x = 0; x < tw; ++x)
          g.image.pixels[(oy + y) * g.image.width + ox + x] = tile.at(y / scale, x / scale);
    }
    grids.push_back(std::move(g));
  }
  return grids;
}

std::vector<std::string> export_feature_maps(const model::ScopeformerModel& model, const Tensor& image,
                                             const std::string& out_dir, std::size_t k) {
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const FeatureGrid& g : feature_grids(model, image, k)) {
    const std::string path = (fs::path(out_dir) / ("backbone" + std::to_string(g.backbone) + "_features.pgm")).string();
    write_pgm(path, g.image);
    paths.push_back(path);
  }
  return paths;
}

}  // namespace scopeformer::diag
