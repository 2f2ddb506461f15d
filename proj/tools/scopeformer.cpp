// Command-line front end: dataset synthesis, training, evaluation,
// parameter accounting and diagnostics export.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "scopeformer/core/tensor.hpp"
#include "scopeformer/diag/diagnostics.hpp"
#include "scopeformer/ingest/synth.hpp"
#include "scopeformer/runner/config_io.hpp"
#include "scopeformer/runner/param_count.hpp"
#include "scopeformer/runner/presets.hpp"
#include "scopeformer/runner/train.hpp"

namespace sf = scopeformer;
using sf::runner::ScopeformerConfig;

namespace {

// A --config value may name a file or a preset.
ScopeformerConfig resolve_config(const std::string& spec) {
  if (std::filesystem::exists(spec)) return sf::runner::load_config(spec);
  for (const auto& name : sf::runner::preset_names())
    if (name == spec) return sf::runner::preset(name);
  throw sf::core::ConfigError("'" + spec + "' is neither a config file nor a preset name");
}

void print_metrics(const sf::heads::MetricsRow& m, std::size_t n) {
  std::printf("samples            %zu\n", n);
  std::printf("loss               %.6f\n", m.loss);
  std::printf("weighted_accuracy  %.6f\n", m.weighted_accuracy);
  std::printf("recall             %.6f%s\n", m.recall.recall, m.recall.no_positives ? "  (no positives)" : "");
  for (std::size_t c = 0; c < m.recall.class_accuracy.size(); ++c) {
    std::printf("acc_%-15s%.6f\n", sf::ingest::kClassNames[c], m.recall.class_accuracy[c]);
  }
}

int cmd_synth(std::uint64_t seed, std::size_t n, std::size_t size, const std::string& out) {
  const sf::ingest::Dataset data = sf::ingest::synth_generate(seed, n, size);
  sf::ingest::dataset_write(out, data);
  std::printf("wrote %zu samples of %zux%zu to %s\n", n, size, size, out.c_str());
  return 0;
}

int cmd_train(const std::string& config_spec, const std::string& data_path, const std::string& out,
              std::optional<std::uint64_t> seed) {
  ScopeformerConfig cfg = resolve_config(config_spec);
  if (seed) cfg.seed = *seed;
  const sf::ingest::Dataset data = sf::ingest::dataset_read(data_path);
  const sf::runner::RunManifest m = sf::runner::train(cfg, data, out, &std::cout);
  std::printf("finished %zu epochs in %.1f s; best val loss %.6f at epoch %zu\n", m.epochs_run, m.wall_seconds,
              m.best_loss, m.best_epoch);
  std::printf("manifest: %s\n", (std::filesystem::path(out) / "manifest.json").c_str());
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& split) {
  const auto model = sf::runner::load_model(ckpt);
  const sf::ingest::Dataset all = sf::ingest::dataset_read(data_path);
  const sf::ingest::Dataset data =
      sf::runner::select_split(all, model->config().val_fraction, sf::runner::split_selector_from_string(split));
  const sf::runner::Evaluation ev = sf::runner::evaluate(*model, data);
  print_metrics(ev.metrics, data.size());
  std::printf("%s\n%s\n", sf::runner::metrics_csv_header().c_str(),
              sf::runner::metrics_csv_row(0, split, ev.metrics).c_str());
  return 0;
}

int cmd_params(const std::string& config_spec) {
  const ScopeformerConfig cfg = resolve_config(config_spec);
  const sf::runner::ParameterCount count = [&] {
    sf::core::PrecisionScope precision(sf::core::DType::f32);
    sf::model::ScopeformerModel model(cfg);
    return sf::runner::count_parameters(model);
  }();
  const auto closed = sf::runner::closed_form_parameter_count(cfg);
  std::printf("%-12s %14s %14s %14s\n", "module", "trainable", "frozen", "closed-form");
  for (const auto& [name, c] : count.modules) {
    const auto it = closed.find(name);
    std::printf("%-12s %14zu %14zu %14zu\n", name.c_str(), c.trainable, c.frozen, it == closed.end() ? 0 : it->second);
  }
  std::printf("%-12s %14zu %14zu\n", "total", count.trainable(), count.frozen());
  std::printf("all parameters          %zu\n", count.total());
  std::printf("without backbone stages %zu\n", count.without_backbone());
  return 0;
}

sf::core::Tensor sample_image(const sf::ingest::Dataset& data, std::size_t index) {
  if (index >= data.size()) {
    throw std::out_of_range("sample " + std::to_string(index) + " is outside a dataset of " +
                            std::to_string(data.size()));
  }
  return sf::ingest::image_tensor(data, index);
}

int cmd_diag_cosine(const std::string& ckpt, const std::string& data_path, const std::string& out,
                    std::size_t max_samples) {
  const auto model = sf::runner::load_model(ckpt);
  const sf::ingest::Dataset data = sf::ingest::dataset_read(data_path);
  const sf::diag::SimilarityCurve curve = sf::diag::similarity_curve(*model, data, max_samples);
  sf::diag::write_similarity_csv(out, curve);
  for (std::size_t i = 0; i < curve.values.size(); ++i) {
    std::printf("layer %2zu  %.6f%s\n", i + 1, curve.values[i], curve.zero_norm[i] ? "  (zero norm)" : "");
  }
  std::printf("mean %.6f over %zu samples; wrote %s\n", curve.mean(), curve.samples, out.c_str());
  return 0;
}

int cmd_diag_attention(const std::string& ckpt, const std::string& data_path, std::size_t index,
                       std::vector<std::size_t> layers, const std::string& out) {
  const auto model = sf::runner::load_model(ckpt);
  const sf::ingest::Dataset data = sf::ingest::dataset_read(data_path);
  if (layers.empty()) layers = {1, model->encoder().size()};
  const auto paths = sf::diag::export_attention_maps(*model, sample_image(data, index), layers, out);
  std::printf("wrote %zu attention maps to %s\n", paths.size(), out.c_str());
  return 0;
}

int cmd_diag_features(const std::string& ckpt, const std::string& data_path, std::size_t index, std::size_t k,
                      const std::string& out) {
  const auto model = sf::runner::load_model(ckpt);
  const sf::ingest::Dataset data = sf::ingest::dataset_read(data_path);
  const auto paths = sf::diag::export_feature_maps(*model, sample_image(data, index), out, k);
  std::printf("wrote %zu feature grids to %s\n", paths.size(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid multi-CNN + vision transformer for hemorrhage classification"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth", "Generate a synthetic phantom dataset");
  std::uint64_t synth_seed = 1;
  std::size_t synth_n = 0, synth_size = 64;
  std::string synth_out;
  synth->add_option("--seed", synth_seed, "Generator seed")->default_val(1);
  synth->add_option("--n", synth_n, "Number of samples")->required();
  synth->add_option("--size", synth_size, "Image side length")->default_val(64);
  synth->add_option("--out", synth_out, "Output dataset file")->required();

  auto* train = app.add_subcommand("train", "Train a model");
  std::string train_config, train_data, train_out;
  std::optional<std::uint64_t> train_seed;
  train->add_option("--config", train_config, "Config file or preset name")->required();
  train->add_option("--data", train_data, "Dataset file")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Run directory")->required();
  train->add_option("--seed", train_seed, "Override the config seed");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  std::string eval_ckpt, eval_data, eval_split = "all";
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint (config.cfg must sit next to it)")
      ->required()
      ->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data, "Dataset file")->required()->check(CLI::ExistingFile);
  eval->add_option("--split", eval_split, "all, train or val (split by the run's val_fraction)")
      ->default_val("all")
      ->check(CLI::IsMember({"all", "train", "val"}));

  auto* params = app.add_subcommand("params", "Count parameters per module");
  std::string params_config;
  params->add_option("--config", params_config, "Config file or preset name")->required();

  auto* diag = app.add_subcommand("diag", "Export diagnostics from a checkpoint");
  diag->require_subcommand(1);
  std::string diag_ckpt, diag_data, diag_out;
  std::size_t diag_index = 0, diag_samples = 64, diag_k = 16;
  std::vector<std::size_t> diag_layers;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--ckpt", diag_ckpt, "Checkpoint (config.cfg must sit next to it)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--data", diag_data, "Dataset file")->required()->check(CLI::ExistingFile);
  };
  auto* cosine = diag->add_subcommand("cosine", "Per-layer cosine similarity to the last encoder block (CSV)");
  common(cosine);
  cosine->add_option("--samples", diag_samples, "Samples averaged over")->default_val(64);
  cosine->add_option("--out", diag_out, "Output CSV path")->required();
  auto* attention = diag->add_subcommand("attention", "Attention maps of selected layers as PGM images");
  common(attention);
  attention->add_option("--index", diag_index, "Sample index")->default_val(0);
  attention->add_option("--layers", diag_layers, "1-based layers (default: first and last)")->delimiter(',');
  attention->add_option("--out", diag_out, "Output directory")->required();
  auto* features = diag->add_subcommand("features", "First K feature channels per backbone as PGM grids");
  common(features);
  features->add_option("--index", diag_index, "Sample index")->default_val(0);
  features->add_option("--k", diag_k, "Channels per backbone")->default_val(16);
  features->add_option("--out", diag_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) return cmd_synth(synth_seed, synth_n, synth_size, synth_out);
    if (*train) return cmd_train(train_config, train_data, train_out, train_seed);
    if (*eval) return cmd_eval(eval_ckpt, eval_data, eval_split);
    if (*params) return cmd_params(params_config);
    if (*cosine) return cmd_diag_cosine(diag_ckpt, diag_data, diag_out, diag_samples);
    if (*attention) return cmd_diag_attention(diag_ckpt, diag_data, diag_index, diag_layers, diag_out);
    if (*features) return cmd_diag_features(diag_ckpt, diag_data, diag_index, diag_k, diag_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
