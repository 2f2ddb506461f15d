#pragma once

#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "scopeformer/heads/loss_metrics.hpp"
#include "scopeformer/ingest/dataset.hpp"
#include "scopeformer/model/model.hpp"

namespace scopeformer::runner {

using heads::MetricsRow;
using ingest::Dataset;
using model::ScopeformerConfig;
using model::ScopeformerModel;

/// Raised when a training loss stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::string split;      // "train" or "val"
  MetricsRow metrics;
};

/// Metric CSV header and row, in the column order of the metric file.
std::string metrics_csv_header();
std::string metrics_csv_row(std::size_t epoch, const std::string& split, const MetricsRow& m);

struct RunManifest {
  ScopeformerConfig config;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string config_path;
  std::string metrics_csv;
  std::string initial_checkpoint;  // after backbone pretraining, before the first ViT update
  std::string best_checkpoint;     // lowest validation loss (training loss without a validation split)
  std::string last_checkpoint;
  std::string started_at;  // ISO-8601 UTC
  std::string finished_at;
  double wall_seconds = 0.0;
  std::size_t epochs_run = 0;
  std::size_t best_epoch = 0;
  double best_loss = 0.0;
  bool stopped_early = false;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::size_t trainable_parameters = 0;
  std::size_t frozen_parameters = 0;
  std::vector<EpochRecord> history;

  std::string to_json() const;
};

/// First round((1 - val_fraction) * n) samples train, the rest validate.
struct DataSplit {
  Dataset train;
  Dataset val;
};
DataSplit split_dataset(const Dataset& data, double val_fraction);

enum class SplitSelector { all, train, val };
SplitSelector split_selector_from_string(const std::string& text);
Dataset select_split(const Dataset& data, double val_fraction, SplitSelector which);

/// Train from scratch and write config.cfg, metrics.csv, checkpoints and
/// manifest.json into `out_dir` (created if needed). With `log`, one line per
/// epoch is printed there.
RunManifest train(const ScopeformerConfig& config, const Dataset& data, const std::string& out_dir,
                  std::ostream* log = nullptr);

struct Evaluation {
  MetricsRow metrics;
  std::vector<heads::Probabilities> predictions;
  std::vector<ingest::Label> labels;
};

/// Forward every sample without recording gradients and score the batch.
Evaluation evaluate(const ScopeformerModel& model, const Dataset& data);

/// Rebuild the model described by the config.cfg stored next to
/// `checkpoint_path` and load the checkpoint into it. Nothing is returned on
/// failure: any error (missing sidecar, truncation, name or shape mismatch)
/// propagates before a model is handed out.
std::unique_ptr<ScopeformerModel> load_model(const std::string& checkpoint_path);

/// Path of the config sidecar that accompanies a checkpoint.
std::string sidecar_config_path(const std::string& checkpoint_path);

}  // namespace scopeformer::runner
