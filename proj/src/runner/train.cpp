#include "scopeformer/runner/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

#include "json.hpp"
#include "scopeformer/core/checkpoint.hpp"
#include "scopeformer/core/ops.hpp"
#include "scopeformer/runner/adam.hpp"
#include "scopeformer/runner/config_io.hpp"
#include "scopeformer/runner/param_count.hpp"

namespace scopeformer::runner {

namespace fs = std::filesystem;
using core::Tensor;
using heads::Probabilities;
using ingest::Label;

namespace {

// Streams are keyed by (seed, purpose, index) so each is independent of how
// many draws another consumer made.
std::mt19937_64 stream(std::uint64_t seed, std::uint32_t purpose, std::uint64_t index = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), purpose,
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::string iso_utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

Probabilities to_probabilities(const Tensor& p) {
  Probabilities out{};
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = p.item(c);
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  core::write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

// Per-sample inputs for one training pass: either images or cached aligned
// backbone features (both orientations when flipping is enabled).
class SampleSource {
 public:
  SampleSource(const ScopeformerModel& model, const Dataset& data, bool flip, bool cache)
      : model_(model), data_(data), cached_(cache) {
    if (!cached_) return;
    core::NoGradScope no_grad;
    for (int f = 0; f < (flip ? 2 : 1); ++f) {
      auto& dst = features_[f];
      dst.reserve(data.size());
      for (std::size_t i = 0; i < data.size(); ++i) {
        dst.push_back(model.backbone().aligned_features(ingest::image_tensor(data, i, f == 1)));
      }
    }
  }

  model::ForwardResult forward(std::size_t index, bool flipped, const model::ForwardOptions& options = {}) const {
    if (cached_) return model_.forward_from_aligned(features_[flipped ? 1 : 0].at(index), options);
    return model_.forward(ingest::image_tensor(data_, index, flipped), options);
  }

 private:
  const ScopeformerModel& model_;
  const Dataset& data_;
  bool cached_;
  std::vector<std::vector<Tensor>> features_[2];
};

Evaluation evaluate_source(const SampleSource& source, const Dataset& data, const heads::ClassWeights& weights) {
  Evaluation ev;
  core::NoGradScope no_grad;
  for (std::size_t i = 0; i < data.size(); ++i) {
    ev.predictions.push_back(to_probabilities(source.forward(i, false).head.probabilities));
    ev.labels.push_back(data.samples[i].label);
  }
  if (!data.samples.empty()) ev.metrics = heads::compute_metrics(ev.labels, ev.predictions, weights);
  return ev;
}

std::size_t cache_bytes(const ScopeformerModel& model, std::size_t samples, bool flip) {
  std::size_t per = 0;
  const auto& bb = model.backbone();
  for (std::size_t i = 0; i < bb.size(); ++i) per += bb.grid() * bb.grid() * bb.cnn(i).out_channels();
  return per * sizeof(float) * samples * (flip ? 2 : 1);
}

// Train each task-pretrained CNN with a linear probe on its aligned grid
// features, flattened so the probe can see where a finding sits. The probe
// is discarded afterwards.
void pretrain_backbones(ScopeformerModel& model, const Dataset& train_set, std::ostream* log) {
  const ScopeformerConfig& cfg = model.config();
  auto& bb = model.backbone();
  for (std::size_t b = 0; b < bb.size(); ++b) {
    if (bb.spec(b).pretrain_tag != backbone::PretrainTag::task_pretrained) continue;
    backbone::ToyCnn& cnn = bb.cnn(b);
    for (std::size_t s = 0; s < cnn.stage_count(); ++s) cnn.set_stage_trainable(s, true);
    core::Rng probe_rng = stream(cfg.seed, 11, b);
    const std::size_t probe_in = bb.grid() * bb.grid() * cnn.out_channels();
    heads::LinearProbe probe(probe_in, probe_rng);
    core::ParameterRegistry params;
    params.extend(cnn.parameters());
    params.extend(probe.parameters());
    Adam adam(params, {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});

    std::vector<std::size_t> order(train_set.size());
    for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      auto rng = stream(cfg.seed, 12, b * 1000 + epoch);
      std::shuffle(order.begin(), order.end(), rng);
      std::bernoulli_distribution coin(0.5);
      double total = 0.0;
      for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
        const std::size_t end = std::min(order.size(), start + cfg.batch_size);
        const double inv = 1.0 / static_cast<double>(end - start);
        params.zero_grad();
        for (std::size_t k = start; k < end; ++k) {
          const std::size_t i = order[k];
          const bool flipped = cfg.flip && coin(rng);
          core::Tape tape;
          core::TapeScope scope(tape);
          const Tensor feats = cnn.forward(ingest::image_tensor(train_set, i, flipped));
          const Tensor flat = core::reshape(backbone::align_spatial(feats, bb.grid(), bb.grid()), {probe_in});
          const heads::HeadOutput out = probe.forward(flat);
          const Tensor loss = heads::weighted_multilabel_log_loss(
              out.probabilities, ingest::label_tensor(train_set.samples[i].label), cfg.class_weights);
          const double value = loss.item();
          if (!std::isfinite(value)) throw TrainingDiverged("backbone pretraining loss is not finite");
          total += value;
          tape.backward(core::scale(loss, inv));
        }
        adam.step();
      }
      if (log) {
        *log << "pretrain backbone " << b << " epoch " << epoch << " loss "
             << fmt(total / static_cast<double>(order.size())) << "\n"
             << std::flush;
      }
    }
  }
  // Pretrain-then-freeze: every CNN stage stays fixed from here on.
  bb.apply_freeze_policies(1.0);
}

}  // namespace

std::string metrics_csv_header() {
  std::string h = "epoch,split,loss,weighted_accuracy,recall";
  for (const char* name : ingest::kClassNames) h += std::string(",acc_") + name;
  return h;
}

std::string metrics_csv_row(std::size_t epoch, const std::string& split, const MetricsRow& m) {
  std::string row = std::to_string(epoch) + "," + split + "," + fmt(m.loss) + "," + fmt(m.weighted_accuracy) + "," +
                    fmt(m.recall.recall);
  for (double a : m.recall.class_accuracy) row += "," + fmt(a);
  return row;
}

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["variant"] = config.variant;
  j["seed"] = seed;
  j["config"] = serialize_config(config);
  j["out_dir"] = out_dir;
  j["config_path"] = config_path;
  j["metrics_csv"] = metrics_csv;
  j["checkpoints"] = {{"initial", initial_checkpoint}, {"best", best_checkpoint}, {"last", last_checkpoint}};
  j["started_at"] = started_at;
  j["finished_at"] = finished_at;
  j["wall_seconds"] = wall_seconds;
  j["epochs_run"] = epochs_run;
  j["best_epoch"] = best_epoch;
  j["best_loss"] = best_loss;
  j["stopped_early"] = stopped_early;
  j["train_samples"] = train_samples;
  j["val_samples"] = val_samples;
  j["parameters"] = {{"trainable", trainable_parameters}, {"frozen", frozen_parameters}};
  return j.dump(2) + "\n";
}

DataSplit split_dataset(const Dataset& data, double val_fraction) {
  const std::size_t n = data.size();
  const auto n_train = static_cast<std::size_t>(std::llround((1.0 - val_fraction) * static_cast<double>(n)));
  return {ingest::subset(data, 0, n_train), ingest::subset(data, n_train, n - n_train)};
}

SplitSelector split_selector_from_string(const std::string& text) {
  if (text == "all") return SplitSelector::all;
  if (text == "train") return SplitSelector::train;
  if (text == "val") return SplitSelector::val;
  throw core::ConfigError("unknown split '" + text + "' (expected all, train or val)");
}

Dataset select_split(const Dataset& data, double val_fraction, SplitSelector which) {
  if (which == SplitSelector::all) return data;
  DataSplit s = split_dataset(data, val_fraction);
  return which == SplitSelector::train ? std::move(s.train) : std::move(s.val);
}

Evaluation evaluate(const ScopeformerModel& model, const Dataset& data) {
  SampleSource source(model, data, false, false);
  return evaluate_source(source, data, model.config().class_weights);
}

RunManifest train(const ScopeformerConfig& config, const Dataset& data, const std::string& out_dir,
                  std::ostream* log) {
  config.validate();
  if (data.height != config.image_size || data.width != config.image_size) {
    throw core::ConfigError("dataset images are " + std::to_string(data.height) + "x" + std::to_string(data.width) +
                            " but image_size = " + std::to_string(config.image_size));
  }
  const auto t0 = std::chrono::steady_clock::now();
  core::PrecisionScope precision(core::DType::f32);

  RunManifest manifest;
  manifest.config = config;
  manifest.seed = config.seed;
  manifest.started_at = iso_utc_now();
  fs::create_directories(out_dir);
  manifest.out_dir = out_dir;
  manifest.config_path = (fs::path(out_dir) / "config.cfg").string();
  manifest.metrics_csv = (fs::path(out_dir) / "metrics.csv").string();
  manifest.initial_checkpoint = (fs::path(out_dir) / "initial.ckpt").string();
  manifest.best_checkpoint = (fs::path(out_dir) / "best.ckpt").string();
  manifest.last_checkpoint = (fs::path(out_dir) / "last.ckpt").string();
  save_config(manifest.config_path, config);

  const DataSplit split = split_dataset(data, config.val_fraction);
  if (split.train.size() == 0) throw core::ConfigError("training split is empty");
  manifest.train_samples = split.train.size();
  manifest.val_samples = split.val.size();

  ScopeformerModel model(config);
  if (config.pretrain_backbone) pretrain_backbones(model, split.train, log);

  const ParameterCount counts = count_parameters(model);
  manifest.trainable_parameters = counts.trainable();
  manifest.frozen_parameters = counts.frozen();
  core::save_checkpoint(manifest.initial_checkpoint, model.parameters());

  constexpr std::size_t kCacheLimitBytes = std::size_t{1} << 30;
  const bool cache = model.has_backbone() && model.backbone().cnns_frozen() &&
                     cache_bytes(model, data.size(), config.flip) <= kCacheLimitBytes;
  const SampleSource train_source(model, split.train, config.flip, cache);
  const SampleSource val_source(model, split.val, false, cache);

  Adam adam(model.parameters(), {config.learning_rate, config.beta1, config.beta2, config.adam_eps});
  std::ofstream csv(manifest.metrics_csv, std::ios::binary);
  if (!csv) throw std::runtime_error("cannot write " + manifest.metrics_csv);
  csv << metrics_csv_header() << "\n";

  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  std::vector<std::size_t> order(split.train.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto rng = stream(config.seed, 21, epoch);
    std::shuffle(order.begin(), order.end(), rng);
    std::bernoulli_distribution coin(0.5);

    std::vector<Probabilities> seen;
    std::vector<Label> seen_labels;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      model.parameters().zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        const bool flipped = config.flip && coin(rng);
        core::Tape tape;
        core::TapeScope scope(tape);
        const model::ForwardResult r = train_source.forward(i, flipped);
        const Label& y = split.train.samples[i].label;
        const Tensor loss = heads::weighted_multilabel_log_loss(r.head.probabilities, ingest::label_tensor(y),
                                                                config.class_weights);
        if (!std::isfinite(loss.item())) {
          throw TrainingDiverged("loss is not finite at epoch " + std::to_string(epoch) + ", sample " +
                                 std::to_string(i));
        }
        seen.push_back(to_probabilities(r.head.probabilities));
        seen_labels.push_back(y);
        tape.backward(core::scale(loss, inv));
      }
      adam.step();
    }

    // Training row: running metrics over the predictions made during the epoch.
    EpochRecord train_row{epoch, "train", heads::compute_metrics(seen_labels, seen, config.class_weights)};
    manifest.history.push_back(train_row);
    csv << metrics_csv_row(epoch, "train", train_row.metrics) << "\n";
    double monitored = train_row.metrics.loss;
    if (split.val.size() > 0) {
      EpochRecord val_row{epoch, "val", evaluate_source(val_source, split.val, config.class_weights).metrics};
      manifest.history.push_back(val_row);
      csv << metrics_csv_row(epoch, "val", val_row.metrics) << "\n";
      monitored = val_row.metrics.loss;
      if (log) {
        *log << "epoch " << epoch << " train loss " << fmt(train_row.metrics.loss) << " acc "
             << fmt(train_row.metrics.weighted_accuracy) << " | val loss " << fmt(val_row.metrics.loss) << " acc "
             << fmt(val_row.metrics.weighted_accuracy) << "\n"
             << std::flush;
      }
    } else if (log) {
      *log << "epoch " << epoch << " train loss " << fmt(train_row.metrics.loss) << " acc "
           << fmt(train_row.metrics.weighted_accuracy) << "\n"
           << std::flush;
    }
    csv.flush();
    manifest.epochs_run = epoch;

    if (monitored < best) {
      best = monitored;
      since_best = 0;
      manifest.best_epoch = epoch;
      manifest.best_loss = best;
      core::save_checkpoint(manifest.best_checkpoint, model.parameters());
    } else if (config.early_stop_patience > 0 && ++since_best >= config.early_stop_patience) {
      manifest.stopped_early = epoch < config.epochs;
      break;
    }
  }

  core::save_checkpoint(manifest.last_checkpoint, model.parameters());
  manifest.finished_at = iso_utc_now();
  manifest.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text((fs::path(out_dir) / "manifest.json").string(), manifest.to_json());
  return manifest;
}

std::string sidecar_config_path(const std::string& checkpoint_path) {
  return (fs::path(checkpoint_path).parent_path() / "config.cfg").string();
}

std::unique_ptr<ScopeformerModel> load_model(const std::string& checkpoint_path) {
  const ScopeformerConfig config = load_config(sidecar_config_path(checkpoint_path));
  const std::vector<core::CheckpointEntry> entries = core::read_checkpoint(checkpoint_path);
  core::PrecisionScope precision(core::DType::f32);
  auto model = std::make_unique<ScopeformerModel>(config);
  core::apply_checkpoint(entries, model->parameters());
  return model;
}

}  // namespace scopeformer::runner
