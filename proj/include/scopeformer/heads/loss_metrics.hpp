#pragma once

#include <array>
#include <vector>

#include "scopeformer/core/tensor.hpp"
#include "scopeformer/ingest/dataset.hpp"

namespace scopeformer::heads {

using Probabilities = std::array<double, 6>;
using ingest::Label;

inline constexpr double kProbabilityEpsilon = 1e-7;

/// Class weights aligned with [any, EDH, IPH, IVH, SAH, SDH].
struct ClassWeights {
  std::array<double, 6> alpha{2.0, 1.0, 1.0, 1.0, 1.0, 1.0};

  double total() const;
  void validate() const;
};

/// sum_n alpha_n * BCE(y_n, clamp(p_n)) / sum_n alpha_n, differentiable.
/// `probabilities` and `labels` are [6] or [B x 6]; a batch is averaged.
core::Tensor weighted_multilabel_log_loss(const core::Tensor& probabilities, const core::Tensor& labels,
                                          const ClassWeights& weights = {});

/// The same loss evaluated in double precision for one sample.
double weighted_multilabel_log_loss(const Label& y, const Probabilities& p, const ClassWeights& weights = {});

/// Mean of the per-sample loss over a batch.
double mean_log_loss(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                     const ClassWeights& weights = {});

/// Predicted positive when p >= threshold.
bool predicted_positive(double p, double threshold = 0.5);

/// Per-class accuracy at `threshold`, ordered [any, EDH, IPH, IVH, SAH, SDH].
std::array<double, 6> per_class_accuracy(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                                         double threshold = 0.5);

/// sum_c alpha_c * acc_c / sum_c alpha_c. Throws on an empty batch.
double weighted_accuracy(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                         const ClassWeights& weights = {}, double threshold = 0.5);

struct RecallReport {
  std::array<double, 6> class_accuracy{};
  double recall = 1.0;        // TP / (TP + FN) pooled over all classes
  bool no_positives = false;  // recall defaulted to 1 because TP + FN = 0
};

RecallReport recall_and_per_class_accuracy(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                                           double threshold = 0.5);

struct MetricsRow {
  double loss = 0.0;
  double weighted_accuracy = 0.0;
  RecallReport recall;
};

MetricsRow compute_metrics(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                           const ClassWeights& weights = {}, double threshold = 0.5);

}  // namespace scopeformer::heads
