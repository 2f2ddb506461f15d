#include "scopeformer/heads/loss_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "scopeformer/core/ops.hpp"

namespace scopeformer::heads {

double ClassWeights::total() const {
  double s = 0.0;
  for (double a : alpha) s += a;
  return s;
}

void ClassWeights::validate() const {
  for (double a : alpha) {
    if (!(a > 0.0) || !std::isfinite(a)) throw core::ConfigError("class weights must be positive and finite");
  }
}

core::Tensor weighted_multilabel_log_loss(const core::Tensor& probabilities, const core::Tensor& labels,
                                          const ClassWeights& weights) {
  weights.validate();
  if (probabilities.shape() != labels.shape()) throw core::DimensionError("loss: prediction and label shapes differ");
  if (probabilities.shape().back() != 6) throw core::DimensionError("loss expects 6 outputs per sample");
  const std::size_t batch = probabilities.numel() / 6;

  std::vector<double> a(weights.alpha.begin(), weights.alpha.end());
  for (double& v : a) v /= weights.total() * static_cast<double>(batch);
  core::Tensor alpha = core::Tensor::from_values({6}, a, probabilities.dtype());

  core::Tensor p = core::clamp(probabilities, kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
  core::Tensor one_minus_y = core::add_scalar(core::neg(labels), 1.0);
  core::Tensor one_minus_p = core::add_scalar(core::neg(p), 1.0);
  core::Tensor ll = core::add(core::mul(labels, core::log(p)), core::mul(one_minus_y, core::log(one_minus_p)));
  return core::neg(core::sum(core::mul(ll, alpha)));
}

double weighted_multilabel_log_loss(const Label& y, const Probabilities& p, const ClassWeights& weights) {
  weights.validate();
  double acc = 0.0;
  for (std::size_t n = 0; n < 6; ++n) {
    const double q = std::clamp(p[n], kProbabilityEpsilon, 1.0 - kProbabilityEpsilon);
    acc += weights.alpha[n] * -(y[n] ? std::log(q) : std::log(1.0 - q));
  }
  return acc / weights.total();
}

double mean_log_loss(const std::vector<Label>& y, const std::vector<Probabilities>& p, const ClassWeights& weights) {
  if (y.empty() || y.size() != p.size()) throw std::invalid_argument("loss needs matching, non-empty batches");
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += weighted_multilabel_log_loss(y[i], p[i], weights);
  return s / static_cast<double>(y.size());
}

bool predicted_positive(double p, double threshold) { return p >= threshold; }

std::array<double, 6> per_class_accuracy(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                                         double threshold) {
  if (y.empty() || y.size() != p.size()) throw std::invalid_argument("metrics need matching, non-empty batches");
  std::array<double, 6> correct{};
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t c = 0; c < 6; ++c) correct[c] += predicted_positive(p[i][c], threshold) == (y[i][c] == 1);
  }
  for (double& c : correct) c /= static_cast<double>(y.size());
  return correct;
}

double weighted_accuracy(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                         const ClassWeights& weights, double threshold) {
  weights.validate();
  const auto acc = per_class_accuracy(y, p, threshold);
  double s = 0.0;
  for (std::size_t c = 0; c < 6; ++c) s += weights.alpha[c] * acc[c];
  return s / weights.total();
}

RecallReport recall_and_per_class_accuracy(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                                           double threshold) {
  RecallReport r;
  r.class_accuracy = per_class_accuracy(y, p, threshold);
  std::size_t tp = 0, fn = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (std::size_t c = 0; c < 6; ++c) {
      if (y[i][c] != 1) continue;
      if (predicted_positive(p[i][c], threshold)) ++tp;
      else ++fn;
    }
  }
  r.no_positives = tp + fn == 0;
  r.recall = r.no_positives ? 1.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  return r;
}

MetricsRow compute_metrics(const std::vector<Label>& y, const std::vector<Probabilities>& p,
                           const ClassWeights& weights, double threshold) {
  return {mean_log_loss(y, p, weights), weighted_accuracy(y, p, weights, threshold),
          recall_and_per_class_accuracy(y, p, threshold)};
}

}  // namespace scopeformer::heads
