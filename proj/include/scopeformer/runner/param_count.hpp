#pragma once

#include <map>
#include <string>

#include "scopeformer/model/model.hpp"

namespace scopeformer::runner {

struct ModuleCount {
  std::size_t trainable = 0;
  std::size_t frozen = 0;
  std::size_t total() const { return trainable + frozen; }
};

struct ParameterCount {
  std::map<std::string, ModuleCount> modules;  // keyed by registry module name
  std::size_t total() const;
  std::size_t trainable() const;
  std::size_t frozen() const;
  /// Everything except backbone stage weights (ViT, projections, embeddings, head).
  std::size_t without_backbone() const;
};

/// Enumerate the model's parameter registry.
ParameterCount count_parameters(const model::ScopeformerModel& model);

/// Per-module totals derived from the configuration alone, without building
/// a model: conv stages, 1x1 projections, patch embedding, positions/CLS,
/// the per-block formula times L, and the head.
std::map<std::string, std::size_t> closed_form_parameter_count(const model::ScopeformerConfig& config);

}  // namespace scopeformer::runner
