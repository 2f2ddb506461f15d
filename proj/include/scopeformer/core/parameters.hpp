#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "scopeformer/core/tensor.hpp"

namespace scopeformer::core {

/// A named trainable tensor. The trainable flag lives on the tensor itself
/// (requires_grad), so every registry that shares the tensor sees the same
/// state.
struct Parameter {
  std::string name;
  std::string module;
  Tensor value;

  bool trainable() const { return value.requires_grad(); }
  void set_trainable(bool flag) { value.set_requires_grad(flag); }
};

/// Ordered parameter list with unique names.
class ParameterRegistry {
 public:
  /// Register `value` under `name`; marks it trainable and returns it.
  Tensor add(std::string name, std::string module, Tensor value);
  void extend(const ParameterRegistry& other);

  const std::vector<Parameter>& all() const { return params_; }
  std::vector<Parameter>& all() { return params_; }
  const Parameter* find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }

  std::size_t total_count() const;
  std::size_t trainable_count() const;
  void zero_grad();

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

using Rng = std::mt19937_64;

Tensor init_uniform(const Shape& shape, double bound, Rng& rng);
Tensor init_normal(const Shape& shape, double stddev, Rng& rng);
Tensor init_identity(std::size_t n);

}  // namespace scopeformer::core
