#include "scopeformer/core/parameters.hpp"

#include <fstream>
#include <iterator>
#include <stdexcept>

#include "scopeformer/core/binary_io.hpp"

namespace scopeformer::core {

Tensor ParameterRegistry::add(std::string name, std::string module, Tensor value) {
  if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  value.set_requires_grad(true);
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(module), value});
  return value;
}

void ParameterRegistry::extend(const ParameterRegistry& other) {
  for (const Parameter& p : other.params_) {
    if (index_.count(p.name)) throw std::invalid_argument("duplicate parameter name: " + p.name);
    index_.emplace(p.name, params_.size());
    params_.push_back(p);
  }
}

const Parameter* ParameterRegistry::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &params_[it->second];
}

std::size_t ParameterRegistry::total_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) n += p.value.numel();
  return n;
}

std::size_t ParameterRegistry::trainable_count() const {
  std::size_t n = 0;
  for (const Parameter& p : params_) {
    if (p.trainable()) n += p.value.numel();
  }
  return n;
}

void ParameterRegistry::zero_grad() {
  for (Parameter& p : params_) p.value.zero_grad();
}

Tensor init_uniform(const Shape& shape, double bound, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, dist(rng));
  return t;
}

Tensor init_normal(const Shape& shape, double stddev, Rng& rng) {
  Tensor t = Tensor::zeros(shape);
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set_item(i, dist(rng));
  return t;
}

Tensor init_identity(std::size_t n) {
  Tensor t = Tensor::zeros({n, n});
  for (std::size_t i = 0; i < n; ++i) t.set_item(i * n + i, 1.0);
  return t;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

}  // namespace scopeformer::core
