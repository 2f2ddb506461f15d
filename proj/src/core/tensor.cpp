#include "scopeformer/core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace scopeformer::core {

namespace {

DType g_default_dtype = DType::f32;
#ifdef NDEBUG
bool g_debug_checks = false;
#else
bool g_debug_checks = true;
#endif
thread_local Tape* t_active_tape = nullptr;

void validate_shape(const Shape& shape) {
  if (shape.empty() || shape.size() > 4) {
    throw DimensionError("tensor rank must be 1-4, got " + std::to_string(shape.size()));
  }
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive: " + shape_to_string(shape));
  }
}

}  // namespace

DType default_dtype() { return g_default_dtype; }
void set_default_dtype(DType dtype) { g_default_dtype = dtype; }

PrecisionScope::PrecisionScope(DType dtype) : previous_(g_default_dtype) { g_default_dtype = dtype; }
PrecisionScope::~PrecisionScope() { g_default_dtype = previous_; }

bool debug_checks_enabled() { return g_debug_checks; }
void set_debug_checks(bool enabled) { g_debug_checks = enabled; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Buffer::Buffer(DType dtype, std::size_t size) {
  if (dtype == DType::f32) {
    values_ = std::vector<float>(size, 0.0f);
  } else {
    values_ = std::vector<double>(size, 0.0);
  }
}

std::size_t Buffer::size() const {
  return std::visit([](const auto& v) { return v.size(); }, values_);
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(const Shape& shape, DType dtype) {
  validate_shape(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = Buffer(dtype, shape_numel(shape));
  return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, double value, DType dtype) {
  Tensor t = zeros(shape, dtype);
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto& v = t.mutable_buffer().as<T>();
    std::fill(v.begin(), v.end(), static_cast<T>(value));
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::span<const double> values, DType dtype) {
  Tensor t = zeros(shape, dtype);
  if (values.size() != t.numel()) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_to_string(shape));
  }
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto& v = t.mutable_buffer().as<T>();
    for (std::size_t i = 0; i < values.size(); ++i) v[i] = static_cast<T>(values[i]);
  });
  return t;
}

Tensor Tensor::from_values(const Shape& shape, std::initializer_list<double> values, DType dtype) {
  return from_values(shape, std::span<const double>(values.begin(), values.size()), dtype);
}

Tensor Tensor::from_floats(const Shape& shape, std::span<const float> values, DType dtype) {
  Tensor t = zeros(shape, dtype);
  if (values.size() != t.numel()) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_to_string(shape));
  }
  visit_dtype(dtype, [&](auto tag) {
    using T = decltype(tag);
    auto& v = t.mutable_buffer().as<T>();
    std::copy(values.begin(), values.end(), v.begin());
  });
  return t;
}

Tensor Tensor::from_buffer(const Shape& shape, Buffer buffer) {
  validate_shape(shape);
  if (buffer.size() != shape_numel(shape)) {
    throw DimensionError("buffer size does not match shape " + shape_to_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(buffer);
  return Tensor(std::move(impl));
}

const Shape& Tensor::shape() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->shape;
}

std::size_t Tensor::extent(std::size_t axis) const {
  if (axis >= rank()) throw DimensionError("axis out of range");
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

DType Tensor::dtype() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->data.dtype();
}

const Buffer& Tensor::buffer() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->data;
}

Buffer& Tensor::mutable_buffer() {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->data;
}

double Tensor::item(std::size_t flat_index) const {
  if (flat_index >= numel()) throw DimensionError("flat index out of range");
  return visit_dtype(dtype(), [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(buffer().as<T>()[flat_index]);
  });
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw DimensionError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return item(flat);
}

void Tensor::set_item(std::size_t flat_index, double value) {
  if (flat_index >= numel()) throw DimensionError("flat index out of range");
  visit_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    mutable_buffer().as<T>()[flat_index] = static_cast<T>(value);
  });
}

std::vector<double> Tensor::to_vector() const {
  return visit_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& v = buffer().as<T>();
    return std::vector<double>(v.begin(), v.end());
  });
}

std::vector<float> Tensor::to_floats() const {
  return visit_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& v = buffer().as<T>();
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i]);
    return out;
  });
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  if (!impl_) throw std::logic_error("undefined tensor");
  if (impl_->tape_id) throw std::logic_error("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::needs_grad() const { return impl_ && (impl_->requires_grad || impl_->tape_id.has_value()); }

const std::optional<NodeHandle>& Tensor::tape_id() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  return impl_->tape_id;
}

bool Tensor::has_grad() const { return impl_ && impl_->has_grad; }

Tensor Tensor::grad() const {
  if (!impl_) throw std::logic_error("undefined tensor");
  if (!impl_->has_grad) return zeros(impl_->shape, dtype());
  return from_buffer(impl_->shape, impl_->grad);
}

void Tensor::zero_grad() {
  if (!impl_) return;
  impl_->has_grad = false;
  impl_->grad = Buffer();
}

void Tensor::accumulate_grad(const Tensor& g) {
  if (!impl_) throw std::logic_error("undefined tensor");
  if (g.shape() != shape()) {
    throw DimensionError("gradient shape " + shape_to_string(g.shape()) + " does not match " +
                         shape_to_string(shape()));
  }
  if (g.dtype() != dtype()) throw DimensionError("gradient dtype mismatch");
  visit_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& src = g.buffer().as<T>();
    if (!impl_->has_grad) {
      impl_->grad = Buffer(dtype(), src.size());
      impl_->has_grad = true;
    }
    auto& dst = impl_->grad.as<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

void Tensor::add_in_place(const Tensor& other) {
  if (other.shape() != shape()) {
    throw DimensionError("shape " + shape_to_string(other.shape()) + " does not match " + shape_to_string(shape()));
  }
  if (other.dtype() != dtype()) throw DimensionError("dtype mismatch");
  visit_dtype(dtype(), [&](auto tag) {
    using T = decltype(tag);
    const auto& src = other.buffer().as<T>();
    auto& dst = mutable_buffer().as<T>();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  });
}

Tensor Tensor::detach() const { return from_buffer(shape(), buffer()); }

Tensor Tensor::to(DType target) const {
  if (target == dtype()) return detach();
  Tensor out = zeros(shape(), target);
  visit_dtype(dtype(), [&](auto src_tag) {
    using S = decltype(src_tag);
    visit_dtype(target, [&](auto dst_tag) {
      using D = decltype(dst_tag);
      const auto& src = buffer().as<S>();
      auto& dst = out.mutable_buffer().as<D>();
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<D>(src[i]);
    });
  });
  return out;
}

// ---------------------------------------------------------------------------
// Tape

void Tape::record(Tensor& output, std::vector<Tensor> inputs, BackwardFn backward) {
  if (!output.defined()) throw std::logic_error("cannot record an undefined tensor");
  if (output.impl_->tape_id) throw std::logic_error("tensor is already recorded on a tape");
  for (const Tensor& in : inputs) {
    if (in.defined() && in.impl_->tape_id && in.impl_->tape_id->tape != this) {
      throw std::logic_error("op mixes tensors recorded on different tapes");
    }
  }
  output.impl_->tape_id = NodeHandle{this, nodes_.size()};
  nodes_.push_back(Node{std::move(inputs), std::move(backward)});
}

void Tape::backward_local(const Tensor& root, double seed) {
  if (!root.defined() || root.numel() != 1) {
    throw DimensionError("backward requires a scalar root");
  }
  const auto& id = root.tape_id();
  if (!id || id->tape != this) throw std::logic_error("backward root is not recorded on this tape");

  std::vector<Tensor> grads(id->index + 1);
  grads[id->index] = Tensor::full(root.shape(), seed, root.dtype());

  NoGradScope no_grad;
  for (std::size_t i = id->index + 1; i-- > 0;) {
    if (!grads[i].defined()) continue;
    Node& node = nodes_[i];
    std::vector<Tensor> input_grads = node.backward(grads[i]);
    grads[i] = Tensor();
    for (std::size_t k = 0; k < node.inputs.size() && k < input_grads.size(); ++k) {
      const Tensor& input = node.inputs[k];
      Tensor& g = input_grads[k];
      if (!g.defined() || !input.defined() || !input.needs_grad()) continue;
      if (g.shape() != input.shape()) {
        throw std::logic_error("backward rule produced gradient " + shape_to_string(g.shape()) + " for input " +
                               shape_to_string(input.shape()));
      }
      if (input.impl_->tape_id) {
        std::size_t j = input.impl_->tape_id->index;
        if (!grads[j].defined()) {
          grads[j] = std::move(g);
        } else {
          // Backward rules may hand the same storage to several inputs, so
          // accumulate out of place.
          Tensor sum = grads[j].detach();
          sum.add_in_place(g);
          grads[j] = std::move(sum);
        }
      } else {
        auto it = std::find_if(leaf_grads_.begin(), leaf_grads_.end(),
                               [&](const auto& p) { return p.first.id() == input.id(); });
        if (it == leaf_grads_.end()) {
          leaf_grads_.emplace_back(input, g.detach());
        } else {
          it->second.add_in_place(g);
        }
      }
    }
  }
}

void Tape::accumulate_into_leaves() {
  for (auto& [leaf, g] : leaf_grads_) {
    Tensor target = leaf;
    target.accumulate_grad(g);
  }
  leaf_grads_.clear();
}

void Tape::backward(const Tensor& root, double seed) {
  backward_local(root, seed);
  accumulate_into_leaves();
}

void Tape::clear() {
  nodes_.clear();
  leaf_grads_.clear();
}

Tape* active_tape() { return t_active_tape; }

TapeScope::TapeScope(Tape& tape) : previous_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = previous_; }

NoGradScope::NoGradScope() : previous_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = previous_; }

Tensor record_op(Tensor output, std::vector<Tensor> inputs, BackwardFn backward) {
  check_finite(output, "op");
  Tape* tape = active_tape();
  if (!tape) return output;
  bool any = false;
  for (const Tensor& in : inputs) any = any || (in.defined() && in.needs_grad());
  if (!any) return output;
  for (Tensor& in : inputs) {
    if (in.defined() && !in.needs_grad()) in = Tensor();
  }
  tape->record(output, std::move(inputs), std::move(backward));
  return output;
}

void check_finite(const Tensor& t, const char* op) {
  if (!g_debug_checks || !t.defined()) return;
  visit_dtype(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    for (T v : t.buffer().as<T>()) {
      if (!std::isfinite(v)) throw NonFiniteError(std::string("non-finite value produced by ") + op);
    }
  });
}

}  // namespace scopeformer::core
