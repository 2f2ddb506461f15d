#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace scopeformer::core {

/// Element precision of a tensor. Training runs in f32; gradient
/// verification switches the process-wide default to f64.
enum class DType : std::uint8_t { f32, f64 };

DType default_dtype();
void set_default_dtype(DType dtype);

/// RAII override of the default dtype for the current scope.
class PrecisionScope {
 public:
  explicit PrecisionScope(DType dtype);
  ~PrecisionScope();
  PrecisionScope(const PrecisionScope&) = delete;
  PrecisionScope& operator=(const PrecisionScope&) = delete;

 private:
  DType previous_;
};

/// NaN/Inf guards on op outputs. Defaults to on in builds without NDEBUG.
bool debug_checks_enabled();
void set_debug_checks(bool enabled);

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for model or run configurations that cannot be built.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Invoke `fn(T{})` with T = float or double according to `dtype`.
template <class F>
decltype(auto) visit_dtype(DType dtype, F&& fn) {
  if (dtype == DType::f32) return fn(float{});
  return fn(double{});
}

/// Flat real storage in either precision.
class Buffer {
 public:
  Buffer() = default;
  Buffer(DType dtype, std::size_t size);

  DType dtype() const { return std::holds_alternative<std::vector<float>>(values_) ? DType::f32 : DType::f64; }
  std::size_t size() const;

  template <class T>
  std::vector<T>& as() {
    return std::get<std::vector<T>>(values_);
  }
  template <class T>
  const std::vector<T>& as() const {
    return std::get<std::vector<T>>(values_);
  }

 private:
  std::variant<std::vector<float>, std::vector<double>> values_;
};

class Tape;
struct TensorImpl;

/// Position of a tensor's producing node on a tape.
struct NodeHandle {
  const Tape* tape = nullptr;
  std::size_t index = 0;
};

/// Rank 1-4 row-major dense array with optional gradient.
///
/// Copies are shallow: two Tensor handles may refer to the same storage,
/// which is how parameter registries and modules share weights.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape, DType dtype = default_dtype());
  static Tensor full(const Shape& shape, double value, DType dtype = default_dtype());
  static Tensor from_values(const Shape& shape, std::span<const double> values, DType dtype = default_dtype());
  static Tensor from_values(const Shape& shape, std::initializer_list<double> values, DType dtype = default_dtype());
  static Tensor from_floats(const Shape& shape, std::span<const float> values, DType dtype = default_dtype());
  static Tensor from_buffer(const Shape& shape, Buffer buffer);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const;
  std::size_t numel() const;
  DType dtype() const;

  template <class T>
  const T* data() const {
    return buffer().as<T>().data();
  }
  template <class T>
  T* mutable_data() {
    return mutable_buffer().as<T>().data();
  }
  const Buffer& buffer() const;
  Buffer& mutable_buffer();

  /// Flat element access as double regardless of storage precision.
  double item(std::size_t flat_index = 0) const;
  double at(std::initializer_list<std::size_t> index) const;
  void set_item(std::size_t flat_index, double value);
  std::vector<double> to_vector() const;
  std::vector<float> to_floats() const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  /// True when gradients propagate through this tensor: a requires_grad leaf
  /// or the output of a recorded op.
  bool needs_grad() const;
  const std::optional<NodeHandle>& tape_id() const;

  bool has_grad() const;
  /// Gradient as a detached tensor; zeros when none was accumulated yet.
  Tensor grad() const;
  void zero_grad();
  void accumulate_grad(const Tensor& g);
  /// Elementwise `this += other` on the stored data (same shape and dtype).
  void add_in_place(const Tensor& other);

  /// Deep copy without gradient or tape linkage.
  Tensor detach() const;
  Tensor to(DType dtype) const;

  /// Identity of the underlying storage.
  const void* id() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  friend class Tape;
  std::shared_ptr<TensorImpl> impl_;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;
  bool has_grad = false;
  bool requires_grad = false;
  std::optional<NodeHandle> tape_id;
};

/// Backward rule: maps the output gradient to one gradient per recorded
/// input (undefined entries are skipped).
using BackwardFn = std::function<std::vector<Tensor>(const Tensor& grad_output)>;

/// Define-by-run record of differentiable ops.
///
/// Ops executed while a tape is active (see TapeScope) and touching at least
/// one tensor that needs gradients append a node. Nodes are appended in
/// execution order, so the list is topologically sorted. A tape belongs to a
/// single thread; independent samples may use independent tapes concurrently
/// and merge leaf gradients afterwards with accumulate_into_leaves().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Append a node producing `output` from `inputs`.
  void record(Tensor& output, std::vector<Tensor> inputs, BackwardFn backward);

  /// Backpropagate from a scalar root and add leaf gradients into the leaves.
  void backward(const Tensor& root, double seed = 1.0);

  /// Backpropagate but keep leaf gradients on the tape.
  void backward_local(const Tensor& root, double seed = 1.0);
  /// Add tape-held leaf gradients into the leaves, in first-seen order, and clear them.
  void accumulate_into_leaves();

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    std::vector<Tensor> inputs;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::pair<Tensor, Tensor>> leaf_grads_;
};

/// Tape receiving recorded ops on this thread, or nullptr.
Tape* active_tape();

class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

/// Suspend recording for the current scope.
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

/// Record `output` on the active tape when any input needs gradients.
/// Returns `output` (now linked to the tape) for chaining. This is the
/// extension point for custom differentiable ops.
Tensor record_op(Tensor output, std::vector<Tensor> inputs, BackwardFn backward);

/// Throw NonFiniteError when debug checks are on and `t` holds NaN/Inf.
void check_finite(const Tensor& t, const char* op);

}  // namespace scopeformer::core
