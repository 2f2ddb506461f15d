#include "scopeformer/core/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace scopeformer::core {

double grad_check(const ScalarFunction& fn, std::vector<Tensor> inputs, double eps) {
  for (const Tensor& in : inputs) {
    if (in.dtype() != DType::f64) throw std::invalid_argument("grad_check requires f64 inputs");
    if (in.tape_id()) throw std::invalid_argument("grad_check inputs must be leaves");
  }
  std::vector<bool> previous_flags;
  for (Tensor& in : inputs) {
    previous_flags.push_back(in.requires_grad());
    in.zero_grad();
    in.set_requires_grad(true);
  }

  std::vector<Tensor> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = fn(inputs);
    if (out.numel() != 1) throw DimensionError("grad_check: function must be scalar-valued");
    if (out.dtype() != DType::f64) throw std::invalid_argument("grad_check: function must evaluate in f64");
    tape.backward(out);
  }
  for (Tensor& in : inputs) {
    analytic.push_back(in.grad());
    in.zero_grad();
  }

  auto evaluate = [&]() {
    NoGradScope ng;
    return fn(inputs).item(0);
  };

  double worst = 0.0;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor& in = inputs[t];
    double* values = in.mutable_data<double>();
    const double* ad = analytic[t].data<double>();
    for (std::size_t i = 0; i < in.numel(); ++i) {
      const double original = values[i];
      values[i] = original + eps;
      const double up = evaluate();
      values[i] = original - eps;
      const double down = evaluate();
      values[i] = original;
      const double fd = (up - down) / (2.0 * eps);
      worst = std::max(worst, std::abs(ad[i] - fd) / std::max(1.0, std::abs(fd)));
    }
  }

  for (std::size_t t = 0; t < inputs.size(); ++t) inputs[t].set_requires_grad(previous_flags[t]);
  return worst;
}

}  // namespace scopeformer::core
