#include "scopeformer/runner/adam.hpp"

#include <cmath>

namespace scopeformer::runner {

Adam::Adam(core::ParameterRegistry& params, AdamSettings settings) : params_(params), settings_(settings) {
  m_.resize(params_.size());
  v_.resize(params_.size());
}

void Adam::step() {
  ++t_;
  const double b1 = settings_.beta1, b2 = settings_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  auto& all = params_.all();
  for (std::size_t i = 0; i < all.size(); ++i) {
    core::Parameter& p = all[i];
    if (!p.trainable() || !p.value.has_grad()) continue;
    const core::Tensor g = p.value.grad();
    const std::size_t n = p.value.numel();
    if (m_[i].empty()) {
      m_[i].assign(n, 0.0);
      v_[i].assign(n, 0.0);
    }
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    core::visit_dtype(p.value.dtype(), [&](auto tag) {
      using T = decltype(tag);
      T* w = p.value.template mutable_data<T>();
      const T* gd = g.template data<T>();
      for (std::size_t k = 0; k < n; ++k) {
        const double gk = gd[k];
        m[k] = b1 * m[k] + (1.0 - b1) * gk;
        v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
        const double update = settings_.learning_rate * (m[k] / c1) / (std::sqrt(v[k] / c2) + settings_.eps);
        w[k] = static_cast<T>(w[k] - update);
      }
    });
  }
}

}  // namespace scopeformer::runner
