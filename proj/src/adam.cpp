#include "nxm/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace nxm {

Adam::Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
  if (!(config_.learning_rate > 0.0)) throw std::invalid_argument("Adam learning rate must be > 0");
  if (!(config_.beta1 >= 0.0 && config_.beta1 < 1.0) || !(config_.beta2 >= 0.0 && config_.beta2 < 1.0))
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_.emplace_back(params[i].shape(), 0.0);
    v_.emplace_back(params[i].shape(), 0.0);
  }
}

void Adam::step(ParameterSet& params, const Gradients& grads) {
  if (grads.size() != params.size() || params.size() != m_.size())
    throw ShapeError("Adam: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    require_same_shape(params[i], grads[i], "Adam " + params.name(i));
    grads[i].require_finite("gradient of " + params.name(i));
  }

  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correction1 = 1.0 - std::pow(config_.beta1, t);
  const double correction2 = 1.0 - std::pow(config_.beta2, t);
  const double b1 = config_.beta1, b2 = config_.beta2;

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      m[j] = b1 * m[j] + (1.0 - b1) * g[j];
      v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      const double m_hat = m[j] / correction1;
      const double v_hat = v[j] / correction2;
      p[j] -= config_.learning_rate * m_hat / (std::sqrt(v_hat) + config_.epsilon);
    }
  }
}

void Adam::set_learning_rate(double lr) {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("learning rate must be positive and finite");
  config_.learning_rate = lr;
}

void Adam::reset() {
  for (auto& t : m_) t.fill(0.0);
  for (auto& t : v_) t.fill(0.0);
  steps_ = 0;
}

}  // namespace nxm
