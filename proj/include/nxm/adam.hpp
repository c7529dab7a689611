#pragma once

#include <cstdint>
#include <vector>

#include "nxm/autodiff.hpp"

namespace nxm {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Moments are kept per parameter in ParameterSet
/// order.
class Adam {
 public:
  Adam(const ParameterSet& params, AdamConfig config);

  /// Applies one update in place. Throws NumericError on a non-finite
  /// gradient (parameters are left untouched in that case).
  void step(ParameterSet& params, const Gradients& grads);

  /// Zeroes both moments and the step count.
  void reset();

  /// Changes the step size used by subsequent updates. Must be positive.
  void set_learning_rate(double lr);

  std::uint64_t step_count() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t steps_ = 0;
};

}  // namespace nxm
