#pragma once

#include <cstdint>
#include <random>

#include "nxm/model.hpp"
#include "nxm/tasks.hpp"
#include "nxm/tensor.hpp"

namespace testing {

inline nxm::Tensor random_tensor(nxm::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  nxm::Tensor t(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& v : t.values()) v = normal(rng);
  return t;
}

inline bool bitwise_equal(const nxm::Tensor& a, const nxm::Tensor& b) { return a == b; }

/// Small transformer whose block weights all have 16 input features.
inline nxm::ModelConfig tiny_transformer() {
  nxm::ModelConfig c;
  c.blocks = 1;
  c.hidden = 16;
  c.heads = 2;
  c.ffn_multiplier = 2;
  c.seq_len = 3;
  c.input_dim = 4;
  c.output_dim = 2;
  return c;
}

inline nxm::TaskSpec tiny_task(std::size_t train = 256, std::size_t val = 64) {
  nxm::TaskSpec t;
  t.train_samples = train;
  t.val_samples = val;
  return t;
}

}  // namespace testing
