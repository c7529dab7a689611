#include "nxm/analytics.hpp"

#include <cmath>
#include <stdexcept>

namespace nxm {

double mask_similarity(const Mask& prev, const Mask& next) {
  if (prev.shape != next.shape || prev.bits.size() != next.bits.size())
    throw ShapeError("mask similarity: shape mismatch " + shape_to_string(prev.shape) + " vs " +
                     shape_to_string(next.shape));
  if (prev.pattern && next.pattern && *prev.pattern != *next.pattern)
    throw ShapeError("mask similarity: pattern mismatch");
  std::size_t kept = 0, shared = 0;
  for (std::size_t i = 0; i < prev.bits.size(); ++i) {
    if (!prev.bits[i]) continue;
    ++kept;
    shared += next.bits[i] ? 1 : 0;
  }
  if (kept == 0) throw std::invalid_argument("mask similarity: previous mask retains nothing");
  return static_cast<double>(shared) / static_cast<double>(kept);
}

double mean_layer_similarity(const std::vector<Mask>& prev, const std::vector<Mask>& next) {
  if (prev.size() != next.size() || prev.empty()) throw std::invalid_argument("mask sets differ in layer count");
  double total = 0.0;
  for (std::size_t i = 0; i < prev.size(); ++i) total += mask_similarity(prev[i], next[i]);
  return total / static_cast<double>(prev.size());
}

std::vector<std::vector<std::size_t>> presence_counts(const std::vector<std::vector<Mask>>& history) {
  std::vector<std::vector<std::size_t>> counts;
  if (history.empty()) return counts;
  for (const auto& m : history.front()) counts.emplace_back(m.size(), 0);
  for (const auto& masks : history) {
    if (masks.size() != counts.size()) throw std::invalid_argument("mask history layer count changes");
    for (std::size_t l = 0; l < masks.size(); ++l) {
      if (masks[l].size() != counts[l].size()) throw ShapeError("mask history shape changes");
      for (std::size_t i = 0; i < masks[l].size(); ++i) counts[l][i] += masks[l].bits[i] ? 1 : 0;
    }
  }
  return counts;
}

std::size_t PresenceHistogram::population() const {
  std::size_t n = 0;
  for (const auto& b : buckets) n += b.population;
  return n;
}

PresenceHistogram decay_report(const ParameterSet& initial, const ParameterSet& final_params,
                               const std::vector<std::string>& layers,
                               const std::vector<std::vector<std::size_t>>& counts, std::size_t iterations,
                               double floor) {
  if (counts.size() != layers.size()) throw std::invalid_argument("presence counts do not match layer list");
  PresenceHistogram h;
  h.iterations = iterations;
  h.magnitude_floor = floor;
  h.buckets.resize(iterations + 1);
  for (std::size_t p = 0; p <= iterations; ++p) h.buckets[p].presence = p;
  std::vector<double> sums(iterations + 1, 0.0);

  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Tensor& w0 = initial.get(layers[l]);
    const Tensor& w1 = final_params.get(layers[l]);
    require_same_shape(w0, w1, "decay report " + layers[l]);
    if (counts[l].size() != w0.numel()) throw ShapeError("presence counts do not match " + layers[l]);
    for (std::size_t i = 0; i < w0.numel(); ++i) {
      const double before = std::fabs(w0[i]);
      if (before < floor) continue;
      const std::size_t p = counts[l][i];
      if (p > iterations) throw std::invalid_argument("presence count exceeds iteration count");
      const double ratio = std::fabs(w1[i]) / before;
      h.presence.push_back(p);
      h.ratio.push_back(ratio);
      h.buckets[p].population += 1;
      sums[p] += ratio;
    }
  }
  for (std::size_t p = 0; p <= iterations; ++p)
    if (h.buckets[p].population) h.buckets[p].mean_ratio = sums[p] / static_cast<double>(h.buckets[p].population);
  return h;
}

PresenceHistogram decay_report(const ParameterSet& initial, const ParameterSet& final_params,
                               const std::vector<std::string>& layers,
                               const std::vector<std::vector<Mask>>& history, std::size_t iterations, double floor) {
  if (history.size() != iterations)
    throw std::invalid_argument("mask history has " + std::to_string(history.size()) + " entries, expected " +
                                std::to_string(iterations));
  if (!history.empty() && history.front().size() != layers.size())
    throw std::invalid_argument("mask history layer count does not match layer list");
  auto counts = presence_counts(history);
  if (history.empty())
    for (const auto& name : layers) counts.emplace_back(initial.get(name).numel(), 0);
  return decay_report(initial, final_params, layers, counts, iterations, floor);
}

bool decay_is_monotone(const PresenceHistogram& h) {
  const PresenceBucket* higher = nullptr;
  double top = -1.0;
  for (std::size_t p = h.buckets.size(); p-- > 0;) {
    const auto& b = h.buckets[p];
    if (b.population == 0) continue;
    if (higher == nullptr) {
      if (p != h.iterations) return false;  // no always-present parameters
      top = b.mean_ratio;
    } else if (b.mean_ratio > higher->mean_ratio || b.mean_ratio > top) {
      return false;
    }
    higher = &b;
  }
  return higher != nullptr;
}

}  // namespace nxm
