#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "nxm/autodiff.hpp"
#include "nxm/model.hpp"
#include "nxm/sparsity.hpp"

namespace nxm {

/// |prev ∩ next| / |prev|: the fraction of retained positions that stay
/// retained. Throws ShapeError on a shape or pattern mismatch and
/// std::invalid_argument when prev retains nothing.
double mask_similarity(const Mask& prev, const Mask& next);

/// Unweighted mean of per-layer similarities.
double mean_layer_similarity(const std::vector<Mask>& prev, const std::vector<Mask>& next);

/// Number of masks in `history` that retain each position, per layer.
/// history[j][layer]; every entry must share the layer shapes of history[0].
std::vector<std::vector<std::size_t>> presence_counts(const std::vector<std::vector<Mask>>& history);

struct PresenceBucket {
  std::size_t presence = 0;
  std::size_t population = 0;
  double mean_ratio = 0.0;
};

/// Magnitude change of constrained parameters grouped by how many ADMM
/// iterations they spent inside the mask.
struct PresenceHistogram {
  std::size_t iterations = 0;
  double magnitude_floor = 1e-8;
  /// One entry per presence count 0..iterations; empty buckets have
  /// population 0 and mean_ratio 0.
  std::vector<PresenceBucket> buckets;
  /// Per parameter above the floor, in layer/position order.
  std::vector<std::size_t> presence;
  std::vector<double> ratio;

  std::size_t population() const;
};

/// |w_final| / |w_initial| bucketed by presence count, over constrained
/// parameters with |w_initial| >= floor. `counts` holds presence counts per
/// layer of `layers`, each in [0, iterations].
PresenceHistogram decay_report(const ParameterSet& initial, const ParameterSet& final_params,
                               const std::vector<std::string>& layers,
                               const std::vector<std::vector<std::size_t>>& counts, std::size_t iterations,
                               double floor = 1e-8);

/// Convenience overload counting presence over `history` (one mask set per
/// ADMM iteration). Throws std::invalid_argument if the history length does
/// not equal `iterations` or its layer count differs from `layers`.
PresenceHistogram decay_report(const ParameterSet& initial, const ParameterSet& final_params,
                               const std::vector<std::string>& layers,
                               const std::vector<std::vector<Mask>>& history, std::size_t iterations,
                               double floor = 1e-8);

/// True if bucket means never increase as presence decreases (ignoring empty
/// buckets) and the always-present bucket has the highest mean.
bool decay_is_monotone(const PresenceHistogram& histogram);

}  // namespace nxm
