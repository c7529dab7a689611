#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nxm/admm.hpp"
#include "nxm/sparsity.hpp"
#include "nxm/training.hpp"

namespace nxm {

/// Keep the ceil((1 - sparsity) * count) largest magnitudes of the whole
/// tensor, zero the rest. Equal magnitudes resolve to the lower index.
Mask unstructured_mask(const Tensor& w, double sparsity);
Tensor project_unstructured(const Tensor& w, double sparsity);

class UnstructuredConstraint final : public Constraint {
 public:
  /// Throws std::invalid_argument unless 0 < sparsity < 1.
  explicit UnstructuredConstraint(double sparsity);
  std::string name() const override;
  void validate(const Tensor&) const override {}
  Tensor project(const Tensor& w) const override { return project_unstructured(w, sparsity_); }
  Mask mask(const Tensor& w) const override { return unstructured_mask(w, sparsity_); }
  bool satisfied(const Tensor& w) const override;
  double sparsity() const { return sparsity_; }
  std::size_t keep_count(std::size_t numel) const;

 private:
  double sparsity_;
};

/// Per-layer masks fixed at pruning time.
class FrozenMask {
 public:
  FrozenMask(std::vector<std::string> layers, std::vector<std::size_t> indices, std::vector<Mask> masks);

  const std::vector<std::string>& layers() const { return layers_; }
  const std::vector<Mask>& masks() const { return masks_; }
  std::size_t param_index(std::size_t layer) const { return indices_.at(layer); }

  /// Zeroes masked-out entries of every constrained tensor in `values`
  /// (parameters or their gradients, same layout).
  void apply(std::vector<Tensor>& values) const;
  void apply(ParameterSet& params) const;

 private:
  std::vector<std::string> layers_;
  std::vector<std::size_t> indices_;
  std::vector<Mask> masks_;
};

/// One-shot magnitude pruning: masks are the NxM projections of the current
/// weights, which are zeroed outside them.
FrozenMask asp_prune(Model& model, const LayerPolicy& policy, const SparsityPattern& pattern);

/// Adam step on the task loss with gradients outside the mask suppressed;
/// masked-out weights stay exactly 0. Returns the task loss of the batch.
double masked_finetune_step(Model& model, const FrozenMask& mask, Adam& adam, const Batch& batch);

/// Masked fine-tuning over the whole schedule.
TrainResult run_masked_finetune(Model& model, const FrozenMask& mask, const TaskData& data, Adam& adam,
                                const TrainOptions& options);

/// ADMM state whose Z-step keeps the largest (1 - sparsity) fraction of each
/// constrained layer; the engine is otherwise unchanged.
AdmmState unstructured_admm_prune(const Model& model, const LayerPolicy& policy, double sparsity, double rho);

}  // namespace nxm
