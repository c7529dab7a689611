#pragma once

// ADMM fine-tuning toward a constraint set S on the constrained layers:
//
//   W-step  a fixed number of Adam steps on f(W) + sum_i rho/2 ||W_i - Z_i + U_i||_F^2
//   Z-step  Z_i = Proj_S(W_i + U_i)
//   U-step  U_i += W_i - Z_i
//
// One pass through the three steps is one ADMM iteration.

#include <memory>
#include <string>
#include <vector>

#include "nxm/adam.hpp"
#include "nxm/model.hpp"
#include "nxm/sparsity.hpp"
#include "nxm/training.hpp"

namespace nxm {

/// A projection target for the Z-step.
class Constraint {
 public:
  virtual ~Constraint() = default;
  virtual std::string name() const = 0;
  /// Throws if the tensor's shape cannot carry this constraint.
  virtual void validate(const Tensor& w) const = 0;
  virtual Tensor project(const Tensor& w) const = 0;
  /// Positions project() retains.
  virtual Mask mask(const Tensor& w) const = 0;
  virtual bool satisfied(const Tensor& w) const = 0;
};

class NxMConstraint final : public Constraint {
 public:
  explicit NxMConstraint(SparsityPattern pattern) : pattern_(pattern) {}
  std::string name() const override { return "nxm-" + pattern_.to_string(); }
  void validate(const Tensor& w) const override { require_divisible(w.shape(), pattern_); }
  Tensor project(const Tensor& w) const override { return project_nxm(w, pattern_); }
  Mask mask(const Tensor& w) const override { return extract_mask(w, pattern_); }
  bool satisfied(const Tensor& w) const override { return check_compliance(w, pattern_); }
  const SparsityPattern& pattern() const { return pattern_; }

 private:
  SparsityPattern pattern_;
};

struct AdmmLayer {
  std::string name;
  std::size_t param_index = 0;
  Tensor z;  // auxiliary variable, always in S
  Tensor u;  // scaled dual variable
  Mask mask;  // positions the latest projection retained
};

struct AdmmState {
  std::vector<AdmmLayer> layers;
  double rho = 0.0;
  /// Completed ADMM iterations.
  std::size_t k = 0;
  std::shared_ptr<const Constraint> constraint;

  /// Training steps since the last Z-step.
  std::size_t steps_since_projection = 0;
  /// Set by sparsity_step, cleared by dual_step.
  bool projected = false;

  void note_training_step() { ++steps_since_projection; }
};

struct AdmmSchedule {
  std::size_t steps_per_iteration = 80;
  std::size_t total_epochs = 10;
  std::size_t min_iterations = 10;
  bool prune_eval_each_epoch = true;
  /// Restart Adam's moments after every ADMM iteration.
  bool reset_adam_each_iteration = false;
};

struct LayerResidual {
  std::string name;
  double absolute = 0.0;  // ||W - Z||_F
  double relative = 0.0;  // ||W - Z||_F / ||W||_F
};

struct ResidualRecord {
  std::size_t k = 0;
  std::vector<LayerResidual> layers;
  double max_relative = 0.0;
  /// sqrt(sum_i ||W_i - Z_i||_F^2)
  double aggregate = 0.0;
};

/// U = 0, Z = Proj(W) for every constrained layer, k = 0. Throws ShapeError on
/// incompatible dimensions and std::invalid_argument for rho < 0 or a
/// non-finite rho.
AdmmState init_admm(const Model& model, const LayerPolicy& policy, std::shared_ptr<const Constraint> constraint,
                    double rho);
AdmmState init_admm(const Model& model, const LayerPolicy& policy, const SparsityPattern& pattern, double rho);

/// sum_i rho/2 ||W_i - Z_i + U_i||_F^2 recorded on the graph.
Var admm_penalty(Graph& graph, const AdmmState& state);
/// Task loss plus the penalty; `task` receives the plain task loss value.
Var augmented_loss(Graph& graph, const Model& model, const AdmmState& state, const Batch& batch, double& task);
Var augmented_loss(Graph& graph, const Model& model, const AdmmState& state, const Batch& batch);

/// Z_i <- Proj(W_i + U_i). Returns the new masks, one per layer. Requires at
/// least one training step since the previous Z-step.
std::vector<Mask> sparsity_step(AdmmState& state, const ParameterSet& params);
/// U_i <- U_i + W_i - Z_i and k <- k + 1. Requires a preceding sparsity_step.
void dual_step(AdmmState& state, const ParameterSet& params);

ResidualRecord residuals(const AdmmState& state, const ParameterSet& params);

/// Masks of the latest projection, one per layer.
std::vector<Mask> current_masks(const AdmmState& state);

/// Copy of `params` with every constrained layer projected onto S.
ParameterSet hard_prune(const ParameterSet& params, const AdmmState& state);

enum class FinalizeMode { ProjectWeights, AdoptZ };

/// Replaces each constrained W_i by Proj(W_i) (or by Z_i with AdoptZ).
/// Unconstrained tensors are untouched.
void finalize(Model& model, const AdmmState& state, FinalizeMode mode = FinalizeMode::ProjectWeights);

struct AdmmRun {
  TrainResult training;
  std::vector<ResidualRecord> residual_history;
  /// masks[j][layer]: masks after iteration j; masks[0] is the initial Z.
  std::vector<std::vector<Mask>> mask_history;
  /// Per-iteration mean layer similarity to the previous iteration's mask.
  std::vector<double> similarity_history;
};

/// Epochs a run lasts: total_epochs, raised until at least min_iterations
/// iterations fit.
std::size_t planned_admm_epochs(const AdmmSchedule& schedule, std::size_t steps_per_epoch);

/// Alternates Adam steps on the augmented loss with Z- and U-steps every
/// schedule.steps_per_iteration steps. Runs planned_admm_epochs() epochs. Epoch-end validation uses a hard-pruned copy. Throws
/// DivergenceError (with the partial log) on non-finite values.
AdmmRun run_admm_finetune(Model& model, AdmmState& state, const AdmmSchedule& schedule, const TaskData& data,
                          Adam& adam, const TrainOptions& options);

}  // namespace nxm
