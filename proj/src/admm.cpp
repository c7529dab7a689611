#include "nxm/admm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nxm/analytics.hpp"

namespace nxm {

AdmmState init_admm(const Model& model, const LayerPolicy& policy, std::shared_ptr<const Constraint> constraint,
                    double rho) {
  if (!constraint) throw std::invalid_argument("ADMM needs a constraint");
  if (!std::isfinite(rho) || rho < 0.0) throw std::invalid_argument("rho must be finite and non-negative");
  AdmmState state;
  state.rho = rho;
  state.constraint = std::move(constraint);
  const auto& params = model.params();
  for (const auto& name : policy.constrained()) {
    const std::size_t index = params.index(name);
    const Tensor& w = params[index];
    state.constraint->validate(w);
    AdmmLayer layer{name, index, Tensor(w.shape(), 0.0), Tensor(w.shape(), 0.0), state.constraint->mask(w)};
    layer.z = state.constraint->project(w);
    state.layers.push_back(std::move(layer));
  }
  return state;
}

AdmmState init_admm(const Model& model, const LayerPolicy& policy, const SparsityPattern& pattern, double rho) {
  return init_admm(model, policy, std::make_shared<NxMConstraint>(pattern), rho);
}

Var admm_penalty(Graph& graph, const AdmmState& state) {
  if (state.layers.empty()) return graph.constant(Tensor::scalar(0.0));
  Var total;
  for (std::size_t i = 0; i < state.layers.size(); ++i) {
    const auto& layer = state.layers[i];
    Var gap = add(sub(graph.param(layer.param_index), graph.constant(layer.z)), graph.constant(layer.u));
    Var term = sum_squares(gap);
    total = i == 0 ? term : add(total, term);
  }
  return scale(total, state.rho / 2.0);
}

Var augmented_loss(Graph& graph, const Model& model, const AdmmState& state, const Batch& batch, double& task) {
  Var f = task_loss(graph, model, batch);
  task = f.value().item();
  return add(f, admm_penalty(graph, state));
}

Var augmented_loss(Graph& graph, const Model& model, const AdmmState& state, const Batch& batch) {
  double task = 0.0;
  return augmented_loss(graph, model, state, batch, task);
}

std::vector<Mask> sparsity_step(AdmmState& state, const ParameterSet& params) {
  if (state.steps_since_projection == 0)
    throw std::logic_error("sparsity_step needs at least one training step since the previous projection");
  std::vector<Mask> masks;
  for (auto& layer : state.layers) {
    const Tensor& w = params[layer.param_index];
    Tensor shifted(w.shape());
    for (std::size_t i = 0; i < w.numel(); ++i) shifted[i] = w[i] + layer.u[i];
    layer.mask = state.constraint->mask(shifted);
    layer.z = state.constraint->project(shifted);
    masks.push_back(layer.mask);
  }
  state.steps_since_projection = 0;
  state.projected = true;
  return masks;
}

void dual_step(AdmmState& state, const ParameterSet& params) {
  if (!state.projected) throw std::logic_error("dual_step must follow a sparsity_step");
  for (auto& layer : state.layers) {
    const Tensor& w = params[layer.param_index];
    for (std::size_t i = 0; i < w.numel(); ++i) layer.u[i] = layer.u[i] + (w[i] - layer.z[i]);
  }
  state.projected = false;
  ++state.k;
}

ResidualRecord residuals(const AdmmState& state, const ParameterSet& params) {
  ResidualRecord record;
  record.k = state.k;
  double squared = 0.0;
  for (const auto& layer : state.layers) {
    const Tensor& w = params[layer.param_index];
    LayerResidual r{layer.name, distance(w, layer.z), 0.0};
    const double norm = frobenius_norm(w);
    r.relative = norm > 0.0 ? r.absolute / norm : (r.absolute > 0.0 ? INFINITY : 0.0);
    record.max_relative = std::max(record.max_relative, r.relative);
    squared += r.absolute * r.absolute;
    record.layers.push_back(std::move(r));
  }
  record.aggregate = std::sqrt(squared);
  return record;
}

std::vector<Mask> current_masks(const AdmmState& state) {
  std::vector<Mask> masks;
  for (const auto& layer : state.layers) masks.push_back(layer.mask);
  return masks;
}

ParameterSet hard_prune(const ParameterSet& params, const AdmmState& state) {
  ParameterSet pruned = params;
  for (const auto& layer : state.layers) pruned[layer.param_index] = state.constraint->project(params[layer.param_index]);
  return pruned;
}

void finalize(Model& model, const AdmmState& state, FinalizeMode mode) {
  auto& params = model.params();
  for (const auto& layer : state.layers) {
    Tensor& w = params[layer.param_index];
    w = mode == FinalizeMode::AdoptZ ? layer.z : state.constraint->project(w);
  }
}

std::size_t planned_admm_epochs(const AdmmSchedule& schedule, std::size_t steps_per_epoch) {
  const std::size_t needed = schedule.min_iterations * schedule.steps_per_iteration;
  return std::max(schedule.total_epochs, (needed + steps_per_epoch - 1) / steps_per_epoch);
}

AdmmRun run_admm_finetune(Model& model, AdmmState& state, const AdmmSchedule& schedule, const TaskData& data,
                          Adam& adam, const TrainOptions& options) {
  if (schedule.steps_per_iteration == 0) throw std::invalid_argument("steps_per_iteration must be >= 1");
  if (schedule.min_iterations == 0) throw std::invalid_argument("min_iterations must be >= 1");

  AdmmRun run;
  run.mask_history.push_back(current_masks(state));

  LoopHooks hooks;
  hooks.objective = [&](Graph& g, const Batch& batch, double& task) {
    return augmented_loss(g, model, state, batch, task);
  };
  hooks.after_update = [&](std::size_t, MetricRow& row) {
    state.note_training_step();
    if (state.steps_since_projection < schedule.steps_per_iteration) return false;
    auto masks = sparsity_step(state, model.params());
    dual_step(state, model.params());
    const ResidualRecord record = residuals(state, model.params());
    const double similarity = mean_layer_similarity(run.mask_history.back(), masks);
    run.mask_history.push_back(std::move(masks));
    run.similarity_history.push_back(similarity);
    run.residual_history.push_back(record);
    row.k = state.k;
    row.residual = record.max_relative;
    row.similarity = similarity;
    if (schedule.reset_adam_each_iteration) adam.reset();
    return true;
  };
  if (schedule.prune_eval_each_epoch)
    hooks.eval_params = [&](const ParameterSet& params) { return hard_prune(params, state); };

  TrainOptions opts = options;
  opts.epochs = planned_admm_epochs(schedule, steps_per_epoch(data.train.size(), options.batch_size));
  run.training = run_training_loop(model, data, adam, opts, std::move(hooks));
  return run;
}

}  // namespace nxm
