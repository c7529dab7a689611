#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "nxm/adam.hpp"
#include "nxm/metrics.hpp"
#include "nxm/model.hpp"
#include "nxm/tasks.hpp"

namespace nxm {

enum class LrSchedule { Constant, Linear };

std::string to_string(LrSchedule schedule);
LrSchedule parse_lr_schedule(const std::string& text);

struct TrainOptions {
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  /// Seeds the per-epoch batch order.
  std::uint64_t seed = 0;
  /// A step row is logged every `log_interval` steps (0 disables step rows).
  std::size_t log_interval = 10;
  std::string method = "dense";
  /// Linear decays the optimizer's initial learning rate toward 0 over the
  /// planned number of steps.
  LrSchedule lr_schedule = LrSchedule::Constant;
};

/// MSE for regression batches, cross-entropy for classification batches.
Var task_loss(Graph& graph, const Model& model, const Batch& batch);

/// Mean task loss over the whole dataset using the given parameters.
double evaluate_loss(const Model& model, const ParameterSet& params, const Dataset& data);
/// Fraction of correctly classified samples (classification datasets only).
double evaluate_accuracy(const Model& model, const ParameterSet& params, const Dataset& data);

/// Permutation of [0, n) for the given epoch; a pure function of its inputs.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch);
std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size);

/// A non-finite loss or gradient stopped training. Carries the rows logged
/// up to that point.
class DivergenceError : public NumericError {
 public:
  DivergenceError(const std::string& what, MetricLog partial)
      : NumericError(what), partial_(std::move(partial)) {}
  const MetricLog& partial_log() const { return partial_; }

 private:
  MetricLog partial_;
};

struct TrainResult {
  MetricLog log;
  std::size_t steps = 0;
  std::size_t epochs = 0;
  /// Validation loss before the first step, on the evaluated parameters.
  double initial_val_loss = 0.0;
  /// Best / last epoch-end validation loss.
  double best_val_loss = 0.0;
  double final_val_loss = 0.0;
};

/// Customization points of the shared fine-tuning loop.
struct LoopHooks {
  /// Records the objective for one batch; sets `task` to the plain task loss
  /// value. Defaults to the task loss alone.
  std::function<Var(Graph&, const Batch&, double& task)> objective;
  /// Runs between backward and the optimizer update.
  std::function<void(Gradients&)> before_update;
  /// Runs after the optimizer update; may fill iteration fields of the row
  /// and returns true if the step produced a loggable event.
  std::function<bool(std::size_t step, MetricRow& row)> after_update;
  /// Parameters used for validation (e.g. a hard-pruned copy). Defaults to the
  /// live parameters.
  std::function<ParameterSet(const ParameterSet&)> eval_params;
};

TrainResult run_training_loop(Model& model, const TaskData& data, Adam& adam, const TrainOptions& options,
                              LoopHooks hooks);

/// Plain Adam fine-tuning of every parameter on the task loss.
TrainResult run_dense_finetune(Model& model, const TaskData& data, Adam& adam, const TrainOptions& options);

struct PretrainResult {
  Model model;
  TrainResult training;
};

/// Trains a freshly initialized dense model; the result is the checkpoint
/// fine-tuning starts from.
PretrainResult pretrain_dense(const TaskData& data, const ModelConfig& config, std::size_t epochs,
                              std::uint64_t seed, const AdamConfig& adam, std::size_t batch_size = 32);

}  // namespace nxm
