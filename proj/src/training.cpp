#include "nxm/training.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

namespace nxm {

Var task_loss(Graph& graph, const Model& model, const Batch& batch) {
  Var prediction = model.forward(graph, batch.inputs);
  if (batch.labels.empty()) return mse_loss(prediction, batch.targets);
  return cross_entropy(prediction, batch.labels);
}

namespace {
constexpr std::size_t kEvalChunk = 500;
}

double evaluate_loss(const Model& model, const ParameterSet& params, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("cannot evaluate on an empty dataset");
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(data.size(), begin + kEvalChunk);
    Graph g(params);
    total += task_loss(g, model, data.slice(begin, end)).value().item() * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(data.size());
}

double evaluate_accuracy(const Model& model, const ParameterSet& params, const Dataset& data) {
  if (data.kind() != TaskKind::ClusterClassification) throw std::invalid_argument("accuracy needs a classification dataset");
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(data.size(), begin + kEvalChunk);
    const Batch batch = data.slice(begin, end);
    const Tensor logits = model.predict(params, batch.inputs);
    const std::size_t classes = logits.cols();
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto row = logits.data().subspan(b * classes, classes);
      const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      correct += best == batch.labels[b];
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

std::string to_string(LrSchedule schedule) { return schedule == LrSchedule::Linear ? "linear" : "constant"; }

LrSchedule parse_lr_schedule(const std::string& text) {
  if (text == "constant") return LrSchedule::Constant;
  if (text == "linear") return LrSchedule::Linear;
  throw std::invalid_argument("unknown learning-rate schedule: " + text);
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  // Fisher-Yates with an explicit draw so the order does not depend on the
  // standard library's shuffle implementation.
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order[i - 1], order[j]);
  }
  return order;
}

std::size_t steps_per_epoch(std::size_t samples, std::size_t batch_size) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
  if (samples < batch_size) throw std::invalid_argument("training set smaller than one batch");
  return samples / batch_size;
}

TrainResult run_training_loop(Model& model, const TaskData& data, Adam& adam, const TrainOptions& options,
                              LoopHooks hooks) {
  if (options.epochs == 0) throw std::invalid_argument("epochs must be positive");
  const std::size_t per_epoch = steps_per_epoch(data.train.size(), options.batch_size);
  const std::size_t planned = per_epoch * options.epochs;
  const double base_lr = adam.config().learning_rate;
  auto evaluate = [&] {
    if (hooks.eval_params) return evaluate_loss(model, hooks.eval_params(model.params()), data.validation);
    return evaluate_loss(model, model.params(), data.validation);
  };

  TrainResult result;
  MetricLog& log = result.log;
  try {
    result.initial_val_loss = evaluate();
    MetricRow first;
    first.method = options.method;
    first.seed = options.seed;
    first.val_loss_pruned = result.initial_val_loss;
    if (hooks.objective) first.k = 0;
    log.append(first);

    result.best_val_loss = std::numeric_limits<double>::infinity();
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
      const auto order = epoch_order(data.train.size(), options.seed, epoch);
      for (std::size_t s = 0; s < per_epoch; ++s) {
        const Batch batch = data.train.gather(
            std::span<const std::size_t>(order).subspan(s * options.batch_size, options.batch_size));
        Graph graph(model.params());
        double task = 0.0;
        Var objective;
        if (hooks.objective) {
          objective = hooks.objective(graph, batch, task);
        } else {
          objective = task_loss(graph, model, batch);
          task = objective.value().item();
        }
        graph.backward(objective);
        Gradients grads = graph.take_gradients();
        if (hooks.before_update) hooks.before_update(grads);
        if (options.lr_schedule == LrSchedule::Linear)
          adam.set_learning_rate(base_lr * static_cast<double>(planned - step) / static_cast<double>(planned));
        adam.step(model.params(), grads);
        ++step;

        MetricRow row;
        row.step = step;
        row.epoch = epoch + 1;
        row.method = options.method;
        row.seed = options.seed;
        row.train_loss = task;
        if (hooks.objective) row.aug_loss = objective.value().item();
        bool event = options.log_interval != 0 && step % options.log_interval == 0;
        if (hooks.after_update && hooks.after_update(step, row)) event = true;
        if (s + 1 == per_epoch) {
          const double val = evaluate();
          row.val_loss_pruned = val;
          result.final_val_loss = val;
          result.best_val_loss = std::min(result.best_val_loss, val);
          event = true;
        }
        if (event) log.append(std::move(row));
      }
      result.epochs = epoch + 1;
    }
    result.steps = step;
    if (options.lr_schedule == LrSchedule::Linear) adam.set_learning_rate(base_lr);
  } catch (const DivergenceError&) {
    throw;
  } catch (const NumericError& e) {
    throw DivergenceError(std::string("training diverged: ") + e.what(), log);
  }
  return result;
}

TrainResult run_dense_finetune(Model& model, const TaskData& data, Adam& adam, const TrainOptions& options) {
  return run_training_loop(model, data, adam, options, {});
}

PretrainResult pretrain_dense(const TaskData& data, const ModelConfig& config, std::size_t epochs,
                              std::uint64_t seed, const AdamConfig& adam_config, std::size_t batch_size) {
  Model model(config, seed);
  Adam adam(model.params(), adam_config);
  TrainOptions options;
  options.batch_size = batch_size;
  options.epochs = epochs;
  options.seed = seed;
  options.log_interval = 100;
  options.method = "pretrain";
  TrainResult training = run_dense_finetune(model, data, adam, options);
  return {std::move(model), std::move(training)};
}

}  // namespace nxm
