#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nxm/model.hpp"
#include "nxm/tensor.hpp"

namespace nxm {

enum class TaskKind { TeacherRegression, ClusterClassification };
/// Pretrain draws from the broad distribution; Finetune from the shifted,
/// narrower subtask with its own output head.
enum class TaskPhase { Pretrain, Finetune };

std::string to_string(TaskKind kind);
TaskKind parse_task_kind(const std::string& text);
std::string to_string(TaskPhase phase);
TaskPhase parse_task_phase(const std::string& text);

struct TaskSpec {
  TaskKind kind = TaskKind::TeacherRegression;
  TaskPhase phase = TaskPhase::Finetune;
  std::size_t train_samples = 20000;
  std::size_t val_samples = 1000;
  /// Seeds the sample draws and label noise.
  std::uint64_t seed = 0;
  /// Seeds the teacher network / cluster centres. Shared between the
  /// pretrain and finetune phases of one task family.
  std::uint64_t teacher_seed = 1234;
  /// Std of the Gaussian label noise (regression); the Bayes floor of the
  /// validation MSE is noise_std^2.
  double noise_std = 0.1;
  /// Finetune inputs are shift + input_scale * N(0, 1) with a fixed per-feature
  /// shift drawn from N(0, input_shift^2).
  double input_shift = 0.5;
  double input_scale = 0.75;
  /// Finetune teacher blocks are perturbed by body_shift * N(0, 1/fan_in) per
  /// weight, so the subtask needs a partly different body.
  double body_shift = 0.0;
  /// Cluster centre spread relative to the unit within-cluster noise.
  double separation = 3.0;

  bool operator==(const TaskSpec&) const = default;
};

/// Named presets: "pretrain" (20k broad), "reference" (20k), "low-resource"
/// (2.5k), "high-resource" (50k).
TaskSpec task_preset(const std::string& name);

struct Batch {
  Tensor inputs;  // [batch * seq_len, input_dim]
  Tensor targets;  // regression: [batch, output_dim]
  std::vector<int> labels;  // classification
  std::size_t count = 0;
  std::size_t size() const { return count; }
};

class Dataset {
 public:
  Dataset(TaskKind kind, std::size_t seq_len, std::size_t input_dim, std::size_t output_dim);

  TaskKind kind() const { return kind_; }
  std::size_t size() const { return count_; }
  std::size_t seq_len() const { return seq_len_; }
  std::size_t input_dim() const { return input_dim_; }
  std::size_t output_dim() const { return output_dim_; }

  void append(std::span<const double> input, std::span<const double> target, int label);

  Batch gather(std::span<const std::size_t> indices) const;
  Batch slice(std::size_t begin, std::size_t end) const;

  std::span<const double> input(std::size_t i) const;
  std::span<const double> target(std::size_t i) const;
  int label(std::size_t i) const { return labels_.at(i); }

  bool operator==(const Dataset&) const = default;

 private:
  TaskKind kind_;
  std::size_t seq_len_, input_dim_, output_dim_;
  std::size_t count_ = 0;
  std::vector<double> inputs_;
  std::vector<double> targets_;
  std::vector<int> labels_;
};

struct TaskData {
  Dataset train;
  Dataset validation;
};

/// Deterministic given (spec, model shape). Validation draws come from an
/// independent stream so the two splits never share samples.
TaskData generate_task(const TaskSpec& spec, const ModelConfig& model);

}  // namespace nxm
