#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "nxm/model.hpp"
#include "nxm/sparsity.hpp"
#include "nxm/tasks.hpp"

namespace nxm {

/// Settings of the dense pretraining that produces the starting checkpoint
/// when a run is not given one.
struct PretrainConfig {
  std::size_t epochs = 10;
  double learning_rate = 3e-3;
  std::size_t batch_size = 32;
  std::size_t train_samples = 20000;
  std::uint64_t seed = 7;

  bool operator==(const PretrainConfig&) const = default;
};

struct RunConfig {
  /// admm-nxm | asp | admm-unstructured | dense
  std::string method = "admm-nxm";
  /// Task preset the defaults were taken from.
  std::string preset = "reference";
  SparsityPattern pattern{4, 2};
  /// Penalty coefficient; ADMM methods only.
  std::optional<double> rho;
  /// Fraction of zeros for admm-unstructured.
  std::optional<double> sparsity;
  double learning_rate = 1e-2;
  /// constant | linear
  std::string lr_schedule = "linear";
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::size_t steps_per_iteration = 80;
  std::size_t min_iterations = 10;
  bool prune_eval_each_epoch = true;
  bool reset_adam_each_iteration = false;
  /// project | adopt-z
  std::string finalize = "project";
  std::uint64_t seed = 0;
  std::size_t log_interval = 10;
  TaskSpec task;
  ModelConfig model;
  std::map<std::string, bool> layer_overrides;
  /// Pretrained checkpoint; empty means pretrain in-process with `pretrain`.
  std::string checkpoint;
  PretrainConfig pretrain;
  std::string output_dir = "runs/run";

  bool operator==(const RunConfig&) const = default;
};

bool is_admm_method(const std::string& method);

/// Defaults for a task preset and method: smaller tasks get a larger learning
/// rate and penalty.
RunConfig preset_config(const std::string& preset, const std::string& method);

nlohmann::json to_json(const RunConfig& config);

/// Builds a config from a JSON document whose keys mirror RunConfig's field
/// names (nested objects for pattern, task, model, pretrain). "method" and
/// "preset" select the defaults; every other key overrides them. Unknown
/// keys and inconsistent combinations throw std::invalid_argument.
RunConfig config_from_json(const nlohmann::json& doc);

/// Applies "key=value" assignments to a JSON document. Dotted keys address
/// nested objects; values are parsed as JSON when possible, else taken as
/// strings.
void apply_overrides(nlohmann::json& doc, const std::vector<std::string>& assignments);

/// Throws std::invalid_argument describing the first inconsistency.
void validate(const RunConfig& config);

struct RunSummary {
  std::string status = "ok";  // ok | diverged
  std::string error;
  std::string method;
  std::uint64_t seed = 0;
  std::size_t iterations = 0;
  std::size_t steps = 0;
  std::size_t epochs = 0;
  double initial_val_loss = 0.0;
  /// Best epoch-end validation loss (hard-pruned copy for ADMM).
  double best_val_loss = 0.0;
  /// Validation loss of the finished model (after finalization).
  double final_val_loss = 0.0;
  std::optional<double> final_residual;
  std::optional<double> mean_similarity;
  std::optional<double> mean_similarity_after_first;
  std::optional<bool> decay_monotone;
  bool compliant = false;
  std::size_t compressed_bytes = 0;
};

nlohmann::json to_json(const RunSummary& summary);

/// Produces the pretrained checkpoint for a config (dense training on the
/// broad pretraining distribution of the same task family).
ParameterSet pretrain_checkpoint(const RunConfig& config);

/// Runs one experiment and writes into config.output_dir:
///   config.json, metrics.csv, summary.json, final.nxmw,
///   residuals.csv and presence.csv (ADMM methods),
///   compressed/<layer>.nxmc (when every constrained layer is NxM compliant).
/// A diverging run still writes its partial metrics and a summary with
/// status "diverged", then rethrows the DivergenceError.
RunSummary run_experiment(const RunConfig& config);

/// Same, with the pretrained parameters supplied by the caller.
RunSummary run_experiment(const RunConfig& config, const ParameterSet& pretrained);

struct SweepCell {
  std::string name;
  nlohmann::json assignment;  // grid key -> value
  RunSummary summary;
};

/// Runs every cell of the Cartesian product of `grid` (dotted key -> list of
/// values) on top of `base`, each in its own directory under `output_dir`.
/// A failing cell is recorded and the remaining cells still run. Writes
/// summary.csv sorted by final validation loss, failed cells last.
std::vector<SweepCell> sweep(const nlohmann::json& base, const nlohmann::json& grid,
                             const std::filesystem::path& output_dir);

}  // namespace nxm
