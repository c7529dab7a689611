#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nxm/autodiff.hpp"
#include "nxm/sparsity.hpp"

namespace nxm {

enum class ModelKind { Transformer, Mlp };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& text);

/// Architecture of the desk-scale stand-in models.
///
/// Transformer: a token projection (input_dim -> hidden), `blocks` pre-norm
/// encoder blocks (Q/K/V, attention output, FFN1 hidden -> ffn_multiplier *
/// hidden, FFN2 back), mean pooling over the sequence and a dense classifier.
/// Mlp: the flattened sequence goes through an input layer, `blocks` square
/// hidden layers with ReLU, and a classifier.
struct ModelConfig {
  ModelKind kind = ModelKind::Transformer;
  std::size_t blocks = 2;
  std::size_t hidden = 32;
  std::size_t heads = 2;
  std::size_t ffn_multiplier = 4;
  std::size_t seq_len = 4;
  std::size_t input_dim = 8;
  std::size_t output_dim = 4;

  bool operator==(const ModelConfig&) const = default;
};

class Model {
 public:
  /// Random initialization: weights ~ N(0, 1/fan_in), biases 0, norm gains 1.
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }

  /// Records the forward pass for inputs [batch * seq_len, input_dim] and
  /// returns predictions [batch, output_dim]. Parameters are read from the
  /// graph's bound ParameterSet, which must have this model's layout.
  Var forward(Graph& graph, const Tensor& inputs) const;

  /// Forward pass on this model's parameters, or on another parameter set of
  /// the same layout (e.g. a hard-pruned copy).
  Tensor predict(const Tensor& inputs) const { return predict(params_, inputs); }
  Tensor predict(const ParameterSet& params, const Tensor& inputs) const;

  /// The per-block weight matrices (6 per transformer block), in order.
  std::vector<std::string> block_weights() const;
  std::string input_weight() const { return "input.weight"; }
  std::string classifier_weight() const { return "classifier.weight"; }

  /// Fresh classifier head, as done when a pretrained body meets a new task.
  void reinitialize_classifier(std::uint64_t seed);

 private:
  ModelConfig config_;
  ParameterSet params_;
};

/// Which weight tensors carry the NxM constraint.
class LayerPolicy {
 public:
  LayerPolicy() = default;

  bool is_constrained(const std::string& name) const;
  /// Constrained tensor names in parameter order.
  const std::vector<std::string>& constrained() const { return constrained_; }
  const std::map<std::string, bool>& flags() const { return flags_; }

  /// Throws ShapeError if a constrained tensor's input dimension is not a
  /// multiple of pattern.n.
  void validate(const ParameterSet& params, const SparsityPattern& pattern) const;

 private:
  friend LayerPolicy build_policy(const Model&, const std::map<std::string, bool>&);
  std::map<std::string, bool> flags_;
  std::vector<std::string> constrained_;
};

/// Default: every block weight constrained, token projection and classifier
/// dense. Overrides flip individual weight matrices; unknown names and
/// non-matrix parameters are rejected with std::invalid_argument.
LayerPolicy build_policy(const Model& model, const std::map<std::string, bool>& overrides = {});

}  // namespace nxm
