#include "nxm/model.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace nxm {

std::string to_string(ModelKind kind) { return kind == ModelKind::Transformer ? "transformer" : "mlp"; }

ModelKind parse_model_kind(const std::string& text) {
  if (text == "transformer") return ModelKind::Transformer;
  if (text == "mlp") return ModelKind::Mlp;
  throw std::invalid_argument("unknown model kind: " + text);
}

namespace {

std::string block_name(std::size_t i, const char* leaf) { return "block" + std::to_string(i) + "." + leaf; }

Tensor normal_matrix(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(in)));
  Tensor t({out, in});
  for (auto& v : t.values()) v = dist(rng);
  return t;
}

void add_linear(ParameterSet& p, const std::string& prefix, std::size_t out, std::size_t in,
                std::mt19937_64& rng) {
  p.add(prefix + ".weight", normal_matrix(out, in, rng));
  p.add(prefix + ".bias", Tensor({out}, 0.0));
}

void add_norm(ParameterSet& p, const std::string& prefix, std::size_t width) {
  p.add(prefix + ".gain", Tensor({width}, 1.0));
  p.add(prefix + ".bias", Tensor({width}, 0.0));
}

Var apply_linear(Graph& g, Var x, const std::string& prefix) {
  return linear(x, g.param(prefix + ".weight"), g.param(prefix + ".bias"));
}

Var apply_norm(Graph& g, Var x, const std::string& prefix) {
  return layer_norm(x, g.param(prefix + ".gain"), g.param(prefix + ".bias"));
}

void validate(const ModelConfig& c) {
  if (c.blocks == 0 || c.hidden == 0 || c.seq_len == 0 || c.input_dim == 0 || c.output_dim == 0)
    throw std::invalid_argument("model dimensions must be positive");
  if (c.kind == ModelKind::Transformer) {
    if (c.heads == 0 || c.hidden % c.heads != 0)
      throw std::invalid_argument("hidden size must be divisible by the head count");
    if (c.ffn_multiplier == 0) throw std::invalid_argument("ffn_multiplier must be positive");
  }
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  validate(config_);
  std::mt19937_64 rng(seed);
  const auto& c = config_;
  if (c.kind == ModelKind::Transformer) {
    add_linear(params_, "input", c.hidden, c.input_dim, rng);
    const std::size_t ffn = c.hidden * c.ffn_multiplier;
    for (std::size_t b = 0; b < c.blocks; ++b) {
      add_norm(params_, block_name(b, "ln1"), c.hidden);
      add_linear(params_, block_name(b, "attn.q"), c.hidden, c.hidden, rng);
      add_linear(params_, block_name(b, "attn.k"), c.hidden, c.hidden, rng);
      add_linear(params_, block_name(b, "attn.v"), c.hidden, c.hidden, rng);
      add_linear(params_, block_name(b, "attn.out"), c.hidden, c.hidden, rng);
      add_norm(params_, block_name(b, "ln2"), c.hidden);
      add_linear(params_, block_name(b, "ffn1"), ffn, c.hidden, rng);
      add_linear(params_, block_name(b, "ffn2"), c.hidden, ffn, rng);
    }
  } else {
    add_linear(params_, "input", c.hidden, c.seq_len * c.input_dim, rng);
    for (std::size_t b = 0; b < c.blocks; ++b) add_linear(params_, block_name(b, "fc"), c.hidden, c.hidden, rng);
  }
  add_linear(params_, "classifier", c.output_dim, c.hidden, rng);
}

Var Model::forward(Graph& g, const Tensor& inputs) const {
  const auto& c = config_;
  if (inputs.rank() != 2 || inputs.dim(1) != c.input_dim || inputs.dim(0) % c.seq_len != 0)
    throw ShapeError("model input must be [batch * " + std::to_string(c.seq_len) + ", " +
                     std::to_string(c.input_dim) + "], got " + shape_to_string(inputs.shape()));
  const std::size_t batch = inputs.dim(0) / c.seq_len;

  if (c.kind == ModelKind::Mlp) {
    Var h = relu(apply_linear(g, g.constant(inputs.reshaped({batch, c.seq_len * c.input_dim})), "input"));
    for (std::size_t b = 0; b < c.blocks; ++b) h = relu(apply_linear(g, h, block_name(b, "fc")));
    return apply_linear(g, h, "classifier");
  }

  Var h = apply_linear(g, g.constant(inputs), "input");
  for (std::size_t b = 0; b < c.blocks; ++b) {
    Var a = apply_norm(g, h, block_name(b, "ln1"));
    Var q = apply_linear(g, a, block_name(b, "attn.q"));
    Var k = apply_linear(g, a, block_name(b, "attn.k"));
    Var v = apply_linear(g, a, block_name(b, "attn.v"));
    Var mixed = attention(q, k, v, c.seq_len, c.heads);
    h = add(h, apply_linear(g, mixed, block_name(b, "attn.out")));
    Var f = apply_norm(g, h, block_name(b, "ln2"));
    f = gelu(apply_linear(g, f, block_name(b, "ffn1")));
    h = add(h, apply_linear(g, f, block_name(b, "ffn2")));
  }
  return apply_linear(g, sequence_mean(h, c.seq_len), "classifier");
}

Tensor Model::predict(const ParameterSet& params, const Tensor& inputs) const {
  Graph g(params);
  return forward(g, inputs).value();
}

std::vector<std::string> Model::block_weights() const {
  std::vector<std::string> names;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    if (config_.kind == ModelKind::Transformer) {
      for (const char* leaf : {"attn.q", "attn.k", "attn.v", "attn.out", "ffn1", "ffn2"})
        names.push_back(block_name(b, leaf) + ".weight");
    } else {
      names.push_back(block_name(b, "fc") + ".weight");
    }
  }
  return names;
}

void Model::reinitialize_classifier(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  params_.get("classifier.weight") = normal_matrix(config_.output_dim, config_.hidden, rng);
  params_.get("classifier.bias").fill(0.0);
}

// --- LayerPolicy ----------------------------------------------------------

bool LayerPolicy::is_constrained(const std::string& name) const {
  auto it = flags_.find(name);
  return it != flags_.end() && it->second;
}

void LayerPolicy::validate(const ParameterSet& params, const SparsityPattern& pattern) const {
  for (const auto& name : constrained_) require_divisible(params.get(name).shape(), pattern);
}

LayerPolicy build_policy(const Model& model, const std::map<std::string, bool>& overrides) {
  LayerPolicy policy;
  const auto& params = model.params();
  for (const auto& name : params.names())
    if (params.get(name).rank() == 2) policy.flags_[name] = false;
  for (const auto& name : model.block_weights()) policy.flags_[name] = true;

  for (const auto& [name, constrained] : overrides) {
    if (!params.contains(name)) throw std::invalid_argument("policy override names unknown tensor: " + name);
    if (params.get(name).rank() != 2)
      throw std::invalid_argument("only weight matrices can be constrained: " + name);
    policy.flags_[name] = constrained;
  }
  for (const auto& name : params.names())
    if (policy.is_constrained(name)) policy.constrained_.push_back(name);
  return policy;
}

}  // namespace nxm
