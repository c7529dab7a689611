#pragma once

// Tape-based reverse-mode differentiation over dense fp64 tensors.
//
// A Graph is built by running the forward computation: every op appends a node
// holding its output and a closure that scatters the output gradient into its
// inputs. backward() walks the tape in exact reverse order of construction and
// accumulates into one gradient tensor per bound parameter.

#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "nxm/tensor.hpp"

namespace nxm {

/// Ordered collection of named parameter tensors.
class ParameterSet {
 public:
  std::size_t add(std::string name, Tensor value);

  std::size_t size() const { return tensors_.size(); }
  bool contains(const std::string& name) const { return lookup_.count(name) != 0; }
  /// Throws std::out_of_range for an unknown name.
  std::size_t index(const std::string& name) const;

  const std::string& name(std::size_t i) const { return names_.at(i); }
  const std::vector<std::string>& names() const { return names_; }

  Tensor& operator[](std::size_t i) { return tensors_.at(i); }
  const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }
  Tensor& get(const std::string& name) { return tensors_[index(name)]; }
  const Tensor& get(const std::string& name) const { return tensors_[index(name)]; }

  std::size_t element_count() const;
  bool operator==(const ParameterSet& other) const {
    return names_ == other.names_ && tensors_ == other.tensors_;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> lookup_;
};

/// One gradient tensor per parameter, in ParameterSet order.
using Gradients = std::vector<Tensor>;

class Graph;

/// Handle to a node of a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  /// Binds the parameter set by reference; it must outlive the graph and stay
  /// unmodified until backward() has run.
  explicit Graph(const ParameterSet& params);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf reading a bound parameter. Repeated calls return the same node.
  Var param(std::size_t index);
  Var param(const std::string& name);
  /// Constant leaf; receives no gradient.
  Var constant(Tensor value);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  std::size_t node_count() const { return nodes_.size(); }

  /// Seeds d(loss)/d(loss) = 1 and runs the tape backwards.
  void backward(Var loss);
  /// Uses the most recently recorded node as the loss.
  void backward();

  bool has_gradients() const { return backward_done_; }
  /// Throws std::logic_error before backward().
  const Gradients& gradients() const;
  Gradients take_gradients();

  // --- op-author interface ---
  Var record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  /// Output gradient of a node; zeros if nothing flowed into it.
  Tensor& grad(std::size_t id);
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    std::optional<std::size_t> param_index;
    bool requires_grad = false;
  };

  const ParameterSet* params_;
  std::vector<Node> nodes_;
  std::vector<std::optional<std::size_t>> param_nodes_;
  Gradients gradients_;
  bool backward_done_ = false;
};

// --- primitives -----------------------------------------------------------

/// a[m,k] * b[k,n]
Var matmul(Var a, Var b);
/// a[m,k] * b[n,k]^T; a linear layer with weight stored [out, in].
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// x[r,c] + bias[c] broadcast over rows.
Var add_bias(Var x, Var bias);
Var scale(Var x, double factor);
Var relu(Var x);
/// Exact (erf) GELU.
Var gelu(Var x);
/// Row-wise softmax over the last dimension.
Var softmax(Var x);
/// Row-wise normalization over the last dimension with learned gain and bias.
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
/// Multi-head scaled dot-product self attention. q, k, v are
/// [batch * seq, width]; width must be divisible by heads.
Var attention(Var q, Var k, Var v, std::size_t seq, std::size_t heads);
/// [batch * seq, d] -> [batch, d], mean over each run of `seq` rows.
Var sequence_mean(Var x, std::size_t seq);
Var sum(Var x);
Var sum_squares(Var x);
/// Mean squared error against a constant target, averaged over all elements.
Var mse_loss(Var prediction, const Tensor& target);
/// Mean softmax cross-entropy of logits [batch, classes] against labels.
Var cross_entropy(Var logits, const std::vector<int>& labels);

/// x * W^T + b
inline Var linear(Var x, Var weight, Var bias) { return add_bias(matmul_nt(x, weight), bias); }

}  // namespace nxm
