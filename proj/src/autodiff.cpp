#include "nxm/autodiff.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "nxm/kernels.hpp"

namespace nxm {

// --- ParameterSet ---------------------------------------------------------

std::size_t ParameterSet::add(std::string name, Tensor value) {
  if (contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  lookup_.emplace(name, tensors_.size());
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.size() - 1;
}

std::size_t ParameterSet::index(const std::string& name) const {
  auto it = lookup_.find(name);
  if (it == lookup_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

// --- Graph ----------------------------------------------------------------

const Tensor& Var::value() const { return graph->value(*this); }

Graph::Graph(const ParameterSet& params)
    : params_(&params), param_nodes_(params.size()) {}

Var Graph::param(std::size_t index) {
  if (index >= params_->size()) throw std::out_of_range("parameter index out of range");
  if (!param_nodes_[index]) {
    Node node;
    node.value = (*params_)[index];
    node.param_index = index;
    node.requires_grad = true;
    nodes_.push_back(std::move(node));
    param_nodes_[index] = nodes_.size() - 1;
  }
  return Var{this, *param_nodes_[index]};
}

Var Graph::param(const std::string& name) { return param(params_->index(name)); }

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  for (auto in : inputs) node.requires_grad = node.requires_grad || nodes_.at(in).requires_grad;
  node.inputs = std::move(inputs);
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.numel() == 0) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Graph::backward() {
  if (nodes_.empty()) throw std::logic_error("backward called before any forward computation");
  backward(Var{this, nodes_.size() - 1});
}

void Graph::backward(Var loss) {
  if (loss.graph != this) throw std::logic_error("loss belongs to a different graph");
  if (nodes_.empty()) throw std::logic_error("backward called before any forward computation");
  if (backward_done_) throw std::logic_error("backward already ran on this graph");
  if (value(loss).numel() != 1) throw ShapeError("backward requires a scalar loss");

  gradients_.clear();
  for (std::size_t i = 0; i < params_->size(); ++i)
    gradients_.emplace_back((*params_)[i].shape(), 0.0);

  grad(loss.id).fill(1.0);
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.requires_grad || node.grad.numel() == 0) continue;
    if (node.param_index) {
      gradients_[*node.param_index] = node.grad;
    } else if (node.backward) {
      node.backward(*this, id);
    }
  }
  backward_done_ = true;
}

const Gradients& Graph::gradients() const {
  if (!backward_done_) throw std::logic_error("gradients requested before backward");
  return gradients_;
}

Gradients Graph::take_gradients() {
  if (!backward_done_) throw std::logic_error("gradients requested before backward");
  return std::move(gradients_);
}

// --- primitives -----------------------------------------------------------

namespace {

namespace kp = kernels::parallel;

Tensor checked(Tensor t, const char* op) {
  t.require_finite(std::string(op) + " output");
  return t;
}

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw ShapeError(std::string(op) + " expects a matrix, got " +
                                      shape_to_string(t.shape()));
}

void accumulate(Tensor& into, const Tensor& delta) {
  for (std::size_t i = 0; i < into.numel(); ++i) into[i] += delta[i];
}

Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr)
    throw std::logic_error("operands belong to different graphs");
  return *a.graph;
}

// Elementwise unary op with derivative evaluated from (input, output).
template <class F, class DF>
Var unary(Var x, const char* op, F f, DF df) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = f(xv[i]);
  return g.record(checked(std::move(out), op), {x.id}, [df](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    const Tensor& xv = g.value(in);
    const Tensor& yv = g.value(self);
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad(in);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  if (bv.dim(0) != k)
    throw ShapeError("matmul: inner dimensions differ " + shape_to_string(av.shape()) + " x " +
                     shape_to_string(bv.shape()));
  Tensor out({m, n});
  kp::matmul_nn(av.data(), bv.data(), out.data(), m, k, n);
  return g.record(checked(std::move(out), "matmul"), {a.id, b.id},
                  [m, k, n](Graph& g, std::size_t self) {
                    const std::size_t ia = g.inputs(self)[0], ib = g.inputs(self)[1];
                    const Tensor& dc = g.grad(self);
                    if (g.requires_grad(ia)) {
                      Tensor da({m, k});
                      kp::matmul_nt(dc.data(), g.value(ib).data(), da.data(), m, n, k);
                      accumulate(g.grad(ia), da);
                    }
                    if (g.requires_grad(ib)) {
                      Tensor db({k, n});
                      kp::matmul_tn(g.value(ia).data(), dc.data(), db.data(), k, m, n);
                      accumulate(g.grad(ib), db);
                    }
                  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(0);
  if (bv.dim(1) != k)
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_to_string(av.shape()) +
                     " x " + shape_to_string(bv.shape()) + "^T");
  Tensor out({m, n});
  kp::matmul_nt(av.data(), bv.data(), out.data(), m, k, n);
  return g.record(checked(std::move(out), "matmul_nt"), {a.id, b.id},
                  [m, k, n](Graph& g, std::size_t self) {
                    const std::size_t ia = g.inputs(self)[0], ib = g.inputs(self)[1];
                    const Tensor& dc = g.grad(self);
                    if (g.requires_grad(ia)) {
                      Tensor da({m, k});
                      kp::matmul_nn(dc.data(), g.value(ib).data(), da.data(), m, n, k);
                      accumulate(g.grad(ia), da);
                    }
                    if (g.requires_grad(ib)) {
                      Tensor db({n, k});
                      kp::matmul_tn(dc.data(), g.value(ia).data(), db.data(), n, m, k);
                      accumulate(g.grad(ib), db);
                    }
                  });
}

namespace {
Var add_or_sub(Var a, Var b, double sign, const char* op) {
  Graph& g = same_graph(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_same_shape(av, bv, op);
  Tensor out(av.shape());
  if (sign > 0)
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] + bv[i];
  else
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = av[i] - bv[i];
  return g.record(checked(std::move(out), op), {a.id, b.id}, [sign](Graph& g, std::size_t self) {
    const std::size_t ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    const Tensor& dy = g.grad(self);
    if (g.requires_grad(ia)) accumulate(g.grad(ia), dy);
    if (g.requires_grad(ib)) {
      Tensor& db = g.grad(ib);
      if (sign > 0)
        for (std::size_t i = 0; i < db.numel(); ++i) db[i] += dy[i];
      else
        for (std::size_t i = 0; i < db.numel(); ++i) db[i] -= dy[i];
    }
  });
}
}  // namespace

Var add(Var a, Var b) { return add_or_sub(a, b, 1.0, "add"); }
Var sub(Var a, Var b) { return add_or_sub(a, b, -1.0, "sub"); }

Var add_bias(Var x, Var bias) {
  Graph& g = same_graph(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  if (bv.rank() != 1 || bv.numel() != xv.cols())
    throw ShapeError("add_bias: bias " + shape_to_string(bv.shape()) + " does not match " +
                     shape_to_string(xv.shape()));
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = xv[r * cols + c] + bv[c];
  return g.record(checked(std::move(out), "add_bias"), {x.id, bias.id},
                  [rows, cols](Graph& g, std::size_t self) {
                    const std::size_t ix = g.inputs(self)[0], ib = g.inputs(self)[1];
                    const Tensor& dy = g.grad(self);
                    if (g.requires_grad(ix)) accumulate(g.grad(ix), dy);
                    if (g.requires_grad(ib)) {
                      Tensor& db = g.grad(ib);
                      for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
                    }
                  });
}

Var scale(Var x, double factor) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  Tensor out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) out[i] = xv[i] * factor;
  return g.record(checked(std::move(out), "scale"), {x.id}, [factor](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    const Tensor& dy = g.grad(self);
    Tensor& dx = g.grad(in);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy[i] * factor;
  });
}

Var relu(Var x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var x) {
  constexpr double inv_sqrt2 = 1.0 / std::numbers::sqrt2;
  constexpr double inv_sqrt_2pi = 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
  return unary(
      x, "gelu", [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [=](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * std::exp(-0.5 * v * v) * inv_sqrt_2pi;
      });
}

Var softmax(Var x) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * cols;
    double* yr = out.data().data() + r * cols;
    double mx = xr[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, xr[c]);
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += (yr[c] = std::exp(xr[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
  return g.record(checked(std::move(out), "softmax"), {x.id},
                  [rows, cols](Graph& g, std::size_t self) {
                    const std::size_t in = g.inputs(self)[0];
                    if (!g.requires_grad(in)) return;
                    const Tensor& y = g.value(self);
                    const Tensor& dy = g.grad(self);
                    Tensor& dx = g.grad(in);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double dot = 0.0;
                      for (std::size_t c = 0; c < cols; ++c)
                        dot += dy[r * cols + c] * y[r * cols + c];
                      for (std::size_t c = 0; c < cols; ++c)
                        dx[r * cols + c] += y[r * cols + c] * (dy[r * cols + c] - dot);
                    }
                  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  Graph& g = same_graph(x, gain);
  same_graph(x, bias);
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), cols = xv.cols();
  if (gain.value().shape() != Shape{cols} || bias.value().shape() != Shape{cols})
    throw ShapeError("layer_norm: gain/bias must have shape [" + std::to_string(cols) + "]");
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();

  Tensor normalized(xv.shape());
  std::vector<double> inv_std(rows);
  Tensor out(xv.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = xv.data().data() + r * cols;
    double mean = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mean += xr[c];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (xr[c] - mean) * (xr[c] - mean);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (xr[c] - mean) * inv_std[r];
      normalized[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return g.record(
      checked(std::move(out), "layer_norm"), {x.id, gain.id, bias.id},
      [rows, cols, normalized = std::move(normalized), inv_std = std::move(inv_std)](
          Graph& g, std::size_t self) {
        const auto& in = g.inputs(self);
        const Tensor& dy = g.grad(self);
        const Tensor& gv = g.value(in[1]);
        if (g.requires_grad(in[1])) {
          Tensor& dg = g.grad(in[1]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c)
              dg[c] += dy[r * cols + c] * normalized[r * cols + c];
        }
        if (g.requires_grad(in[2])) {
          Tensor& db = g.grad(in[2]);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) db[c] += dy[r * cols + c];
        }
        if (g.requires_grad(in[0])) {
          Tensor& dx = g.grad(in[0]);
          const double n = static_cast<double>(cols);
          std::vector<double> dh(cols);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t c = 0; c < cols; ++c) {
              dh[c] = dy[r * cols + c] * gv[c];
              sum_dh += dh[c];
              sum_dh_h += dh[c] * normalized[r * cols + c];
            }
            for (std::size_t c = 0; c < cols; ++c)
              dx[r * cols + c] +=
                  inv_std[r] / n * (n * dh[c] - sum_dh - normalized[r * cols + c] * sum_dh_h);
          }
        }
      });
}

Var attention(Var q, Var k, Var v, std::size_t seq, std::size_t heads) {
  Graph& g = same_graph(q, k);
  same_graph(q, v);
  const Tensor& qv = q.value();
  require_matrix(qv, "attention");
  require_same_shape(qv, k.value(), "attention q/k");
  require_same_shape(qv, v.value(), "attention q/v");
  if (seq == 0 || qv.dim(0) % seq != 0)
    throw ShapeError("attention: row count not divisible by sequence length");
  if (heads == 0 || qv.dim(1) % heads != 0)
    throw ShapeError("attention: width not divisible by head count");
  const kernels::AttentionDims dims{qv.dim(0) / seq, seq, heads, qv.dim(1) / heads};

  Tensor out(qv.shape());
  std::vector<double> probs(dims.prob_count());
  kp::attention_forward(qv.data(), k.value().data(), v.value().data(), out.data(), probs, dims);
  return g.record(checked(std::move(out), "attention"), {q.id, k.id, v.id},
                  [dims, probs = std::move(probs)](Graph& g, std::size_t self) {
                    const auto& in = g.inputs(self);
                    const Tensor& qv = g.value(in[0]);
                    Tensor dq(qv.shape()), dk(qv.shape()), dv(qv.shape());
                    kp::attention_backward(qv.data(), g.value(in[1]).data(),
                                           g.value(in[2]).data(), probs, g.grad(self).data(),
                                           dq.data(), dk.data(), dv.data(), dims);
                    if (g.requires_grad(in[0])) accumulate(g.grad(in[0]), dq);
                    if (g.requires_grad(in[1])) accumulate(g.grad(in[1]), dk);
                    if (g.requires_grad(in[2])) accumulate(g.grad(in[2]), dv);
                  });
}

Var sequence_mean(Var x, std::size_t seq) {
  Graph& g = *x.graph;
  const Tensor& xv = x.value();
  require_matrix(xv, "sequence_mean");
  if (seq == 0 || xv.dim(0) % seq != 0)
    throw ShapeError("sequence_mean: row count not divisible by sequence length");
  const std::size_t batch = xv.dim(0) / seq, cols = xv.dim(1);
  const double inv = 1.0 / static_cast<double>(seq);
  Tensor out({batch, cols});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t t = 0; t < seq; ++t)
      for (std::size_t c = 0; c < cols; ++c) out[b * cols + c] += xv[(b * seq + t) * cols + c];
  for (auto& val : out.values()) val *= inv;
  return g.record(checked(std::move(out), "sequence_mean"), {x.id},
                  [batch, seq, cols, inv](Graph& g, std::size_t self) {
                    const std::size_t in = g.inputs(self)[0];
                    if (!g.requires_grad(in)) return;
                    const Tensor& dy = g.grad(self);
                    Tensor& dx = g.grad(in);
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t t = 0; t < seq; ++t)
                        for (std::size_t c = 0; c < cols; ++c)
                          dx[(b * seq + t) * cols + c] += dy[b * cols + c] * inv;
                  });
}

Var sum(Var x) {
  Graph& g = *x.graph;
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return g.record(checked(Tensor::scalar(s), "sum"), {x.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    if (!g.requires_grad(in)) return;
    const double dy = g.grad(self)[0];
    for (auto& d : g.grad(in).values()) d += dy;
  });
}

Var sum_squares(Var x) {
  Graph& g = *x.graph;
  const double s = squared_norm(x.value());
  return g.record(checked(Tensor::scalar(s), "sum_squares"), {x.id},
                  [](Graph& g, std::size_t self) {
                    const std::size_t in = g.inputs(self)[0];
                    if (!g.requires_grad(in)) return;
                    const double coeff = g.grad(self)[0] * 2.0;
                    const Tensor& xv = g.value(in);
                    Tensor& dx = g.grad(in);
                    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += coeff * xv[i];
                  });
}

Var mse_loss(Var prediction, const Tensor& target) {
  Graph& g = *prediction.graph;
  const Tensor& p = prediction.value();
  require_same_shape(p, target, "mse_loss");
  const double inv_n = 1.0 / static_cast<double>(p.numel());
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) {
    const double d = p[i] - target[i];
    s += d * d;
  }
  return g.record(checked(Tensor::scalar(s * inv_n), "mse_loss"), {prediction.id},
                  [target, inv_n](Graph& g, std::size_t self) {
                    const std::size_t in = g.inputs(self)[0];
                    if (!g.requires_grad(in)) return;
                    const double coeff = g.grad(self)[0] * 2.0 * inv_n;
                    const Tensor& p = g.value(in);
                    Tensor& dp = g.grad(in);
                    for (std::size_t i = 0; i < dp.numel(); ++i) dp[i] += coeff * (p[i] - target[i]);
                  });
}

Var cross_entropy(Var logits, const std::vector<int>& labels) {
  Graph& g = *logits.graph;
  const Tensor& z = logits.value();
  require_matrix(z, "cross_entropy");
  const std::size_t batch = z.dim(0), classes = z.dim(1);
  if (labels.size() != batch) throw ShapeError("cross_entropy: label count does not match batch");
  Tensor probs(z.shape());
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    const int label = labels[b];
    if (label < 0 || static_cast<std::size_t>(label) >= classes)
      throw std::out_of_range("cross_entropy: label out of range");
    const double* zr = z.data().data() + b * classes;
    double mx = zr[0];
    for (std::size_t c = 1; c < classes; ++c) mx = std::max(mx, zr[c]);
    double norm = 0.0;
    for (std::size_t c = 0; c < classes; ++c) norm += (probs[b * classes + c] = std::exp(zr[c] - mx));
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= norm;
    total += std::log(norm) + mx - zr[label];
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  return g.record(checked(Tensor::scalar(total * inv_b), "cross_entropy"), {logits.id},
                  [labels, probs = std::move(probs), batch, classes, inv_b](Graph& g,
                                                                            std::size_t self) {
                    const std::size_t in = g.inputs(self)[0];
                    if (!g.requires_grad(in)) return;
                    const double coeff = g.grad(self)[0] * inv_b;
                    Tensor& dz = g.grad(in);
                    for (std::size_t b = 0; b < batch; ++b)
                      for (std::size_t c = 0; c < classes; ++c) {
                        const double onehot = static_cast<int>(c) == labels[b] ? 1.0 : 0.0;
                        dz[b * classes + c] += coeff * (probs[b * classes + c] - onehot);
                      }
                  });
}

}  // namespace nxm
