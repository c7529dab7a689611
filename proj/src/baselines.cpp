#include "nxm/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nxm {

namespace {
void require_fraction(double sparsity) {
  if (!(sparsity > 0.0 && sparsity < 1.0)) throw std::invalid_argument("sparsity must lie strictly between 0 and 1");
}
}  // namespace

Mask unstructured_mask(const Tensor& w, double sparsity) {
  require_fraction(sparsity);
  w.require_finite("tensor passed to unstructured selection");
  const std::size_t keep =
      static_cast<std::size_t>(std::ceil((1.0 - sparsity) * static_cast<double>(w.numel())));
  std::vector<std::size_t> order(w.numel());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep) - 1, order.end(),
                   [&](std::size_t a, std::size_t b) {
                     const double ma = std::fabs(w[a]), mb = std::fabs(w[b]);
                     return ma > mb || (ma == mb && a < b);
                   });
  Mask mask{w.shape(), std::vector<std::uint8_t>(w.numel(), 0), std::nullopt};
  for (std::size_t i = 0; i < keep; ++i) mask.bits[order[i]] = 1;
  return mask;
}

Tensor project_unstructured(const Tensor& w, double sparsity) { return apply_mask(w, unstructured_mask(w, sparsity)); }

UnstructuredConstraint::UnstructuredConstraint(double sparsity) : sparsity_(sparsity) { require_fraction(sparsity); }

std::string UnstructuredConstraint::name() const { return "unstructured-" + format_double(sparsity_); }

std::size_t UnstructuredConstraint::keep_count(std::size_t numel) const {
  return static_cast<std::size_t>(std::ceil((1.0 - sparsity_) * static_cast<double>(numel)));
}

bool UnstructuredConstraint::satisfied(const Tensor& w) const {
  std::size_t nonzero = 0;
  for (double v : w.data()) nonzero += v != 0.0;
  return nonzero <= keep_count(w.numel());
}

// --- ASP ------------------------------------------------------------------

FrozenMask::FrozenMask(std::vector<std::string> layers, std::vector<std::size_t> indices, std::vector<Mask> masks)
    : layers_(std::move(layers)), indices_(std::move(indices)), masks_(std::move(masks)) {
  if (layers_.size() != indices_.size() || layers_.size() != masks_.size())
    throw std::invalid_argument("frozen mask: inconsistent layer lists");
}

void FrozenMask::apply(std::vector<Tensor>& values) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Tensor& t = values.at(indices_[l]);
    if (t.shape() != masks_[l].shape) throw ShapeError("frozen mask shape mismatch for " + layers_[l]);
    for (std::size_t i = 0; i < t.numel(); ++i)
      if (!masks_[l].bits[i]) t[i] = 0.0;
  }
}

void FrozenMask::apply(ParameterSet& params) const {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Tensor& t = params[indices_[l]];
    if (t.shape() != masks_[l].shape) throw ShapeError("frozen mask shape mismatch for " + layers_[l]);
    for (std::size_t i = 0; i < t.numel(); ++i)
      if (!masks_[l].bits[i]) t[i] = 0.0;
  }
}

FrozenMask asp_prune(Model& model, const LayerPolicy& policy, const SparsityPattern& pattern) {
  policy.validate(model.params(), pattern);
  std::vector<std::string> layers;
  std::vector<std::size_t> indices;
  std::vector<Mask> masks;
  for (const auto& name : policy.constrained()) {
    const std::size_t index = model.params().index(name);
    layers.push_back(name);
    indices.push_back(index);
    masks.push_back(extract_mask(model.params()[index], pattern));
  }
  FrozenMask frozen(std::move(layers), std::move(indices), std::move(masks));
  frozen.apply(model.params());
  return frozen;
}

double masked_finetune_step(Model& model, const FrozenMask& mask, Adam& adam, const Batch& batch) {
  Graph graph(model.params());
  Var loss = task_loss(graph, model, batch);
  graph.backward(loss);
  Gradients grads = graph.take_gradients();
  mask.apply(grads);
  adam.step(model.params(), grads);
  mask.apply(model.params());
  return loss.value().item();
}

TrainResult run_masked_finetune(Model& model, const FrozenMask& mask, const TaskData& data, Adam& adam,
                                const TrainOptions& options) {
  LoopHooks hooks;
  hooks.before_update = [&](Gradients& grads) { mask.apply(grads); };
  hooks.after_update = [&](std::size_t, MetricRow&) {
    mask.apply(model.params());
    return false;
  };
  return run_training_loop(model, data, adam, options, std::move(hooks));
}

AdmmState unstructured_admm_prune(const Model& model, const LayerPolicy& policy, double sparsity, double rho) {
  return init_admm(model, policy, std::make_shared<UnstructuredConstraint>(sparsity), rho);
}

}  // namespace nxm
