#include <cmath>
#include <memory>
#include <random>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "nxm/admm.hpp"
#include "nxm/training.hpp"

using namespace nxm;

namespace {

struct Fixture {
  ModelConfig config = testing::tiny_transformer();
  Model model{config, 3};
  LayerPolicy policy = build_policy(model);
  SparsityPattern pattern{4, 2};
};

double penalty_oracle(const AdmmState& s, const ParameterSet& p) {
  double total = 0.0;
  for (const auto& l : s.layers) {
    const Tensor& w = p[l.param_index];
    double ss = 0.0;
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double d = w[i] - l.z[i] + l.u[i];
      ss += d * d;
    }
    total += s.rho / 2.0 * ss;
  }
  return total;
}

}  // namespace

TEST_CASE("ADMM initialization") {
  Fixture f;
  const AdmmState s = init_admm(f.model, f.policy, f.pattern, 0.5);
  CHECK(s.k == 0);
  CHECK(s.rho == 0.5);
  REQUIRE(s.layers.size() == f.policy.constrained().size());
  for (const auto& l : s.layers) {
    const Tensor& w = f.model.params()[l.param_index];
    CHECK(l.name == f.model.params().name(l.param_index));
    CHECK(l.z == project_nxm(w, f.pattern));
    CHECK(l.u == Tensor(w.shape(), 0.0));
    CHECK(l.mask == extract_mask(w, f.pattern));
  }
  CHECK_NOTHROW(init_admm(f.model, f.policy, f.pattern, 0.0));
  CHECK_THROWS_AS(init_admm(f.model, f.policy, f.pattern, -1e-3), std::invalid_argument);
  CHECK_THROWS_AS(init_admm(f.model, f.policy, f.pattern, NAN), std::invalid_argument);
  CHECK_THROWS_AS(init_admm(f.model, f.policy, f.pattern, INFINITY), std::invalid_argument);
  CHECK_THROWS_AS(init_admm(f.model, f.policy, SparsityPattern(3, 1), 1.0), ShapeError);
}

TEST_CASE("penalty value and gradient") {
  Fixture f;
  AdmmState s = init_admm(f.model, f.policy, f.pattern, 0.7);
  std::mt19937_64 rng(9);
  for (auto& l : s.layers) l.u = testing::random_tensor(l.u.shape(), rng, 0.1);

  Graph g(f.model.params());
  const Var pen = admm_penalty(g, s);
  CHECK(pen.value().item() == doctest::Approx(penalty_oracle(s, f.model.params())).epsilon(1e-12));
  g.backward(pen);
  const Gradients& grads = g.gradients();
  std::vector<bool> constrained(f.model.params().size(), false);
  for (const auto& l : s.layers) {
    constrained[l.param_index] = true;
    const Tensor& w = f.model.params()[l.param_index];
    for (std::size_t i = 0; i < w.numel(); ++i)
      CHECK(grads[l.param_index][i] == doctest::Approx(0.7 * (w[i] - l.z[i] + l.u[i])).epsilon(1e-12));
  }
  for (std::size_t i = 0; i < grads.size(); ++i)
    if (!constrained[i]) CHECK(grads[i] == Tensor(f.model.params()[i].shape(), 0.0));

  // Hand example: one 1x4 layer.
  ParameterSet p;
  p.add("w", Tensor::from({1, 4}, {1, 2, 3, 4}));
  AdmmState hand;
  hand.rho = 2.0;
  hand.layers.push_back({"w", 0, Tensor::from({1, 4}, {0, 0, 3, 4}), Tensor::from({1, 4}, {1, 0, 0, -1}), {}});
  Graph hg(p);
  // (1-0+1)^2 + 2^2 + 0 + (-1)^2 = 9, times rho/2 = 9
  CHECK(admm_penalty(hg, hand).value().item() == 9.0);
}

TEST_CASE("sparsity and dual steps follow their recurrences") {
  Fixture f;
  AdmmState s = init_admm(f.model, f.policy, f.pattern, 0.1);
  CHECK_THROWS_AS(sparsity_step(s, f.model.params()), std::logic_error);
  CHECK_THROWS_AS(dual_step(s, f.model.params()), std::logic_error);

  std::mt19937_64 rng(4);
  std::vector<Tensor> u_oracle;
  for (const auto& l : s.layers) u_oracle.emplace_back(l.u.shape(), 0.0);
  for (int it = 1; it <= 5; ++it) {
    for (const auto& l : s.layers) {
      Tensor& w = f.model.params()[l.param_index];
      for (auto& v : w.values()) v += 0.05 * std::normal_distribution<double>()(rng);
    }
    s.note_training_step();
    std::vector<Tensor> expected_z;
    for (std::size_t li = 0; li < s.layers.size(); ++li) {
      const Tensor& w = f.model.params()[s.layers[li].param_index];
      Tensor wu(w.shape());
      for (std::size_t i = 0; i < w.numel(); ++i) wu[i] = w[i] + u_oracle[li][i];
      expected_z.push_back(project_nxm(wu, f.pattern));
    }
    const auto masks = sparsity_step(s, f.model.params());
    CHECK_THROWS_AS(sparsity_step(s, f.model.params()), std::logic_error);
    dual_step(s, f.model.params());
    CHECK(s.k == static_cast<std::size_t>(it));
    for (std::size_t li = 0; li < s.layers.size(); ++li) {
      const auto& l = s.layers[li];
      const Tensor& w = f.model.params()[l.param_index];
      CHECK(l.z == expected_z[li]);
      CHECK(check_compliance(l.z, f.pattern));
      CHECK(masks[li] == l.mask);
      for (std::size_t i = 0; i < w.numel(); ++i) u_oracle[li][i] += w[i] - expected_z[li][i];
      CHECK(l.u == u_oracle[li]);
    }
    const ResidualRecord r = residuals(s, f.model.params());
    double agg = 0.0, max_rel = 0.0;
    for (const auto& l : s.layers) {
      const double d = distance(f.model.params()[l.param_index], l.z);
      agg += d * d;
      max_rel = std::max(max_rel, d / frobenius_norm(f.model.params()[l.param_index]));
    }
    CHECK(r.aggregate == doctest::Approx(std::sqrt(agg)).epsilon(1e-12));
    CHECK(r.max_relative == doctest::Approx(max_rel).epsilon(1e-12));
  }
}

TEST_CASE("hard pruning and finalization") {
  Fixture f;
  AdmmState s = init_admm(f.model, f.policy, f.pattern, 0.1);
  std::mt19937_64 rng(8);
  for (const auto& l : s.layers)
    f.model.params()[l.param_index] = testing::random_tensor(l.z.shape(), rng);
  const ParameterSet before = f.model.params();
  const ParameterSet pruned = hard_prune(before, s);
  for (std::size_t i = 0; i < before.size(); ++i) {
    if (f.policy.is_constrained(before.name(i)))
      CHECK(pruned[i] == project_nxm(before[i], f.pattern));
    else
      CHECK(pruned[i] == before[i]);
  }
  finalize(f.model, s, FinalizeMode::ProjectWeights);
  CHECK(f.model.params() == pruned);

  Model adopt(f.config, 3);
  AdmmState s2 = init_admm(adopt, f.policy, f.pattern, 0.1);
  for (auto& l : s2.layers) l.z = project_nxm(testing::random_tensor(l.z.shape(), rng), f.pattern);
  finalize(adopt, s2, FinalizeMode::AdoptZ);
  for (const auto& l : s2.layers) CHECK(adopt.params()[l.param_index] == l.z);
}

TEST_CASE("rho = 0 reproduces plain fine-tuning") {
  const ModelConfig config = testing::tiny_transformer();
  const TaskData data = generate_task(testing::tiny_task(160, 32), config);
  TrainOptions opts;
  opts.batch_size = 16;
  opts.epochs = 5;
  opts.seed = 2;

  Model dense(config, 1);
  Adam adam_d(dense.params(), AdamConfig{3e-3});
  run_dense_finetune(dense, data, adam_d, opts);

  Model admm(config, 1);
  AdmmState s = init_admm(admm, build_policy(admm), SparsityPattern(4, 2), 0.0);
  Adam adam_a(admm.params(), AdamConfig{3e-3});
  AdmmSchedule sched;
  sched.steps_per_iteration = 10;
  sched.total_epochs = 5;
  sched.min_iterations = 1;
  const AdmmRun run = run_admm_finetune(admm, s, sched, data, adam_a, opts);
  CHECK(run.training.steps == 50);
  CHECK(s.k == 5);
  CHECK(admm.params() == dense.params());
}

TEST_CASE("iteration schedule") {
  AdmmSchedule s;
  s.steps_per_iteration = 80;
  s.total_epochs = 10;
  s.min_iterations = 10;
  CHECK(planned_admm_epochs(s, 625) == 10);
  CHECK(planned_admm_epochs(s, 79) == 11);
  CHECK(planned_admm_epochs(s, 80) == 10);
  s.total_epochs = 1;
  CHECK(planned_admm_epochs(s, 40) == 20);
}

TEST_CASE("a large penalty drives the residual down") {
  const ModelConfig config = testing::tiny_transformer();
  const TaskData data = generate_task(testing::tiny_task(256, 32), config);
  TrainOptions opts;
  opts.batch_size = 16;
  opts.seed = 1;
  opts.lr_schedule = LrSchedule::Linear;

  auto final_residual = [&](double rho) {
    Model m(config, 1);
    AdmmState s = init_admm(m, build_policy(m), SparsityPattern(4, 2), rho);
    Adam adam(m.params(), AdamConfig{1e-2});
    AdmmSchedule sched;
    sched.steps_per_iteration = 16;
    sched.total_epochs = 30;
    sched.min_iterations = 1;
    const AdmmRun run = run_admm_finetune(m, s, sched, data, adam, opts);
    REQUIRE(run.residual_history.size() == 30);
    CHECK(run.mask_history.size() == 31);
    CHECK(run.similarity_history.size() == 30);
    return run.residual_history.back().max_relative;
  };
  const double weak = final_residual(1e-3);
  const double strong = final_residual(10.0);
  CHECK(strong < 0.05);
  CHECK(strong < weak);
}
