#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "nxm/adam.hpp"
#include "nxm/autodiff.hpp"
#include "nxm/model.hpp"
#include "../support/gradcheck.hpp"

using namespace nxm;

namespace {

constexpr std::size_t kProbes = 60;
constexpr double kTolerance = 1e-4;

// Wraps a tensor-valued op into a scalar via sum((P + C)^2) with a random
// constant C, so every output entry influences the loss differently.
std::function<Var(Graph&)> squared(std::function<Var(Graph&)> op, const Shape& out_shape, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor c = testing::random_tensor(out_shape, rng, 1.0);
  return [op, c](Graph& g) { return sum_squares(add(op(g), g.constant(c))); };
}

void expect_gradients(ParameterSet& params, const std::function<Var(Graph&)>& loss, std::uint64_t seed,
                      const std::function<bool(std::size_t, std::size_t)>& skip = {}) {
  std::mt19937_64 rng(seed);
  const auto r = testing::check_gradients(params, loss, kProbes, rng, 1e-5, skip);
  CHECK(r.probes == kProbes);
  CHECK(r.max_relative_error < kTolerance);
}

ParameterSet make_params(std::vector<Shape> shapes, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  ParameterSet p;
  for (std::size_t i = 0; i < shapes.size(); ++i)
    p.add("p" + std::to_string(i), testing::random_tensor(shapes[i], rng, scale));
  return p;
}

}  // namespace

TEST_CASE("finite differences: linear algebra primitives") {
  SUBCASE("matmul") {
    auto p = make_params({{5, 7}, {7, 3}}, 1);
    expect_gradients(p, squared([](Graph& g) { return matmul(g.param(0), g.param(1)); }, {5, 3}, 2), 3);
  }
  SUBCASE("matmul_nt") {
    auto p = make_params({{4, 6}, {5, 6}}, 4);
    expect_gradients(p, squared([](Graph& g) { return matmul_nt(g.param(0), g.param(1)); }, {4, 5}, 5), 6);
  }
  SUBCASE("add and sub share an operand") {
    auto p = make_params({{3, 4}, {3, 4}}, 7);
    expect_gradients(p, squared([](Graph& g) { return sub(add(g.param(0), g.param(1)), scale(g.param(0), 0.3)); },
                                {3, 4}, 8),
                     9);
  }
  SUBCASE("add_bias") {
    auto p = make_params({{6, 4}, {4}}, 10);
    expect_gradients(p, squared([](Graph& g) { return add_bias(g.param(0), g.param(1)); }, {6, 4}, 11), 12);
  }
  SUBCASE("linear") {
    auto p = make_params({{5, 8}, {3, 8}, {3}}, 13);
    expect_gradients(p, squared([](Graph& g) { return linear(g.param(0), g.param(1), g.param(2)); }, {5, 3}, 14),
                     15);
  }
}

TEST_CASE("finite differences: pointwise and row-wise primitives") {
  SUBCASE("relu away from the kink") {
    auto p = make_params({{6, 5}}, 20);
    const ParameterSet& view = p;
    expect_gradients(p, squared([](Graph& g) { return relu(g.param(0)); }, {6, 5}, 21), 22,
                     [&](std::size_t t, std::size_t i) { return std::fabs(view[t][i]) < 1e-3; });
  }
  SUBCASE("gelu") {
    auto p = make_params({{6, 5}}, 23, 2.0);
    expect_gradients(p, squared([](Graph& g) { return gelu(g.param(0)); }, {6, 5}, 24), 25);
  }
  SUBCASE("softmax") {
    auto p = make_params({{4, 7}}, 26, 2.0);
    expect_gradients(p, squared([](Graph& g) { return softmax(g.param(0)); }, {4, 7}, 27), 28);
  }
  SUBCASE("layer_norm") {
    auto p = make_params({{5, 6}, {6}, {6}}, 29);
    expect_gradients(p,
                     squared([](Graph& g) { return layer_norm(g.param(0), g.param(1), g.param(2)); }, {5, 6}, 30),
                     31);
  }
  SUBCASE("sequence_mean") {
    auto p = make_params({{6, 4}}, 32);
    expect_gradients(p, squared([](Graph& g) { return sequence_mean(g.param(0), 3); }, {2, 4}, 33), 34);
  }
  SUBCASE("attention") {
    auto p = make_params({{6, 4}, {6, 4}, {6, 4}}, 35);
    expect_gradients(
        p, squared([](Graph& g) { return attention(g.param(0), g.param(1), g.param(2), 3, 2); }, {6, 4}, 36), 37);
  }
}

TEST_CASE("finite differences: reductions and losses") {
  SUBCASE("sum") {
    auto p = make_params({{3, 5}}, 40);
    expect_gradients(p, [](Graph& g) { return sum(scale(g.param(0), 1.7)); }, 41);
  }
  SUBCASE("sum_squares") {
    auto p = make_params({{3, 5}}, 42);
    expect_gradients(p, [](Graph& g) { return sum_squares(g.param(0)); }, 43);
  }
  SUBCASE("mse_loss") {
    auto p = make_params({{4, 3}}, 44);
    std::mt19937_64 rng(45);
    const Tensor target = testing::random_tensor({4, 3}, rng, 1.0);
    expect_gradients(p, [target](Graph& g) { return mse_loss(g.param(0), target); }, 46);
  }
  SUBCASE("cross_entropy") {
    auto p = make_params({{5, 4}}, 47, 2.0);
    const std::vector<int> labels{0, 3, 1, 1, 2};
    expect_gradients(p, [labels](Graph& g) { return cross_entropy(g.param(0), labels); }, 48);
  }
}

TEST_CASE("forward values match hand computations") {
  ParameterSet p;
  p.add("x", Tensor::from({2, 3}, {1.0, 2.0, 3.0, -1.0, 0.0, 1.0}));
  Graph g(p);
  const Tensor s = softmax(g.param(0)).value();
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(s[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-14));
  CHECK(s[5] == doctest::Approx(std::exp(1.0) / (std::exp(-1.0) + 1.0 + std::exp(1.0))).epsilon(1e-14));

  const Tensor ln = layer_norm(g.param(0), g.constant(Tensor({3}, 1.0)), g.constant(Tensor({3}, 0.0)), 0.0).value();
  CHECK(ln[0] == doctest::Approx(-std::sqrt(1.5)).epsilon(1e-12));
  CHECK(ln[1] == doctest::Approx(0.0));

  const Tensor ge = gelu(g.param(0)).value();
  CHECK(ge[0] == doctest::Approx(0.5 * (1.0 + std::erf(1.0 / std::sqrt(2.0)))).epsilon(1e-14));

  const std::vector<int> labels{2, 0};
  const double ce = cross_entropy(g.param(0), labels).value().item();
  const double z2 = std::exp(-1.0) + 1.0 + std::exp(1.0);
  CHECK(ce == doctest::Approx(0.5 * (-std::log(std::exp(3.0) / z) - std::log(std::exp(-1.0) / z2))).epsilon(1e-13));

  CHECK(sum_squares(g.param(0)).value().item() == 16.0);
}

TEST_CASE("graph bookkeeping") {
  ParameterSet p;
  p.add("a", Tensor::from({2}, {1.0, 2.0}));
  p.add("unused", Tensor::from({2}, {5.0, 5.0}));
  Graph g(p);
  CHECK_THROWS_AS(g.gradients(), std::logic_error);
  Var a1 = g.param("a");
  Var a2 = g.param(0);
  CHECK(a1.id == a2.id);
  g.backward(sum(add(a1, a2)));
  const Gradients& grads = g.gradients();
  CHECK(grads[0] == Tensor::from({2}, {2.0, 2.0}));
  CHECK(grads[1] == Tensor::from({2}, {0.0, 0.0}));
  CHECK_THROWS_AS(g.param("missing"), std::out_of_range);
}

TEST_CASE("shape errors") {
  ParameterSet p;
  p.add("a", Tensor({2, 3}));
  p.add("b", Tensor({2, 3}));
  Graph g(p);
  CHECK_THROWS_AS(matmul(g.param(0), g.param(1)), ShapeError);
  CHECK_THROWS_AS(add_bias(g.param(0), g.constant(Tensor({2}))), ShapeError);
  CHECK_THROWS_AS(attention(g.param(0), g.param(0), g.param(0), 4, 1), ShapeError);
}

TEST_CASE("Adam follows the scalar recurrence") {
  AdamConfig cfg{0.01, 0.9, 0.999, 1e-8};
  ParameterSet p;
  p.add("w", Tensor::from({3}, {0.5, -1.0, 2.0}));
  Adam adam(p, cfg);
  std::vector<double> w{0.5, -1.0, 2.0}, m(3, 0.0), v(3, 0.0);
  std::mt19937_64 rng(99);
  std::normal_distribution<double> nd;
  for (int t = 1; t <= 25; ++t) {
    Tensor g({3});
    for (std::size_t i = 0; i < 3; ++i) g[i] = nd(rng);
    adam.step(p, {g});
    for (std::size_t i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1.0 - std::pow(0.9, t));
      const double vh = v[i] / (1.0 - std::pow(0.999, t));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(p[0][i] == doctest::Approx(w[i]).epsilon(1e-12));
  CHECK(adam.step_count() == 25);

  // First step moves every coordinate by about the learning rate.
  ParameterSet q;
  q.add("w", Tensor::from({2}, {0.0, 0.0}));
  Adam fresh(q, cfg);
  fresh.step(q, {Tensor::from({2}, {3.0, -0.2})});
  CHECK(q[0][0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(q[0][1] == doctest::Approx(0.01).epsilon(1e-6));

  Tensor bad = Tensor::from({2}, {NAN, 1.0});
  const Tensor before = q[0];
  CHECK_THROWS_AS(fresh.step(q, {bad}), NumericError);
  CHECK(q[0] == before);
  CHECK_THROWS_AS(fresh.set_learning_rate(0.0), std::invalid_argument);
  fresh.reset();
  CHECK(fresh.step_count() == 0);
}

TEST_CASE("MLP forward matches a scalar reference evaluator") {
  ModelConfig c;
  c.kind = ModelKind::Mlp;
  c.blocks = 2;
  c.hidden = 8;
  c.seq_len = 3;
  c.input_dim = 4;
  c.output_dim = 2;
  Model model(c, 17);
  std::mt19937_64 rng(18);
  // Nonzero biases so they are exercised too.
  for (std::size_t i = 0; i < model.params().size(); ++i)
    if (model.params().name(i).ends_with(".bias")) model.params()[i] = testing::random_tensor(model.params()[i].shape(), rng, 0.1);

  const std::size_t batch = 5;
  const Tensor x = testing::random_tensor({batch * c.seq_len, c.input_dim}, rng, 1.0);
  const Tensor y = model.predict(x);
  REQUIRE(y.shape() == Shape{batch, c.output_dim});

  auto dense = [&](const std::vector<double>& in, const std::string& layer, bool act) {
    const Tensor& w = model.params().get(layer + ".weight");
    const Tensor& b = model.params().get(layer + ".bias");
    std::vector<double> out(w.dim(0));
    for (std::size_t o = 0; o < w.dim(0); ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < w.dim(1); ++i) s += in[i] * w.at(o, i);
      s += b[o];
      out[o] = act ? std::max(s, 0.0) : s;
    }
    return out;
  };
  for (std::size_t s = 0; s < batch; ++s) {
    std::vector<double> h(x.values().begin() + s * c.seq_len * c.input_dim,
                          x.values().begin() + (s + 1) * c.seq_len * c.input_dim);
    h = dense(h, "input", true);
    for (std::size_t b = 0; b < c.blocks; ++b) h = dense(h, "block" + std::to_string(b) + ".fc", true);
    h = dense(h, "classifier", false);
    for (std::size_t o = 0; o < c.output_dim; ++o) CHECK(y.at(s, o) == doctest::Approx(h[o]).epsilon(1e-12));
  }
}

TEST_CASE("transformer gradients by finite differences") {
  ModelConfig c;
  c.blocks = 1;
  c.hidden = 8;
  c.heads = 2;
  c.ffn_multiplier = 2;
  c.seq_len = 3;
  c.input_dim = 4;
  c.output_dim = 2;
  Model model(c, 5);
  std::mt19937_64 rng(6);
  const Tensor x = testing::random_tensor({2 * c.seq_len, c.input_dim}, rng, 1.0);
  const Tensor target = testing::random_tensor({2, c.output_dim}, rng, 1.0);
  expect_gradients(model.params(), [&](Graph& g) { return mse_loss(model.forward(g, x), target); }, 7);
}
