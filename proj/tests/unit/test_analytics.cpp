#include <cmath>
#include <vector>

#include "doctest.h"
#include "nxm/analytics.hpp"
#include "nxm/metrics.hpp"

using namespace nxm;

namespace {
Mask mask_of(Shape shape, std::vector<std::uint8_t> bits) { return Mask{std::move(shape), std::move(bits), std::nullopt}; }
}  // namespace

TEST_CASE("mask similarity") {
  const Mask a = mask_of({1, 8}, {1, 1, 0, 0, 1, 1, 0, 0});
  const Mask b = mask_of({1, 8}, {1, 0, 1, 0, 0, 0, 1, 1});
  CHECK(mask_similarity(a, b) == 0.25);
  CHECK(mask_similarity(a, a) == 1.0);
  CHECK(mask_similarity(a, mask_of({1, 8}, {0, 0, 1, 1, 0, 0, 1, 1})) == 0.0);
  // Not symmetric when the masks retain different counts.
  const Mask c = mask_of({1, 8}, {1, 1, 1, 1, 1, 1, 1, 1});
  CHECK(mask_similarity(a, c) == 1.0);
  CHECK(mask_similarity(c, a) == 0.5);
  CHECK(mean_layer_similarity({a, a}, {b, a}) == 0.625);
  CHECK_THROWS_AS(mask_similarity(a, mask_of({2, 4}, std::vector<std::uint8_t>(8, 1))), ShapeError);
  CHECK_THROWS_AS(mask_similarity(mask_of({1, 4}, {0, 0, 0, 0}), mask_of({1, 4}, {1, 1, 0, 0})),
                  std::invalid_argument);
  Mask p42 = a, p84 = a;
  p42.pattern = SparsityPattern(4, 2);
  p84.pattern = SparsityPattern(8, 4);
  CHECK_THROWS_AS(mask_similarity(p42, p84), ShapeError);
  CHECK_THROWS_AS(mean_layer_similarity({a}, {a, a}), std::invalid_argument);
}

TEST_CASE("presence counts and decay buckets") {
  ParameterSet w0, w1;
  w0.add("L", Tensor::from({1, 4}, {2.0, -1.0, 0.5, 0.0}));
  w1.add("L", Tensor::from({1, 4}, {3.0, 0.5, 0.0, 7.0}));
  const std::vector<std::vector<Mask>> history{
      {mask_of({1, 4}, {1, 1, 0, 0})},
      {mask_of({1, 4}, {1, 0, 0, 1})},
  };
  const auto counts = presence_counts(history);
  CHECK(counts == std::vector<std::vector<std::size_t>>{{2, 1, 0, 1}});

  const PresenceHistogram h = decay_report(w0, w1, {"L"}, history, 2);
  REQUIRE(h.buckets.size() == 3);
  // The zero initial weight falls below the floor and is skipped.
  CHECK(h.population() == 3);
  CHECK(h.buckets[2].population == 1);
  CHECK(h.buckets[2].mean_ratio == 1.5);
  CHECK(h.buckets[1].population == 1);
  CHECK(h.buckets[1].mean_ratio == 0.5);
  CHECK(h.buckets[0].population == 1);
  CHECK(h.buckets[0].mean_ratio == 0.0);
  CHECK(decay_is_monotone(h));

  CHECK_THROWS_AS(decay_report(w0, w1, {"L"}, history, 3), std::invalid_argument);
}

TEST_CASE("decay monotonicity rule") {
  auto hist = [](std::vector<std::pair<std::size_t, double>> buckets) {
    PresenceHistogram h;
    h.iterations = buckets.size() - 1;
    for (std::size_t p = 0; p < buckets.size(); ++p) h.buckets.push_back({p, buckets[p].first, buckets[p].second});
    return h;
  };
  CHECK(decay_is_monotone(hist({{5, 0.1}, {3, 0.5}, {10, 0.9}})));
  CHECK(decay_is_monotone(hist({{5, 0.1}, {0, 0.0}, {10, 0.9}})));
  CHECK(decay_is_monotone(hist({{5, 0.5}, {3, 0.5}, {10, 0.9}})));
  CHECK_FALSE(decay_is_monotone(hist({{5, 0.6}, {3, 0.5}, {10, 0.9}})));
  CHECK_FALSE(decay_is_monotone(hist({{5, 0.1}, {3, 1.5}, {10, 0.9}})));
  CHECK_FALSE(decay_is_monotone(hist({{5, 0.1}, {3, 0.5}, {0, 0.0}})));
}

TEST_CASE("metric CSV round trip") {
  MetricLog log;
  MetricRow a;
  a.step = 10;
  a.epoch = 0;
  a.train_loss = 0.1 + 0.2;
  a.aug_loss = 1.0 / 3.0;
  a.method = "admm-nxm";
  a.seed = 42;
  MetricRow b = a;
  b.step = 80;
  b.k = 1;
  b.residual = 1e-300;
  b.similarity = 0.9375;
  b.train_loss.reset();
  b.aug_loss.reset();
  MetricRow c;
  c.step = 625;
  c.epoch = 1;
  c.val_loss_pruned = 0.013128394857;
  c.method = "asp";
  log.append(a);
  log.append(b);
  log.append(c);

  const std::string text = log.to_csv();
  CHECK(text.rfind(std::string(MetricLog::kHeader) + "\n", 0) == 0);
  CHECK(text.find("\n10,0,,0.30000000000000004,0.33333333333333331,,,,admm-nxm,42\n") != std::string::npos);
  CHECK(text.find("\n80,0,1,,,,1e-300,0.9375,admm-nxm,42\n") != std::string::npos);
  const MetricLog back = MetricLog::parse_csv(text);
  CHECK(back.rows() == log.rows());
  CHECK(back.to_csv() == text);

  CHECK_THROWS(MetricLog::parse_csv("wrong,header\n"));
  CHECK_THROWS(MetricLog::parse_csv(std::string(MetricLog::kHeader) + "\n1,2,3\n"));
  CHECK(format_double(0.1) == "0.10000000000000001");
  CHECK(std::stod(format_double(M_PI)) == M_PI);
}
