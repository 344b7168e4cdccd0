#include <doctest.h>

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <memory>
#include <vector>

#include "pricequant/baselines.hpp"
#include "pricequant/error.hpp"
#include "pricequant/rng.hpp"
#include "pricequant/synth.hpp"

using namespace pricequant;

namespace {

SynthSpec small_spec(std::size_t count, std::uint64_t seed) {
  SynthSpec s;
  VocabOptions vo;
  vo.size = 12;
  s.vocab = make_vocab(vo);
  s.count = count;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_CASE("inverse normal cdf") {
  const boost::math::normal n;
  CHECK(std::abs(normal_inv_cdf(0.5)) < 1e-12);
  CHECK(std::abs(normal_inv_cdf(0.975) - 1.959964) < 1e-6);
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const double e = -10.0 * rng.uniform();
    // p >= 0.5 so that 1 - p is exact.
    const double p = std::max(0.5, 1.0 - std::pow(10.0, e));
    if (!(p < 1.0 - 1e-10)) continue;
    const double lo = 1.0 - p;
    CHECK(std::abs(normal_inv_cdf(p) - boost::math::quantile(n, p)) < 1e-9);
    CHECK(std::abs(normal_inv_cdf(lo) - boost::math::quantile(n, lo)) < 1e-9);
    CHECK(std::abs(normal_inv_cdf(p) + normal_inv_cdf(lo)) < 2e-9);
  }
  CHECK_THROWS_AS(normal_inv_cdf(0.0), DomainError);
  CHECK_THROWS_AS(normal_inv_cdf(1.0), DomainError);
}

TEST_CASE("generation is deterministic and prices are positive") {
  const auto a = generate(small_spec(500, 4));
  const auto b = generate(small_spec(500, 4));
  REQUIRE(a.records.size() == 500);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].price == b.records[i].price);
    CHECK(a.records[i].fields == b.records[i].fields);
    CHECK(a.records[i].price > 0.0);
    CHECK(a.truth[i].id == a.records[i].id);
  }
  const auto c = generate(small_spec(500, 5));
  CHECK(c.records[0].price != a.records[0].price);
}

TEST_CASE("log prices follow the stated law on a fixed token set") {
  auto spec = small_spec(100000, 9);
  spec.clusters = 1;
  const auto d = generate(spec);
  const double mu = d.truth[0].mu, sigma = d.truth[0].sigma;
  std::vector<double> logs;
  double mean = 0.0;
  for (const auto& r : d.records) {
    logs.push_back(std::log(r.price));
    mean += logs.back();
  }
  const double n = static_cast<double>(logs.size());
  mean /= n;
  CHECK(std::abs(mean - mu) <= 3.0 * sigma / std::sqrt(n));

  for (double tau : {0.1, 0.5, 0.9}) {
    const double q = d.truth[0].quantile(tau);
    double hit = 0.0;
    for (const auto& r : d.records) hit += r.price <= q;
    CHECK(std::abs(hit / n - tau) < 3.0 * std::sqrt(tau * (1 - tau) / n));
  }
}

TEST_CASE("ground truth quantiles") {
  GroundTruth g{"x", 2.0, 0.5, std::nullopt};
  CHECK(g.quantile(0.5) == doctest::Approx(std::exp(2.0)).epsilon(1e-12));
  double prev = 0.0;
  for (int k = 1; k < 100; ++k) {
    const double q = g.quantile(k / 100.0);
    CHECK(q > prev);
    prev = q;
  }
  CHECK_THROWS_AS(g.quantile(1.0), DomainError);

  // Mixture CDF at the returned quantile, evaluated with an independent normal.
  const boost::math::normal n;
  GroundTruth m{"m", 1.0, 0.3, Mixture{0.3, 1.5}};
  prev = 0.0;
  for (double tau : {0.05, 0.3, 0.5, 0.7, 0.95}) {
    const double t = std::log(m.quantile(tau));
    const double F = 0.7 * boost::math::cdf(n, (t - 1.0) / 0.3) + 0.3 * boost::math::cdf(n, (t - 2.5) / 0.3);
    CHECK(F == doctest::Approx(tau).epsilon(1e-9));
    CHECK(std::exp(t) > prev);
    prev = std::exp(t);
  }
}

TEST_CASE("truth error is zero on the truth and tracks a constant offset") {
  const auto d = generate(small_spec(300, 2));
  // Knots at the evaluated levels, so no interpolation error enters.
  const std::vector<double> taus = {0.1, 0.25, 0.5, 0.75, 0.9};
  auto grid = std::make_shared<const QuantileGrid>(QuantileGrid::from_levels(taus, 0.01));
  const auto truth = truth_distributions(d.truth, grid);
  for (const auto& e : evaluate_against_truth(truth, d.truth, taus)) {
    CHECK(e.mean < 1e-12);
    CHECK(e.p90 < 1e-12);
  }

  const double delta = 0.2;
  std::vector<PredictedDistribution> shifted;
  for (const auto& g : d.truth) {
    std::vector<double> q(grid->size());
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = std::exp(delta) * g.quantile((*grid)[k]);
    shifted.emplace_back(grid, std::move(q), ValueSpace::linear);
  }
  for (const auto& e : evaluate_against_truth(shifted, d.truth, taus)) {
    CHECK(e.mean == doctest::Approx(std::exp(delta) - 1.0).epsilon(1e-9));
  }

  CHECK_THROWS_AS(evaluate_against_truth(std::span(truth).subspan(1), d.truth, taus), UsageError);
}

TEST_CASE("knn quantile error shrinks with more neighbors on iid records") {
  auto spec = small_spec(600, 21);
  spec.clusters = 1;
  const auto d = generate(spec);
  std::vector<FeatureVector> rows(d.records.size(), FeatureVector(1, {0}, {1.0}));
  std::vector<double> y;
  for (const auto& r : d.records) y.push_back(std::log(r.price));
  const NeighborIndex index(rows, y, Metric::euclidean, false);
  auto grid = make_grid(200);
  const std::vector<double> taus = {0.1, 0.25, 0.5, 0.75, 0.9};
  const std::vector<GroundTruth> truth(1, d.truth[0]);
  double prev = 1e9;
  for (std::size_t k : {5, 50, 500}) {
    const std::vector<PredictedDistribution> pred = {knn_quantiles(index, FeatureVector(1, {0}, {1.0}), k, grid)};
    double err = 0.0;
    for (const auto& e : evaluate_against_truth(pred, truth, taus)) err += e.mean;
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("spec validation") {
  auto s = small_spec(10, 1);
  CHECK_NOTHROW(s.validate());
  s.sigma0 = -1.0;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  CHECK_THROWS_AS(generate(s), ConfigError);
  s = small_spec(10, 1);
  s.tokens_per_record = 13;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_spec(10, 1);
  s.bimodal = Mixture{1.5, 1.0};
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s.bimodal = Mixture{0.3, 1.0};
  const auto back = SynthSpec::from_json(s.to_json());
  CHECK(back.to_json() == s.to_json());
}

TEST_CASE("vocabulary names are unique") {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < 2000; ++i) names.push_back(token_name(i));
  std::sort(names.begin(), names.end());
  CHECK(std::adjacent_find(names.begin(), names.end()) == names.end());
}

TEST_CASE("synthetic data round trips through disk") {
  auto spec = small_spec(50, 8);
  spec.bimodal = Mixture{0.25, 0.8};
  const auto d = generate(spec);
  const auto dir = std::filesystem::temp_directory_path() / "pq_synth_test";
  std::filesystem::remove_all(dir);
  write_synth(dir, spec, d);
  const auto truth = read_truth(dir / "truth.jsonl");
  REQUIRE(truth.size() == 50);
  CHECK(truth[7].mu == d.truth[7].mu);
  CHECK(truth[7].sigma == d.truth[7].sigma);
  REQUIRE(truth[7].mixture);
  CHECK(truth[7].mixture->weight == 0.25);
  const auto recs = parse_records_file(dir / "records.jsonl", Kind::product);
  CHECK(recs.records.size() == 50);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(read_truth(dir / "truth.jsonl"), IoError);
}
