#include <doctest.h>

#include <algorithm>
#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <vector>

#include "pricequant/error.hpp"
#include "pricequant/quantile.hpp"
#include "pricequant/rng.hpp"

using namespace pricequant;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

// Independent CDF: 0 below q_1, linear between knots, 1 from q_K on.
double oracle_cdf(const std::vector<double>& tau, const std::vector<double>& q, double r) {
  if (r < q.front()) return 0.0;
  if (r >= q.back()) return 1.0;
  std::size_t k = 0;
  while (k + 1 < q.size() && q[k + 1] <= r) ++k;
  if (q[k + 1] == q[k]) return tau[k + 1];
  return tau[k] + (tau[k + 1] - tau[k]) * (r - q[k]) / (q[k + 1] - q[k]);
}

// Adaptive Gauss-Kronrod on each smooth piece between knots and y.
double oracle_crps(const std::vector<double>& tau, const std::vector<double>& q, double y) {
  std::vector<double> cuts = q;
  cuts.push_back(y);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double a = cuts[i], b = cuts[i + 1];
    const double mid = 0.5 * (a + b);
    const double ind = y <= mid ? 1.0 : 0.0;
    auto f = [&](double r) {
      // Evaluate on the open piece so boundary jumps do not leak in.
      const double rr = std::clamp(r, std::nextafter(a, b), std::nextafter(b, a));
      const double d = oracle_cdf(tau, q, rr) - ind;
      return d * d;
    };
    total += boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, 15, 1e-13);
  }
  return total;
}

std::vector<double> random_sorted(Rng& rng, std::size_t n, double lo, double hi) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST_CASE("midpoint grid") {
  const auto g2 = QuantileGrid::make(2);
  CHECK(g2[0] == 0.25);
  CHECK(g2[1] == 0.75);
  const auto g = QuantileGrid::make(200);
  CHECK(g[99] == doctest::Approx(0.4975).epsilon(1e-15));
  CHECK(g[100] == doctest::Approx(0.5025).epsilon(1e-15));
  CHECK(g.alpha() == 0.01);
  for (std::size_t k = 1; k < g.size(); ++k) CHECK(g[k] > g[k - 1]);
  CHECK(g.levels().front() > 0.0);
  CHECK(g.levels().back() < 1.0);
  CHECK_THROWS_AS(QuantileGrid::make(1), ConfigError);
  CHECK_THROWS_AS(QuantileGrid::make(4, 0.0), ConfigError);
  CHECK_THROWS_AS(QuantileGrid::from_levels({0.5, 0.4}, 0.01), ConfigError);
  CHECK_THROWS_AS(QuantileGrid::from_levels({0.0, 0.4}, 0.01), ConfigError);
  CHECK(QuantileGrid::from_json(g.to_json()) == g);
}

TEST_CASE("pinball examples") {
  CHECK(pinball(10, 10, 0.3) == 0.0);
  CHECK(pinball(8, 10, 0.5) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(pinball(12, 10, 0.9) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("pinball piecewise form equals max form") {
  Rng rng(1);
  for (int i = 0; i < 100000; ++i) {
    const double q = rng.uniform(-50, 50), y = rng.uniform(-50, 50), tau = rng.uniform_open();
    const double mx = std::max(tau * (y - q), (tau - 1.0) * (y - q));
    CHECK(std::abs(pinball(q, y, tau) - mx) <= 1e-12);
  }
}

TEST_CASE("smoothed pinball examples") {
  const auto at = smoothed_pinball(3.0, 3.0, 0.3, 0.01);
  CHECK(at.loss == doctest::Approx(0.01 * std::log(2.0)).epsilon(1e-14));
  CHECK(at.grad == doctest::Approx(0.5 - 0.3).epsilon(1e-14));
  const auto off = smoothed_pinball(1.0 + 10 * 0.01, 1.0, 0.3, 0.01);
  CHECK(off.grad == doctest::Approx(0.9999546021312976 - 0.3).epsilon(1e-12));
}

TEST_CASE("smoothed pinball is sandwiched above the exact loss") {
  Rng rng(2);
  for (int i = 0; i < 100000; ++i) {
    const double alpha = std::pow(10.0, rng.uniform(-4, 0));
    const double q = rng.uniform(-5, 5), y = rng.uniform(-5, 5), tau = rng.uniform_open();
    const double gap = smoothed_pinball(q, y, tau, alpha).loss - pinball(q, y, tau);
    CHECK(gap >= -1e-15);
    CHECK(gap <= alpha * std::log(2.0) + 1e-15);
  }
}

TEST_CASE("smoothed pinball is stable for huge residuals") {
  for (double r : {1e4, -1e4, 1e6 * 0.01, -1e6 * 0.01}) {
    const auto lg = smoothed_pinball(r, 0.0, 0.4, 0.01);
    CHECK(std::isfinite(lg.loss));
    CHECK(std::isfinite(lg.grad));
    CHECK(lg.loss == doctest::Approx(pinball(r, 0.0, 0.4)).epsilon(1e-12));
  }
  CHECK(softplus_alpha(-1e6, 1e-2) >= 0.0);
  CHECK(softplus_alpha(1e6, 1e-2) == 1e6);
}

TEST_CASE("smoothed pinball gradient matches finite differences") {
  Rng rng(3);
  const double h = 1e-6;
  for (int i = 0; i < 200; ++i) {
    const double alpha = rng.uniform(0.05, 1.0);
    const double q = rng.uniform(-2, 2), y = rng.uniform(-2, 2), tau = rng.uniform(0.01, 0.99);
    const double fd = (smoothed_pinball(q + h, y, tau, alpha).loss - smoothed_pinball(q - h, y, tau, alpha).loss) / (2 * h);
    CHECK(rel_err(smoothed_pinball(q, y, tau, alpha).grad, fd) < 1e-5);
  }
}

TEST_CASE("batch quantile loss examples and gradient") {
  auto grid = make_grid(2, 0.01);
  const double y = 4.0;
  const std::vector<double> at_y = {y, y};
  CHECK(batch_quantile_loss(at_y, y, *grid) == doctest::Approx(0.01 * std::log(2.0)).epsilon(1e-14));

  auto sharp = make_grid(2, 1e-9);
  const std::vector<double> below = {y - 1, y - 1};
  CHECK(batch_quantile_loss(below, y, *sharp) == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(mean_pinball(below, y, grid->levels()) == doctest::Approx(0.5).epsilon(1e-15));

  auto g = make_grid(16, 0.1);
  Rng rng(4);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    auto q = random_sorted(rng, 16, -2, 2);
    const double yy = rng.uniform(-2, 2);
    std::vector<double> grad(16);
    batch_quantile_loss(q, yy, *g, grad);
    for (std::size_t k = 0; k < 16; ++k) {
      auto qp = q, qm = q;
      qp[k] += h;
      qm[k] -= h;
      const double fd = (batch_quantile_loss(qp, yy, *g) - batch_quantile_loss(qm, yy, *g)) / (2 * h);
      CHECK(rel_err(grad[k], fd) < 1e-5);
    }
  }
}

TEST_CASE("delta encoding") {
  const std::vector<double> z = {2.0, -1.0, 3.0};
  const auto q = delta_encode(z, DeltaActivation::relu);
  CHECK(q == std::vector<double>{2.0, 2.0, 5.0});

  std::vector<double> flat(10, -800.0);
  flat[0] = 1.5;
  const auto qf = delta_encode(flat, DeltaActivation::softplus);
  for (double v : qf) CHECK(v == doctest::Approx(1.5).epsilon(1e-12));

  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> zz(50);
    for (auto& v : zz) v = rng.uniform(-30, 30);
    for (auto act : {DeltaActivation::softplus, DeltaActivation::relu}) {
      const auto qq = delta_encode(zz, act);
      for (std::size_t k = 1; k < qq.size(); ++k) CHECK(qq[k] >= qq[k - 1]);
    }
  }
}

TEST_CASE("delta encoding backward matches finite differences") {
  Rng rng(6);
  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> z(16), w(16);
    for (auto& v : z) v = rng.uniform(-2, 2);
    for (auto& v : w) v = rng.uniform(-1, 1);
    // L = sum w_k q_k, so dL/dq = w.
    auto loss = [&](const std::vector<double>& zz) {
      const auto q = delta_encode(zz, DeltaActivation::softplus);
      double s = 0.0;
      for (std::size_t k = 0; k < q.size(); ++k) s += w[k] * q[k];
      return s;
    };
    std::vector<double> dz(16);
    delta_encode_backward(z, w, DeltaActivation::softplus, dz);
    for (std::size_t k = 0; k < 16; ++k) {
      auto zp = z, zm = z;
      zp[k] += h;
      zm[k] -= h;
      CHECK(rel_err(dz[k], (loss(zp) - loss(zm)) / (2 * h)) < 1e-5);
    }
  }
}

TEST_CASE("interpolation and median") {
  auto g = make_grid(2);
  PredictedDistribution d(g, {10.0, 20.0}, ValueSpace::linear);
  CHECK(interpolate_quantile(d, 0.5) == 15.0);
  CHECK(interpolate_quantile(d, 0.01) == 10.0);
  CHECK(interpolate_quantile(d, 0.99) == 20.0);
  CHECK(interpolate_quantile(d, 0.25) == 10.0);
  CHECK_THROWS_AS(interpolate_quantile(d, 0.0), DomainError);
  CHECK_THROWS_AS(interpolate_quantile(d, 1.0), DomainError);

  auto g200 = make_grid(200);
  Rng rng(7);
  auto q = random_sorted(rng, 200, 0, 100);
  PredictedDistribution d200(g200, q, ValueSpace::linear);
  CHECK(median(d200) == doctest::Approx(0.5 * (q[99] + q[100])).epsilon(1e-14));
  for (std::size_t k = 0; k < 200; ++k) CHECK(interpolate_quantile(d200, (*g200)[k]) == q[k]);
  double prev = -1e300;
  for (int i = 1; i < 1000; ++i) {
    const double v = interpolate_quantile(d200, i / 1000.0);
    CHECK(v >= prev);
    prev = v;
  }
  PredictedDistribution c(g200, std::vector<double>(200, 7.0), ValueSpace::linear);
  CHECK(median(c) == 7.0);
  CHECK_THROWS_AS(PredictedDistribution(g, {2.0, 1.0}, ValueSpace::linear), DomainError);
  CHECK_THROWS_AS(PredictedDistribution(g, {1.0}, ValueSpace::linear), ShapeError);
}

TEST_CASE("cdf and interpolation are generalized inverses") {
  auto g = make_grid(40);
  Rng rng(8);
  auto q = random_sorted(rng, 40, -3, 3);
  PredictedDistribution d(g, q, ValueSpace::log);
  const auto F = cdf_from_quantiles(d);
  for (std::size_t k = 0; k + 1 < 40; ++k) CHECK(F(q[k]) == doctest::Approx((*g)[k]).epsilon(1e-12));
  CHECK(F(q.front() - 1e-9) == 0.0);
  CHECK(F(q.back()) == 1.0);
  for (int i = 0; i < 500; ++i) {
    const double tau = rng.uniform((*g)[0], (*g)[39]);
    CHECK(F(interpolate_quantile(d, tau)) == doctest::Approx(tau).epsilon(1e-9));
  }
  auto xs = random_sorted(rng, 1000, -4, 4);
  for (std::size_t i = 1; i < xs.size(); ++i) CHECK(F(xs[i]) >= F(xs[i - 1]));

  PredictedDistribution pm(g, std::vector<double>(40, 2.0), ValueSpace::log);
  const auto step = cdf_from_quantiles(pm);
  CHECK(step(1.999) == 0.0);
  CHECK(step(2.0) == 1.0);
}

TEST_CASE("crps matches adaptive quadrature") {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t K = 2 + rng.index(30);
    auto g = make_grid(K);
    auto q = random_sorted(rng, K, -5, 5);
    if (trial % 5 == 0) q[1] = q[0];  // flat run
    const double y = rng.uniform(-7, 7);
    PredictedDistribution d(g, q, ValueSpace::linear);
    const std::vector<double> tau(g->levels().begin(), g->levels().end());
    const double exact = crps(d, y);
    const double oracle = oracle_crps(tau, q, y);
    CAPTURE(trial);
    CHECK(rel_err(exact, oracle) < 1e-6);
  }
}

TEST_CASE("point mass crps is the absolute error") {
  auto g = make_grid(200);
  Rng rng(10);
  for (int i = 0; i < 100; ++i) {
    const double c = rng.uniform(-10, 10), y = rng.uniform(-10, 10);
    PredictedDistribution d(g, std::vector<double>(200, c), ValueSpace::linear);
    CHECK(crps(d, y) == std::abs(c - y));
  }
}

TEST_CASE("density curve") {
  auto g = make_grid(200);
  PredictedDistribution pm(g, std::vector<double>(200, 5.0), ValueSpace::linear);
  const double h = 0.5;
  const auto bump = density_curve(pm, h, 513);
  const auto peak = std::max_element(bump.begin(), bump.end(), [](auto& a, auto& b) { return a.density < b.density; });
  CHECK(peak->value == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(peak->density == doctest::Approx(1.0 / (h * std::sqrt(2.0 * M_PI))).epsilon(1e-12));

  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    std::vector<double> q(200);
    for (std::size_t k = 0; k < 200; ++k) q[k] = 3.0 + 0.5 * std::tan(M_PI * ((*g)[k] - 0.5)) * 0.1 + rng.uniform(0, 0.001) * k;
    std::sort(q.begin(), q.end());
    PredictedDistribution d(g, q, ValueSpace::linear);
    const auto curve = density_curve(d, default_bandwidth(d));
    CHECK(curve.front().value == doctest::Approx(q.front() - 3 * default_bandwidth(d)));
    double integral = 0.0;
    for (std::size_t j = 1; j < curve.size(); ++j) {
      CHECK(curve[j].density >= 0.0);
      integral += 0.5 * (curve[j].density + curve[j - 1].density) * (curve[j].value - curve[j - 1].value);
    }
    CHECK(std::abs(integral - 1.0) <= 0.02);
  }
  CHECK_THROWS_AS(density_curve(pm, 0.0), ConfigError);
  CHECK(default_bandwidth(pm) > 0.0);
  CHECK(density_csv(bump).rfind("value,density\n", 0) == 0);
  const std::vector<SvgMarker> marks = {{5.0, "median", "#c00"}};
  CHECK(density_svg(bump, marks, "t").find("<svg") != std::string::npos);
}

TEST_CASE("distribution json round trip") {
  auto g = make_grid(4);
  PredictedDistribution d(g, {1, 2, 3, 4}, ValueSpace::log);
  const auto back = PredictedDistribution::from_json(d.to_json());
  CHECK(back.grid() == d.grid());
  CHECK(std::vector<double>(back.quantiles().begin(), back.quantiles().end()) == std::vector<double>{1, 2, 3, 4});
  CHECK(back.space() == ValueSpace::log);
  const auto lin = d.to_linear();
  CHECK(lin[0] == std::exp(1.0));
  CHECK(lin.space() == ValueSpace::linear);
}
