#include "pricequant/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "pricequant/rng.hpp"

namespace pricequant {

namespace {

void check_pairs(std::span<const double> y, std::size_t m) {
  if (y.empty()) throw DomainError("metric over an empty set of pairs");
  if (y.size() != m) throw ShapeError("targets and predictions differ in length");
  for (double v : y) {
    if (!(v > 0.0) || !std::isfinite(v)) throw DomainError("targets must be finite and > 0");
  }
}

void check_grids(std::span<const PredictedDistribution> dists) {
  const auto& g0 = dists.front().grid();
  for (const auto& d : dists) {
    if (d.grid_ptr() != dists.front().grid_ptr() && !(d.grid() == g0)) {
      throw UsageError("predictions use different quantile grids");
    }
  }
}

}  // namespace

double mape(std::span<const double> y, std::span<const double> yhat) {
  check_pairs(y, yhat.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += std::abs((y[i] - yhat[i]) / y[i]);
  return 100.0 * s / static_cast<double>(y.size());
}

double wape(std::span<const double> y, std::span<const double> yhat) {
  check_pairs(y, yhat.size());
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    num += std::abs(y[i] - yhat[i]);
    den += std::abs(y[i]);
  }
  return 100.0 * num / den;
}

double mpe(std::span<const double> y, std::span<const double> yhat) {
  check_pairs(y, yhat.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += (y[i] - yhat[i]) / y[i];
  return 100.0 * s / static_cast<double>(y.size());
}

std::vector<double> coverage(std::span<const double> y, std::span<const PredictedDistribution> dists) {
  if (y.empty()) throw DomainError("metric over an empty set of pairs");
  if (y.size() != dists.size()) throw ShapeError("targets and predictions differ in length");
  check_grids(dists);
  const std::size_t K = dists.front().size();
  std::vector<double> cov(K, 0.0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto q = dists[i].quantiles();
    for (std::size_t k = 0; k < K; ++k) cov[k] += y[i] <= q[k] ? 1.0 : 0.0;
  }
  for (double& c : cov) c /= static_cast<double>(y.size());
  return cov;
}

double calibration_error(std::span<const double> y, std::span<const PredictedDistribution> dists) {
  const auto cov = coverage(y, dists);
  const auto levels = dists.front().grid().levels();
  double s = 0.0;
  for (std::size_t k = 0; k < cov.size(); ++k) s += std::abs(cov[k] - levels[k]);
  return s / static_cast<double>(cov.size());
}

double mean_crps(std::span<const double> y, std::span<const PredictedDistribution> dists) {
  check_pairs(y, dists.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += crps(dists[i], y[i]);
  return s / static_cast<double>(y.size());
}

double empirical_crps(std::span<const double> x, double y) {
  if (x.empty()) throw DomainError("empty reference sample");
  const std::size_t m = x.size();
  double total = 0.0;
  if (y < x[0]) total += x[0] - y;
  if (y > x[m - 1]) total += y - x[m - 1];
  // F = (j + 1) / m on [x_j, x_{j+1}).
  for (std::size_t j = 0; j + 1 < m; ++j) {
    const double a = x[j], b = x[j + 1];
    if (b <= a) continue;
    const double F = static_cast<double>(j + 1) / static_cast<double>(m);
    const double below = std::clamp(y, a, b) - a;  // part of the segment left of y
    total += F * F * below + (1.0 - F) * (1.0 - F) * (b - a - below);
  }
  return total;
}

double crpss(std::span<const double> y, std::span<const PredictedDistribution> dists,
             std::span<const double> reference_targets) {
  if (reference_targets.empty()) throw DomainError("CRPSS needs reference targets");
  const double model = mean_crps(y, dists);
  std::vector<double> ref(reference_targets.begin(), reference_targets.end());
  std::sort(ref.begin(), ref.end());
  double r = 0.0;
  for (double v : y) r += empirical_crps(ref, v);
  r /= static_cast<double>(y.size());
  if (!(r > 0.0)) throw DomainError("reference CRPS is zero; skill score undefined");
  return 1.0 - model / r;
}

double rciw(std::span<const double> y, std::span<const PredictedDistribution> dists, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw DomainError("gamma must lie in (0, 1)");
  check_pairs(y, dists.size());
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double lo = interpolate_quantile(dists[i], gamma / 2.0);
    const double hi = interpolate_quantile(dists[i], 1.0 - gamma / 2.0);
    s += (hi - lo) / std::abs(y[i]);
  }
  return 100.0 * s / static_cast<double>(y.size());
}

double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw DomainError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
}

namespace {

double run_metric(const ResampleMetric& metric, std::span<const std::size_t> idx, std::size_t iteration) {
  try {
    return metric(idx);
  } catch (const std::exception& e) {
    throw BootstrapError(iteration, e.what());
  }
}

}  // namespace

Interval bootstrap_ci(std::size_t n, const ResampleMetric& metric, std::size_t iterations, std::uint64_t seed) {
  if (n == 0) throw DomainError("bootstrap over an empty set of pairs");
  if (iterations == 0) throw ConfigError("bootstrap needs at least one iteration");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Interval out;
  out.value = metric(idx);
  std::vector<double> stats(iterations);
  for (std::size_t it = 0; it < iterations; ++it) {
    Rng rng(derive_seed(seed, it));
    for (auto& v : idx) v = static_cast<std::size_t>(rng.index(n));
    stats[it] = run_metric(metric, idx, it);
  }
  out.ci_low = percentile(stats, 0.025);
  out.ci_high = percentile(std::move(stats), 0.975);
  return out;
}

Interval bootstrap_exhaustive(std::size_t n, const ResampleMetric& metric) {
  if (n == 0) throw DomainError("bootstrap over an empty set of pairs");
  if (n > 8) throw ConfigError("exhaustive bootstrap is limited to n <= 8");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Interval out;
  out.value = metric(idx);
  std::fill(idx.begin(), idx.end(), std::size_t{0});
  std::vector<double> stats;
  std::size_t it = 0;
  while (true) {
    stats.push_back(run_metric(metric, idx, it++));
    std::size_t d = 0;
    while (d < n && ++idx[d] == n) idx[d++] = 0;
    if (d == n) break;
  }
  out.ci_low = percentile(stats, 0.025);
  out.ci_high = percentile(std::move(stats), 0.975);
  return out;
}

std::string_view to_string(Direction d) {
  switch (d) {
    case Direction::lower: return "lower";
    case Direction::higher: return "higher";
    case Direction::closer_to_zero: return "closer_to_zero";
  }
  return "lower";
}

namespace {

Direction parse_direction(std::string_view s) {
  if (s == "higher") return Direction::higher;
  if (s == "closer_to_zero") return Direction::closer_to_zero;
  return Direction::lower;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

const MetricRow* MetricReport::find(std::string_view name) const {
  for (const auto& r : rows) {
    if (r.name == name) return &r;
  }
  return nullptr;
}

Json MetricReport::to_json() const {
  Json metrics = Json::array();
  for (const auto& r : rows) {
    metrics.push_back({{"metric", r.name},
                       {"value", r.interval.value},
                       {"ci_low", r.interval.ci_low},
                       {"ci_high", r.interval.ci_high},
                       {"direction", to_string(r.direction)}});
  }
  return {{"model", model}, {"n", n}, {"bootstrap", {{"iterations", iterations}, {"seed", seed}}}, {"metrics", metrics}};
}

std::string MetricReport::to_csv() const {
  std::string out = "metric,value,ci_low,ci_high\n";
  for (const auto& r : rows) {
    out += r.name + "," + fmt(r.interval.value) + "," + fmt(r.interval.ci_low) + "," + fmt(r.interval.ci_high) + "\n";
  }
  return out;
}

MetricReport MetricReport::from_json(const Json& j) {
  try {
    MetricReport r;
    r.model = j.at("model").get<std::string>();
    r.n = j.at("n").get<std::size_t>();
    r.iterations = j.at("bootstrap").at("iterations").get<std::size_t>();
    r.seed = j.at("bootstrap").at("seed").get<std::uint64_t>();
    for (const auto& m : j.at("metrics")) {
      MetricRow row;
      row.name = m.at("metric").get<std::string>();
      row.interval = {m.at("value").get<double>(), m.at("ci_low").get<double>(), m.at("ci_high").get<double>()};
      row.direction = parse_direction(m.value("direction", "lower"));
      r.rows.push_back(row);
    }
    return r;
  } catch (const Json::exception& e) {
    throw UsageError(std::string("malformed metric report: ") + e.what());
  }
}

MetricReport evaluate(std::span<const double> y, std::span<const double> point,
                      std::span<const PredictedDistribution> dists, std::span<const double> reference_targets,
                      const EvalOptions& opts) {
  check_pairs(y, point.size());
  MetricReport rep;
  rep.n = y.size();
  rep.iterations = opts.iterations;
  rep.seed = opts.seed;
  const std::size_t n = y.size();

  // Per-pair contributions so each resample is a cheap reduction.
  std::vector<double> abs_err(n), rel_abs(n), rel(n);
  for (std::size_t i = 0; i < n; ++i) {
    abs_err[i] = std::abs(y[i] - point[i]);
    rel_abs[i] = abs_err[i] / y[i];
    rel[i] = (y[i] - point[i]) / y[i];
  }
  auto mean_of = [](const std::vector<double>& v) {
    return [&v](std::span<const std::size_t> idx) {
      double s = 0.0;
      for (auto i : idx) s += v[i];
      return 100.0 * s / static_cast<double>(idx.size());
    };
  };
  std::size_t stream = 0;
  auto add = [&](std::string name, Direction dir, const ResampleMetric& f) {
    rep.rows.push_back({std::move(name), bootstrap_ci(n, f, opts.iterations, derive_seed(opts.seed, stream++)), dir});
  };
  add("MAPE", Direction::lower, mean_of(rel_abs));
  add("WAPE", Direction::lower, [&](std::span<const std::size_t> idx) {
    double num = 0.0, den = 0.0;
    for (auto i : idx) {
      num += abs_err[i];
      den += y[i];
    }
    return 100.0 * num / den;
  });
  add("MPE", Direction::closer_to_zero, mean_of(rel));
  if (dists.empty()) return rep;

  if (dists.size() != n) throw ShapeError("targets and distributions differ in length");
  check_grids(dists);
  const std::size_t K = dists.front().size();
  const auto levels = dists.front().grid().levels();
  std::vector<std::uint8_t> covered(n * K);
  std::vector<double> crps_model(n), crps_ref(n), width(n);
  std::vector<double> ref(reference_targets.begin(), reference_targets.end());
  std::sort(ref.begin(), ref.end());
  for (std::size_t i = 0; i < n; ++i) {
    const auto q = dists[i].quantiles();
    for (std::size_t k = 0; k < K; ++k) covered[i * K + k] = y[i] <= q[k] ? 1 : 0;
    crps_model[i] = crps(dists[i], y[i]);
    if (!ref.empty()) crps_ref[i] = empirical_crps(ref, y[i]);
    width[i] = (interpolate_quantile(dists[i], 1.0 - opts.gamma / 2.0) -
                interpolate_quantile(dists[i], opts.gamma / 2.0)) /
               y[i];
  }
  add("CE", Direction::lower, [&](std::span<const std::size_t> idx) {
    std::vector<std::size_t> cnt(K, 0);
    for (auto i : idx) {
      const std::uint8_t* row = covered.data() + i * K;
      for (std::size_t k = 0; k < K; ++k) cnt[k] += row[k];
    }
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::abs(static_cast<double>(cnt[k]) / static_cast<double>(idx.size()) - levels[k]);
    return s / static_cast<double>(K);
  });
  add("CRPS", Direction::lower, [&](std::span<const std::size_t> idx) {
    double s = 0.0;
    for (auto i : idx) s += crps_model[i];
    return s / static_cast<double>(idx.size());
  });
  if (!ref.empty()) {
    add("CRPSS", Direction::higher, [&](std::span<const std::size_t> idx) {
      double m = 0.0, r = 0.0;
      for (auto i : idx) {
        m += crps_model[i];
        r += crps_ref[i];
      }
      if (!(r > 0.0)) throw DomainError("reference CRPS is zero; skill score undefined");
      return 1.0 - m / r;
    });
  }
  char name[32];
  std::snprintf(name, sizeof(name), "RCIW@%g", 100.0 * (1.0 - opts.gamma));
  add(name, Direction::lower, mean_of(width));
  return rep;
}

}  // namespace pricequant
