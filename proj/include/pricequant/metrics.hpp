#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "pricequant/error.hpp"
#include "pricequant/io.hpp"
#include "pricequant/quantile.hpp"

namespace pricequant {

// Percent metrics of point predictions against y > 0.
double mape(std::span<const double> y, std::span<const double> yhat);
double wape(std::span<const double> y, std::span<const double> yhat);
// Positive when predictions fall below the truth.
double mpe(std::span<const double> y, std::span<const double> yhat);

// Coverage counts y <= q as covered. All distributions must share one grid.
std::vector<double> coverage(std::span<const double> y, std::span<const PredictedDistribution> dists);
double calibration_error(std::span<const double> y, std::span<const PredictedDistribution> dists);

double mean_crps(std::span<const double> y, std::span<const PredictedDistribution> dists);
// CRPS of the empirical (step) CDF of `sorted_reference` at y, integrated exactly.
double empirical_crps(std::span<const double> sorted_reference, double y);
// 1 - CRPS_model / CRPS_reference, reference = empirical CDF of the targets.
double crpss(std::span<const double> y, std::span<const PredictedDistribution> dists,
             std::span<const double> reference_targets);

// Mean width of the central (1 - gamma) interval relative to y, times 100.
double rciw(std::span<const double> y, std::span<const PredictedDistribution> dists, double gamma = 0.05);

// Linear-interpolation percentile of a sample (p in [0, 1]).
double percentile(std::vector<double> values, double p);

struct Interval {
  double value = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

class BootstrapError : public Error {
public:
  BootstrapError(std::size_t iteration, const std::string& what)
      : Error("bootstrap iteration " + std::to_string(iteration) + ": " + what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

private:
  std::size_t iteration_;
};

// Metric evaluated on a multiset of pair indices.
using ResampleMetric = std::function<double(std::span<const std::size_t>)>;

// Percentile bootstrap: `iterations` resamples of size n with replacement,
// iteration i drawing from its own derived stream. The value is the metric on
// the original sample; bounds are the 2.5 / 97.5 percentiles.
Interval bootstrap_ci(std::size_t n, const ResampleMetric& metric, std::size_t iterations = 1000,
                      std::uint64_t seed = 0);
// Same bounds over all n^n ordered resamples (tiny n only).
Interval bootstrap_exhaustive(std::size_t n, const ResampleMetric& metric);

enum class Direction { lower, higher, closer_to_zero };

struct MetricRow {
  std::string name;
  Interval interval;
  Direction direction = Direction::lower;
};

struct MetricReport {
  std::string model;
  std::size_t n = 0;
  std::size_t iterations = 0;
  std::uint64_t seed = 0;
  std::vector<MetricRow> rows;

  const MetricRow* find(std::string_view name) const;
  Json to_json() const;
  std::string to_csv() const;
  static MetricReport from_json(const Json& j);
};

struct EvalOptions {
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
  double gamma = 0.05;
};

// Point metrics always; distributional metrics when `dists` is non-empty
// (prices and reference targets in price space).
MetricReport evaluate(std::span<const double> y, std::span<const double> point,
                      std::span<const PredictedDistribution> dists, std::span<const double> reference_targets,
                      const EvalOptions& opts);

std::string_view to_string(Direction d);

}  // namespace pricequant
