#pragma once

#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "pricequant/io.hpp"

namespace pricequant {

// Ordered quantile levels in (0, 1) with the loss smoothing parameter.
class QuantileGrid {
public:
  // Midpoint rule: tau_k = (2k - 1) / (2K), k = 1..K.
  static QuantileGrid make(std::size_t K, double alpha = 1e-2);
  // Arbitrary strictly increasing levels in (0, 1).
  static QuantileGrid from_levels(std::vector<double> levels, double alpha);

  std::size_t size() const { return levels_.size(); }
  std::span<const double> levels() const { return levels_; }
  double operator[](std::size_t k) const { return levels_[k]; }
  double alpha() const { return alpha_; }

  Json to_json() const;
  static QuantileGrid from_json(const Json& j);

  friend bool operator==(const QuantileGrid&, const QuantileGrid&) = default;

private:
  QuantileGrid(std::vector<double> levels, double alpha) : levels_(std::move(levels)), alpha_(alpha) {}
  std::vector<double> levels_;
  double alpha_ = 1e-2;
};

using GridPtr = std::shared_ptr<const QuantileGrid>;
GridPtr make_grid(std::size_t K, double alpha = 1e-2);

enum class ValueSpace { log, linear };
std::string_view to_string(ValueSpace s);
ValueSpace parse_value_space(std::string_view s);

// Non-decreasing quantile values on a shared grid. The constructor rejects
// vectors that violate the ordering.
class PredictedDistribution {
public:
  PredictedDistribution(GridPtr grid, std::vector<double> quantiles, ValueSpace space);

  const QuantileGrid& grid() const { return *grid_; }
  const GridPtr& grid_ptr() const { return grid_; }
  std::span<const double> quantiles() const { return q_; }
  double operator[](std::size_t k) const { return q_[k]; }
  std::size_t size() const { return q_.size(); }
  ValueSpace space() const { return space_; }

  // Elementwise exp of a log-space distribution.
  PredictedDistribution to_linear() const;

  Json to_json() const;
  static PredictedDistribution from_json(const Json& j);

private:
  GridPtr grid_;
  std::vector<double> q_;
  ValueSpace space_;
};

double softplus(double x);
double sigmoid(double x);
// alpha * log(1 + exp(x / alpha)), stable for any finite x / alpha.
double softplus_alpha(double x, double alpha);

// tau (y - q) + relu(q - y)
double pinball(double q, double y, double tau);
// Subgradient in q; -tau at the kink.
double pinball_grad(double q, double y, double tau);

struct LossGrad {
  double loss;
  double grad;  // dL/dq
};

// tau (y - q) + softplus_alpha(q - y); alpha > 0.
LossGrad smoothed_pinball(double q, double y, double tau, double alpha);

// Mean smoothed pinball over the grid; grad has one entry per quantile.
double batch_quantile_loss(std::span<const double> q, double y, const QuantileGrid& grid,
                           std::span<double> grad = {});
double batch_quantile_loss(const PredictedDistribution& dist, double y, std::vector<double>* grad = nullptr);
// Mean exact pinball over the grid.
double mean_pinball(std::span<const double> q, double y, std::span<const double> levels);

enum class DeltaActivation { softplus, relu };
std::string_view to_string(DeltaActivation a);
DeltaActivation parse_delta_activation(std::string_view s);

// q_0 = z_0, q_{i} = q_{i-1} + act(z_i).
void delta_encode(std::span<const double> z, DeltaActivation act, std::span<double> q);
std::vector<double> delta_encode(std::span<const double> z, DeltaActivation act);
// Given dL/dq, writes dL/dz.
void delta_encode_backward(std::span<const double> z, std::span<const double> dq,
                           DeltaActivation act, std::span<double> dz);

// Piecewise-linear in tau between knots; clamped outside [tau_1, tau_K].
double interpolate_quantile(const PredictedDistribution& dist, double tau);
double interpolate_quantile(std::span<const double> levels, std::span<const double> q, double tau);
double median(const PredictedDistribution& dist);

// CDF through the points (x_k, p_k), 0 below x_1, 1 at and above x_K.
// Right-continuous; flat runs of equal x produce jumps.
class PiecewiseLinearCdf {
public:
  PiecewiseLinearCdf(std::vector<double> knots, std::vector<double> probs);

  double operator()(double r) const;
  std::span<const double> knots() const { return x_; }
  std::span<const double> probs() const { return p_; }

private:
  std::vector<double> x_;
  std::vector<double> p_;
};

PiecewiseLinearCdf cdf_from_quantiles(const PredictedDistribution& dist);

// Exact integral of (F(r) - 1{y <= r})^2 over the real line.
double crps(const PiecewiseLinearCdf& cdf, double y);
double crps(const PredictedDistribution& dist, double y);

struct DensityPoint {
  double value;
  double density;
};

// Silverman-style rule on the quantile values, with fallbacks for
// degenerate spreads so the result is always > 0.
double default_bandwidth(const PredictedDistribution& dist);

// Equal-weight Gaussian KDE over the quantile values on a uniform grid
// spanning [q_1 - 3h, q_K + 3h].
std::vector<DensityPoint> density_curve(const PredictedDistribution& dist, double bandwidth,
                                        std::size_t grid_points = 512);

std::string density_csv(std::span<const DensityPoint> curve);

struct SvgMarker {
  double value;
  std::string label;
  std::string color;
};
std::string density_svg(std::span<const DensityPoint> curve, std::span<const SvgMarker> markers,
                        std::string_view title);

}  // namespace pricequant
