#include "pricequant/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pricequant/error.hpp"

namespace pricequant {

QuantileGrid QuantileGrid::make(std::size_t K, double alpha) {
  if (K < 2) throw ConfigError("quantile grid needs K >= 2");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("smoothing alpha must be > 0");
  std::vector<double> levels(K);
  const double twoK = 2.0 * static_cast<double>(K);
  for (std::size_t k = 0; k < K; ++k) levels[k] = (2.0 * static_cast<double>(k) + 1.0) / twoK;
  return QuantileGrid(std::move(levels), alpha);
}

QuantileGrid QuantileGrid::from_levels(std::vector<double> levels, double alpha) {
  if (levels.size() < 2) throw ConfigError("quantile grid needs K >= 2");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("smoothing alpha must be > 0");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    if (!(levels[k] > 0.0 && levels[k] < 1.0)) throw ConfigError("quantile levels must lie in (0, 1)");
    if (k > 0 && !(levels[k] > levels[k - 1])) throw ConfigError("quantile levels must be strictly increasing");
  }
  return QuantileGrid(std::move(levels), alpha);
}

Json QuantileGrid::to_json() const { return {{"K", size()}, {"alpha", alpha_}, {"levels", levels_}}; }

QuantileGrid QuantileGrid::from_json(const Json& j) {
  auto g = from_levels(j.at("levels").get<std::vector<double>>(), j.at("alpha").get<double>());
  if (g.size() != j.at("K").get<std::size_t>()) throw ConfigError("grid K does not match its levels");
  return g;
}

GridPtr make_grid(std::size_t K, double alpha) {
  return std::make_shared<const QuantileGrid>(QuantileGrid::make(K, alpha));
}

std::string_view to_string(ValueSpace s) { return s == ValueSpace::log ? "log" : "linear"; }

ValueSpace parse_value_space(std::string_view s) {
  if (s == "log") return ValueSpace::log;
  if (s == "linear") return ValueSpace::linear;
  throw ValidationError("unknown value space '" + std::string(s) + "'");
}

PredictedDistribution::PredictedDistribution(GridPtr grid, std::vector<double> quantiles, ValueSpace space)
    : grid_(std::move(grid)), q_(std::move(quantiles)), space_(space) {
  if (!grid_) throw UsageError("distribution without a grid");
  if (q_.size() != grid_->size()) throw ShapeError("quantile count does not match grid size");
  for (std::size_t k = 0; k < q_.size(); ++k) {
    if (std::isnan(q_[k])) throw DomainError("NaN quantile");
    if (k > 0 && q_[k] < q_[k - 1]) {
      std::ostringstream os;
      os << "quantiles decrease at index " << k << " (" << q_[k - 1] << " > " << q_[k] << ")";
      throw DomainError(os.str());
    }
  }
}

PredictedDistribution PredictedDistribution::to_linear() const {
  if (space_ == ValueSpace::linear) return *this;
  std::vector<double> out(q_.size());
  std::transform(q_.begin(), q_.end(), out.begin(), [](double v) { return std::exp(v); });
  return PredictedDistribution(grid_, std::move(out), ValueSpace::linear);
}

Json PredictedDistribution::to_json() const {
  return {{"tau", grid_->levels()}, {"q", q_}, {"space", to_string(space_)}, {"alpha", grid_->alpha()}};
}

PredictedDistribution PredictedDistribution::from_json(const Json& j) {
  const double alpha = j.contains("alpha") ? j.at("alpha").get<double>() : 1e-2;
  auto grid = std::make_shared<const QuantileGrid>(
      QuantileGrid::from_levels(j.at("tau").get<std::vector<double>>(), alpha));
  return PredictedDistribution(std::move(grid), j.at("q").get<std::vector<double>>(),
                               parse_value_space(j.at("space").get<std::string>()));
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus_alpha(double x, double alpha) {
  const double t = x / alpha;
  return x > 0.0 ? x + alpha * std::log1p(std::exp(-t)) : alpha * std::log1p(std::exp(t));
}

double pinball(double q, double y, double tau) {
  const double r = q - y;
  return tau * (y - q) + (r > 0.0 ? r : 0.0);
}

double pinball_grad(double q, double y, double tau) { return q > y ? 1.0 - tau : -tau; }

LossGrad smoothed_pinball(double q, double y, double tau, double alpha) {
  const double r = q - y;
  return {tau * (y - q) + softplus_alpha(r, alpha), sigmoid(r / alpha) - tau};
}

double batch_quantile_loss(std::span<const double> q, double y, const QuantileGrid& grid,
                           std::span<double> grad) {
  const std::size_t K = grid.size();
  if (q.size() != K) throw ShapeError("quantile count does not match grid size");
  if (!grad.empty() && grad.size() != K) throw ShapeError("gradient buffer size mismatch");
  const double invK = 1.0 / static_cast<double>(K);
  const double alpha = grid.alpha();
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    const auto lg = smoothed_pinball(q[k], y, grid[k], alpha);
    total += lg.loss;
    if (!grad.empty()) grad[k] = lg.grad * invK;
  }
  return total * invK;
}

double batch_quantile_loss(const PredictedDistribution& dist, double y, std::vector<double>* grad) {
  if (grad != nullptr) grad->assign(dist.size(), 0.0);
  return batch_quantile_loss(dist.quantiles(), y, dist.grid(),
                             grad != nullptr ? std::span<double>(*grad) : std::span<double>());
}

double mean_pinball(std::span<const double> q, double y, std::span<const double> levels) {
  if (q.size() != levels.size()) throw ShapeError("quantile count does not match grid size");
  double total = 0.0;
  for (std::size_t k = 0; k < q.size(); ++k) total += pinball(q[k], y, levels[k]);
  return total / static_cast<double>(q.size());
}

std::string_view to_string(DeltaActivation a) { return a == DeltaActivation::relu ? "relu" : "softplus"; }

DeltaActivation parse_delta_activation(std::string_view s) {
  if (s == "softplus") return DeltaActivation::softplus;
  if (s == "relu") return DeltaActivation::relu;
  throw ConfigError("unknown delta activation '" + std::string(s) + "'");
}

void delta_encode(std::span<const double> z, DeltaActivation act, std::span<double> q) {
  if (z.empty()) throw ShapeError("empty head output");
  if (q.size() != z.size()) throw ShapeError("delta encode output size mismatch");
  double acc = z[0];
  q[0] = acc;
  for (std::size_t i = 1; i < z.size(); ++i) {
    acc += act == DeltaActivation::relu ? std::max(z[i], 0.0) : softplus(z[i]);
    q[i] = acc;
  }
}

std::vector<double> delta_encode(std::span<const double> z, DeltaActivation act) {
  std::vector<double> q(z.size());
  delta_encode(z, act, q);
  return q;
}

void delta_encode_backward(std::span<const double> z, std::span<const double> dq,
                           DeltaActivation act, std::span<double> dz) {
  const std::size_t K = z.size();
  if (dq.size() != K || dz.size() != K) throw ShapeError("delta encode gradient size mismatch");
  // dq_i/dz_j = act'(z_j) for i >= j > 0; dq_i/dz_0 = 1.
  double tail = 0.0;
  for (std::size_t j = K; j-- > 1;) {
    tail += dq[j];
    const double d = act == DeltaActivation::relu ? (z[j] > 0.0 ? 1.0 : 0.0) : sigmoid(z[j]);
    dz[j] = tail * d;
  }
  dz[0] = tail + dq[0];
}

double interpolate_quantile(std::span<const double> levels, std::span<const double> q, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("query level must lie in (0, 1)");
  const std::size_t K = levels.size();
  if (q.size() != K || K == 0) throw ShapeError("quantile/level size mismatch");
  if (tau <= levels[0]) return q[0];
  if (tau >= levels[K - 1]) return q[K - 1];
  const auto it = std::upper_bound(levels.begin(), levels.end(), tau);
  const auto hi = static_cast<std::size_t>(it - levels.begin());
  const std::size_t lo = hi - 1;
  const double w = (tau - levels[lo]) / (levels[hi] - levels[lo]);
  return q[lo] + w * (q[hi] - q[lo]);
}

double interpolate_quantile(const PredictedDistribution& dist, double tau) {
  return interpolate_quantile(dist.grid().levels(), dist.quantiles(), tau);
}

double median(const PredictedDistribution& dist) { return interpolate_quantile(dist, 0.5); }

PiecewiseLinearCdf::PiecewiseLinearCdf(std::vector<double> knots, std::vector<double> probs)
    : x_(std::move(knots)), p_(std::move(probs)) {
  if (x_.empty() || x_.size() != p_.size()) throw ShapeError("CDF knots/probabilities mismatch");
  for (std::size_t k = 0; k < x_.size(); ++k) {
    if (!std::isfinite(x_[k])) throw DomainError("non-finite CDF knot");
    if (!(p_[k] >= 0.0 && p_[k] <= 1.0)) throw DomainError("CDF probabilities must lie in [0, 1]");
    if (k > 0 && (x_[k] < x_[k - 1] || p_[k] < p_[k - 1])) throw DomainError("CDF knots must be non-decreasing");
  }
}

double PiecewiseLinearCdf::operator()(double r) const {
  if (r < x_.front()) return 0.0;
  if (r >= x_.back()) return 1.0;
  // Last knot <= r; the next one is strictly greater.
  const auto it = std::upper_bound(x_.begin(), x_.end(), r);
  const auto hi = static_cast<std::size_t>(it - x_.begin());
  const std::size_t lo = hi - 1;
  return p_[lo] + (r - x_[lo]) / (x_[hi] - x_[lo]) * (p_[hi] - p_[lo]);
}

PiecewiseLinearCdf cdf_from_quantiles(const PredictedDistribution& dist) {
  const auto lv = dist.grid().levels();
  const auto q = dist.quantiles();
  return PiecewiseLinearCdf(std::vector<double>(q.begin(), q.end()), std::vector<double>(lv.begin(), lv.end()));
}

namespace {

// Integral over an interval of length len of g(r)^2 where g is linear from a to b.
inline double sq_linear_integral(double len, double a, double b) {
  return len * (a * a + a * b + b * b) / 3.0;
}

}  // namespace

double crps(const PiecewiseLinearCdf& cdf, double y) {
  const auto x = cdf.knots();
  const auto p = cdf.probs();
  const std::size_t K = x.size();
  double total = 0.0;
  // F = 0 below x_1: the integrand is 1 on [y, x_1).
  if (y < x[0]) total += x[0] - y;
  // F = 1 at and above x_K: the integrand is 1 on [x_K, y).
  if (y > x[K - 1]) total += y - x[K - 1];
  for (std::size_t k = 0; k + 1 < K; ++k) {
    const double x0 = x[k], x1 = x[k + 1];
    const double len = x1 - x0;
    if (len <= 0.0) continue;
    const double p0 = p[k], p1 = p[k + 1];
    if (y <= x0) {
      total += sq_linear_integral(len, p0 - 1.0, p1 - 1.0);
    } else if (y >= x1) {
      total += sq_linear_integral(len, p0, p1);
    } else {
      const double py = p0 + (y - x0) / len * (p1 - p0);
      total += sq_linear_integral(y - x0, p0, py);
      total += sq_linear_integral(x1 - y, py - 1.0, p1 - 1.0);
    }
  }
  return total;
}

double crps(const PredictedDistribution& dist, double y) { return crps(cdf_from_quantiles(dist), y); }

}  // namespace pricequant
