#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "pricequant/error.hpp"
#include "pricequant/quantile.hpp"

namespace pricequant {

double default_bandwidth(const PredictedDistribution& dist) {
  const auto q = dist.quantiles();
  const double n = static_cast<double>(q.size());
  double mean = 0.0;
  for (double v : q) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : q) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (n - 1.0));
  const double iqr = interpolate_quantile(dist, 0.75) - interpolate_quantile(dist, 0.25);
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  double h = 0.9 * spread * std::pow(n, -0.2);
  if (!(h > 0.0) || !std::isfinite(h)) {
    // Point mass: keep a visible bump proportional to the location.
    h = 1e-3 * std::max(1.0, std::abs(median(dist)));
  }
  return h;
}

std::vector<DensityPoint> density_curve(const PredictedDistribution& dist, double bandwidth,
                                        std::size_t grid_points) {
  if (!(bandwidth > 0.0) || !std::isfinite(bandwidth)) throw ConfigError("bandwidth must be > 0");
  if (grid_points < 2) throw ConfigError("density grid needs at least 2 points");
  const auto q = dist.quantiles();
  const double lo = q.front() - 3.0 * bandwidth;
  const double hi = q.back() + 3.0 * bandwidth;
  const double step = (hi - lo) / static_cast<double>(grid_points - 1);
  const double norm = 1.0 / (static_cast<double>(q.size()) * bandwidth * std::sqrt(2.0 * std::numbers::pi));
  std::vector<DensityPoint> out(grid_points);
  for (std::size_t i = 0; i < grid_points; ++i) {
    const double x = i + 1 == grid_points ? hi : lo + step * static_cast<double>(i);
    double s = 0.0;
    for (double v : q) {
      const double u = (x - v) / bandwidth;
      s += std::exp(-0.5 * u * u);
    }
    out[i] = {x, s * norm};
  }
  return out;
}

std::string density_csv(std::span<const DensityPoint> curve) {
  std::string out = "value,density\n";
  char buf[64];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", p.value, p.density);
    out += buf;
  }
  return out;
}

std::string density_svg(std::span<const DensityPoint> curve, std::span<const SvgMarker> markers,
                        std::string_view title) {
  constexpr double W = 640, H = 360, M = 40;
  if (curve.empty()) throw UsageError("empty density curve");
  const double x0 = curve.front().value, x1 = curve.back().value;
  double ymax = 0.0;
  for (const auto& p : curve) ymax = std::max(ymax, p.density);
  if (ymax <= 0.0) ymax = 1.0;
  const double xspan = x1 > x0 ? x1 - x0 : 1.0;
  auto sx = [&](double x) { return M + (x - x0) / xspan * (W - 2 * M); };
  auto sy = [&](double y) { return H - M - y / ymax * (H - 2 * M); };

  std::ostringstream os;
  os.precision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << M << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"13\">" << title << "</text>\n";
  os << "<line x1=\"" << M << "\" y1=\"" << H - M << "\" x2=\"" << W - M << "\" y2=\"" << H - M
     << "\" stroke=\"black\"/>\n";
  os << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (const auto& p : curve) os << sx(p.value) << ',' << sy(p.density) << ' ';
  os << "\"/>\n";
  for (const auto& m : markers) {
    const double x = sx(std::clamp(m.value, x0, x1));
    os << "<line x1=\"" << x << "\" y1=\"" << M << "\" x2=\"" << x << "\" y2=\"" << H - M << "\" stroke=\""
       << m.color << "\" stroke-dasharray=\"4 3\"/>\n";
    os << "<text x=\"" << x + 3 << "\" y=\"" << M + 12 << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\""
       << m.color << "\">" << m.label << "</text>\n";
  }
  os << "<text x=\"" << M << "\" y=\"" << H - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">" << x0
     << "</text>\n";
  os << "<text x=\"" << W - M << "\" y=\"" << H - 12
     << "\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">" << x1 << "</text>\n";
  os << "</svg>\n";
  return os.str();
}

}  // namespace pricequant
