#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "pricequant/features.hpp"
#include "pricequant/io.hpp"
#include "pricequant/quantile.hpp"

namespace pricequant {

struct RidgeModel {
  std::vector<double> w;
  double b = 0.0;
  double lambda = 0.0;

  double predict_log(const FeatureVector& x) const;
};

// Solves (Xc'Xc + lambda I) w = Xc'yc on centered data with a Cholesky
// factorization; the intercept restores the means.
RidgeModel ridge_fit(std::span<const FeatureVector> X, std::span<const double> y_log, double lambda);

enum class Metric { euclidean, cosine };
std::string_view to_string(Metric m);
Metric parse_metric(std::string_view s);

struct Neighbor {
  std::size_t index;
  double distance;
};

// Exact brute-force neighbor search over sparse rows.
class NeighborIndex {
public:
  NeighborIndex() = default;
  // Rows are L2-normalized when `normalize` is set or the metric is cosine.
  NeighborIndex(std::vector<FeatureVector> rows, std::vector<double> y_log, Metric metric = Metric::euclidean,
                bool normalize = true);

  // Rows that were prepared by an index with the same settings (no renormalization).
  static NeighborIndex from_prepared(std::vector<FeatureVector> rows, std::vector<double> y_log, Metric metric,
                                     bool normalize);

  std::size_t size() const { return rows_.size(); }
  std::size_t dim() const { return dim_; }
  Metric metric() const { return metric_; }
  bool normalized() const { return normalize_; }
  std::span<const FeatureVector> rows() const { return rows_; }
  std::span<const double> targets() const { return y_; }

  // All rows ordered by (distance, index).
  std::vector<Neighbor> ranked(const FeatureVector& x) const;
  std::vector<Neighbor> nearest(const FeatureVector& x, std::size_t k) const;

private:
  FeatureVector prepare(const FeatureVector& x) const;

  std::vector<FeatureVector> rows_;
  std::vector<double> y_;
  std::vector<double> sq_norms_;
  Metric metric_ = Metric::euclidean;
  bool normalize_ = true;
  std::size_t dim_ = 0;
};

// Linear interpolation between order statistics at position (n - 1) tau.
double empirical_quantile(std::span<const double> sorted, double tau);
std::vector<double> empirical_quantiles(std::vector<double> values, std::span<const double> levels);

// Neighbor targets for the radius rule: everything within `radius`, padded
// to the `min_neighbors` nearest when too few fall inside.
std::vector<std::size_t> radius_selection(std::span<const Neighbor> ranked, double radius, std::size_t min_neighbors);

// Price-space distributions from the neighbors' log targets.
PredictedDistribution knn_quantiles(const NeighborIndex& index, const FeatureVector& x, std::size_t k, GridPtr grid);
PredictedDistribution rknn_quantiles(const NeighborIndex& index, const FeatureVector& x, double radius,
                                     std::size_t min_neighbors, GridPtr grid);

// Deterministic fold assignment: a seeded permutation cut into near-equal parts.
std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds, std::uint64_t seed);

struct CvEntry {
  Json params;
  std::vector<double> fold_scores;
  double mean = 0.0;
};

struct CvReport {
  std::string model;
  std::string score;  // what fold_scores measure (lower is better)
  std::vector<CvEntry> entries;
  std::size_t best = 0;

  Json to_json() const;
};

// Ridge: fold score is the mean squared log error.
CvReport cv_ridge(std::span<const FeatureVector> X, std::span<const double> y_log, std::span<const double> lambdas,
                  std::size_t folds, std::uint64_t seed);
// kNN / radius-kNN: fold score is the mean exact pinball loss over the grid in
// log space.
CvReport cv_knn(std::span<const FeatureVector> X, std::span<const double> y_log, std::span<const std::size_t> ks,
                const QuantileGrid& grid, Metric metric, std::size_t folds, std::uint64_t seed);
CvReport cv_rknn(std::span<const FeatureVector> X, std::span<const double> y_log, std::span<const double> radii,
                 std::span<const std::size_t> min_neighbors, const QuantileGrid& grid, Metric metric,
                 std::size_t folds, std::uint64_t seed);

enum class BaselineKind { ridge, knn, rknn };
std::string_view to_string(BaselineKind k);
BaselineKind parse_baseline_kind(std::string_view s);

// A fitted baseline together with the featurizer it was fitted on.
struct Baseline {
  static constexpr std::uint32_t kFormatVersion = 1;

  BaselineKind kind = BaselineKind::ridge;
  Featurizer featurizer;
  RidgeModel ridge;
  NeighborIndex index;
  std::size_t k = 0;
  double radius = 0.0;
  std::size_t min_neighbors = 0;
  GridPtr grid;
};

Container baseline_to_container(const Baseline& b);
Baseline baseline_from_container(const Container& c);
void save_baseline(const std::filesystem::path& path, const Baseline& b);
Baseline load_baseline(const std::filesystem::path& path);

}  // namespace pricequant
