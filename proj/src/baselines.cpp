#include "pricequant/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Dense>

#include "pricequant/error.hpp"
#include "pricequant/kernels.hpp"
#include "pricequant/rng.hpp"

namespace pricequant {

double RidgeModel::predict_log(const FeatureVector& x) const {
  if (x.dim() != w.size()) throw ShapeError("ridge input dimension mismatch");
  const auto idx = x.indices();
  const auto val = x.values();
  return b + kernels::sparse_dot(idx, val, w);
}

RidgeModel ridge_fit(std::span<const FeatureVector> X, std::span<const double> y_log, double lambda) {
  if (X.size() != y_log.size()) throw ShapeError("ridge: row count differs from target count");
  if (X.empty()) throw ConfigError("ridge: no training rows");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("ridge: lambda must be >= 0");
  const std::size_t d = X.front().dim();
  const double n = static_cast<double>(X.size());

  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  double ybar = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (X[i].dim() != d) throw ShapeError("ridge: rows have different dimensions");
    const auto idx = X[i].indices();
    const auto val = X[i].values();
    for (std::size_t a = 0; a < idx.size(); ++a) mu[idx[a]] += val[a];
    ybar += y_log[i];
  }
  mu /= n;
  ybar /= n;

  // Upper triangle of sum x x', then the centering correction.
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < X.size(); ++i) {
    const auto idx = X[i].indices();
    const auto val = X[i].values();
    const double yc = y_log[i] - ybar;
    for (std::size_t a = 0; a < idx.size(); ++a) {
      rhs[idx[a]] += val[a] * yc;
      for (std::size_t c = a; c < idx.size(); ++c) G(idx[a], idx[c]) += val[a] * val[c];
    }
  }
  G.triangularView<Eigen::StrictlyLower>() = G.transpose().triangularView<Eigen::StrictlyLower>();
  G.noalias() -= n * mu * mu.transpose();
  G.diagonal().array() += lambda;

  Eigen::LLT<Eigen::MatrixXd> llt(G);
  bool ok = llt.info() == Eigen::Success;
  if (ok) {
    const Eigen::ArrayXd diag = llt.matrixLLT().diagonal().array().square();
    ok = diag.minCoeff() > 1e-13 * std::max(1.0, diag.maxCoeff());
  }
  if (!ok) {
    throw SolverError(lambda == 0.0 ? "ridge: normal equations are singular at lambda=0; use lambda > 0"
                                    : "ridge: normal equations are not positive definite");
  }
  const Eigen::VectorXd w = llt.solve(rhs);
  if (!w.allFinite()) throw SolverError("ridge: solution is not finite");

  RidgeModel m;
  m.lambda = lambda;
  m.w.assign(w.data(), w.data() + w.size());
  m.b = ybar - mu.dot(w);
  return m;
}

std::string_view to_string(Metric m) { return m == Metric::cosine ? "cosine" : "euclidean"; }

Metric parse_metric(std::string_view s) {
  if (s == "euclidean") return Metric::euclidean;
  if (s == "cosine") return Metric::cosine;
  throw ConfigError("unknown metric '" + std::string(s) + "'");
}

NeighborIndex::NeighborIndex(std::vector<FeatureVector> rows, std::vector<double> y_log, Metric metric,
                             bool normalize)
    : y_(std::move(y_log)), metric_(metric), normalize_(normalize || metric == Metric::cosine) {
  if (rows.size() != y_.size()) throw ShapeError("neighbor index: row count differs from target count");
  if (!rows.empty()) dim_ = rows.front().dim();
  rows_.reserve(rows.size());
  sq_norms_.reserve(rows.size());
  for (auto& r : rows) {
    if (r.dim() != dim_) throw ShapeError("neighbor index: rows have different dimensions");
    rows_.push_back(normalize_ ? r.normalized() : std::move(r));
    sq_norms_.push_back(rows_.back().norm() * rows_.back().norm());
  }
}

NeighborIndex NeighborIndex::from_prepared(std::vector<FeatureVector> rows, std::vector<double> y_log, Metric metric,
                                          bool normalize) {
  NeighborIndex idx(std::move(rows), std::move(y_log), Metric::euclidean, false);
  idx.metric_ = metric;
  idx.normalize_ = normalize || metric == Metric::cosine;
  return idx;
}

FeatureVector NeighborIndex::prepare(const FeatureVector& x) const {
  if (x.dim() != dim_) throw ShapeError("neighbor query dimension mismatch");
  return normalize_ ? x.normalized() : x;
}

std::vector<Neighbor> NeighborIndex::ranked(const FeatureVector& x) const {
  if (rows_.empty()) throw StateError("neighbor index is empty");
  const FeatureVector q = prepare(x);
  std::vector<double> dense(dim_, 0.0);
  q.scatter(dense);
  const double qn = q.norm();
  std::vector<Neighbor> out(rows_.size());
  for (std::size_t i = 0; i < rows_.size(); ++i) {
    const double d = kernels::sparse_dot(rows_[i].indices(), rows_[i].values(), dense);
    double dist;
    if (metric_ == Metric::cosine) {
      const double denom = qn * rows_[i].norm();
      dist = denom > 0.0 ? 1.0 - std::clamp(d / denom, -1.0, 1.0) : 1.0;
    } else {
      dist = std::sqrt(std::max(0.0, qn * qn + sq_norms_[i] - 2.0 * d));
    }
    out[i] = {i, dist};
  }
  std::sort(out.begin(), out.end(), [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
  });
  return out;
}

std::vector<Neighbor> NeighborIndex::nearest(const FeatureVector& x, std::size_t k) const {
  if (rows_.empty()) throw StateError("neighbor index is empty");
  if (k < 1 || k > rows_.size()) throw ConfigError("k must be in [1, index size]");
  auto all = ranked(x);
  all.resize(k);
  return all;
}

double empirical_quantile(std::span<const double> sorted, double tau) {
  if (sorted.empty()) throw DomainError("empirical quantile of an empty sample");
  const double pos = tau * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return frac == 0.0 ? sorted[lo] : sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

std::vector<double> empirical_quantiles(std::vector<double> values, std::span<const double> levels) {
  std::sort(values.begin(), values.end());
  std::vector<double> q(levels.size());
  for (std::size_t k = 0; k < levels.size(); ++k) q[k] = empirical_quantile(values, levels[k]);
  // Interpolation can round a hair out of order on equal neighbors.
  for (std::size_t k = 1; k < q.size(); ++k) q[k] = std::max(q[k], q[k - 1]);
  return q;
}

std::vector<std::size_t> radius_selection(std::span<const Neighbor> ranked, double radius,
                                          std::size_t min_neighbors) {
  if (!(radius > 0.0)) throw ConfigError("radius must be > 0");
  if (min_neighbors < 1) throw ConfigError("min_neighbors must be >= 1");
  std::size_t n = 0;
  while (n < ranked.size() && ranked[n].distance <= radius) ++n;
  n = std::min(std::max(n, min_neighbors), ranked.size());
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = ranked[i].index;
  return out;
}

namespace {

PredictedDistribution from_selection(const NeighborIndex& index, std::span<const std::size_t> sel, GridPtr grid) {
  std::vector<double> vals(sel.size());
  for (std::size_t i = 0; i < sel.size(); ++i) vals[i] = index.targets()[sel[i]];
  auto q = empirical_quantiles(std::move(vals), grid->levels());
  for (double& v : q) v = std::exp(v);
  return PredictedDistribution(std::move(grid), std::move(q), ValueSpace::linear);
}

}  // namespace

PredictedDistribution knn_quantiles(const NeighborIndex& index, const FeatureVector& x, std::size_t k, GridPtr grid) {
  const auto nb = index.nearest(x, k);
  std::vector<std::size_t> sel(nb.size());
  for (std::size_t i = 0; i < nb.size(); ++i) sel[i] = nb[i].index;
  return from_selection(index, sel, std::move(grid));
}

PredictedDistribution rknn_quantiles(const NeighborIndex& index, const FeatureVector& x, double radius,
                                     std::size_t min_neighbors, GridPtr grid) {
  if (min_neighbors > index.size() && index.size() > 0) throw ConfigError("min_neighbors exceeds index size");
  const auto ranked = index.ranked(x);
  return from_selection(index, radius_selection(ranked, radius, min_neighbors), std::move(grid));
}

std::vector<std::size_t> fold_assignment(std::size_t n, std::size_t folds, std::uint64_t seed) {
  if (folds < 2 || folds > n) throw ConfigError("fold count must be in [2, n]");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<std::size_t> fold(n);
  for (std::size_t i = 0; i < n; ++i) fold[perm[i]] = i * folds / n;
  return fold;
}

Json CvReport::to_json() const {
  Json rows = Json::array();
  for (const auto& e : entries) rows.push_back({{"params", e.params}, {"fold_scores", e.fold_scores}, {"mean", e.mean}});
  return {{"model", model}, {"score", score}, {"entries", rows}, {"best", best},
          {"best_params", entries.empty() ? Json() : entries[best].params}};
}

namespace {

struct FoldData {
  std::vector<FeatureVector> train_x, val_x;
  std::vector<double> train_y, val_y;
};

FoldData fold_data(std::span<const FeatureVector> X, std::span<const double> y, std::span<const std::size_t> fold,
                   std::size_t f) {
  FoldData d;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (fold[i] == f) {
      d.val_x.push_back(X[i]);
      d.val_y.push_back(y[i]);
    } else {
      d.train_x.push_back(X[i]);
      d.train_y.push_back(y[i]);
    }
  }
  return d;
}

void finish(CvReport& r) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < r.entries.size(); ++i) {
    auto& e = r.entries[i];
    e.mean = std::accumulate(e.fold_scores.begin(), e.fold_scores.end(), 0.0) /
             static_cast<double>(e.fold_scores.size());
    if (e.mean < best) {
      best = e.mean;
      r.best = i;
    }
  }
  if (!std::isfinite(best)) throw SolverError("cross-validation produced no finite score");
}

}  // namespace

CvReport cv_ridge(std::span<const FeatureVector> X, std::span<const double> y_log, std::span<const double> lambdas,
                  std::size_t folds, std::uint64_t seed) {
  if (lambdas.empty()) throw ConfigError("empty lambda grid");
  const auto fold = fold_assignment(X.size(), folds, seed);
  CvReport r;
  r.model = "ridge";
  r.score = "mse_log";
  for (double lam : lambdas) r.entries.push_back({{{"lambda", lam}}, {}, 0.0});
  for (std::size_t f = 0; f < folds; ++f) {
    const auto d = fold_data(X, y_log, fold, f);
    for (std::size_t j = 0; j < lambdas.size(); ++j) {
      double score;
      try {
        const auto m = ridge_fit(d.train_x, d.train_y, lambdas[j]);
        double s = 0.0;
        for (std::size_t i = 0; i < d.val_x.size(); ++i) {
          const double e = m.predict_log(d.val_x[i]) - d.val_y[i];
          s += e * e;
        }
        score = s / static_cast<double>(d.val_x.size());
      } catch (const SolverError&) {
        score = std::numeric_limits<double>::infinity();
      }
      r.entries[j].fold_scores.push_back(score);
    }
  }
  finish(r);
  return r;
}

CvReport cv_knn(std::span<const FeatureVector> X, std::span<const double> y_log, std::span<const std::size_t> ks,
                const QuantileGrid& grid, Metric metric, std::size_t folds, std::uint64_t seed) {
  if (ks.empty()) throw ConfigError("empty k grid");
  const auto fold = fold_assignment(X.size(), folds, seed);
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());
  CvReport r;
  r.model = "knn";
  r.score = "mean_pinball_log";
  for (auto k : ks) r.entries.push_back({{{"k", k}}, {}, 0.0});
  for (std::size_t f = 0; f < folds; ++f) {
    auto d = fold_data(X, y_log, fold, f);
    const NeighborIndex index(std::move(d.train_x), d.train_y, metric);
    std::vector<double> sums(ks.size(), 0.0);
    for (std::size_t i = 0; i < d.val_x.size(); ++i) {
      const auto nb = index.nearest(d.val_x[i], std::min(kmax, index.size()));
      for (std::size_t j = 0; j < ks.size(); ++j) {
        const std::size_t k = std::min(ks[j], nb.size());
        std::vector<double> vals(k);
        for (std::size_t a = 0; a < k; ++a) vals[a] = index.targets()[nb[a].index];
        const auto q = empirical_quantiles(std::move(vals), grid.levels());
        sums[j] += mean_pinball(q, d.val_y[i], grid.levels());
      }
    }
    for (std::size_t j = 0; j < ks.size(); ++j) {
      r.entries[j].fold_scores.push_back(ks[j] > index.size() ? std::numeric_limits<double>::infinity()
                                                              : sums[j] / static_cast<double>(d.val_x.size()));
    }
  }
  finish(r);
  return r;
}

CvReport cv_rknn(std::span<const FeatureVector> X, std::span<const double> y_log, std::span<const double> radii,
                 std::span<const std::size_t> min_neighbors, const QuantileGrid& grid, Metric metric,
                 std::size_t folds, std::uint64_t seed) {
  if (radii.empty() || min_neighbors.empty()) throw ConfigError("empty radius or min_neighbors grid");
  const auto fold = fold_assignment(X.size(), folds, seed);
  CvReport r;
  r.model = "rknn";
  r.score = "mean_pinball_log";
  for (double rad : radii) {
    for (auto m : min_neighbors) r.entries.push_back({{{"radius", rad}, {"min_neighbors", m}}, {}, 0.0});
  }
  for (std::size_t f = 0; f < folds; ++f) {
    auto d = fold_data(X, y_log, fold, f);
    const NeighborIndex index(std::move(d.train_x), d.train_y, metric);
    std::vector<double> sums(r.entries.size(), 0.0);
    for (std::size_t i = 0; i < d.val_x.size(); ++i) {
      const auto ranked = index.ranked(d.val_x[i]);
      std::size_t j = 0;
      for (double rad : radii) {
        for (auto m : min_neighbors) {
          const auto sel = radius_selection(ranked, rad, std::min(m, index.size()));
          std::vector<double> vals(sel.size());
          for (std::size_t a = 0; a < sel.size(); ++a) vals[a] = index.targets()[sel[a]];
          const auto q = empirical_quantiles(std::move(vals), grid.levels());
          sums[j++] += mean_pinball(q, d.val_y[i], grid.levels());
        }
      }
    }
    for (std::size_t j = 0; j < sums.size(); ++j) {
      r.entries[j].fold_scores.push_back(sums[j] / static_cast<double>(d.val_x.size()));
    }
  }
  finish(r);
  return r;
}

std::string_view to_string(BaselineKind k) {
  switch (k) {
    case BaselineKind::ridge: return "ridge";
    case BaselineKind::knn: return "knn";
    case BaselineKind::rknn: return "rknn";
  }
  return "ridge";
}

BaselineKind parse_baseline_kind(std::string_view s) {
  if (s == "ridge") return BaselineKind::ridge;
  if (s == "knn") return BaselineKind::knn;
  if (s == "rknn") return BaselineKind::rknn;
  throw ConfigError("unknown baseline '" + std::string(s) + "'");
}

Container baseline_to_container(const Baseline& b) {
  Container c;
  c.kind = "baseline";
  c.version = Baseline::kFormatVersion;
  c.header = {{"type", to_string(b.kind)}, {"featurizer", b.featurizer.to_json()}};
  if (b.kind == BaselineKind::ridge) {
    c.header["lambda"] = b.ridge.lambda;
    c.header["intercept"] = b.ridge.b;
    c.f64["ridge.w"] = b.ridge.w;
    return c;
  }
  c.header["grid"] = b.grid->to_json();
  c.header["metric"] = to_string(b.index.metric());
  c.header["normalize"] = b.index.normalized();
  c.header["dim"] = b.index.dim();
  c.header["k"] = b.k;
  c.header["radius"] = b.radius;
  c.header["min_neighbors"] = b.min_neighbors;
  auto& offsets = c.u32["index.offsets"];
  auto& indices = c.u32["index.indices"];
  auto& values = c.f64["index.values"];
  offsets.push_back(0);
  for (const auto& r : b.index.rows()) {
    indices.insert(indices.end(), r.indices().begin(), r.indices().end());
    values.insert(values.end(), r.values().begin(), r.values().end());
    offsets.push_back(static_cast<std::uint32_t>(indices.size()));
  }
  c.f64["index.targets"].assign(b.index.targets().begin(), b.index.targets().end());
  return c;
}

Baseline baseline_from_container(const Container& c) {
  if (c.kind != "baseline") throw CheckpointError("container holds a '" + c.kind + "', not a baseline");
  if (c.version != Baseline::kFormatVersion) {
    throw CheckpointError("unsupported baseline format version " + std::to_string(c.version));
  }
  try {
    const auto& h = c.header;
    Baseline b;
    b.kind = parse_baseline_kind(h.at("type").get<std::string>());
    b.featurizer = Featurizer::from_json(h.at("featurizer"));
    if (b.kind == BaselineKind::ridge) {
      b.ridge.lambda = h.at("lambda").get<double>();
      b.ridge.b = h.at("intercept").get<double>();
      b.ridge.w = c.f64.at("ridge.w");
      if (b.ridge.w.size() != b.featurizer.output_dim()) throw CheckpointError("ridge weights do not match featurizer");
      return b;
    }
    b.grid = std::make_shared<const QuantileGrid>(QuantileGrid::from_json(h.at("grid")));
    b.k = h.at("k").get<std::size_t>();
    b.radius = h.at("radius").get<double>();
    b.min_neighbors = h.at("min_neighbors").get<std::size_t>();
    const auto dim = h.at("dim").get<std::size_t>();
    if (dim != b.featurizer.output_dim()) throw CheckpointError("neighbor index does not match featurizer");
    const auto& offsets = c.u32.at("index.offsets");
    const auto& indices = c.u32.at("index.indices");
    const auto& values = c.f64.at("index.values");
    const auto& targets = c.f64.at("index.targets");
    if (offsets.size() != targets.size() + 1 || indices.size() != values.size() || offsets.back() != indices.size()) {
      throw CheckpointError("neighbor index arrays are inconsistent");
    }
    std::vector<FeatureVector> rows;
    rows.reserve(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
      rows.emplace_back(dim, std::vector<std::uint32_t>(indices.begin() + offsets[i], indices.begin() + offsets[i + 1]),
                        std::vector<double>(values.begin() + offsets[i], values.begin() + offsets[i + 1]));
    }
    // Stored rows are already prepared; normalizing again could perturb them.
    const auto metric = parse_metric(h.at("metric").get<std::string>());
    b.index = NeighborIndex::from_prepared(std::move(rows), targets, metric, h.at("normalize").get<bool>());
    return b;
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("malformed baseline header: ") + e.what());
  } catch (const std::out_of_range&) {
    throw CheckpointError("baseline is missing an array");
  } catch (const ShapeError& e) {
    throw CheckpointError(std::string("corrupt baseline index: ") + e.what());
  }
}

void save_baseline(const std::filesystem::path& path, const Baseline& b) {
  save_container(path, baseline_to_container(b));
}

Baseline load_baseline(const std::filesystem::path& path) { return baseline_from_container(load_container(path)); }

}  // namespace pricequant
