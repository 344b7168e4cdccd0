#include "pricequant/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>

#include "pricequant/error.hpp"
#include "pricequant/rng.hpp"

namespace pricequant {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double normal_inv_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_inv_cdf needs p in (0, 1)");
  // Acklam's rational approximation.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  constexpr double p_low = 0.02425;
  double x;
  if (p < p_low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - p_low) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Newton step on Phi(x) - p; the upper tail works with 1 - p for accuracy.
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  const double e = p > 0.5 ? (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2) : normal_cdf(x) - p;
  x -= e / pdf;
  return x;
}

void SynthSpec::validate() const {
  if (vocab.empty()) throw ConfigError("synthetic vocabulary is empty");
  if (tokens_per_record < 1 || tokens_per_record > vocab.size()) {
    throw ConfigError("tokens per record must be in [1, vocabulary size]");
  }
  if (!std::isfinite(mu0) || !std::isfinite(sigma0)) throw ConfigError("base parameters must be finite");
  std::vector<double> sw;
  for (const auto& t : vocab) {
    if (!std::isfinite(t.mu_w) || !std::isfinite(t.sigma_w)) throw ConfigError("token weights must be finite");
    sw.push_back(t.sigma_w);
  }
  std::sort(sw.begin(), sw.end());
  const double min_sigma = sigma0 + std::accumulate(sw.begin(), sw.begin() + static_cast<std::ptrdiff_t>(tokens_per_record), 0.0);
  if (!(min_sigma > 0.0)) throw ConfigError("some token combination has sigma <= 0");
  if (bimodal && (!(bimodal->weight > 0.0 && bimodal->weight < 1.0) || !std::isfinite(bimodal->shift))) {
    throw ConfigError("mixture weight must lie in (0, 1)");
  }
}

Json SynthSpec::to_json() const {
  Json v = Json::array();
  for (const auto& t : vocab) v.push_back({{"token", t.name}, {"mu_w", t.mu_w}, {"sigma_w", t.sigma_w}});
  Json j = {{"vocab", v},
            {"mu0", mu0},
            {"sigma0", sigma0},
            {"tokens_per_record", tokens_per_record},
            {"count", count},
            {"seed", seed},
            {"clusters", clusters}};
  if (bimodal) j["bimodal"] = {{"weight", bimodal->weight}, {"shift", bimodal->shift}};
  return j;
}

SynthSpec SynthSpec::from_json(const Json& j) {
  SynthSpec s;
  for (const auto& t : j.at("vocab")) {
    s.vocab.push_back({t.at("token").get<std::string>(), t.at("mu_w").get<double>(), t.at("sigma_w").get<double>()});
  }
  s.mu0 = j.at("mu0").get<double>();
  s.sigma0 = j.at("sigma0").get<double>();
  s.tokens_per_record = j.at("tokens_per_record").get<std::size_t>();
  s.count = j.at("count").get<std::size_t>();
  s.seed = j.at("seed").get<std::uint64_t>();
  s.clusters = j.value("clusters", std::size_t{0});
  if (j.contains("bimodal")) s.bimodal = Mixture{j["bimodal"].at("weight").get<double>(), j["bimodal"].at("shift").get<double>()};
  return s;
}

std::string token_name(std::size_t i) {
  static constexpr char cons[] = "bdkmrtv";
  static constexpr char vow[] = "aeiou";
  std::string s;
  for (int syl = 0; syl < 3; ++syl) {
    const std::size_t d = i % 35;
    i /= 35;
    s += cons[d / 5];
    s += vow[d % 5];
  }
  return s;
}

std::vector<VocabToken> make_vocab(const VocabOptions& opts) {
  Rng rng(opts.seed);
  std::vector<VocabToken> v(opts.size);
  for (std::size_t i = 0; i < opts.size; ++i) {
    v[i].name = token_name(i);
    v[i].mu_w = rng.uniform(-opts.mu_spread, opts.mu_spread);
    v[i].sigma_w = rng.uniform(0.0, opts.sigma_max);
  }
  return v;
}

double GroundTruth::quantile(double tau) const {
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("tau must lie in (0, 1)");
  if (!mixture) return std::exp(mu + sigma * normal_inv_cdf(tau));
  const double w = mixture->weight, s = mixture->shift;
  auto F = [&](double t) { return (1.0 - w) * normal_cdf((t - mu) / sigma) + w * normal_cdf((t - mu - s) / sigma); };
  const double z = normal_inv_cdf(tau);
  double lo = mu + std::min(0.0, s) + sigma * z - 1e-9;
  double hi = mu + std::max(0.0, s) + sigma * z + 1e-9;
  for (int it = 0; it < 200 && hi - lo > 1e-14 * std::max(1.0, std::abs(lo)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (F(mid) < tau ? lo : hi) = mid;
  }
  return std::exp(0.5 * (lo + hi));
}

Json GroundTruth::to_json() const {
  Json j = {{"id", id}, {"mu", mu}, {"sigma", sigma}};
  if (mixture) j["mixture"] = {{"weight", mixture->weight}, {"shift", mixture->shift}};
  return j;
}

namespace {

std::vector<std::size_t> draw_tokens(Rng& rng, std::size_t vocab, std::size_t m) {
  std::vector<std::size_t> pool(vocab);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.index(vocab - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(m);
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace

SynthData generate(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  std::vector<std::vector<std::size_t>> sets;
  for (std::size_t c = 0; c < spec.clusters; ++c) sets.push_back(draw_tokens(rng, spec.vocab.size(), spec.tokens_per_record));

  SynthData out;
  out.records.reserve(spec.count);
  out.truth.reserve(spec.count);
  char id[32];
  for (std::size_t i = 0; i < spec.count; ++i) {
    const auto tokens = spec.clusters > 0 ? sets[static_cast<std::size_t>(rng.index(spec.clusters))]
                                          : draw_tokens(rng, spec.vocab.size(), spec.tokens_per_record);
    GroundTruth g;
    std::snprintf(id, sizeof(id), "syn-%06zu", i);
    g.id = id;
    g.mu = spec.mu0;
    g.sigma = spec.sigma0;
    std::string title;
    for (auto t : tokens) {
      g.mu += spec.vocab[t].mu_w;
      g.sigma += spec.vocab[t].sigma_w;
      if (!title.empty()) title += ' ';
      title += spec.vocab[t].name;
    }
    double shift = 0.0;
    if (spec.bimodal) {
      g.mixture = spec.bimodal;
      if (rng.uniform() < spec.bimodal->weight) shift = spec.bimodal->shift;
    }
    const double z = rng.normal();

    Record r;
    r.id = g.id;
    r.kind = Kind::product;
    r.fields = {{"title", title}};
    r.price = std::exp(g.mu + shift + g.sigma * z);
    r.currency = "USD";
    out.records.push_back(std::move(r));
    out.truth.push_back(std::move(g));
  }
  return out;
}

std::vector<PredictedDistribution> truth_distributions(std::span<const GroundTruth> truth, GridPtr grid) {
  std::vector<PredictedDistribution> out;
  out.reserve(truth.size());
  for (const auto& g : truth) {
    std::vector<double> q(grid->size());
    for (std::size_t k = 0; k < q.size(); ++k) q[k] = g.quantile((*grid)[k]);
    out.emplace_back(grid, std::move(q), ValueSpace::linear);
  }
  return out;
}

std::vector<TruthError> evaluate_against_truth(std::span<const PredictedDistribution> predictions,
                                               std::span<const GroundTruth> truth, std::span<const double> taus) {
  if (predictions.size() != truth.size()) throw UsageError("predictions are not aligned with the ground truth");
  if (truth.empty()) throw UsageError("no records to compare");
  std::vector<TruthError> out;
  for (double tau : taus) {
    std::vector<double> err(truth.size());
    for (std::size_t i = 0; i < truth.size(); ++i) {
      if (predictions[i].space() != ValueSpace::linear) throw UsageError("predictions must be in price space");
      const double q = truth[i].quantile(tau);
      err[i] = std::abs(interpolate_quantile(predictions[i], tau) - q) / q;
    }
    TruthError e;
    e.tau = tau;
    e.mean = std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(err.size());
    std::sort(err.begin(), err.end());
    const double pos = 0.9 * static_cast<double>(err.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, err.size() - 1);
    e.p90 = err[lo] + (pos - static_cast<double>(lo)) * (err[hi] - err[lo]);
    out.push_back(e);
  }
  return out;
}

void write_synth(const std::filesystem::path& dir, const SynthSpec& spec, const SynthData& data) {
  std::filesystem::create_directories(dir);
  write_records(dir / "records.jsonl", data.records);
  std::string truth;
  for (const auto& g : data.truth) truth += g.to_json().dump() + "\n";
  write_file_atomic(dir / "truth.jsonl", truth);
  write_file_atomic(dir / "spec.json", spec.to_json().dump(2) + "\n");
}

std::vector<GroundTruth> read_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<GroundTruth> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = Json::parse(line);
      GroundTruth g;
      g.id = j.at("id").get<std::string>();
      g.mu = j.at("mu").get<double>();
      g.sigma = j.at("sigma").get<double>();
      if (j.contains("mixture")) g.mixture = Mixture{j["mixture"].at("weight").get<double>(), j["mixture"].at("shift").get<double>()};
      out.push_back(std::move(g));
    } catch (const Json::exception& e) {
      throw ValidationError(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace pricequant
