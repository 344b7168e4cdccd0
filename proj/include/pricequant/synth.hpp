#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pricequant/dataset.hpp"
#include "pricequant/io.hpp"
#include "pricequant/quantile.hpp"

namespace pricequant {

// Inverse standard normal CDF; |error| < 1e-9 on (1e-10, 1 - 1e-10).
double normal_inv_cdf(double p);
double normal_cdf(double x);

struct VocabToken {
  std::string name;
  double mu_w = 0.0;
  double sigma_w = 0.0;
};

// Second lognormal component with the given weight, shifted by `shift` in log space.
struct Mixture {
  double weight = 0.3;
  double shift = 1.0;
};

struct SynthSpec {
  std::vector<VocabToken> vocab;
  double mu0 = 4.605170185988092;  // log(100)
  double sigma0 = 0.1;
  std::size_t tokens_per_record = 3;
  std::size_t count = 1000;
  std::uint64_t seed = 1;
  // 0: every record draws its own tokens. Otherwise records are drawn from
  // this many fixed token sets (iid clusters).
  std::size_t clusters = 0;
  std::optional<Mixture> bimodal;

  // Throws ConfigError if some reachable token set has sigma <= 0.
  void validate() const;
  Json to_json() const;
  static SynthSpec from_json(const Json& j);
};

struct VocabOptions {
  std::size_t size = 40;
  double mu_spread = 1.0;  // mu weights uniform on [-spread, spread]
  double sigma_max = 0.05;  // sigma weights uniform on [0, max]
  std::uint64_t seed = 11;
};

std::vector<VocabToken> make_vocab(const VocabOptions& opts);
// Pronounceable, unique for i < 42875.
std::string token_name(std::size_t i);

struct GroundTruth {
  std::string id;
  double mu = 0.0;
  double sigma = 0.0;
  std::optional<Mixture> mixture;

  // Price-space tau-quantile.
  double quantile(double tau) const;
  Json to_json() const;
};

struct SynthData {
  std::vector<Record> records;
  std::vector<GroundTruth> truth;
};

SynthData generate(const SynthSpec& spec);

std::vector<PredictedDistribution> truth_distributions(std::span<const GroundTruth> truth, GridPtr grid);

struct TruthError {
  double tau = 0.0;
  double mean = 0.0;
  double p90 = 0.0;
};

// Relative error |q_hat - q| / q per tau; predictions are in price space and
// aligned with `truth`.
std::vector<TruthError> evaluate_against_truth(std::span<const PredictedDistribution> predictions,
                                               std::span<const GroundTruth> truth, std::span<const double> taus);

// records.jsonl, truth.jsonl and spec.json under `dir`.
void write_synth(const std::filesystem::path& dir, const SynthSpec& spec, const SynthData& data);
std::vector<GroundTruth> read_truth(const std::filesystem::path& path);

}  // namespace pricequant
