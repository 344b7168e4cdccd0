#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pricequant/dataset.hpp"
#include "pricequant/io.hpp"

namespace pricequant {

// Sparse storage of a fixed-dimension feature vector. Indices are strictly
// increasing and all stored values are finite and non-zero.
class FeatureVector {
public:
  FeatureVector() = default;
  explicit FeatureVector(std::size_t dim) : dim_(dim) {}
  // Sorts, merges duplicate indices and drops zeros.
  FeatureVector(std::size_t dim, std::vector<std::uint32_t> indices, std::vector<double> values);

  std::size_t dim() const { return dim_; }
  std::size_t nnz() const { return indices_.size(); }
  std::span<const std::uint32_t> indices() const { return indices_; }
  std::span<const double> values() const { return values_; }
  double norm() const { return norm_; }

  std::vector<double> dense() const;
  void scatter(std::span<double> dense) const;
  FeatureVector normalized() const;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

private:
  std::size_t dim_ = 0;
  std::vector<std::uint32_t> indices_;
  std::vector<double> values_;
  double norm_ = 0.0;
};

double dot(const FeatureVector& a, const FeatureVector& b);
// Throws DomainError when either vector has zero norm.
double cosine_similarity(const FeatureVector& a, const FeatureVector& b);

// Pulls a number out of a record field. With an empty key the field value
// itself must start with a number; otherwise "key: <number>" is searched
// for, case-insensitively.
struct NumericRule {
  std::string name;
  std::string field;
  std::string key;
};

struct FeaturizerConfig {
  std::size_t dim = 4096;  // hashed part; power of two
  std::vector<int> word_ngrams = {1, 2};
  std::vector<int> char_ngrams = {3, 4, 5};
  std::vector<NumericRule> numeric_rules = {
      {"year", "year_built", ""},
      {"odometer", "features", "odometer"},
      {"length", "size", "Length"},
      {"width", "size", "Width"},
  };
  std::uint64_t seed = 0x5eed;
  // Text fields rendered into the model input; empty means all.
  std::vector<std::string> field_whitelist;

  void validate() const;
  std::size_t total_dim() const { return dim + numeric_rules.size(); }
};

Json to_json(const FeaturizerConfig& cfg);
FeaturizerConfig featurizer_config_from_json(const Json& j);

// Train-split mean/sd per numeric rule, frozen for val/test.
struct NumericStats {
  std::vector<double> mean;
  std::vector<double> sd;
};

struct FeatureWarnings {
  std::size_t nonfinite_numeric = 0;
};

// Word tokens: maximal runs of ASCII alphanumerics or non-ASCII bytes, lower-cased.
std::vector<std::string> tokenize(std::string_view text);

// Every n-gram key the featurizer hashes for `text`, tagged by family
// ("w1:", "w2:", "c3:", ...). Char n-grams are taken per token with
// '<' and '>' boundary markers.
std::vector<std::string> ngram_keys(std::string_view text, const FeaturizerConfig& cfg);

struct HashSlot {
  std::uint32_t index;
  double sign;
};
HashSlot hash_ngram(std::string_view key, const FeaturizerConfig& cfg);

// Signed hashed n-gram counts before normalization, dense of size cfg.dim.
std::vector<double> hashed_counts(std::string_view text, const FeaturizerConfig& cfg);

// <kind><field>value</field>...</kind>, schema fields first, then the rest
// in record order. Honours the field whitelist when given.
std::string render_tagged_text(const Record& record, std::span<const std::string> whitelist = {});

// One slot per numeric rule; nullopt when the field or key is absent.
using NumericValues = std::vector<std::optional<double>>;
NumericValues extract_numeric(const Record& record, const FeaturizerConfig& cfg);

// Hashed counts L2-normalized, followed by the standardized numeric
// coordinates. Missing values become 0; non-finite ones too, and are
// counted in `warnings`.
FeatureVector featurize(std::string_view text, std::span<const std::optional<double>> numeric,
                        const FeaturizerConfig& cfg, const NumericStats& stats,
                        FeatureWarnings* warnings = nullptr);

class Featurizer {
public:
  Featurizer() = default;
  explicit Featurizer(FeaturizerConfig cfg);

  // Fits numeric standardization on (training) records.
  void fit(std::span<const Record> train);
  FeatureVector operator()(const Record& record, FeatureWarnings* warnings = nullptr) const;
  std::vector<FeatureVector> batch(std::span<const Record> records, FeatureWarnings* warnings = nullptr) const;

  const FeaturizerConfig& config() const { return cfg_; }
  const NumericStats& stats() const { return stats_; }
  std::size_t output_dim() const { return cfg_.total_dim(); }

  Json to_json() const;
  static Featurizer from_json(const Json& j);

  friend bool operator==(const Featurizer& a, const Featurizer& b) {
    return a.to_json() == b.to_json();
  }

private:
  FeaturizerConfig cfg_;
  NumericStats stats_;
};

}  // namespace pricequant
