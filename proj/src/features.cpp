#include "pricequant/features.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <numeric>

#include "pricequant/error.hpp"
#include "pricequant/rng.hpp"

namespace pricequant {

FeatureVector::FeatureVector(std::size_t dim, std::vector<std::uint32_t> indices,
                             std::vector<double> values)
    : dim_(dim) {
  if (indices.size() != values.size()) throw ShapeError("feature indices/values size mismatch");
  std::vector<std::size_t> order(indices.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return indices[a] < indices[b]; });
  for (std::size_t k : order) {
    if (indices[k] >= dim) throw ShapeError("feature index out of range");
    if (!std::isfinite(values[k])) throw DomainError("non-finite feature value");
    if (!indices_.empty() && indices_.back() == indices[k]) {
      values_.back() += values[k];
    } else {
      indices_.push_back(indices[k]);
      values_.push_back(values[k]);
    }
  }
  std::size_t w = 0;
  for (std::size_t r = 0; r < indices_.size(); ++r) {
    if (values_[r] != 0.0) {
      indices_[w] = indices_[r];
      values_[w] = values_[r];
      ++w;
    }
  }
  indices_.resize(w);
  values_.resize(w);
  double ss = 0.0;
  for (double v : values_) ss += v * v;
  norm_ = std::sqrt(ss);
}

std::vector<double> FeatureVector::dense() const {
  std::vector<double> out(dim_, 0.0);
  scatter(out);
  return out;
}

void FeatureVector::scatter(std::span<double> dense) const {
  if (dense.size() < dim_) throw ShapeError("dense buffer too small");
  for (std::size_t k = 0; k < indices_.size(); ++k) dense[indices_[k]] = values_[k];
}

FeatureVector FeatureVector::normalized() const {
  if (norm_ == 0.0) return *this;
  std::vector<double> v(values_);
  for (double& x : v) x /= norm_;
  return FeatureVector(dim_, indices_, std::move(v));
}

double dot(const FeatureVector& a, const FeatureVector& b) {
  if (a.dim() != b.dim()) throw ShapeError("feature dimension mismatch");
  const auto ia = a.indices();
  const auto ib = b.indices();
  const auto va = a.values();
  const auto vb = b.values();
  double s = 0.0;
  std::size_t i = 0, j = 0;
  while (i < ia.size() && j < ib.size()) {
    if (ia[i] < ib[j]) {
      ++i;
    } else if (ib[j] < ia[i]) {
      ++j;
    } else {
      s += va[i] * vb[j];
      ++i;
      ++j;
    }
  }
  return s;
}

double cosine_similarity(const FeatureVector& a, const FeatureVector& b) {
  if (a.norm() == 0.0 || b.norm() == 0.0) throw DomainError("cosine similarity of a zero vector");
  const double c = dot(a, b) / (a.norm() * b.norm());
  return std::clamp(c, -1.0, 1.0);
}

void FeaturizerConfig::validate() const {
  if (dim == 0 || !std::has_single_bit(dim)) throw ConfigError("feature dim must be a positive power of two");
  if (dim > (std::size_t{1} << 30)) throw ConfigError("feature dim too large");
  for (int n : word_ngrams) {
    if (n < 1) throw ConfigError("word n-gram orders must be >= 1");
  }
  for (int n : char_ngrams) {
    if (n < 1) throw ConfigError("char n-gram orders must be >= 1");
  }
}

Json to_json(const FeaturizerConfig& cfg) {
  Json rules = Json::array();
  for (const auto& r : cfg.numeric_rules) rules.push_back({{"name", r.name}, {"field", r.field}, {"key", r.key}});
  return {{"dim", cfg.dim},
          {"word_ngrams", cfg.word_ngrams},
          {"char_ngrams", cfg.char_ngrams},
          {"numeric_rules", rules},
          {"seed", cfg.seed},
          {"field_whitelist", cfg.field_whitelist}};
}

FeaturizerConfig featurizer_config_from_json(const Json& j) {
  FeaturizerConfig cfg;
  cfg.dim = j.at("dim").get<std::size_t>();
  cfg.word_ngrams = j.at("word_ngrams").get<std::vector<int>>();
  cfg.char_ngrams = j.at("char_ngrams").get<std::vector<int>>();
  cfg.numeric_rules.clear();
  for (const auto& r : j.at("numeric_rules")) {
    cfg.numeric_rules.push_back({r.at("name").get<std::string>(), r.at("field").get<std::string>(),
                                 r.at("key").get<std::string>()});
  }
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.field_whitelist = j.at("field_whitelist").get<std::vector<std::string>>();
  cfg.validate();
  return cfg;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (c >= 0x80 || std::isalnum(c) != 0) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

namespace {

template <typename Fn>
void for_each_ngram(std::string_view text, const FeaturizerConfig& cfg, Fn&& fn) {
  const auto tokens = tokenize(text);
  std::string key;
  for (int n : cfg.word_ngrams) {
    const auto un = static_cast<std::size_t>(n);
    if (tokens.size() < un) continue;
    for (std::size_t i = 0; i + un <= tokens.size(); ++i) {
      key = "w" + std::to_string(n) + ":";
      for (std::size_t k = 0; k < un; ++k) {
        if (k > 0) key += ' ';
        key += tokens[i + k];
      }
      fn(key);
    }
  }
  for (const auto& tok : tokens) {
    const std::string padded = "<" + tok + ">";
    for (int n : cfg.char_ngrams) {
      const auto un = static_cast<std::size_t>(n);
      if (padded.size() < un) continue;
      const std::string prefix = "c" + std::to_string(n) + ":";
      for (std::size_t i = 0; i + un <= padded.size(); ++i) {
        key = prefix;
        key.append(padded, i, un);
        fn(key);
      }
    }
  }
}

bool ieq_prefix(std::string_view hay, std::size_t pos, std::string_view needle) {
  if (pos + needle.size() > hay.size()) return false;
  for (std::size_t i = 0; i < needle.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(hay[pos + i])) !=
        std::tolower(static_cast<unsigned char>(needle[i]))) {
      return false;
    }
  }
  return true;
}

std::optional<double> parse_number_at(std::string_view s, std::size_t pos) {
  while (pos < s.size() && std::isspace(static_cast<unsigned char>(s[pos])) != 0) ++pos;
  if (pos >= s.size()) return std::nullopt;
  // strtod needs a terminated buffer; numbers are short.
  std::string buf(s.substr(pos, 64));
  char* end = nullptr;
  const double v = std::strtod(buf.c_str(), &end);
  if (end == buf.c_str()) return std::nullopt;
  return v;
}

}  // namespace

std::vector<std::string> ngram_keys(std::string_view text, const FeaturizerConfig& cfg) {
  std::vector<std::string> keys;
  for_each_ngram(text, cfg, [&](const std::string& k) { keys.push_back(k); });
  return keys;
}

HashSlot hash_ngram(std::string_view key, const FeaturizerConfig& cfg) {
  const std::uint64_t h = fnv1a64(key);
  const std::uint64_t hi = mix64(h ^ cfg.seed);
  const std::uint64_t hs = mix64(h ^ derive_seed(cfg.seed, 1));
  return {static_cast<std::uint32_t>(hi & (cfg.dim - 1)), (hs >> 63) != 0 ? -1.0 : 1.0};
}

std::vector<double> hashed_counts(std::string_view text, const FeaturizerConfig& cfg) {
  cfg.validate();
  std::vector<double> counts(cfg.dim, 0.0);
  for_each_ngram(text, cfg, [&](const std::string& k) {
    const auto slot = hash_ngram(k, cfg);
    counts[slot.index] += slot.sign;
  });
  return counts;
}

std::string render_tagged_text(const Record& record, std::span<const std::string> whitelist) {
  auto allowed = [&](std::string_view name) {
    return whitelist.empty() || std::find(whitelist.begin(), whitelist.end(), name) != whitelist.end();
  };
  const std::string_view kind = to_string(record.kind);
  std::string out;
  out += '<';
  out += kind;
  out += '>';
  auto emit = [&](std::string_view name, std::string_view value) {
    out += '<';
    out += name;
    out += '>';
    out += value;
    out += "</";
    out += name;
    out += '>';
  };
  const auto schema = schema_fields(record.kind);
  for (std::string_view name : schema) {
    if (!allowed(name)) continue;
    if (const auto* v = record.field(name)) emit(name, *v);
  }
  for (const auto& [name, value] : record.fields) {
    if (std::find(schema.begin(), schema.end(), name) != schema.end()) continue;
    if (!allowed(name)) continue;
    emit(name, value);
  }
  out += "</";
  out += kind;
  out += '>';
  return out;
}

NumericValues extract_numeric(const Record& record, const FeaturizerConfig& cfg) {
  NumericValues out;
  out.reserve(cfg.numeric_rules.size());
  for (const auto& rule : cfg.numeric_rules) {
    const auto* value = record.field(rule.field);
    if (value == nullptr) {
      out.emplace_back();
      continue;
    }
    const std::string_view s = *value;
    if (rule.key.empty()) {
      out.push_back(parse_number_at(s, 0));
      continue;
    }
    std::optional<double> found;
    for (std::size_t pos = 0; pos < s.size() && !found; ++pos) {
      if (!ieq_prefix(s, pos, rule.key)) continue;
      std::size_t p = pos + rule.key.size();
      while (p < s.size() && s[p] == ' ') ++p;
      if (p < s.size() && (s[p] == ':' || s[p] == '=')) found = parse_number_at(s, p + 1);
    }
    out.push_back(found);
  }
  return out;
}

FeatureVector featurize(std::string_view text, std::span<const std::optional<double>> numeric,
                        const FeaturizerConfig& cfg, const NumericStats& stats,
                        FeatureWarnings* warnings) {
  const auto counts = hashed_counts(text, cfg);
  if (numeric.size() != cfg.numeric_rules.size()) throw ShapeError("numeric value count does not match rules");
  double ss = 0.0;
  for (double c : counts) ss += c * c;
  const double inv = ss > 0.0 ? 1.0 / std::sqrt(ss) : 0.0;

  std::vector<std::uint32_t> idx;
  std::vector<double> val;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] != 0.0) {
      idx.push_back(static_cast<std::uint32_t>(i));
      val.push_back(counts[i] * inv);
    }
  }
  for (std::size_t r = 0; r < numeric.size(); ++r) {
    if (!numeric[r]) continue;
    const double x = *numeric[r];
    if (!std::isfinite(x)) {
      if (warnings != nullptr) ++warnings->nonfinite_numeric;
      continue;
    }
    const double mean = r < stats.mean.size() ? stats.mean[r] : 0.0;
    const double sd = r < stats.sd.size() ? stats.sd[r] : 1.0;
    const double z = (x - mean) / sd;
    if (z != 0.0) {
      idx.push_back(static_cast<std::uint32_t>(cfg.dim + r));
      val.push_back(z);
    }
  }
  return FeatureVector(cfg.total_dim(), std::move(idx), std::move(val));
}

Featurizer::Featurizer(FeaturizerConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  stats_.mean.assign(cfg_.numeric_rules.size(), 0.0);
  stats_.sd.assign(cfg_.numeric_rules.size(), 1.0);
}

void Featurizer::fit(std::span<const Record> train) {
  const std::size_t r = cfg_.numeric_rules.size();
  std::vector<double> sum(r, 0.0), sumsq(r, 0.0);
  std::vector<std::size_t> n(r, 0);
  for (const auto& rec : train) {
    const auto values = extract_numeric(rec, cfg_);
    for (std::size_t k = 0; k < r; ++k) {
      if (values[k] && std::isfinite(*values[k])) {
        sum[k] += *values[k];
        ++n[k];
      }
    }
  }
  for (std::size_t k = 0; k < r; ++k) stats_.mean[k] = n[k] > 0 ? sum[k] / static_cast<double>(n[k]) : 0.0;
  for (const auto& rec : train) {
    const auto values = extract_numeric(rec, cfg_);
    for (std::size_t k = 0; k < r; ++k) {
      if (values[k] && std::isfinite(*values[k])) {
        const double d = *values[k] - stats_.mean[k];
        sumsq[k] += d * d;
      }
    }
  }
  for (std::size_t k = 0; k < r; ++k) {
    const double sd = n[k] > 1 ? std::sqrt(sumsq[k] / static_cast<double>(n[k] - 1)) : 0.0;
    stats_.sd[k] = sd > 0.0 ? sd : 1.0;
  }
}

FeatureVector Featurizer::operator()(const Record& record, FeatureWarnings* warnings) const {
  const auto text = render_tagged_text(record, cfg_.field_whitelist);
  const auto numeric = extract_numeric(record, cfg_);
  return featurize(text, numeric, cfg_, stats_, warnings);
}

std::vector<FeatureVector> Featurizer::batch(std::span<const Record> records, FeatureWarnings* warnings) const {
  std::vector<FeatureVector> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back((*this)(r, warnings));
  return out;
}

Json Featurizer::to_json() const {
  return {{"config", pricequant::to_json(cfg_)}, {"numeric_mean", stats_.mean}, {"numeric_sd", stats_.sd}};
}

Featurizer Featurizer::from_json(const Json& j) {
  Featurizer f(featurizer_config_from_json(j.at("config")));
  f.stats_.mean = j.at("numeric_mean").get<std::vector<double>>();
  f.stats_.sd = j.at("numeric_sd").get<std::vector<double>>();
  if (f.stats_.mean.size() != f.cfg_.numeric_rules.size() || f.stats_.sd.size() != f.cfg_.numeric_rules.size()) {
    throw CheckpointError("featurizer numeric statistics do not match rules");
  }
  return f;
}

}  // namespace pricequant
