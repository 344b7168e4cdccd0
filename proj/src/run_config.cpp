#include "pricequant/run_config.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <span>

#include "pricequant/error.hpp"
#include "pricequant/io.hpp"

namespace pricequant {

namespace {

constexpr std::array<SettingInfo, 49> kSettings = {{
    {"seed", "7", "master seed for splits, initialization and batching"},
    {"threads", "1", "worker threads for batch prediction"},
    {"kind", "product", "record kind: product, used_car or boat"},
    {"grid.K", "200", "number of quantile levels (midpoint rule)"},
    {"grid.alpha", "0.01", "smoothing of the pinball loss"},
    {"features.dim", "4096", "hashed feature dimension (power of two)"},
    {"features.seed", "24301", "hash seed"},
    {"ingest.robust_c", "0", "robust-z cutoff on log price per category; 0 disables"},
    {"ingest.category_field", "", "field that defines categories for the robust rule"},
    {"split.train", "0.8", "train fraction"},
    {"split.val", "0.1", "validation fraction"},
    {"split.test", "0.1", "test fraction"},
    {"model.head", "quantile", "quantile or point"},
    {"model.hidden", "512,256", "hidden layer widths"},
    {"model.activation", "softplus", "delta activation: softplus or relu"},
    {"model.monotone", "true", "delta-encoded head; false emits raw quantiles and sorts them"},
    {"model.head_init_scale", "0.1", "scale of the head's initial weights"},
    {"train.lr", "0.001", "learning rate"},
    {"train.weight_decay", "0.01", "decoupled weight decay"},
    {"train.batch_size", "256", "mini-batch size"},
    {"train.max_epochs", "50", "epoch limit"},
    {"train.patience", "5", "epochs without improvement before stopping"},
    {"train.select", "loss", "validation metric for model selection: loss or mape"},
    {"baseline.kind", "knn", "ridge, knn or rknn"},
    {"baseline.metric", "euclidean", "neighbor metric: euclidean or cosine"},
    {"baseline.folds", "5", "cross-validation folds"},
    {"baseline.lambdas", "0.01,0.1,1,10,100", "ridge regularization grid"},
    {"baseline.ks", "5,10,20,50,100,200", "kNN neighbor-count grid"},
    {"baseline.radii", "0.25,0.5,0.75,1", "radius grid"},
    {"baseline.min_neighbors", "5,20,50", "minimum-neighbor grid"},
    {"eval.iterations", "1000", "bootstrap iterations"},
    {"eval.seed", "0", "bootstrap seed"},
    {"eval.gamma", "0.05", "RCIW interval level (1 - gamma central interval)"},
    {"predict.density", "false", "write density CSV and SVG per record"},
    {"predict.density_points", "512", "points on the density grid"},
    {"predict.gamma", "0.05", "reported interval is the central 1 - gamma interval"},
    {"synth.count", "1000", "records to generate"},
    {"synth.seed", "1", "generator seed"},
    {"synth.vocab", "40", "vocabulary size"},
    {"synth.vocab_seed", "11", "seed for token weights"},
    {"synth.tokens_per_record", "3", "tokens rendered per record"},
    {"synth.mu0", "4.605170185988092", "base log-price location"},
    {"synth.sigma0", "0.1", "base log-price scale"},
    {"synth.mu_spread", "1", "token location weights uniform on [-spread, spread]"},
    {"synth.sigma_max", "0.05", "token scale weights uniform on [0, max]"},
    {"synth.clusters", "0", "number of fixed token sets; 0 draws tokens per record"},
    {"synth.bimodal", "false", "two-component lognormal mixture"},
    {"synth.bimodal_weight", "0.3", "weight of the shifted component"},
    {"synth.bimodal_shift", "1", "log-space shift of the second component"},
}};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto item = trim(std::string_view(s).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

double parse_double(std::string_view key, const std::string& v) {
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != v.size() || v.empty() || !std::isfinite(d)) {
    throw ConfigError("setting '" + std::string(key) + "': '" + v + "' is not a number");
  }
  return d;
}

std::uint64_t parse_u64(std::string_view key, const std::string& v) {
  std::uint64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("setting '" + std::string(key) + "': '" + v + "' is not a non-negative integer");
  }
  return x;
}

}  // namespace

std::span<const SettingInfo> known_settings() { return kSettings; }

RunConfig::RunConfig() {
  for (const auto& s : known_settings()) values_.emplace(std::string(s.key), std::string(s.default_value));
}

void RunConfig::set(std::string_view key, std::string value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown setting '" + std::string(key) + "'");
  it->second = std::move(value);
}

void RunConfig::load_text(std::string_view text, std::string_view origin) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto t = trim(line);
    if (!t.empty()) {
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected key = value");
      }
      try {
        set(trim(std::string_view(t).substr(0, eq)), trim(std::string_view(t).substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  load_text(text, path.string());
}

void RunConfig::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' is not key=value");
  set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

const std::string& RunConfig::get(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown setting '" + std::string(key) + "'");
  return it->second;
}

double RunConfig::get_double(std::string_view key) const { return parse_double(key, get(key)); }

std::int64_t RunConfig::get_int(std::string_view key) const {
  const auto& v = get(key);
  std::int64_t x = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty()) {
    throw ConfigError("setting '" + std::string(key) + "': '" + v + "' is not an integer");
  }
  return x;
}

std::size_t RunConfig::get_size(std::string_view key) const { return static_cast<std::size_t>(get_u64(key)); }

std::uint64_t RunConfig::get_u64(std::string_view key) const { return parse_u64(key, get(key)); }

bool RunConfig::get_bool(std::string_view key) const {
  const auto& v = get(key);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("setting '" + std::string(key) + "': '" + v + "' is not a boolean");
}

std::vector<double> RunConfig::get_doubles(std::string_view key) const {
  std::vector<double> out;
  for (const auto& item : split_list(get(key))) out.push_back(parse_double(key, item));
  return out;
}

std::vector<std::size_t> RunConfig::get_sizes(std::string_view key) const {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(get(key))) out.push_back(static_cast<std::size_t>(parse_u64(key, item)));
  return out;
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace pricequant
