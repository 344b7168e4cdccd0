#include "pricequant/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>

#include "pricequant/error.hpp"
#include "pricequant/rng.hpp"

namespace pricequant {

namespace {

using OrderedJson = nlohmann::ordered_json;

constexpr std::array<std::string_view, 5> kProductFields = {"title", "description", "brand", "type",
                                                            "attributes"};
constexpr std::array<std::string_view, 7> kUsedCarFields = {
    "model_type", "description", "size", "color", "region", "condition", "features"};
constexpr std::array<std::string_view, 8> kBoatFields = {
    "boat_type", "boat_manufacturer", "size", "condition", "material", "region", "year_built",
    "price_currency"};

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string default_currency(Kind kind) { return kind == Kind::boat ? "EUR" : "USD"; }

Record record_from_json(const OrderedJson& obj, Kind default_kind, std::size_t line) {
  if (!obj.is_object()) throw ValidationError("line is not a JSON object");
  Record r;
  r.kind = default_kind;
  if (auto it = obj.find("kind"); it != obj.end()) {
    if (!it->is_string()) throw ValidationError("kind must be a string");
    const Kind k = parse_kind(it->get<std::string>());
    if (k != default_kind) {
      throw ValidationError("kind mismatch: expected " + std::string(to_string(default_kind)) +
                            ", got " + std::string(to_string(k)));
    }
    r.kind = k;
  }
  if (auto it = obj.find("id"); it != obj.end()) {
    if (it->is_string()) {
      r.id = it->get<std::string>();
    } else if (it->is_number_integer()) {
      r.id = it->dump();
    } else {
      throw ValidationError("id must be a string");
    }
  } else {
    r.id = "line-" + std::to_string(line);
  }
  auto price = obj.find("price");
  if (price == obj.end() || price->is_null()) throw ValidationError("missing price");
  if (!price->is_number()) throw ValidationError("price must be a number");
  r.price = price->get<double>();

  auto fields = obj.find("fields");
  if (fields == obj.end() || !fields->is_object()) throw ValidationError("missing text fields");
  for (const auto& [name, value] : fields->items()) {
    if (value.is_string()) {
      r.fields.emplace_back(name, value.get<std::string>());
    } else if (value.is_number() || value.is_boolean()) {
      r.fields.emplace_back(name, value.dump());
    } else if (value.is_null()) {
      r.fields.emplace_back(name, std::string());
    } else {
      throw ValidationError("field '" + name + "' must be a scalar");
    }
  }

  if (auto it = obj.find("currency"); it != obj.end() && it->is_string()) {
    r.currency = it->get<std::string>();
  } else if (const auto* pc = r.field("price_currency"); pc != nullptr && !is_blank(*pc)) {
    r.currency = *pc;
  } else {
    r.currency = default_currency(r.kind);
  }
  if (auto it = obj.find("split"); it != obj.end() && !it->is_null()) {
    if (!it->is_string()) throw ValidationError("split must be a string");
    r.split = parse_split(it->get<std::string>());
  }
  validate(r);
  return r;
}

double median_sorted(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return median_sorted(v);
}

}  // namespace

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::product: return "product";
    case Kind::used_car: return "used_car";
    case Kind::boat: return "boat";
  }
  return "product";
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::unassigned: return "unassigned";
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "unassigned";
}

Kind parse_kind(std::string_view s) {
  if (s == "product") return Kind::product;
  if (s == "used_car") return Kind::used_car;
  if (s == "boat") return Kind::boat;
  throw ValidationError("unknown kind '" + std::string(s) + "'");
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  if (s == "unassigned" || s.empty()) return Split::unassigned;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

std::span<const std::string_view> schema_fields(Kind kind) {
  switch (kind) {
    case Kind::product: return kProductFields;
    case Kind::used_car: return kUsedCarFields;
    case Kind::boat: return kBoatFields;
  }
  return {};
}

const std::string* Record::field(std::string_view name) const {
  for (const auto& [k, v] : fields) {
    if (k == name) return &v;
  }
  return nullptr;
}

void validate(const Record& r) {
  if (!std::isfinite(r.price) || !(r.price > 0.0)) {
    std::ostringstream os;
    os << "price must be positive, got " << r.price;
    throw ValidationError(os.str());
  }
  const bool any_text =
      std::any_of(r.fields.begin(), r.fields.end(), [](const auto& f) { return !is_blank(f.second); });
  if (!any_text) throw ValidationError("record has no non-blank text field");
  for (std::size_t i = 0; i < r.fields.size(); ++i) {
    for (std::size_t j = i + 1; j < r.fields.size(); ++j) {
      if (r.fields[i].first == r.fields[j].first) {
        throw ValidationError("duplicate field '" + r.fields[i].first + "'");
      }
    }
  }
}

ParseResult parse_records(std::istream& in, Kind kind) {
  if (!in) throw IoError("input stream is not readable");
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (is_blank(line)) continue;
    OrderedJson obj;
    try {
      obj = OrderedJson::parse(line);
    } catch (const OrderedJson::parse_error& e) {
      result.rejects.push_back({line_no, line, std::string("malformed JSON: ") + e.what()});
      continue;
    }
    try {
      result.records.push_back(record_from_json(obj, kind, line_no));
    } catch (const ValidationError& e) {
      result.rejects.push_back({line_no, line, e.what()});
    } catch (const OrderedJson::exception& e) {
      result.rejects.push_back({line_no, line, e.what()});
    }
  }
  if (in.bad()) throw IoError("read error while parsing records");
  return result;
}

ParseResult parse_records_file(const std::filesystem::path& path, Kind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_records(in, kind);
}

std::string record_to_line(const Record& r) {
  OrderedJson fields = OrderedJson::object();
  for (const auto& [k, v] : r.fields) fields[k] = v;
  OrderedJson out;
  out["id"] = r.id;
  out["kind"] = to_string(r.kind);
  out["fields"] = std::move(fields);
  out["price"] = r.price;
  out["currency"] = r.currency;
  if (r.split != Split::unassigned) out["split"] = to_string(r.split);
  return out.dump();
}

Json record_to_json(const Record& r) { return Json::parse(record_to_line(r)); }

Json reject_to_json(const Reject& r) {
  Json out;
  try {
    auto obj = Json::parse(r.raw);
    if (obj.is_object()) out = std::move(obj);
  } catch (const Json::exception&) {
  }
  if (out.is_null()) out = Json{{"raw", r.raw}};
  out["line"] = r.line;
  out["reason"] = r.reason;
  return out;
}

void write_records(const std::filesystem::path& path, std::span<const Record> records) {
  std::string text;
  for (const auto& r : records) {
    text += record_to_line(r);
    text += '\n';
  }
  write_file_atomic(path, text);
}

FilterRules FilterRules::defaults() {
  FilterRules rules;
  rules.bounds[Kind::product] = {1.0, 100000.0};
  rules.bounds[Kind::used_car] = {200.0, 500000.0};
  rules.bounds[Kind::boat] = {1000.0, 20000000.0};
  return rules;
}

FilterResult sanity_filter(std::vector<Record> records, const FilterRules& rules) {
  FilterResult out;
  std::vector<Record> pending;
  pending.reserve(records.size());
  for (auto& r : records) {
    auto it = rules.bounds.find(r.kind);
    if (it != rules.bounds.end()) {
      const auto [lo, hi] = it->second;
      if (r.price < lo || r.price > hi) {
        std::ostringstream os;
        os << "price " << r.price << " outside [" << lo << ", " << hi << "]";
        out.removed.push_back({std::move(r), os.str()});
        continue;
      }
    }
    pending.push_back(std::move(r));
  }

  if (rules.robust_c > 0.0) {
    auto category_of = [&](const Record& r) {
      std::string key(to_string(r.kind));
      if (!rules.category_field.empty()) {
        const auto* v = r.field(rules.category_field);
        key += '\x1f';
        if (v != nullptr) key += *v;
      }
      return key;
    };
    bool changed = true;
    while (changed) {
      changed = false;
      std::map<std::string, std::vector<double>> groups;
      for (const auto& r : pending) groups[category_of(r)].push_back(std::log(r.price));
      std::map<std::string, std::pair<double, double>> stats;  // median, MAD
      for (auto& [key, logs] : groups) {
        if (logs.size() < rules.min_category_size) continue;
        const double med = median_of(logs);
        std::vector<double> dev(logs.size());
        std::transform(logs.begin(), logs.end(), dev.begin(), [med](double v) { return std::abs(v - med); });
        const double mad = median_of(std::move(dev));
        if (mad > 0.0) stats[key] = {med, mad};
      }
      std::vector<Record> next;
      next.reserve(pending.size());
      for (auto& r : pending) {
        auto it = stats.find(category_of(r));
        if (it != stats.end()) {
          const auto [med, mad] = it->second;
          const double dev = std::abs(std::log(r.price) - med);
          if (dev > rules.robust_c * mad) {
            std::ostringstream os;
            os << "log-price deviates " << dev / mad << " MADs from category median (limit "
               << rules.robust_c << ")";
            out.removed.push_back({std::move(r), os.str()});
            changed = true;
            continue;
          }
        }
        next.push_back(std::move(r));
      }
      pending = std::move(next);
    }
  }
  out.kept = std::move(pending);
  return out;
}

double log_price(double price) {
  if (!std::isfinite(price) || !(price > 0.0)) {
    throw DomainError("log transform needs a positive finite price");
  }
  return std::log(price);
}

double price_from_log(double log_value) { return std::exp(log_value); }

std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& f) {
  const std::array<double, 3> fr = {f.train, f.val, f.test};
  for (double x : fr) {
    if (!(x >= 0.0) || !std::isfinite(x)) throw ConfigError("split fractions must be non-negative");
  }
  if (std::abs(fr[0] + fr[1] + fr[2] - 1.0) > 1e-9) throw ConfigError("split fractions must sum to 1");
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = fr[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<int, 3> order = {0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; assigned < n; k = (k + 1) % 3) {
    if (fr[order[k]] > 0.0) {
      ++counts[order[k]];
      ++assigned;
    }
  }
  return counts;
}

void split_dataset(std::span<Record> records, const SplitFractions& fractions, std::uint64_t seed) {
  const auto counts = split_counts(records.size(), fractions);
  std::vector<std::size_t> perm(records.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(std::span<std::size_t>(perm));
  std::size_t pos = 0;
  const std::array<Split, 3> tags = {Split::train, Split::val, Split::test};
  for (int s = 0; s < 3; ++s) {
    for (std::size_t c = 0; c < counts[s]; ++c) records[perm[pos++]].split = tags[s];
  }
}

std::size_t DatasetSummary::total_retained() const {
  std::size_t total = 0;
  for (const auto& [split, s] : splits) total += s.count;
  return total;
}

DatasetSummary summarize(std::span<const Record> records, std::size_t removed, std::size_t rejected) {
  DatasetSummary summary;
  summary.removed_count = removed;
  summary.rejected_count = rejected;
  std::map<Split, std::vector<double>> prices;
  for (Split s : {Split::train, Split::val, Split::test}) prices[s];
  for (const auto& r : records) prices[r.split].push_back(r.price);
  for (auto& [split, p] : prices) {
    SplitSummary s;
    s.count = p.size();
    if (!p.empty()) {
      std::sort(p.begin(), p.end());
      s.price_min = p.front();
      s.price_max = p.back();
      s.price_median = median_sorted(p);
    }
    summary.splits[split] = s;
  }
  return summary;
}

Json summary_to_json(const DatasetSummary& s) {
  Json splits = Json::object();
  for (const auto& [split, v] : s.splits) {
    splits[std::string(to_string(split))] = {{"count", v.count},
                                             {"price_min", v.price_min},
                                             {"price_median", v.price_median},
                                             {"price_max", v.price_max}};
  }
  return {{"splits", splits},
          {"total", s.total_retained()},
          {"removed_count", s.removed_count},
          {"rejected_count", s.rejected_count}};
}

std::vector<Record> select_split(std::span<const Record> records, Split split) {
  std::vector<Record> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

}  // namespace pricequant
