#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pricequant/io.hpp"

namespace pricequant {

enum class Kind { product, used_car, boat };
enum class Split { unassigned, train, val, test };

std::string_view to_string(Kind kind);
std::string_view to_string(Split split);
Kind parse_kind(std::string_view s);
Split parse_split(std::string_view s);

// Field-marker order used when rendering a record of the given kind.
std::span<const std::string_view> schema_fields(Kind kind);

struct Record {
  std::string id;
  Kind kind = Kind::product;
  // Insertion-ordered; names are unique.
  std::vector<std::pair<std::string, std::string>> fields;
  double price = 0.0;
  std::string currency;
  Split split = Split::unassigned;

  const std::string* field(std::string_view name) const;
};

struct Reject {
  std::size_t line = 0;  // 1-based line number in the source
  std::string raw;
  std::string reason;
};

struct ParseResult {
  std::vector<Record> records;
  std::vector<Reject> rejects;
};

// One JSON object per line. Whitespace-only lines are ignored; every other
// line ends up in exactly one of records/rejects. `kind` is the default for
// lines without a "kind" key; a conflicting "kind" is rejected.
ParseResult parse_records(std::istream& in, Kind kind);
ParseResult parse_records_file(const std::filesystem::path& path, Kind kind);

// Throws ValidationError describing the first violated invariant.
void validate(const Record& r);

Json record_to_json(const Record& r);
std::string record_to_line(const Record& r);
Json reject_to_json(const Reject& r);
void write_records(const std::filesystem::path& path, std::span<const Record> records);

struct PriceBounds {
  double lo = 0.0;
  double hi = 0.0;
};

struct FilterRules {
  std::map<Kind, PriceBounds> bounds;
  // Robust-z rule on log price within a category, disabled when c <= 0.
  double robust_c = 0.0;
  std::string category_field;       // empty: one category per kind
  std::size_t min_category_size = 5;  // smaller categories skip the robust rule

  static FilterRules defaults();
};

struct Removed {
  Record record;
  std::string reason;
};

struct FilterResult {
  std::vector<Record> kept;
  std::vector<Removed> removed;
};

// Bounds are inclusive. The robust-z step is repeated until no record is
// removed, which makes the filter idempotent.
FilterResult sanity_filter(std::vector<Record> records, const FilterRules& rules);

double log_price(double price);
double price_from_log(double log_value);

struct SplitFractions {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

// Largest-remainder allocation of counts, then a seeded shuffle assigns
// records to splits. Input order of records is preserved.
void split_dataset(std::span<Record> records, const SplitFractions& fractions, std::uint64_t seed);
std::array<std::size_t, 3> split_counts(std::size_t n, const SplitFractions& fractions);

struct SplitSummary {
  std::size_t count = 0;
  double price_min = 0.0;
  double price_median = 0.0;
  double price_max = 0.0;
};

struct DatasetSummary {
  std::map<Split, SplitSummary> splits;
  std::size_t removed_count = 0;
  std::size_t rejected_count = 0;
  std::size_t total_retained() const;
};

DatasetSummary summarize(std::span<const Record> records, std::size_t removed, std::size_t rejected);
Json summary_to_json(const DatasetSummary& s);

std::vector<Record> select_split(std::span<const Record> records, Split split);

}  // namespace pricequant
