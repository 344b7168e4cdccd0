#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace pricequant {

struct SettingInfo {
  std::string_view key;
  std::string_view default_value;
  std::string_view doc;
};

// Every recognised setting with its default.
std::span<const SettingInfo> known_settings();

// Flat key = value settings. Defaults < config file < command-line overrides.
class RunConfig {
public:
  RunConfig();

  // Lines "key = value"; '#' starts a comment. Unknown keys are rejected.
  void load_file(const std::filesystem::path& path);
  void load_text(std::string_view text, std::string_view origin = "config");
  // "key=value"
  void apply_override(std::string_view assignment);
  void set(std::string_view key, std::string value);

  const std::string& get(std::string_view key) const;
  std::string get_string(std::string_view key) const { return get(key); }
  double get_double(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  std::size_t get_size(std::string_view key) const;
  std::uint64_t get_u64(std::string_view key) const;
  bool get_bool(std::string_view key) const;
  std::vector<double> get_doubles(std::string_view key) const;
  std::vector<std::size_t> get_sizes(std::string_view key) const;

  // All settings in key order, one "key = value" per line.
  std::string to_text() const;

private:
  std::map<std::string, std::string, std::less<>> values_;
};

}  // namespace pricequant
