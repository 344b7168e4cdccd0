#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace pricequant {

using Json = nlohmann::json;

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

// Self-describing binary container: magic, format version, JSON header and
// named little-endian arrays. Used for checkpoints and baseline models.
struct Container {
  std::string kind;  // e.g. "checkpoint", "baseline"
  std::uint32_t version = 1;
  Json header = Json::object();
  std::map<std::string, std::vector<double>> f64;
  std::map<std::string, std::vector<std::uint32_t>> u32;
};

std::string encode_container(const Container& c);
Container decode_container(std::string_view bytes);
void save_container(const std::filesystem::path& path, const Container& c);
Container load_container(const std::filesystem::path& path);

}  // namespace pricequant
