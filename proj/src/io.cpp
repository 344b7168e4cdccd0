#include "pricequant/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pricequant/error.hpp"

namespace pricequant {

static_assert(std::endian::native == std::endian::little,
              "binary containers assume a little-endian host");

namespace {

constexpr char kMagic[8] = {'P', 'Q', 'B', 'I', 'N', '\0', '\r', '\n'};

template <typename T>
void append_raw(std::string& out, const T* data, std::size_t count) {
  out.append(reinterpret_cast<const char*>(data), count * sizeof(T));
}

template <typename T>
T read_scalar(std::string_view bytes, std::size_t& pos) {
  if (pos + sizeof(T) > bytes.size()) throw CheckpointError("container truncated");
  T v;
  std::memcpy(&v, bytes.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

template <typename T>
std::vector<T> read_array(std::string_view bytes, std::size_t& pos, std::size_t count) {
  if (count > (bytes.size() - pos) / sizeof(T)) throw CheckpointError("container truncated");
  std::vector<T> out(count);
  std::memcpy(out.data(), bytes.data() + pos, count * sizeof(T));
  pos += count * sizeof(T);
  return out;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed: " + path.string());
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

std::string encode_container(const Container& c) {
  Json header = {{"kind", c.kind}, {"header", c.header}};
  Json blobs = Json::array();
  for (const auto& [name, data] : c.f64) blobs.push_back({{"name", name}, {"type", "f64"}, {"count", data.size()}});
  for (const auto& [name, data] : c.u32) blobs.push_back({{"name", name}, {"type", "u32"}, {"count", data.size()}});
  header["blobs"] = std::move(blobs);
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  append_raw(out, &c.version, 1);
  const std::uint64_t len = text.size();
  append_raw(out, &len, 1);
  out += text;
  for (const auto& [name, data] : c.f64) append_raw(out, data.data(), data.size());
  for (const auto& [name, data] : c.u32) append_raw(out, data.data(), data.size());
  return out;
}

Container decode_container(std::string_view bytes) {
  if (bytes.size() < sizeof(kMagic) || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError("not a pricequant container (bad magic)");
  }
  std::size_t pos = sizeof(kMagic);
  Container c;
  c.version = read_scalar<std::uint32_t>(bytes, pos);
  const auto len = read_scalar<std::uint64_t>(bytes, pos);
  if (len > bytes.size() - pos) throw CheckpointError("container truncated");
  Json header;
  try {
    header = Json::parse(bytes.substr(pos, len));
  } catch (const Json::exception& e) {
    throw CheckpointError(std::string("corrupt container header: ") + e.what());
  }
  pos += len;
  c.kind = header.at("kind").get<std::string>();
  c.header = header.at("header");
  for (const auto& blob : header.at("blobs")) {
    const auto name = blob.at("name").get<std::string>();
    const auto type = blob.at("type").get<std::string>();
    const auto count = blob.at("count").get<std::size_t>();
    if (type == "f64") {
      c.f64[name] = read_array<double>(bytes, pos, count);
    } else if (type == "u32") {
      c.u32[name] = read_array<std::uint32_t>(bytes, pos, count);
    } else {
      throw CheckpointError("unknown blob type " + type);
    }
  }
  if (pos != bytes.size()) throw CheckpointError("trailing bytes in container");
  return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
  write_file_atomic(path, encode_container(c));
}

Container load_container(const std::filesystem::path& path) {
  try {
    return decode_container(read_file(path));
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
}

}  // namespace pricequant
