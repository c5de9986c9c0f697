#include "stellar/serialize.hpp"

#include <charconv>
#include <fstream>
#include <stdexcept>

namespace stellar {

Bytes to_versioned_cbor(int version, const Json& body) {
  Json wrapper = Json::array({version, body});
  return Json::to_cbor(wrapper);
}

Json from_versioned_cbor(const Bytes& bytes, int expected_version, const std::string& what) {
  Json wrapper;
  try {
    wrapper = Json::from_cbor(bytes);
  } catch (const Json::exception& e) {
    throw std::runtime_error(what + ": corrupt payload (" + e.what() + ")");
  }
  if (!wrapper.is_array() || wrapper.size() != 2 || !wrapper[0].is_number_integer())
    throw std::runtime_error(what + ": malformed container");
  const int version = wrapper[0].get<int>();
  if (version != expected_version)
    throw std::runtime_error(what + ": format version " + std::to_string(version) +
                             ", expected " + std::to_string(expected_version));
  return std::move(wrapper[1]);
}

void write_bytes_file(const std::filesystem::path& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Bytes read_bytes_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open for read: " + path.string());
  const auto size = in.tellg();
  in.seekg(0);
  Bytes bytes(static_cast<std::size_t>(size));
  in.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!in) throw std::runtime_error("read failed: " + path.string());
  return bytes;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for write: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for read: " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text;
}

std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), x);
  if (ec != std::errc{}) throw std::runtime_error("format_double failed");
  return std::string(buf, ptr);
}

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace stellar
