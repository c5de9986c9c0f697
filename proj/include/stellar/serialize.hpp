#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "stellar/numerics.hpp"

namespace stellar {

using Json = nlohmann::json;
using Bytes = std::vector<std::uint8_t>;

// Versioned CBOR container: the payload is wrapped as [version, body] so the
// format version integer leads the byte stream. Doubles round-trip bit-exact
// through CBOR's IEEE-754 encoding.
Bytes to_versioned_cbor(int version, const Json& body);

// Throws std::runtime_error with a descriptive message on truncation,
// corruption, or version mismatch. On throw no partial state escapes.
Json from_versioned_cbor(const Bytes& bytes, int expected_version, const std::string& what);

void write_bytes_file(const std::filesystem::path& path, const Bytes& bytes);
Bytes read_bytes_file(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

// Locale-independent shortest round-trip formatting for CSV output.
std::string format_double(double x);

// 64-bit FNV-1a over a string, used to stamp config hashes into run outputs.
std::uint64_t fnv1a64(const std::string& s);

}  // namespace stellar
