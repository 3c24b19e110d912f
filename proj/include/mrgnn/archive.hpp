#pragma once

// Binary container shared by the graph-set, dataset and checkpoint files.
//
// Layout (all integers little-endian):
//   magic      8 bytes   e.g. "MRGS\0\0\0\1"
//   version    u32
//   manifest   u64 length + UTF-8 JSON text
//   count      u32 number of arrays
//   per array: u32 name length, name bytes, u64 rows, u64 cols,
//              rows*cols IEEE-754 binary64 values in row-major order
//   checksum   u64 FNV-1a over every preceding byte
//
// Doubles are written bit-for-bit, so a round trip reproduces values exactly.

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>

namespace mrgnn {

struct Archive {
  std::string magic;  // exactly 8 bytes
  std::uint32_t version = 1;
  nlohmann::json manifest = nlohmann::json::object();
  std::map<std::string, Eigen::MatrixXd> arrays;

  const Eigen::MatrixXd& array(const std::string& name) const;
};

void write_archive(const Archive& archive, const std::filesystem::path& path);

/// Reads and validates magic, version and checksum. Throws FormatError.
Archive read_archive(const std::filesystem::path& path, std::string_view expected_magic,
                     std::uint32_t expected_version);

std::uint64_t fnv1a(const void* data, std::size_t size, std::uint64_t seed = 14695981039346656037ULL);

/// Stable content digest of a matrix (shape and raw bits).
std::uint64_t digest(const Eigen::MatrixXd& m, std::uint64_t seed = 14695981039346656037ULL);

std::string hex_digest(std::uint64_t value);

}  // namespace mrgnn
