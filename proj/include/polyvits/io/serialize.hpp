#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "polyvits/error.hpp"
#include "polyvits/tensor/matrix.hpp"

namespace polyvits::io {

using Json = nlohmann::json;

/// Raw little-endian doubles wrapped as a binary value, so CBOR output is
/// exact and compact.
inline Json matrix_to_json(const Matrix& m) {
  std::vector<std::uint8_t> bytes(static_cast<std::size_t>(m.size()) * sizeof(double));
  if (!bytes.empty()) std::memcpy(bytes.data(), m.data(), bytes.size());
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", Json::binary(std::move(bytes))}};
}

inline Matrix matrix_from_json(const Json& j, const std::string& what) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data") || !j["data"].is_binary()) {
    fail(ErrorKind::kSchema, what + ": malformed matrix record");
  }
  const auto rows = j["rows"].get<Eigen::Index>();
  const auto cols = j["cols"].get<Eigen::Index>();
  const auto& bytes = j["data"].get_binary();
  if (rows < 0 || cols < 0 || bytes.size() != static_cast<std::size_t>(rows * cols) * sizeof(double)) {
    fail(ErrorKind::kSchema, what + ": matrix size does not match its payload");
  }
  Matrix m(rows, cols);
  if (!bytes.empty()) std::memcpy(m.data(), bytes.data(), bytes.size());
  return m;
}

inline std::string read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_atomic(const std::string& path, const std::string& bytes) {
  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kIo, "cannot write " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorKind::kIo, "short write to " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) fail(ErrorKind::kIo, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

inline std::string to_cbor(const Json& j) {
  const auto v = Json::to_cbor(j);
  return {v.begin(), v.end()};
}

inline Json from_cbor(const std::string& bytes, const std::string& what) {
  try {
    return Json::from_cbor(bytes);
  } catch (const Json::exception& e) {
    fail(ErrorKind::kSchema, what + ": not a valid archive (" + e.what() + ")");
  }
}

}  // namespace polyvits::io
