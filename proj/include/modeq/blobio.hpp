#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <vector>

#include "modeq/errors.hpp"

namespace modeq::detail {

inline void write_blob(const std::filesystem::path& path, const void* data,
                       std::size_t bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open for writing: " + path.string());
  f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  if (!f) throw FormatError("short write: " + path.string());
}

inline std::vector<char> read_blob(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) throw FormatError("cannot open for reading: " + path.string());
  const std::streamsize n = f.tellg();
  f.seekg(0);
  std::vector<char> buf(static_cast<std::size_t>(n));
  f.read(buf.data(), n);
  if (!f) throw FormatError("short read: " + path.string());
  return buf;
}

}  // namespace modeq::detail
