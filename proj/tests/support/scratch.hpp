#pragma once

#include <filesystem>
#include <fstream>
#include <string>

namespace scratch {

/// Fresh, empty directory under the build tree's test area.
inline std::filesystem::path dir(const std::string& name) {
  const std::filesystem::path p = std::filesystem::path(WIG_TEST_TMP) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline std::filesystem::path write(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  return path;
}

inline std::string read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace scratch
