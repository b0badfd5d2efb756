#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "scribe/parameter.hpp"
#include "scribe/tensor.hpp"

namespace scribe::test {

inline TensorPtr random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  auto t = make_tensor(std::move(shape));
  for (auto& v : t->data()) v = rng.uniform(-scale, scale);
  return t;
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("scribe_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace scribe::test
