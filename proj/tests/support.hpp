#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "cpl/rng.hpp"
#include "cpl/tensor.hpp"

namespace cpl::test {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  Rng rng(seed);
  Tensor t(shape, 0.0);
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

/// Fresh empty directory under the system temp dir, unique per test name.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("cpl_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace cpl::test
