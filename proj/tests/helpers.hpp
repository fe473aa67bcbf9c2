#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "crfp/tensor.hpp"

namespace crfp::test {

inline Tensor rand_tensor(std::vector<int> shape, uint64_t seed, float lo = -1.0f,
                          float hi = 1.0f) {
  Rng rng(seed);
  return uniform_tensor(std::move(shape), lo, hi, rng);
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return 1e30;
  double m = 0.0;
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  for (long i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(pa[i]) - pb[i]));
  return m;
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  if (a.shape != b.shape) return false;
  const float* pa = a.ptr();
  const float* pb = b.ptr();
  for (long i = 0; i < a.numel(); ++i)
    if (pa[i] != pb[i]) return false;
  return true;
}

// Self-deleting scratch directory under the system temp root.
struct TempDir {
  std::filesystem::path path;

  TempDir() {
    std::string tmpl = (std::filesystem::temp_directory_path() / "crfp-XXXXXX").string();
    std::vector<char> buf(tmpl.begin(), tmpl.end());
    buf.push_back('\0');
    if (!mkdtemp(buf.data())) throw std::runtime_error("mkdtemp failed");
    path = buf.data();
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str(const std::string& rel = "") const {
    return rel.empty() ? path.string() : (path / rel).string();
  }
};

}  // namespace crfp::test
