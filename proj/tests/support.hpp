#pragma once

#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <vector>

#include "ftbc/ann.hpp"
#include "ftbc/dataset.hpp"
#include "ftbc/tensor.hpp"

#ifndef FTBC_DATA_DIR
#define FTBC_DATA_DIR "data"
#endif

namespace testing_support {

using ftbc::Shape;
using ftbc::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Small conv net: conv(3x3) relu [avgpool] conv relu, linear readout.
inline ftbc::AnnModel tiny_cnn(std::uint64_t seed, std::size_t in_ch = 1, std::size_t hw = 4) {
  return ftbc::make_cnn({in_ch, hw, hw}, {{3, true}, {4, false}}, 3, seed);
}

inline ftbc::Dataset random_inputs(const Shape& sample, std::size_t n, std::uint64_t seed, double lo = 0.0,
                                   double hi = 1.0) {
  std::mt19937_64 rng(seed);
  Shape s = sample;
  s.insert(s.begin(), n);
  ftbc::Dataset d;
  d.inputs = random_tensor(s, rng, lo, hi);
  d.classes = 3;
  for (std::size_t i = 0; i < n; ++i) d.labels.push_back(i % 3);
  return d;
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() / ("ftbc_" + tag + "_" + std::to_string(rd()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
  std::filesystem::path path_;
};

inline std::filesystem::path digits_dir() { return FTBC_DATA_DIR "/digits"; }

}  // namespace testing_support
