#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ftbc/error.hpp"
#include "ftbc/tensor.hpp"

namespace ftbc {

enum class Split { train, calib, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::calib: return "calib";
    case Split::test: return "test";
  }
  return "?";
}

// Labelled samples; inputs is [N x sample_shape...].
struct Dataset {
  Tensor inputs;
  std::vector<std::size_t> labels;
  std::size_t classes = 0;
  Split split = Split::train;

  std::size_t size() const noexcept { return labels.size(); }

  Shape sample_shape() const { return Shape(inputs.shape().begin() + 1, inputs.shape().end()); }

  void validate() const {
    if (inputs.rank() < 2 || inputs.dim(0) != labels.size())
      throw ArgumentError("dataset has " + std::to_string(labels.size()) + " labels for inputs " +
                          shape_str(inputs.shape()));
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= classes)
        throw ArgumentError("label " + std::to_string(labels[i]) + " at index " + std::to_string(i) +
                            " is not below class count " + std::to_string(classes));
  }

  Tensor gather(std::span<const std::size_t> indices) const {
    Shape s = inputs.shape();
    s[0] = indices.size();
    const std::size_t row = inputs.stride(0);
    std::vector<double> data;
    data.reserve(indices.size() * row);
    for (std::size_t i : indices) {
      auto src = inputs.data().subspan(i * row, row);
      data.insert(data.end(), src.begin(), src.end());
    }
    return Tensor(std::move(s), std::move(data));
  }

  Dataset subset(std::span<const std::size_t> indices, Split as) const {
    Dataset d;
    d.inputs = gather(indices);
    d.classes = classes;
    d.split = as;
    for (std::size_t i : indices) d.labels.push_back(labels.at(i));
    return d;
  }

  Dataset head(std::size_t n, Split as) const {
    std::vector<std::size_t> idx(std::min(n, size()));
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return subset(idx, as);
  }
};

// Seeded permutation of [0, n).
inline std::vector<std::size_t> shuffled_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

// Isotropic unit-variance Gaussian blobs. Class means sit on scaled basis
// vectors (or seeded random unit directions when there are fewer features
// than classes) so that any two means are `separation` apart.
inline Dataset synth_dataset(std::size_t classes, const Shape& dims, std::size_t n, std::uint64_t seed,
                             double separation, Split split = Split::train) {
  if (classes < 2) throw ArgumentError("synth_dataset needs at least two classes");
  if (n < classes) throw ArgumentError("synth_dataset needs n >= classes");
  const std::size_t features = shape_size(dims);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(classes, std::vector<double>(features, 0.0));
  const double radius = separation / std::sqrt(2.0);
  if (features >= classes) {
    for (std::size_t k = 0; k < classes; ++k) means[k][k] = radius;
  } else {
    for (auto& m : means) {
      double norm = 0.0;
      for (double& v : m) {
        v = normal(rng);
        norm += v * v;
      }
      norm = std::sqrt(norm);
      for (double& v : m) v *= radius / norm;
    }
  }

  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<double> data;
  data.reserve(n * features);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t f = 0; f < features; ++f) data.push_back(means[labels[i]][f] + normal(rng));

  Shape shape = dims;
  shape.insert(shape.begin(), n);
  Dataset d{Tensor(std::move(shape), std::move(data)), std::move(labels), classes, split};
  return d;
}

}  // namespace ftbc
