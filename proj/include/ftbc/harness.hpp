#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "ftbc/ann.hpp"
#include "ftbc/calibrate.hpp"
#include "ftbc/dataset.hpp"
#include "ftbc/error.hpp"
#include "ftbc/evaluate.hpp"
#include "ftbc/snn.hpp"
#include "ftbc/tensor.hpp"

namespace ftbc {

// gap[layer][t - 1] = channel_mean(a - s(t)) over the whole dataset.
using GapTable = std::vector<std::vector<Tensor>>;

inline GapTable expected_gap(const AnnModel& ann, const SnnModel& snn, const Dataset& data, std::size_t T,
                             std::size_t chunk = 64) {
  detail::check_shared_indexing(ann, snn);
  if (data.size() == 0) throw ArgumentError("expected_gap needs data");
  const auto channels = spiking_channels(snn.network);
  GapTable sums(channels.size());
  for (std::size_t l = 0; l < channels.size(); ++l) sums[l].assign(T, Tensor({channels[l]}));
  std::vector<double> counts(channels.size(), 0.0);

  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t n = std::min(chunk, data.size() - b);
    const Tensor x = data.inputs.slice_rows(b, n);
    const auto targets = forward_collect(ann, x).activations;
    const auto sim = simulate(snn, x, T, true);
    for (std::size_t l = 0; l < channels.size(); ++l) {
      const std::size_t inner = targets[l].stride(1);
      counts[l] += static_cast<double>(n * inner);
      for (std::size_t t = 0; t < T; ++t) {
        const Tensor& s = sim.trace->spikes[l][t];
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t c = 0; c < channels[l]; ++c) {
            const std::size_t base = (i * channels[l] + c) * inner;
            double acc = 0.0;
            for (std::size_t k = 0; k < inner; ++k) acc += targets[l][base + k] - s[base + k];
            sums[l][t][c] += acc;
          }
      }
    }
  }
  for (std::size_t l = 0; l < channels.size(); ++l)
    for (auto& g : sums[l]) g = g * (1.0 / counts[l]);
  return sums;
}

// mean_c |gap[layer][t][c]| for every (layer, t).
inline std::vector<std::vector<double>> gap_norms(const GapTable& gaps) {
  std::vector<std::vector<double>> out;
  for (const auto& layer : gaps) {
    out.emplace_back();
    for (const auto& g : layer) out.back().push_back(mean_abs(g));
  }
  return out;
}

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;

  std::size_t bin_of(double v) const {
    if (hi <= lo) return 0;
    const auto k = static_cast<std::size_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(counts.size())));
    return std::min(k, counts.size() - 1);
  }

  std::size_t total() const {
    std::size_t s = 0;
    for (auto c : counts) s += c;
    return s;
  }
};

inline Histogram make_histogram(const std::vector<double>& values, std::size_t bins) {
  if (bins == 0) throw ArgumentError("histogram needs at least one bin");
  Histogram h;
  h.counts.assign(bins, 0);
  if (values.empty()) return h;
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  h.lo = *mn;
  h.hi = *mx;
  for (double v : values) ++h.counts[h.bin_of(v)];
  return h;
}

// Pre-firing membrane potentials v_temp of every neuron of `channel` in
// `layer` at timestep t (1-based), across all samples.
inline std::vector<double> membrane_samples(const SnnModel& snn, const Dataset& data, std::size_t layer,
                                            std::size_t t, std::size_t channel = 0, std::size_t chunk = 64) {
  validate(snn);
  if (layer >= snn.spiking_layers()) throw ArgumentError("layer " + std::to_string(layer) + " out of range");
  if (t < 1) throw ArgumentError("timestep must be >= 1");
  if (channel >= snn.bias.channel_count(layer)) throw ArgumentError("channel out of range");
  std::vector<double> out;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t n = std::min(chunk, data.size() - b);
    const Tensor x = data.inputs.slice_rows(b, n);
    SnnState state = make_state(snn, n);
    Tensor pre;
    for (std::size_t step = 1; step <= t; ++step) {
      const Tensor s_in = detail::propagate(snn, state, x, layer, step);
      spike_layer_forward(snn, layer, state, s_in, bias_for(snn, layer, step), &pre);
    }
    const std::size_t channels = pre.dim(1), inner = pre.stride(1);
    for (std::size_t i = 0; i < n; ++i) {
      auto src = pre.data().subspan((i * channels + channel) * inner, inner);
      out.insert(out.end(), src.begin(), src.end());
    }
  }
  return out;
}

inline Histogram membrane_histogram(const SnnModel& snn, const Dataset& data, std::size_t layer, std::size_t t,
                                    std::size_t bins, std::size_t channel = 0) {
  return make_histogram(membrane_samples(snn, data, layer, t, channel), bins);
}

// Share of non-empty bins among those spanning the interquartile range of
// `values`. A diversity proxy for the membrane distribution.
inline double interquartile_occupancy(const std::vector<double>& values, const Histogram& h) {
  if (values.empty()) return 0.0;
  const std::size_t first = h.bin_of(percentile(values, 25.0));
  const std::size_t last = h.bin_of(percentile(values, 75.0));
  std::size_t filled = 0;
  for (std::size_t k = first; k <= last; ++k) filled += h.counts[k] > 0;
  return static_cast<double>(filled) / static_cast<double>(last - first + 1);
}

// ---------------------------------------------------------------------------
// Sweep of the scalar bias search over input distributions on [0, 1].

inline std::vector<double> draw_samples(const std::string& distribution, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.5, 0.15);
  std::vector<double> out(n);
  for (double& x : out) {
    if (distribution == "uniform") x = u(rng);
    else if (distribution == "triangular") x = 0.5 * (u(rng) + u(rng));
    else if (distribution == "clipped_normal") x = std::clamp(g(rng), 0.0, 1.0);
    else throw ArgumentError("unknown distribution '" + distribution + "'");
  }
  return out;
}

// b with P(x >= 1 - b) = target: closed form for uniform and triangular,
// empirical quantile otherwise.
inline double reference_bias(const std::string& distribution, double target, const std::vector<double>& samples) {
  if (distribution == "uniform") return std::clamp(target, 0.0, 1.0);
  if (distribution == "triangular")
    return target <= 0.5 ? std::sqrt(target / 2.0) : 1.0 - std::sqrt((1.0 - target) / 2.0);
  return 1.0 - percentile(samples, 100.0 * (1.0 - target));
}

struct Prop1Row {
  std::string distribution;
  double target = 0.0;
  double b = 0.0;
  double achieved = 0.0;   // E[H(x + b - 1)] over all samples
  double reference = 0.0;  // reference_bias
};

inline std::vector<Prop1Row> prop1_sweep(const std::vector<std::string>& distributions,
                                         const std::vector<double>& targets, std::size_t n, double step,
                                         std::size_t iters, std::uint64_t seed) {
  std::vector<Prop1Row> rows;
  for (const auto& d : distributions) {
    const auto samples = draw_samples(d, n, seed);
    for (double target : targets) {
      const double b = solve_bias_star(samples, target, step, iters, 4096, seed + 1);
      rows.push_back({d, target, b, expected_fire_rate(samples, b), reference_bias(d, target, samples)});
    }
  }
  return rows;
}

}  // namespace ftbc
