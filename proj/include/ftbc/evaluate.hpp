#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "ftbc/ann.hpp"
#include "ftbc/dataset.hpp"
#include "ftbc/error.hpp"
#include "ftbc/snn.hpp"

namespace ftbc {

// Accuracy of argmax(readout[t]) at each requested timestep. Every chunk of
// samples is simulated once up to the largest requested t.
inline std::vector<double> evaluate(const SnnModel& snn, const Dataset& data, const std::vector<std::size_t>& timesteps,
                                    std::size_t chunk = 64) {
  if (timesteps.empty()) return {};
  for (std::size_t i = 0; i < timesteps.size(); ++i)
    if (timesteps[i] == 0 || (i > 0 && timesteps[i] <= timesteps[i - 1]))
      throw ArgumentError("evaluation timesteps must be positive and strictly increasing");
  const std::size_t horizon = timesteps.back();
  std::vector<std::size_t> hits(timesteps.size(), 0);
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t n = std::min(chunk, data.size() - b);
    const auto sim = simulate(snn, data.inputs.slice_rows(b, n), horizon, false);
    for (std::size_t k = 0; k < timesteps.size(); ++k) {
      const auto pred = argmax_rows(sim.readout[timesteps[k] - 1]);
      for (std::size_t i = 0; i < n; ++i) hits[k] += pred[i] == data.labels[b + i];
    }
  }
  std::vector<double> acc;
  for (std::size_t h : hits)
    acc.push_back(data.size() ? static_cast<double>(h) / static_cast<double>(data.size()) : 0.0);
  return acc;
}

}  // namespace ftbc
