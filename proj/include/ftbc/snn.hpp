#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "ftbc/ann.hpp"
#include "ftbc/error.hpp"
#include "ftbc/tensor.hpp"

namespace ftbc {

enum class InitialPotential { zero, half_threshold };

inline const char* to_string(InitialPotential p) {
  return p == InitialPotential::zero ? "zero" : "half_threshold";
}

inline InitialPotential initial_potential_from_string(const std::string& s) {
  if (s == "zero") return InitialPotential::zero;
  if (s == "half_threshold") return InitialPotential::half_threshold;
  throw ArgumentError("unknown initial potential policy '" + s + "'");
}

// Additive per-channel membrane bias B[layer][t] for t in [1, horizon].
// Layers without entries (and every t past the horizon) contribute nothing.
class BiasTable {
public:
  BiasTable() = default;
  explicit BiasTable(std::vector<std::size_t> channel_counts)
      : channels_(std::move(channel_counts)), entries_(channels_.size()) {}

  std::size_t layers() const noexcept { return channels_.size(); }
  std::size_t horizon() const noexcept { return horizon_; }
  std::size_t channel_count(std::size_t layer) const { return channels_.at(layer); }
  const std::vector<std::size_t>& channel_counts() const noexcept { return channels_; }
  bool has_layer(std::size_t layer) const { return !entries_.at(layer).empty(); }

  // Grows (never shrinks) the horizon; materialized layers get zero entries
  // for the new timesteps.
  void extend_horizon(std::size_t horizon) {
    if (horizon <= horizon_) return;
    horizon_ = horizon;
    for (std::size_t l = 0; l < entries_.size(); ++l)
      if (!entries_[l].empty()) entries_[l].resize(horizon_, Tensor({channels_[l]}));
  }

  const Tensor* find(std::size_t layer, std::size_t t) const {
    if (layer >= entries_.size() || t == 0 || t > horizon_ || entries_[layer].empty()) return nullptr;
    return &entries_[layer][t - 1];
  }

  // Mutable entry; materializes the layer as zeros on first access.
  Tensor& at(std::size_t layer, std::size_t t) {
    check(layer, t);
    auto& row = entries_[layer];
    if (row.empty()) row.assign(horizon_, Tensor({channels_[layer]}));
    return row[t - 1];
  }

  void set(std::size_t layer, std::size_t t, Tensor bias) {
    check(layer, t);
    if (bias.rank() != 1 || bias.size() != channels_[layer])
      throw DimensionError("bias for layer " + std::to_string(layer) + " must have " +
                           std::to_string(channels_[layer]) + " channels, got " + shape_str(bias.shape()));
    at(layer, t) = std::move(bias);
  }

  bool operator==(const BiasTable&) const = default;

private:
  void check(std::size_t layer, std::size_t t) const {
    if (layer >= channels_.size()) throw ArgumentError("bias layer " + std::to_string(layer) + " out of range");
    if (t == 0 || t > horizon_)
      throw ArgumentError("bias timestep " + std::to_string(t) + " outside [1, " + std::to_string(horizon_) + "]");
  }

  std::vector<std::size_t> channels_;
  std::size_t horizon_ = 0;
  std::vector<std::vector<Tensor>> entries_;
};

// Converted network. `network` is the ANN expressed in the SNN's units
// (batchnorm folded, weights scaled when requested); its activations are the
// calibration targets and its affine stages feed the IF neurons.
struct SnnModel {
  AnnModel network;
  std::vector<Tensor> thresholds;  // per spiking layer, one value per channel
  InitialPotential initial_potential = InitialPotential::zero;
  BiasTable bias;
  std::string readout = "mean_accumulated";

  std::size_t spiking_layers() const { return thresholds.size(); }

  bool operator==(const SnnModel&) const = default;
};

// Output channel count of every spiking layer.
inline std::vector<std::size_t> spiking_channels(const AnnModel& model) {
  const auto shapes = layer_shapes(model);
  std::vector<std::size_t> out;
  for (const Stage& s : stages(model))
    if (s.spiking) out.push_back(shapes[s.end][0]);
  return out;
}

inline void validate(const SnnModel& m) {
  const auto channels = spiking_channels(m.network);
  if (m.thresholds.size() != channels.size())
    throw StructureError("snn has " + std::to_string(m.thresholds.size()) + " thresholds for " +
                         std::to_string(channels.size()) + " spiking layers");
  for (std::size_t l = 0; l < channels.size(); ++l) {
    if (m.thresholds[l].size() != channels[l])
      throw DimensionError("threshold of layer " + std::to_string(l) + " has " +
                           std::to_string(m.thresholds[l].size()) + " entries, expected " + std::to_string(channels[l]));
    for (double th : m.thresholds[l].data())
      if (!(th > 0.0)) throw ArgumentError("non-positive threshold in layer " + std::to_string(l));
  }
  if (m.bias.channel_counts() != channels) throw DimensionError("bias table does not match the layer channels");
  if (m.readout != "mean_accumulated") throw ArgumentError("unsupported readout '" + m.readout + "'");
}

// Membrane potentials of one in-flight simulation over a batch.
struct SnnState {
  std::vector<Stage> stages;
  std::vector<Tensor> potentials;  // per spiking layer, [B x layer output shape]
  std::size_t t = 0;
};

inline Tensor initial_potential(const SnnModel& m, std::size_t layer, const Shape& batch_shape) {
  Tensor v(batch_shape);
  if (m.initial_potential == InitialPotential::half_threshold) {
    const std::size_t channels = v.dim(1), inner = v.stride(1);
    for (std::size_t b = 0; b < v.dim(0); ++b)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < inner; ++i) v[(b * channels + c) * inner + i] = 0.5 * m.thresholds[layer][c];
  }
  return v;
}

inline SnnState make_state(const SnnModel& m, std::size_t batch) {
  SnnState s;
  s.stages = stages(m.network);
  const auto shapes = layer_shapes(m.network);
  for (std::size_t l = 0; l + 1 < s.stages.size(); ++l) {
    Shape shape = shapes[s.stages[l].end];
    shape.insert(shape.begin(), batch);
    s.potentials.push_back(initial_potential(m, l, shape));
  }
  return s;
}

inline const Tensor* bias_for(const SnnModel& m, std::size_t layer, std::size_t t) { return m.bias.find(layer, t); }

// One timestep of one IF layer with soft reset:
//   v_temp = v + layer(input) (+ bias per channel)
//   spike  = theta where v_temp >= theta, else 0
//   v      = v_temp - spike
// Returns the theta-weighted spikes. `pre_fire` receives v_temp if given.
inline Tensor spike_layer_forward(const SnnModel& m, std::size_t layer, SnnState& state, const Tensor& input,
                                  const Tensor* bias, Tensor* pre_fire = nullptr) {
  if (layer >= state.potentials.size()) throw ArgumentError("spiking layer " + std::to_string(layer) + " out of range");
  const Tensor x = apply_stage_linear(m.network, state.stages[layer], input);
  Tensor& v = state.potentials[layer];
  if (x.shape() != v.shape())
    throw DimensionError("layer " + std::to_string(layer) + " input produced " + shape_str(x.shape()) +
                         ", potential is " + shape_str(v.shape()));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] += x[i];
  if (bias) {
    if (bias->size() != v.dim(1))
      throw DimensionError("bias length " + std::to_string(bias->size()) + " for " + std::to_string(v.dim(1)) +
                           " channels in layer " + std::to_string(layer));
    add_channel_bias(v, bias->data());
  }
  if (pre_fire) *pre_fire = v;

  const Tensor& theta = m.thresholds[layer];
  Tensor spikes(v.shape());
  const std::size_t channels = v.dim(1), inner = v.stride(1);
  for (std::size_t b = 0; b < v.dim(0); ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const double th = theta[c];
      const std::size_t base = (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i)
        if (v[base + i] >= th) {
          spikes[base + i] = th;
          v[base + i] -= th;
        }
    }
  return spikes;
}

inline Tensor readout_forward(const SnnModel& m, const SnnState& state, const Tensor& last_spikes) {
  return apply_stage_linear(m.network, state.stages.back(), last_spikes);
}

// Full record of a simulation: per (layer, t) spikes, initial and residual
// potentials, and the analog input that drove layer 0.
struct SpikeTrace {
  Tensor input;
  std::vector<std::vector<Tensor>> spikes;  // [layer][t - 1]
  std::vector<Tensor> initial;              // v[0]
  std::vector<Tensor> residual;             // v[T]
};

struct SimulationResult {
  std::vector<Tensor> readout;  // [t - 1] -> [B x classes], accumulated / t
  std::optional<SpikeTrace> trace;
};

// Constant-encoded simulation of a batch for T timesteps.
inline SimulationResult simulate(const SnnModel& m, const Tensor& input, std::size_t T, bool record = false) {
  if (T < 1) throw ArgumentError("simulate requires T >= 1");
  validate(m);
  check_batch_shape(m.network, input);
  SnnState state = make_state(m, input.dim(0));
  const std::size_t layers = state.potentials.size();

  SimulationResult r;
  if (record) {
    r.trace.emplace();
    r.trace->input = input;
    r.trace->spikes.resize(layers);
    r.trace->initial = state.potentials;
  }
  Tensor acc;
  for (std::size_t t = 1; t <= T; ++t) {
    state.t = t;
    Tensor s = input;
    for (std::size_t l = 0; l < layers; ++l) {
      s = spike_layer_forward(m, l, state, s, bias_for(m, l, t));
      if (record) r.trace->spikes[l].push_back(s);
    }
    Tensor out = readout_forward(m, state, s);
    if (acc.empty()) acc = std::move(out);
    else
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += out[i];
    r.readout.push_back(acc * (1.0 / static_cast<double>(t)));
  }
  if (record) r.trace->residual = state.potentials;
  return r;
}

// Largest violation, per layer and in units of the channel threshold, of the
// time-averaged balance
//   (1/T) sum_t s[t] = layer((1/T) sum_t s_in[t]) + (1/T) sum_t b[t] + (v[0] - v[T]) / T.
inline std::vector<double> rate_identity_check(const SpikeTrace& trace, const SnnModel& m, std::size_t T) {
  if (T < 1) throw ArgumentError("rate_identity_check requires T >= 1");
  const auto st = stages(m.network);
  const double inv_t = 1.0 / static_cast<double>(T);
  std::vector<double> out;
  for (std::size_t l = 0; l < trace.spikes.size(); ++l) {
    if (trace.spikes[l].size() < T) throw ArgumentError("trace shorter than T");
    Tensor mean_in;
    if (l == 0) {
      mean_in = trace.input;
    } else {
      mean_in = Tensor(trace.spikes[l - 1][0].shape());
      for (std::size_t t = 0; t < T; ++t)
        for (std::size_t i = 0; i < mean_in.size(); ++i) mean_in[i] += trace.spikes[l - 1][t][i];
      mean_in = mean_in * inv_t;
    }
    Tensor rhs = apply_stage_linear(m.network, st[l], mean_in);
    Tensor bias_sum({rhs.dim(1)});
    for (std::size_t t = 1; t <= T; ++t)
      if (const Tensor* b = bias_for(m, l, t))
        for (std::size_t c = 0; c < bias_sum.size(); ++c) bias_sum[c] += (*b)[c];
    add_channel_bias(rhs, (bias_sum * inv_t).data());
    for (std::size_t i = 0; i < rhs.size(); ++i) rhs[i] += (trace.initial[l][i] - trace.residual[l][i]) * inv_t;

    const std::size_t channels = rhs.dim(1), inner = rhs.stride(1);
    double worst = 0.0;
    for (std::size_t b = 0; b < rhs.dim(0); ++b)
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t i = 0; i < inner; ++i) {
          const std::size_t at = (b * channels + c) * inner + i;
          double lhs = 0.0;
          for (std::size_t t = 0; t < T; ++t) lhs += trace.spikes[l][t][at];
          worst = std::max(worst, std::abs(lhs * inv_t - rhs[at]) / m.thresholds[l][c]);
        }
    out.push_back(worst);
  }
  return out;
}

}  // namespace ftbc
