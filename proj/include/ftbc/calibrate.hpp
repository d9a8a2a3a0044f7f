#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ftbc/ann.hpp"
#include "ftbc/dataset.hpp"
#include "ftbc/error.hpp"
#include "ftbc/evaluate.hpp"
#include "ftbc/snn.hpp"
#include "ftbc/tensor.hpp"

namespace ftbc {

// target_minus_observed: correction = mean(a - s), which moves the spike
// output toward the ANN activation. observed_minus_target flips it.
enum class CorrectionSign { target_minus_observed, observed_minus_target };

inline const char* to_string(CorrectionSign s) {
  return s == CorrectionSign::target_minus_observed ? "target_minus_observed" : "observed_minus_target";
}

inline CorrectionSign correction_sign_from_string(const std::string& s) {
  if (s == "target_minus_observed") return CorrectionSign::target_minus_observed;
  if (s == "observed_minus_target") return CorrectionSign::observed_minus_target;
  throw ArgumentError("unknown correction sign '" + s + "'");
}

struct CalibrationConfig {
  double alpha = 0.5;
  std::size_t iterations = 10;
  std::size_t batch_size = 32;
  std::size_t batches_per_iter = 2;
  std::size_t T = 32;
  std::uint64_t seed = 0;
  CorrectionSign sign = CorrectionSign::target_minus_observed;

  // alpha = 0 is accepted and turns calibration into a no-op.
  void validate() const {
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ArgumentError("alpha must be a finite non-negative real");
    if (iterations < 1 || batch_size < 1 || batches_per_iter < 1 || T < 1)
      throw ArgumentError("iterations, batch_size, batches_per_iter and T must all be >= 1");
  }
};

struct TrajectoryRow {
  std::size_t layer = 0;
  std::size_t iteration = 0;  // 1-based
  std::size_t t = 0;          // 1-based
  double gap_norm = 0.0;      // mean over channels of |channel_mean(a - s(t))|, averaged over the iteration's batches
  std::optional<double> accuracy;
};

struct CalibrationTrajectory {
  std::vector<TrajectoryRow> rows;

  void write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out.precision(17);
    out << "iteration,t,accuracy,layer,gap_norm\n";
    for (const auto& r : rows) {
      out << r.iteration << ',' << r.t << ',';
      if (r.accuracy) out << *r.accuracy;
      out << ',' << r.layer << ',' << r.gap_norm << '\n';
    }
    if (!out) throw IoError("write failed for " + path.string());
  }
};

// Sequential batches over a seed-shuffled ordering; each exhausted pass is
// followed by a fresh shuffle.
class BatchSampler {
public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_(batch_size), rng_(seed) {
    if (n_ == 0) throw ArgumentError("cannot sample batches from an empty dataset");
    reshuffle();
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    out.reserve(batch_);
    while (out.size() < batch_) {
      if (pos_ == order_.size()) reshuffle();
      out.push_back(order_[pos_++]);
    }
    return out;
  }

private:
  void reshuffle() {
    order_.resize(n_);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }

  std::size_t n_, batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
  std::size_t pos_ = 0;
};

inline double mean_abs(const Tensor& t) {
  double acc = 0.0;
  for (double v : t.data()) acc += std::abs(v);
  return t.size() ? acc / static_cast<double>(t.size()) : 0.0;
}

// Runs layer `layer` of the SNN one timestep on `snn_input` and returns the
// per-channel mean of (target - spikes), sign-flipped on request.
inline Tensor bias_corr_from_target(const SnnModel& snn, std::size_t layer, std::size_t t, const Tensor& target,
                                    const Tensor& snn_input, SnnState& state,
                                    CorrectionSign sign = CorrectionSign::target_minus_observed) {
  const Tensor s = spike_layer_forward(snn, layer, state, snn_input, bias_for(snn, layer, t));
  if (s.shape() != target.shape())
    throw DimensionError("ANN activation " + shape_str(target.shape()) + " vs SNN output " + shape_str(s.shape()) +
                         " at layer " + std::to_string(layer));
  Tensor corr = channel_mean(target - s);
  if (sign == CorrectionSign::observed_minus_target) corr = corr * -1.0;
  return corr;
}

// One correction for (layer, t): the ANN stage applied to its captured input
// x^(l-1) against the SNN layer driven by the previous layer's spikes.
inline Tensor bias_corr_step(const AnnModel& ann, const SnnModel& snn, std::size_t layer, std::size_t t,
                             const Tensor& ann_input, const Tensor& snn_input, SnnState& state,
                             CorrectionSign sign = CorrectionSign::target_minus_observed) {
  const auto st = stages(ann);
  if (layer + 1 >= st.size()) throw ArgumentError("layer " + std::to_string(layer) + " is not a spiking layer");
  const Tensor a = apply_stage(ann, st[layer], ann_input);
  return bias_corr_from_target(snn, layer, t, a, snn_input, state, sign);
}

namespace detail {

inline void check_shared_indexing(const AnnModel& ann, const SnnModel& snn) {
  validate(snn);
  if (ann.input_shape != snn.network.input_shape || spiking_channels(ann) != spiking_channels(snn.network))
    throw StructureError("ANN and SNN do not share spiking-layer indexing");
}

inline void check_finite(const Tensor& corr, std::size_t layer, std::size_t t) {
  for (double v : corr.data())
    if (!std::isfinite(v))
      throw CalibrationError("non-finite correction at layer " + std::to_string(layer) + ", t " + std::to_string(t));
}

// Drives layers [0, upto) for one timestep and returns the last spikes.
inline Tensor propagate(const SnnModel& snn, SnnState& state, const Tensor& input, std::size_t upto, std::size_t t) {
  Tensor s = input;
  for (std::size_t j = 0; j < upto; ++j) s = spike_layer_forward(snn, j, state, s, bias_for(snn, j, t));
  return s;
}

}  // namespace detail

struct TrackingOptions {
  const Dataset* validation = nullptr;      // when set, accuracy is recorded after every iteration
  std::vector<std::size_t> timesteps;       // defaults to 1..T
};

struct CalibrationResult {
  SnnModel snn;
  CalibrationTrajectory trajectory;
};

// Layer by layer, timestep by timestep forward bias calibration. For each
// sampled batch and t = 1..T the correction is added (times alpha) both to
// B[layer][t] and to the layer's live membrane potential before t + 1.
// Biases of earlier layers are frozen while a layer is calibrated.
inline CalibrationResult ftbc_calibrate(const AnnModel& ann, const SnnModel& snn, const Dataset& data,
                                        const CalibrationConfig& cfg, const TrackingOptions& tracking = {}) {
  cfg.validate();
  detail::check_shared_indexing(ann, snn);
  if (data.size() == 0) throw ArgumentError("calibration data is empty");

  CalibrationResult r{snn, {}};
  SnnModel& out = r.snn;
  out.bias.extend_horizon(cfg.T);
  const std::size_t layers = out.spiking_layers();

  std::vector<std::size_t> track_t = tracking.timesteps;
  if (track_t.empty())
    for (std::size_t t = 1; t <= cfg.T; ++t) track_t.push_back(t);

  for (std::size_t layer = 0; layer < layers; ++layer) {
    BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
      std::vector<double> gap(cfg.T, 0.0);
      for (std::size_t k = 0; k < cfg.batches_per_iter; ++k) {
        const auto idx = sampler.next();
        const Tensor x = data.gather(idx);
        const Tensor target = forward_collect(ann, x).activations[layer];
        SnnState state = make_state(out, idx.size());
        for (std::size_t t = 1; t <= cfg.T; ++t) {
          const Tensor s_in = detail::propagate(out, state, x, layer, t);
          const Tensor corr = bias_corr_from_target(out, layer, t, target, s_in, state, cfg.sign);
          detail::check_finite(corr, layer, t);
          const Tensor step = corr * cfg.alpha;
          Tensor& b = out.bias.at(layer, t);
          for (std::size_t c = 0; c < b.size(); ++c) b[c] += step[c];
          add_channel_bias(state.potentials[layer], step.data());
          gap[t - 1] += mean_abs(corr);
        }
      }

      std::vector<double> acc;
      if (tracking.validation) acc = evaluate(out, *tracking.validation, track_t);
      for (std::size_t t = 1; t <= cfg.T; ++t) {
        TrajectoryRow row{layer, it, t, gap[t - 1] / static_cast<double>(cfg.batches_per_iter), std::nullopt};
        const auto pos = std::find(track_t.begin(), track_t.end(), t);
        if (!acc.empty() && pos != track_t.end()) row.accuracy = acc[static_cast<std::size_t>(pos - track_t.begin())];
        r.trajectory.rows.push_back(row);
      }
    }
  }
  return r;
}

// Baseline: one time-independent bias per layer and channel, fitted to
// channel_mean(a - (1/T) sum_t s(t)) with the same batch schedule, then
// added to every timestep 1..T.
inline SnnModel avg_bias_calibrate(const AnnModel& ann, const SnnModel& snn, const Dataset& data,
                                   const CalibrationConfig& cfg) {
  cfg.validate();
  detail::check_shared_indexing(ann, snn);
  if (data.size() == 0) throw ArgumentError("calibration data is empty");

  SnnModel out = snn;
  out.bias.extend_horizon(cfg.T);
  const double inv_t = 1.0 / static_cast<double>(cfg.T);
  for (std::size_t layer = 0; layer < out.spiking_layers(); ++layer) {
    BatchSampler sampler(data.size(), cfg.batch_size, cfg.seed);
    Tensor avg({out.bias.channel_count(layer)});
    for (std::size_t step = 0; step < cfg.iterations * cfg.batches_per_iter; ++step) {
      const auto idx = sampler.next();
      const Tensor x = data.gather(idx);
      const Tensor target = forward_collect(ann, x).activations[layer];
      SnnState state = make_state(out, idx.size());
      Tensor rate(target.shape());
      for (std::size_t t = 1; t <= cfg.T; ++t) {
        const Tensor s_in = detail::propagate(out, state, x, layer, t);
        Tensor bias = avg;
        if (const Tensor* existing = bias_for(out, layer, t)) bias = bias + *existing;
        const Tensor s = spike_layer_forward(out, layer, state, s_in, &bias);
        for (std::size_t i = 0; i < rate.size(); ++i) rate[i] += s[i];
      }
      Tensor corr = channel_mean(target - rate * inv_t);
      if (cfg.sign == CorrectionSign::observed_minus_target) corr = corr * -1.0;
      detail::check_finite(corr, layer, 0);
      for (std::size_t c = 0; c < avg.size(); ++c) avg[c] += cfg.alpha * corr[c];
    }
    for (std::size_t t = 1; t <= cfg.T; ++t) {
      Tensor& b = out.bias.at(layer, t);
      for (std::size_t c = 0; c < b.size(); ++c) b[c] += avg[c];
    }
  }
  return out;
}

// Fraction of samples with x + b - 1 >= 0.
inline double expected_fire_rate(std::span<const double> samples, double b) {
  std::size_t fired = 0;
  for (double x : samples) fired += x + b - 1.0 >= 0.0;
  return samples.empty() ? 0.0 : static_cast<double>(fired) / static_cast<double>(samples.size());
}

// Stochastic search for b with E[H(x + b - 1)] = target: starting at b = 0,
// repeat b += step * (target - E_batch) on batches resampled with
// replacement.
inline double solve_bias_star(std::span<const double> samples, double target, double step, std::size_t iters,
                              std::size_t batch_size = 4096, std::uint64_t seed = 0) {
  if (samples.empty()) throw ArgumentError("solve_bias_star needs samples");
  if (!(step > 0.0)) throw ArgumentError("step must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::vector<double> batch(batch_size);
  double b = 0.0;
  for (std::size_t i = 0; i < iters; ++i) {
    for (double& x : batch) x = samples[pick(rng)];
    b += step * (target - expected_fire_rate(batch, b));
  }
  return b;
}

}  // namespace ftbc
