#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "ftbc/ann.hpp"
#include "ftbc/dataset.hpp"
#include "ftbc/error.hpp"
#include "ftbc/snn.hpp"
#include "ftbc/tensor.hpp"

namespace ftbc {

enum class ThresholdKind { max, percentile };
enum class Granularity { layer, channel };

inline constexpr double kMinThreshold = 1e-6;

struct ThresholdPolicy {
  ThresholdKind kind = ThresholdKind::percentile;
  double p = 99.9;
  Granularity granularity = Granularity::channel;

  void validate() const {
    if (kind == ThresholdKind::percentile && !(p > 0.0 && p <= 100.0))
      throw ArgumentError("percentile p must lie in (0, 100]");
  }
};

struct ConversionConfig {
  ThresholdPolicy threshold_policy;
  bool scale_weights = true;
  InitialPotential initial_potential_policy = InitialPotential::zero;
  std::size_t calibration_samples = 512;

  void validate() const {
    threshold_policy.validate();
    if (calibration_samples < 1) throw ArgumentError("calibration_samples must be >= 1");
  }
};

// Threshold per spiking layer (one value per channel; layer granularity
// repeats the layer statistic) from the ANN's post-activation values.
inline std::vector<Tensor> init_thresholds(const AnnModel& model, const Dataset& data, const ThresholdPolicy& policy,
                                           std::size_t chunk = 128) {
  policy.validate();
  if (data.size() == 0) throw ArgumentError("threshold initialization needs at least one sample");
  const auto channels = spiking_channels(model);
  if (channels.empty()) throw StructureError("model has no spiking-equivalent layer");

  // values[layer][channel]
  std::vector<std::vector<std::vector<double>>> values(channels.size());
  for (std::size_t l = 0; l < channels.size(); ++l) values[l].resize(channels[l]);
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const auto fr = forward_collect(model, data.inputs.slice_rows(b, std::min(chunk, data.size() - b)));
    for (std::size_t l = 0; l < channels.size(); ++l) {
      const Tensor& a = fr.activations[l];
      const std::size_t c_n = a.dim(1), inner = a.stride(1);
      for (std::size_t s = 0; s < a.dim(0); ++s)
        for (std::size_t c = 0; c < c_n; ++c) {
          auto src = a.data().subspan((s * c_n + c) * inner, inner);
          values[l][c].insert(values[l][c].end(), src.begin(), src.end());
        }
    }
  }

  const auto statistic = [&](const std::vector<double>& v) {
    return policy.kind == ThresholdKind::max ? *std::max_element(v.begin(), v.end()) : percentile(v, policy.p);
  };

  std::vector<Tensor> out;
  for (std::size_t l = 0; l < channels.size(); ++l) {
    double layer_max = 0.0;
    for (const auto& v : values[l]) layer_max = std::max(layer_max, *std::max_element(v.begin(), v.end()));
    if (!(layer_max > 0.0))
      throw ThresholdError("spiking layer " + std::to_string(l) + " has only zero activations on the sample set");
    Tensor th({channels[l]});
    if (policy.granularity == Granularity::channel) {
      for (std::size_t c = 0; c < channels[l]; ++c) th[c] = std::max(statistic(values[l][c]), kMinThreshold);
    } else {
      std::vector<double> all;
      for (const auto& v : values[l]) all.insert(all.end(), v.begin(), v.end());
      const double s = std::max(statistic(all), kMinThreshold);
      for (double& v : th.data()) v = s;
    }
    out.push_back(std::move(th));
  }
  return out;
}

struct ScaledModel {
  AnnModel model;
  std::vector<Tensor> thresholds;  // all ones
};

// Rescales every weighted layer by theta_prev / theta_cur (per input and
// output channel, theta = 1 for the analog input and the readout) and its
// bias by 1 / theta_cur, so every threshold becomes 1. Capped activations get
// a matching per-channel scale so the scaled ANN computes a / theta.
inline ScaledModel scale_weights(const AnnModel& model, const std::vector<Tensor>& thresholds) {
  const auto st = stages(model);
  const auto shapes = layer_shapes(model);
  if (thresholds.size() + 1 != st.size())
    throw ArgumentError("expected " + std::to_string(st.size() - 1) + " threshold tensors, got " +
                        std::to_string(thresholds.size()));
  for (std::size_t l = 0; l < thresholds.size(); ++l)
    for (double v : thresholds[l].data())
      if (!(v > 0.0)) throw ArgumentError("non-positive threshold in layer " + std::to_string(l));

  ScaledModel out{model, {}};
  for (std::size_t l = 0; l < st.size(); ++l) {
    const Stage& s = st[l];
    for (std::size_t j = s.begin; j < s.end; ++j)
      if (std::holds_alternative<BatchNormLayer>(out.model.layers[j]))
        throw StructureError("fold batchnorm before scaling weights");
    const Shape& in_shape = shapes[s.weighted];
    const std::size_t spatial = in_shape.size() == 3 ? in_shape[1] * in_shape[2] : 1;
    const auto prev = [&](std::size_t in_channel) { return l == 0 ? 1.0 : thresholds[l - 1][in_channel]; };
    const auto cur = [&](std::size_t out_channel) { return s.spiking ? thresholds[l][out_channel] : 1.0; };

    std::visit(
        [&](auto& w) {
          using L = std::decay_t<decltype(w)>;
          if constexpr (std::is_same_v<L, LinearLayer>) {
            const std::size_t n_out = w.weight.dim(0), n_in = w.weight.dim(1);
            for (std::size_t o = 0; o < n_out; ++o) {
              for (std::size_t i = 0; i < n_in; ++i) w.weight[o * n_in + i] *= prev(i / spatial) / cur(o);
              w.bias[o] /= cur(o);
            }
          } else if constexpr (std::is_same_v<L, Conv2dLayer>) {
            const std::size_t n_out = w.weight.dim(0), n_in = w.weight.dim(1), k = w.weight.stride(1);
            for (std::size_t o = 0; o < n_out; ++o) {
              for (std::size_t i = 0; i < n_in; ++i)
                for (std::size_t q = 0; q < k; ++q) w.weight[(o * n_in + i) * k + q] *= prev(i) / cur(o);
              w.bias[o] /= cur(o);
            }
          }
        },
        out.model.layers[s.weighted]);

    if (s.spiking) {
      auto& act = std::get<ActivationLayer>(out.model.layers[s.end]);
      if (act.spec.name != ActivationKind::relu) {
        Tensor scale = act.scale.empty() ? Tensor({thresholds[l].size()}, 1.0) : act.scale;
        for (std::size_t c = 0; c < scale.size(); ++c) scale[c] *= thresholds[l][c];
        act.scale = std::move(scale);
      }
      out.thresholds.emplace_back(Shape{thresholds[l].size()}, 1.0);
    }
  }
  return out;
}

// Folds batchnorm, sets thresholds from the first `calibration_samples`
// samples of `data`, optionally normalizes to unit thresholds, and attaches
// an empty bias table.
inline SnnModel build_snn(const AnnModel& model, const ConversionConfig& config, const Dataset& data) {
  config.validate();
  AnnModel folded = fold_batchnorm(model);
  const Dataset sample = data.head(config.calibration_samples, Split::calib);
  auto thresholds = init_thresholds(folded, sample, config.threshold_policy);

  SnnModel snn;
  if (config.scale_weights) {
    auto scaled = scale_weights(folded, thresholds);
    snn.network = std::move(scaled.model);
    snn.thresholds = std::move(scaled.thresholds);
  } else {
    snn.network = std::move(folded);
    snn.thresholds = std::move(thresholds);
  }
  snn.initial_potential = config.initial_potential_policy;
  snn.bias = BiasTable(spiking_channels(snn.network));
  validate(snn);
  return snn;
}

}  // namespace ftbc
