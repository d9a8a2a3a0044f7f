#pragma once

// End-to-end helpers: load data, train, convert, calibrate, evaluate.

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

#include "ftbc/ann.hpp"
#include "ftbc/calibrate.hpp"
#include "ftbc/config.hpp"
#include "ftbc/convert.hpp"
#include "ftbc/dataset.hpp"
#include "ftbc/evaluate.hpp"
#include "ftbc/harness.hpp"
#include "ftbc/idx.hpp"
#include "ftbc/report.hpp"
#include "ftbc/snn.hpp"

namespace ftbc {

struct DataSplits {
  Dataset train;
  Dataset test;
};

inline DataSplits load_data(const DataConfig& cfg, std::uint64_t seed) {
  if (cfg.kind == "synthetic")
    return {synth_dataset(cfg.classes, cfg.dims, cfg.n_train, seed, cfg.separation, Split::train),
            synth_dataset(cfg.classes, cfg.dims, cfg.n_test, seed + 7919, cfg.separation, Split::test)};
  for (const auto& p : {cfg.train_images, cfg.train_labels, cfg.test_images, cfg.test_labels}) {
    if (p.empty()) throw ConfigError("data.kind 'idx' needs train_images, train_labels, test_images and test_labels");
    if (!std::filesystem::exists(p)) throw IoError("data file " + p.string() + " does not exist");
  }
  DataSplits d{idx::load_idx(cfg.train_images, cfg.train_labels, Split::train),
               idx::load_idx(cfg.test_images, cfg.test_labels, Split::test)};
  d.test.classes = d.train.classes = std::max(d.train.classes, d.test.classes);
  return d;
}

inline AnnModel build_model(const ModelConfig& cfg, const Shape& input_shape, std::size_t classes, std::uint64_t seed) {
  if (cfg.arch == "mlp") return make_mlp(input_shape, cfg.hidden, classes, seed);
  return make_desk_cnn(input_shape, classes, seed);
}

inline TrainResult train_model(const AppConfig& cfg, const Dataset& train) {
  TrainOptions opt = cfg.train;
  opt.seed = cfg.seed;
  return train_sgd(build_model(cfg.model, train.sample_shape(), train.classes, cfg.seed), train, opt);
}

// Seed-shuffled training subset used for thresholds and bias calibration.
inline Dataset calibration_set(const Dataset& train, std::size_t samples, std::uint64_t seed) {
  auto order = shuffled_indices(train.size(), seed);
  order.resize(std::min(samples, order.size()));
  return train.subset(order, Split::calib);
}

inline SnnModel convert_model(const AppConfig& cfg, const AnnModel& ann, const Dataset& train) {
  return build_snn(ann, cfg.conversion, calibration_set(train, cfg.conversion.calibration_samples, cfg.seed));
}

inline const std::vector<std::string>& method_names() {
  static const std::vector<std::string> names{"vanilla", "ftbc", "avgbias"};
  return names;
}

// Applies one calibration method to a converted SNN. Targets are the
// activations of the SNN's own network, i.e. the ANN in threshold units.
inline SnnModel calibrate_method(const std::string& method, const SnnModel& snn, const Dataset& calib,
                                 const CalibrationConfig& cfg, CalibrationTrajectory* trajectory = nullptr,
                                 const TrackingOptions& tracking = {}) {
  if (method == "vanilla") return snn;
  if (method == "ftbc") {
    auto r = ftbc_calibrate(snn.network, snn, calib, cfg, tracking);
    if (trajectory) *trajectory = std::move(r.trajectory);
    return std::move(r.snn);
  }
  if (method == "avgbias") return avg_bias_calibrate(snn.network, snn, calib, cfg);
  throw ArgumentError("unknown method '" + method + "' (expected vanilla, ftbc or avgbias)");
}

// Trains, converts and evaluates every method on the test split.
inline RunReport run_experiment(const AppConfig& cfg, const std::vector<std::string>& methods) {
  const auto start = std::chrono::steady_clock::now();
  const DataSplits data = load_data(cfg.data, cfg.seed);
  const TrainResult trained = train_model(cfg, data.train);
  const SnnModel snn = convert_model(cfg, trained.model, data.train);
  const Dataset calib = calibration_set(data.train, cfg.conversion.calibration_samples, cfg.seed);

  RunReport report(accuracy(trained.model, data.test), cfg.seed);
  for (const auto& m : methods) {
    const SnnModel calibrated = calibrate_method(m, snn, calib, cfg.calibration);
    report.add_method(m, cfg.timesteps, evaluate(calibrated, data.test, cfg.timesteps));
  }
  report.set_config(cfg.to_json());
  report.set_seconds(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  return report;
}

}  // namespace ftbc
