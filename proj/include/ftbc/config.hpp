#pragma once

// Experiment configuration shared by every CLI command. JSON layout:
//
//   {
//     "seed": 1,
//     "data": {"kind": "idx", "train_images": ..., "train_labels": ...,
//              "test_images": ..., "test_labels": ...}
//          or {"kind": "synthetic", "classes": 4, "dims": [16], "n_train": 800,
//              "n_test": 400, "separation": 4.0},
//     "model": {"arch": "cnn" | "mlp", "hidden": [64, 32]},
//     "train": {"epochs": 30, "lr": 0.02, "batch_size": 32, "momentum": 0.9},
//     "conversion": {"threshold_policy": {"kind": "percentile", "p": 99.9, "granularity": "channel"},
//                    "scale_weights": true, "initial_potential_policy": "zero",
//                    "calibration_samples": 512},
//     "calibration": {"alpha": 0.5, "iterations": 10, "batch_size": 32,
//                     "batches_per_iter": 2, "T": 32, "seed": 1,
//                     "sign": "target_minus_observed"},
//     "eval": {"timesteps": [1, 2, 4, 8, 16, 32, 64, 128, 256]}
//   }
//
// Every field is optional; relative paths resolve against the config file.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

#include "ftbc/ann.hpp"
#include "ftbc/calibrate.hpp"
#include "ftbc/convert.hpp"
#include "ftbc/error.hpp"
#include "ftbc/model_io.hpp"

namespace ftbc {

struct DataConfig {
  std::string kind = "idx";
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t classes = 4;
  Shape dims{16};
  std::size_t n_train = 800;
  std::size_t n_test = 400;
  double separation = 4.0;
};

struct ModelConfig {
  std::string arch = "cnn";
  std::vector<std::size_t> hidden{64, 32};
};

struct AppConfig {
  std::uint64_t seed = 1;
  DataConfig data;
  ModelConfig model;
  TrainOptions train{30, 0.02, 1, 32, 0.9};
  ConversionConfig conversion;
  CalibrationConfig calibration{0.5, 10, 32, 2, 32, 1, CorrectionSign::target_minus_observed};
  std::vector<std::size_t> timesteps{1, 2, 4, 8, 16, 32, 64, 128, 256};

  io::Json to_json() const {
    io::Json j;
    j["seed"] = seed;
    if (data.kind == "idx")
      j["data"] = {{"kind", data.kind},
                   {"train_images", data.train_images.string()},
                   {"train_labels", data.train_labels.string()},
                   {"test_images", data.test_images.string()},
                   {"test_labels", data.test_labels.string()}};
    else
      j["data"] = {{"kind", data.kind},         {"classes", data.classes}, {"dims", data.dims},
                   {"n_train", data.n_train},   {"n_test", data.n_test},   {"separation", data.separation}};
    j["model"] = {{"arch", model.arch}, {"hidden", model.hidden}};
    j["train"] = {{"epochs", train.epochs}, {"lr", train.lr}, {"batch_size", train.batch_size}, {"momentum", train.momentum}};
    const auto& tp = conversion.threshold_policy;
    j["conversion"] = {
        {"threshold_policy",
         {{"kind", tp.kind == ThresholdKind::max ? "max" : "percentile"},
          {"p", tp.p},
          {"granularity", tp.granularity == Granularity::layer ? "layer" : "channel"}}},
        {"scale_weights", conversion.scale_weights},
        {"initial_potential_policy", to_string(conversion.initial_potential_policy)},
        {"calibration_samples", conversion.calibration_samples}};
    j["calibration"] = {{"alpha", calibration.alpha},
                        {"iterations", calibration.iterations},
                        {"batch_size", calibration.batch_size},
                        {"batches_per_iter", calibration.batches_per_iter},
                        {"T", calibration.T},
                        {"seed", calibration.seed},
                        {"sign", to_string(calibration.sign)}};
    j["eval"] = {{"timesteps", timesteps}};
    return j;
  }
};

namespace detail {

inline void check_keys(const io::Json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw ConfigError("config section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
}

template <typename T>
void read_field(const io::Json& j, const char* key, T& out, const std::string& section) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace detail

inline AppConfig config_from_json(const io::Json& j, const std::filesystem::path& base = {}) {
  using detail::check_keys;
  using detail::read_field;
  AppConfig c;
  check_keys(j, {"seed", "data", "model", "train", "conversion", "calibration", "eval"}, "");
  read_field(j, "seed", c.seed, "");
  c.train.seed = c.seed;
  c.calibration.seed = c.seed;

  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"kind", "train_images", "train_labels", "test_images", "test_labels", "classes", "dims", "n_train",
                   "n_test", "separation"},
               "data");
    read_field(d, "kind", c.data.kind, "data");
    if (c.data.kind != "idx" && c.data.kind != "synthetic") throw ConfigError("data.kind must be 'idx' or 'synthetic'");
    for (auto [key, field] : {std::pair{"train_images", &c.data.train_images}, std::pair{"train_labels", &c.data.train_labels},
                              std::pair{"test_images", &c.data.test_images}, std::pair{"test_labels", &c.data.test_labels}}) {
      std::string s;
      read_field(d, key, s, "data");
      if (!s.empty()) *field = std::filesystem::path(s).is_absolute() ? std::filesystem::path(s) : base / s;
    }
    read_field(d, "classes", c.data.classes, "data");
    read_field(d, "dims", c.data.dims, "data");
    read_field(d, "n_train", c.data.n_train, "data");
    read_field(d, "n_test", c.data.n_test, "data");
    read_field(d, "separation", c.data.separation, "data");
  }
  if (j.contains("model")) {
    check_keys(j["model"], {"arch", "hidden"}, "model");
    read_field(j["model"], "arch", c.model.arch, "model");
    read_field(j["model"], "hidden", c.model.hidden, "model");
    if (c.model.arch != "cnn" && c.model.arch != "mlp") throw ConfigError("model.arch must be 'cnn' or 'mlp'");
  }
  if (j.contains("train")) {
    const auto& t = j["train"];
    check_keys(t, {"epochs", "lr", "batch_size", "momentum"}, "train");
    read_field(t, "epochs", c.train.epochs, "train");
    read_field(t, "lr", c.train.lr, "train");
    read_field(t, "batch_size", c.train.batch_size, "train");
    read_field(t, "momentum", c.train.momentum, "train");
  }
  if (j.contains("conversion")) {
    const auto& cv = j["conversion"];
    check_keys(cv, {"threshold_policy", "scale_weights", "initial_potential_policy", "calibration_samples"}, "conversion");
    if (cv.contains("threshold_policy")) {
      const auto& tp = cv["threshold_policy"];
      check_keys(tp, {"kind", "p", "granularity"}, "conversion.threshold_policy");
      std::string kind = "percentile", gran = "channel";
      read_field(tp, "kind", kind, "conversion.threshold_policy");
      read_field(tp, "granularity", gran, "conversion.threshold_policy");
      read_field(tp, "p", c.conversion.threshold_policy.p, "conversion.threshold_policy");
      if (kind != "max" && kind != "percentile") throw ConfigError("threshold_policy.kind must be 'max' or 'percentile'");
      if (gran != "layer" && gran != "channel") throw ConfigError("threshold_policy.granularity must be 'layer' or 'channel'");
      c.conversion.threshold_policy.kind = kind == "max" ? ThresholdKind::max : ThresholdKind::percentile;
      c.conversion.threshold_policy.granularity = gran == "layer" ? Granularity::layer : Granularity::channel;
    }
    read_field(cv, "scale_weights", c.conversion.scale_weights, "conversion");
    std::string ip = to_string(c.conversion.initial_potential_policy);
    read_field(cv, "initial_potential_policy", ip, "conversion");
    try {
      c.conversion.initial_potential_policy = initial_potential_from_string(ip);
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
    read_field(cv, "calibration_samples", c.conversion.calibration_samples, "conversion");
  }
  if (j.contains("calibration")) {
    const auto& cal = j["calibration"];
    check_keys(cal, {"alpha", "iterations", "batch_size", "batches_per_iter", "T", "seed", "sign"}, "calibration");
    read_field(cal, "alpha", c.calibration.alpha, "calibration");
    read_field(cal, "iterations", c.calibration.iterations, "calibration");
    read_field(cal, "batch_size", c.calibration.batch_size, "calibration");
    read_field(cal, "batches_per_iter", c.calibration.batches_per_iter, "calibration");
    read_field(cal, "T", c.calibration.T, "calibration");
    read_field(cal, "seed", c.calibration.seed, "calibration");
    std::string sign = to_string(c.calibration.sign);
    read_field(cal, "sign", sign, "calibration");
    try {
      c.calibration.sign = correction_sign_from_string(sign);
    } catch (const ArgumentError& e) {
      throw ConfigError(e.what());
    }
  }
  if (j.contains("eval")) {
    check_keys(j["eval"], {"timesteps"}, "eval");
    read_field(j["eval"], "timesteps", c.timesteps, "eval");
  }
  try {
    c.conversion.validate();
    c.calibration.validate();
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  return c;
}

// Applies "a.b.c=value" onto a JSON document; value is parsed as JSON and
// falls back to a plain string.
inline void apply_override(io::Json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  io::Json value;
  try {
    value = io::Json::parse(raw);
  } catch (const nlohmann::json::exception&) {
    value = raw;
  }
  io::Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

inline AppConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  io::Json doc = io::Json::object();
  std::filesystem::path base;
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file " + path.string() + " does not exist");
    try {
      doc = io::read_json(path);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    base = path.parent_path();
  }
  for (const auto& o : overrides) apply_override(doc, o);
  return config_from_json(doc, base);
}

}  // namespace ftbc
