#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftbc/error.hpp"
#include "ftbc/model_io.hpp"

namespace ftbc {

struct MethodCurve {
  std::string method;
  std::vector<std::size_t> timesteps;
  std::vector<double> accuracy;
};

// Mean |expected gap| per timestep for one spiking layer, before and after
// calibration.
struct LayerGapStat {
  std::size_t layer = 0;
  std::vector<double> before;
  std::vector<double> after;
};

class RunReport {
public:
  RunReport(double ann_accuracy, std::uint64_t seed) : ann_accuracy_(ann_accuracy), seed_(seed) {
    check_accuracy(ann_accuracy, "ann_accuracy");
  }

  void add_method(std::string method, std::vector<std::size_t> timesteps, std::vector<double> accuracy) {
    if (timesteps.size() != accuracy.size())
      throw ArgumentError("method '" + method + "' has " + std::to_string(timesteps.size()) + " timesteps and " +
                          std::to_string(accuracy.size()) + " accuracies");
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
      if (timesteps[i] == 0 || (i > 0 && timesteps[i] <= timesteps[i - 1]))
        throw ArgumentError("method '" + method + "': timesteps must be positive and strictly increasing");
      check_accuracy(accuracy[i], method);
    }
    methods_.push_back({std::move(method), std::move(timesteps), std::move(accuracy)});
  }

  void add_gap(LayerGapStat stat) { gaps_.push_back(std::move(stat)); }
  void set_config(io::Json config) { config_ = std::move(config); }
  void set_seconds(double seconds) { seconds_ = seconds; }

  double ann_accuracy() const noexcept { return ann_accuracy_; }
  std::uint64_t seed() const noexcept { return seed_; }
  double seconds() const noexcept { return seconds_; }
  const std::vector<MethodCurve>& methods() const noexcept { return methods_; }
  const std::vector<LayerGapStat>& gaps() const noexcept { return gaps_; }
  const io::Json& config() const noexcept { return config_; }

  const MethodCurve* find(const std::string& method) const {
    for (const auto& m : methods_)
      if (m.method == method) return &m;
    return nullptr;
  }

  io::Json to_json() const {
    io::Json j;
    j["ann_accuracy"] = ann_accuracy_;
    j["seed"] = seed_;
    j["methods"] = io::Json::array();
    for (const auto& m : methods_)
      j["methods"].push_back({{"method", m.method}, {"timesteps", m.timesteps}, {"accuracy", m.accuracy}});
    j["gaps"] = io::Json::array();
    for (const auto& g : gaps_) j["gaps"].push_back({{"layer", g.layer}, {"before", g.before}, {"after", g.after}});
    j["config"] = config_;
    j["seconds"] = seconds_;
    return j;
  }

  static RunReport from_json(const io::Json& j) {
    try {
      RunReport r(j.at("ann_accuracy").get<double>(), j.at("seed").get<std::uint64_t>());
      for (const auto& m : j.at("methods"))
        r.add_method(m.at("method").get<std::string>(), m.at("timesteps").get<std::vector<std::size_t>>(),
                     m.at("accuracy").get<std::vector<double>>());
      for (const auto& g : j.at("gaps"))
        r.add_gap({g.at("layer").get<std::size_t>(), g.at("before").get<std::vector<double>>(),
                   g.at("after").get<std::vector<double>>()});
      r.config_ = j.at("config");
      r.seconds_ = j.at("seconds").get<double>();
      return r;
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("run report: ") + e.what());
    }
  }

private:
  static void check_accuracy(double a, const std::string& what) {
    if (!(a >= 0.0 && a <= 1.0)) throw ArgumentError(what + ": accuracy " + std::to_string(a) + " outside [0, 1]");
  }

  double ann_accuracy_;
  std::uint64_t seed_;
  std::vector<MethodCurve> methods_;
  std::vector<LayerGapStat> gaps_;
  io::Json config_ = io::Json::object();
  double seconds_ = 0.0;
};

enum class ReportFormat { csv, json };

// Shortest decimal string that reads back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_report_csv(const std::vector<const RunReport*>& reports, std::ostream& out) {
  out << "method,T,accuracy,ann_accuracy,seed\n";
  for (const RunReport* r : reports)
    for (const auto& m : r->methods())
      for (std::size_t i = 0; i < m.timesteps.size(); ++i)
        out << m.method << ',' << m.timesteps[i] << ',' << format_double(m.accuracy[i]) << ','
            << format_double(r->ann_accuracy()) << ',' << r->seed() << '\n';
}

inline void emit_report(const RunReport& report, const std::filesystem::path& path, ReportFormat format) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report " + path.string());
  if (format == ReportFormat::csv) write_report_csv({&report}, out);
  else out << report.to_json().dump(2) << '\n';
  if (!out) throw IoError("write failed for report " + path.string());
}

inline RunReport read_report(const std::filesystem::path& path) { return RunReport::from_json(io::read_json(path)); }

}  // namespace ftbc
