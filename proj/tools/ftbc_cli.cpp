#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ftbc/ftbc.hpp"

namespace fs = std::filesystem;
using namespace ftbc;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> T, iters, batch_size;
  std::optional<double> alpha;
  std::string method = "ftbc";
  std::string out;
  std::vector<std::string> sets;
  std::string model, snn, bias, trajectory;
  std::vector<std::string> inputs;
  std::vector<std::string> distributions{"uniform", "triangular", "clipped_normal"};
  std::vector<double> targets{0.1, 0.25, 0.5, 0.75, 0.9};
  std::size_t samples = 100000, prop1_iters = 400;
  double step = 0.5;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw ConfigError(what + " is required");
  if (!fs::exists(path)) throw IoError(what + " " + path + " does not exist");
}

AppConfig resolve_config(const Options& o) {
  if (!o.config.empty()) require_file(o.config, "--config");
  std::vector<std::string> overrides = o.sets;
  if (o.seed) overrides.push_back("seed=" + std::to_string(*o.seed));
  if (o.T) overrides.push_back("calibration.T=" + std::to_string(*o.T));
  if (o.alpha) overrides.push_back("calibration.alpha=" + format_double(*o.alpha));
  if (o.iters) overrides.push_back("calibration.iterations=" + std::to_string(*o.iters));
  if (o.batch_size) overrides.push_back("calibration.batch_size=" + std::to_string(*o.batch_size));
  return load_config(o.config, overrides);
}

std::ofstream open_out(const std::string& path) {
  if (path.empty()) throw ConfigError("--out is required");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

std::string json_escape(const std::string& s) {
  const std::string quoted = io::Json(s).dump();
  return quoted.substr(1, quoted.size() - 2);
}

SnnModel load_snn_with_bias(const Options& o) {
  require_file(o.snn, "--snn");
  SnnModel snn = io::load_snn(o.snn);
  if (!o.bias.empty()) {
    require_file(o.bias, "--bias");
    snn.bias = io::load_bias_table(o.bias);
    validate(snn);
  }
  return snn;
}

int cmd_train(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  const DataSplits data = load_data(cfg.data, cfg.seed);
  const TrainResult r = train_model(cfg, data.train);
  io::save_model(r.model, o.out);
  std::printf("ann_accuracy %.4f\n", accuracy(r.model, data.test));
  return 0;
}

int cmd_convert(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  require_file(o.model, "--model");
  if (o.out.empty()) throw ConfigError("--out is required");
  const DataSplits data = load_data(cfg.data, cfg.seed);
  const SnnModel snn = convert_model(cfg, io::load_model(o.model), data.train);
  io::save_snn(snn, o.out);
  std::printf("spiking_layers %zu\n", snn.spiking_layers());
  return 0;
}

int cmd_calibrate(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  const SnnModel snn = load_snn_with_bias(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  const DataSplits data = load_data(cfg.data, cfg.seed);
  const Dataset calib = calibration_set(data.train, cfg.conversion.calibration_samples, cfg.seed);
  CalibrationTrajectory trajectory;
  const SnnModel out = calibrate_method(o.method, snn, calib, cfg.calibration, &trajectory);
  BiasTable table = out.bias;
  if (table.layers() == 0) table = BiasTable(spiking_channels(out.network));
  io::save_bias_table(table, o.out);
  fs::path traj = o.trajectory;
  if (traj.empty()) traj = fs::path(o.out).replace_extension(".trajectory.csv");
  trajectory.write_csv(traj);
  std::printf("method %s horizon %zu trajectory %s\n", o.method.c_str(), table.horizon(), traj.string().c_str());
  return 0;
}

int cmd_eval(const Options& o) {
  const auto start = std::chrono::steady_clock::now();
  const AppConfig cfg = resolve_config(o);
  const SnnModel snn = load_snn_with_bias(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  if (!o.model.empty()) require_file(o.model, "--model");
  const DataSplits data = load_data(cfg.data, cfg.seed);
  const double ann_acc = accuracy(o.model.empty() ? snn.network : io::load_model(o.model), data.test);

  RunReport report(ann_acc, cfg.seed);
  report.add_method(o.method, cfg.timesteps, evaluate(snn, data.test, cfg.timesteps));
  const Dataset calib = calibration_set(data.train, cfg.conversion.calibration_samples, cfg.seed);
  SnnModel plain = snn;
  plain.bias = BiasTable(spiking_channels(snn.network));
  const auto before = gap_norms(expected_gap(snn.network, plain, calib, cfg.calibration.T));
  const auto after = gap_norms(expected_gap(snn.network, snn, calib, cfg.calibration.T));
  for (std::size_t l = 0; l < before.size(); ++l) report.add_gap({l, before[l], after[l]});
  report.set_config(cfg.to_json());
  report.set_seconds(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
  emit_report(report, o.out, fs::path(o.out).extension() == ".csv" ? ReportFormat::csv : ReportFormat::json);
  for (std::size_t i = 0; i < cfg.timesteps.size(); ++i)
    std::printf("T %zu accuracy %.4f\n", cfg.timesteps[i], report.methods()[0].accuracy[i]);
  return 0;
}

int cmd_prop1(const Options& o) {
  const std::uint64_t seed = o.seed.value_or(1);
  const auto rows = prop1_sweep(o.distributions, o.targets, o.samples, o.step, o.prop1_iters, seed);
  std::ofstream file;
  if (!o.out.empty()) file = open_out(o.out);
  std::ostream& out = o.out.empty() ? std::cout : file;
  out << "distribution,target,b,achieved,reference\n";
  for (const auto& r : rows)
    out << r.distribution << ',' << format_double(r.target) << ',' << format_double(r.b) << ','
        << format_double(r.achieved) << ',' << format_double(r.reference) << '\n';
  if (!out) throw IoError("write failed for " + o.out);
  return 0;
}

int cmd_stability(const Options& o) {
  const AppConfig cfg = resolve_config(o);
  const SnnModel snn = load_snn_with_bias(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  const DataSplits data = load_data(cfg.data, cfg.seed);
  const Dataset calib = calibration_set(data.train, cfg.conversion.calibration_samples, cfg.seed);
  TrackingOptions tracking{&data.test, {}};
  for (std::size_t t : cfg.timesteps)
    if (t <= cfg.calibration.T) tracking.timesteps.push_back(t);
  if (tracking.timesteps.empty()) throw ConfigError("no eval.timesteps within calibration.T");
  const auto r = ftbc_calibrate(snn.network, snn, calib, cfg.calibration, tracking);
  r.trajectory.write_csv(o.out);
  std::printf("rows %zu\n", r.trajectory.rows.size());
  return 0;
}

int cmd_report(const Options& o) {
  if (o.inputs.empty()) throw ConfigError("report needs at least one input report");
  std::vector<RunReport> reports;
  for (const auto& p : o.inputs) {
    require_file(p, "report");
    reports.push_back(read_report(p));
  }
  std::vector<const RunReport*> ptrs;
  for (const auto& r : reports) ptrs.push_back(&r);
  std::ofstream file = open_out(o.out);
  write_report_csv(ptrs, file);
  if (!file) throw IoError("write failed for " + o.out);

  // mean accuracy per (method, T) across the merged reports
  std::map<std::size_t, std::map<std::string, std::pair<double, std::size_t>>> table;
  std::vector<std::string> methods;
  for (const auto& r : reports)
    for (const auto& m : r.methods()) {
      if (std::find(methods.begin(), methods.end(), m.method) == methods.end()) methods.push_back(m.method);
      for (std::size_t i = 0; i < m.timesteps.size(); ++i) {
        auto& cell = table[m.timesteps[i]][m.method];
        cell.first += m.accuracy[i];
        ++cell.second;
      }
    }
  std::printf("%6s", "T");
  for (const auto& m : methods) std::printf(" %10s", m.c_str());
  std::printf("\n");
  for (const auto& [t, row] : table) {
    std::printf("%6zu", t);
    for (const auto& m : methods) {
      const auto it = row.find(m);
      if (it == row.end()) std::printf(" %10s", "-");
      else std::printf(" %10.4f", it->second.first / static_cast<double>(it->second.second));
    }
    std::printf("\n");
  }
  return 0;
}

int exit_code_for(const Error& e) {
  const std::string& k = e.kind();
  if (k == "threshold" || k == "training" || k == "calibration") return 3;
  return 2;
}

void add_config_flags(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config, "JSON config file");
  cmd->add_option("--seed", o.seed, "seed for data, training and calibration");
  cmd->add_option("--T", o.T, "calibration horizon");
  cmd->add_option("--alpha", o.alpha, "calibration step size");
  cmd->add_option("--iters", o.iters, "calibration iterations per layer");
  cmd->add_option("--batch-size", o.batch_size, "calibration batch size");
  cmd->add_option("--set", o.sets, "config override key.path=value (repeatable)");
  cmd->add_option("--out", o.out, "output path");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ANN to SNN conversion with temporal bias calibration"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::string> methods = method_names();

  auto* train = app.add_subcommand("train", "train the ANN and save it");
  add_config_flags(train, o);

  auto* convert = app.add_subcommand("convert", "convert a trained ANN into an SNN");
  add_config_flags(convert, o);
  convert->add_option("--model", o.model, "trained ANN model file")->required();

  auto* calibrate = app.add_subcommand("calibrate", "calibrate temporal biases of an SNN");
  add_config_flags(calibrate, o);
  calibrate->add_option("--snn", o.snn, "converted SNN file")->required();
  calibrate->add_option("--method", o.method, "vanilla, ftbc or avgbias")->check(CLI::IsMember(methods));
  calibrate->add_option("--trajectory", o.trajectory, "trajectory CSV path");

  auto* eval = app.add_subcommand("eval", "evaluate an SNN per timestep and write a run report");
  add_config_flags(eval, o);
  eval->add_option("--snn", o.snn, "converted SNN file")->required();
  eval->add_option("--bias", o.bias, "bias table from calibrate");
  eval->add_option("--model", o.model, "original ANN, for the reference accuracy");
  eval->add_option("--method", o.method, "method name recorded in the report")->check(CLI::IsMember(methods));

  auto* prop1 = app.add_subcommand("prop1", "sweep the single-neuron bias solver");
  prop1->add_option("--seed", o.seed, "sampling seed");
  prop1->add_option("--out", o.out, "CSV path (stdout when omitted)");
  prop1->add_option("--distributions", o.distributions, "uniform, triangular, clipped_normal")->delimiter(',');
  prop1->add_option("--targets", o.targets, "target firing rates in [0, 1]")->delimiter(',');
  prop1->add_option("--samples", o.samples, "samples per distribution");
  prop1->add_option("--iters", o.prop1_iters, "solver iterations");
  prop1->add_option("--step", o.step, "solver step size");

  auto* stability = app.add_subcommand("stability", "per-iteration test accuracy during calibration");
  add_config_flags(stability, o);
  stability->add_option("--snn", o.snn, "converted SNN file")->required();

  auto* report = app.add_subcommand("report", "merge run reports into one comparison table");
  report->add_option("--out", o.out, "merged CSV path")->required();
  report->add_option("inputs", o.inputs, "run report JSON files")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << app.help();
    std::cerr << "error: kind=usage message=\"" << json_escape(e.what()) << "\"\n";
    return 2;
  }

  try {
    if (*train) return cmd_train(o);
    if (*convert) return cmd_convert(o);
    if (*calibrate) return cmd_calibrate(o);
    if (*eval) return cmd_eval(o);
    if (*prop1) return cmd_prop1(o);
    if (*stability) return cmd_stability(o);
    if (*report) return cmd_report(o);
  } catch (const Error& e) {
    std::cerr << "error: kind=" << e.kind() << " message=\"" << json_escape(e.what()) << "\"\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: kind=internal message=\"" << json_escape(e.what()) << "\"\n";
    return 1;
  }
  return 2;
}
