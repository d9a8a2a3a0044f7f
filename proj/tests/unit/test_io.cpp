#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "ftbc/convert.hpp"
#include "ftbc/idx.hpp"
#include "ftbc/model_io.hpp"
#include "ftbc/report.hpp"
#include "../support.hpp"

using namespace ftbc;
using testing_support::read_file;
using testing_support::TempDir;

namespace {

void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

AnnModel mixed_model() {
  std::mt19937_64 rng(1);
  AnnModel m{{2, 4, 4}, {}};
  m.layers.emplace_back(Conv2dLayer{testing_support::random_tensor({3, 2, 3, 3}, rng), testing_support::random_tensor({3}, rng), 1, 1});
  m.layers.emplace_back(BatchNormLayer{Tensor({3}, 1.5), Tensor({3}, 0.1), Tensor({3}, -0.2), Tensor({3}, 0.9), 1e-5});
  m.layers.emplace_back(ActivationLayer{{ActivationKind::trelu, 0.8, 1}, Tensor({3}, {0.5, 1.0, 2.0})});
  m.layers.emplace_back(AvgPoolLayer{2});
  m.layers.emplace_back(LinearLayer{testing_support::random_tensor({5, 12}, rng), testing_support::random_tensor({5}, rng)});
  m.layers.emplace_back(ActivationLayer{{ActivationKind::stairs, 1.0, 8}, {}});
  m.layers.emplace_back(LinearLayer{testing_support::random_tensor({3, 5}, rng), Tensor({3}, 1.0 / 3.0)});
  return m;
}

RunReport sample_report() {
  RunReport r(0.9731, 7);
  r.add_method("vanilla", {1, 2, 4}, {0.1, 0.1 + 0.2, 1.0 / 3.0});
  r.add_method("ftbc", {1, 2, 4}, {0.8, 0.93, 0.97});
  r.add_gap({0, {0.5, 0.25}, {0.01, 0.002}});
  r.set_config(io::Json{{"seed", 7}, {"calibration", {{"alpha", 0.5}}}});
  r.set_seconds(12.5);
  return r;
}

}  // namespace

TEST(ModelIo, RoundTripIsExactAndByteIdentical) {
  TempDir tmp("model");
  const AnnModel m = mixed_model();
  io::save_model(m, tmp / "m.json");
  const AnnModel back = io::load_model(tmp / "m.json");
  EXPECT_EQ(back, m);
  std::filesystem::create_directories(tmp / "b");
  io::save_model(back, tmp / "b" / "m.json");
  EXPECT_EQ(read_file(tmp / "m.json"), read_file(tmp / "b" / "m.json"));
  EXPECT_EQ(read_file(tmp / "m.bin"), read_file(tmp / "b" / "m.bin"));
}

TEST(ModelIo, SnnRoundTrip) {
  TempDir tmp("snn");
  const Dataset d = testing_support::random_inputs({1, 4, 4}, 12, 3);
  SnnModel snn = build_snn(testing_support::tiny_cnn(3), {}, d);
  snn.initial_potential = InitialPotential::half_threshold;
  io::save_snn(snn, tmp / "s.json");
  const SnnModel back = io::load_snn(tmp / "s.json");
  EXPECT_EQ(back.network, snn.network);
  EXPECT_EQ(back.thresholds, snn.thresholds);
  EXPECT_EQ(back.initial_potential, snn.initial_potential);
  EXPECT_EQ(back.readout, snn.readout);
}

TEST(ModelIo, CorruptInputsAreFormatErrors) {
  TempDir tmp("corrupt");
  io::save_model(mixed_model(), tmp / "m.json");
  {
    std::ofstream out(tmp / "m.bin", std::ios::binary | std::ios::trunc);
    out << "short";
  }
  EXPECT_THROW(io::load_model(tmp / "m.json"), FormatError);
  {
    std::ofstream out(tmp / "bad.json");
    out << "{not json";
  }
  EXPECT_THROW(io::load_model(tmp / "bad.json"), FormatError);
  EXPECT_THROW(io::load_model(tmp / "missing.json"), IoError);
}

TEST(BiasTableIo, RoundTripIsByteIdentical) {
  TempDir tmp("bias");
  BiasTable b({2, 3});
  b.extend_horizon(4);
  std::mt19937_64 rng(5);
  for (std::size_t t = 1; t <= 4; ++t) b.set(1, t, testing_support::random_tensor({3}, rng));
  b.set(0, 2, Tensor({2}, {0.1, -1e-300}));
  io::save_bias_table(b, tmp / "b.json");
  const BiasTable back = io::load_bias_table(tmp / "b.json");
  EXPECT_EQ(back, b);
  std::filesystem::create_directories(tmp / "c");
  io::save_bias_table(back, tmp / "c" / "b.json");
  EXPECT_EQ(read_file(tmp / "b.json"), read_file(tmp / "c" / "b.json"));
  EXPECT_EQ(read_file(tmp / "b.bin"), read_file(tmp / "c" / "b.bin"));
}

TEST(Report, JsonRoundTripIsIdentical) {
  TempDir tmp("report");
  const RunReport r = sample_report();
  emit_report(r, tmp / "r.json", ReportFormat::json);
  const RunReport back = read_report(tmp / "r.json");
  EXPECT_EQ(back.to_json(), r.to_json());
  emit_report(back, tmp / "r2.json", ReportFormat::json);
  EXPECT_EQ(read_file(tmp / "r.json"), read_file(tmp / "r2.json"));
}

TEST(Report, CsvRowsAreMethodsTimesTimesteps) {
  TempDir tmp("csv");
  emit_report(sample_report(), tmp / "r.csv", ReportFormat::csv);
  std::istringstream in(read_file(tmp / "r.csv"));
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "method,T,accuracy,ann_accuracy,seed");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2u * 3u);
  EXPECT_NE(read_file(tmp / "r.csv").find("vanilla,2,0.30000000000000004,0.9731,7"), std::string::npos);
}

TEST(Report, InvariantsEnforced) {
  EXPECT_THROW(RunReport(1.1, 0), ArgumentError);
  RunReport r(0.5, 0);
  EXPECT_THROW(r.add_method("x", {1, 2}, {0.5, 1.1}), ArgumentError);
  EXPECT_THROW(r.add_method("x", {2, 2}, {0.5, 0.5}), ArgumentError);
  EXPECT_THROW(r.add_method("x", {1}, {0.5, 0.5}), ArgumentError);
  EXPECT_THROW(emit_report(r, "/nonexistent-dir/r.json", ReportFormat::json), IoError);
}

TEST(Idx, FourImageFixture) {
  TempDir tmp("idx");
  std::vector<unsigned char> img{0, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 3};
  for (int i = 0; i < 24; ++i) img.push_back(static_cast<unsigned char>(i * 10));
  write_bytes(tmp / "img", img);
  write_bytes(tmp / "lbl", {0, 0, 8, 1, 0, 0, 0, 4, 3, 1, 4, 1});
  const Dataset d = idx::load_idx(tmp / "img", tmp / "lbl");
  EXPECT_EQ(d.inputs.shape(), (Shape{4, 1, 2, 3}));
  EXPECT_EQ(d.labels, (std::vector<std::size_t>{3, 1, 4, 1}));
  EXPECT_EQ(d.classes, 5u);
  EXPECT_EQ(d.inputs[7], 70.0 / 255.0);
}

TEST(Idx, EmptyTruncatedAndBadMagic) {
  TempDir tmp("idxbad");
  write_bytes(tmp / "empty", {});
  EXPECT_THROW(idx::read_images(tmp / "empty"), FormatError);
  write_bytes(tmp / "magic", {0, 0, 8, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 9});
  EXPECT_THROW(idx::read_images(tmp / "magic"), FormatError);
  write_bytes(tmp / "short", {0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2, 1, 2, 3});
  try {
    idx::read_images(tmp / "short");
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 19"), std::string::npos) << e.what();
  }
  write_bytes(tmp / "lbl", {0, 0, 8, 1, 0, 0, 0, 3, 1});
  EXPECT_THROW(idx::read_labels(tmp / "lbl"), FormatError);
  EXPECT_THROW(idx::read_labels(tmp / "nope"), IoError);
}

TEST(Idx, CountMismatchRejected) {
  TempDir tmp("idxcount");
  write_bytes(tmp / "img", {0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 5});
  write_bytes(tmp / "lbl", {0, 0, 8, 1, 0, 0, 0, 2, 0, 1});
  EXPECT_THROW(idx::load_idx(tmp / "img", tmp / "lbl"), FormatError);
}

TEST(Idx, WriteThenLoadIsBitIdentical) {
  TempDir tmp("idxrt");
  std::mt19937_64 rng(3);
  std::vector<double> v(5 * 28 * 28);
  for (double& x : v) x = static_cast<double>(std::uniform_int_distribution<int>(0, 255)(rng)) / 255.0;
  const Tensor images({5, 1, 28, 28}, v);
  idx::write_images(tmp / "img", images);
  idx::write_labels(tmp / "lbl", {0, 9, 2, 2, 7});
  const Dataset d = idx::load_idx(tmp / "img", tmp / "lbl");
  EXPECT_EQ(d.inputs, images);
  idx::write_images(tmp / "img2", d.inputs);
  EXPECT_EQ(read_file(tmp / "img"), read_file(tmp / "img2"));
}

TEST(Idx, BundledDigits) {
  const auto dir = testing_support::digits_dir();
  const Dataset train = idx::load_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte");
  const Dataset test = idx::load_idx(dir / "test-images-idx3-ubyte", dir / "test-labels-idx1-ubyte", Split::test);
  EXPECT_EQ(train.inputs.shape(), (Shape{1297, 1, 8, 8}));
  EXPECT_EQ(test.inputs.shape(), (Shape{500, 1, 8, 8}));
  EXPECT_EQ(train.classes, 10u);
  for (double v : train.inputs.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
}
