#pragma once

// Model and bias-table files: a JSON document plus a sidecar blob of
// little-endian IEEE-754 doubles. The JSON names the blob relative to its own
// directory.
//
// Model blob order, per layer: linear/conv2d weight then bias; batchnorm
// gamma, beta, mean, var; activation its per-channel scale when present.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <json.hpp>

#include "ftbc/ann.hpp"
#include "ftbc/error.hpp"
#include "ftbc/snn.hpp"
#include "ftbc/tensor.hpp"

namespace ftbc::io {

using Json = nlohmann::ordered_json;

inline constexpr int kFormatVersion = 1;

inline void write_blob(const std::filesystem::path& path, const std::vector<double>& values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
    out.write(bytes, 8);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::vector<double> read_blob(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  const std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  if (bytes.size() % 8 != 0)
    throw FormatError(path.string() + ": blob length " + std::to_string(bytes.size()) + " is not a multiple of 8");
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t k = 0; k < values.size(); ++k) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= std::uint64_t{bytes[k * 8 + static_cast<std::size_t>(i)]} << (8 * i);
    values[k] = std::bit_cast<double>(bits);
  }
  return values;
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const Json& doc) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << doc.dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::filesystem::path sidecar_path(const std::filesystem::path& json_path) {
  auto p = json_path;
  p.replace_extension(".bin");
  return p;
}

namespace detail {

inline void append(std::vector<double>& blob, const Tensor& t) {
  blob.insert(blob.end(), t.data().begin(), t.data().end());
}

// Sequential reader over the blob with bounds checks.
class BlobCursor {
public:
  BlobCursor(const std::vector<double>& blob, std::string source) : blob_(blob), source_(std::move(source)) {}

  Tensor take(Shape shape) {
    const std::size_t n = shape_size(shape);
    if (pos_ + n > blob_.size())
      throw FormatError(source_ + ": weight blob truncated at byte offset " + std::to_string(blob_.size() * 8) +
                        ", need " + std::to_string((pos_ + n) * 8));
    std::vector<double> v(blob_.begin() + static_cast<std::ptrdiff_t>(pos_),
                          blob_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return Tensor::from_external(std::move(shape), std::move(v));
  }

  void finish() const {
    if (pos_ != blob_.size())
      throw FormatError(source_ + ": " + std::to_string((blob_.size() - pos_) * 8) + " trailing bytes in weight blob");
  }

private:
  const std::vector<double>& blob_;
  std::string source_;
  std::size_t pos_ = 0;
};

template <typename T>
T get(const Json& j, const char* key, const std::string& source) {
  if (!j.contains(key)) throw FormatError(source + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": field '" + key + "': " + e.what());
  }
}

inline Json layer_json(const LayerSpec& layer, std::vector<double>& blob) {
  Json j;
  j["kind"] = kind_name(layer);
  std::visit(
      [&](const auto& l) {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, LinearLayer>) {
          j["in_features"] = l.weight.dim(1);
          j["out_features"] = l.weight.dim(0);
          append(blob, l.weight);
          append(blob, l.bias);
        } else if constexpr (std::is_same_v<L, Conv2dLayer>) {
          j["in_channels"] = l.weight.dim(1);
          j["out_channels"] = l.weight.dim(0);
          j["kernel"] = {l.weight.dim(2), l.weight.dim(3)};
          j["stride"] = l.stride;
          j["pad"] = l.pad;
          append(blob, l.weight);
          append(blob, l.bias);
        } else if constexpr (std::is_same_v<L, AvgPoolLayer>) {
          j["kernel"] = l.kernel;
        } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
          j["channels"] = l.gamma.size();
          j["eps"] = l.eps;
          append(blob, l.gamma);
          append(blob, l.beta);
          append(blob, l.mean);
          append(blob, l.var);
        } else {
          j["activation"] = {{"name", to_string(l.spec.name)}, {"a", l.spec.a}, {"l", l.spec.l}};
          j["scale_channels"] = l.scale.size();
          if (!l.scale.empty()) append(blob, l.scale);
        }
      },
      layer);
  return j;
}

inline LayerSpec layer_from_json(const Json& j, BlobCursor& blob, const std::string& src) {
  const auto kind = get<std::string>(j, "kind", src);
  if (kind == "linear") {
    const auto in = get<std::size_t>(j, "in_features", src), out = get<std::size_t>(j, "out_features", src);
    LinearLayer l;
    l.weight = blob.take({out, in});
    l.bias = blob.take({out});
    return l;
  }
  if (kind == "conv2d") {
    const auto cin = get<std::size_t>(j, "in_channels", src), cout = get<std::size_t>(j, "out_channels", src);
    const auto k = get<std::vector<std::size_t>>(j, "kernel", src);
    if (k.size() != 2) throw FormatError(src + ": conv2d kernel must have two sizes");
    Conv2dLayer l;
    l.stride = get<std::size_t>(j, "stride", src);
    l.pad = get<std::size_t>(j, "pad", src);
    l.weight = blob.take({cout, cin, k[0], k[1]});
    l.bias = blob.take({cout});
    return l;
  }
  if (kind == "avgpool") return AvgPoolLayer{get<std::size_t>(j, "kernel", src)};
  if (kind == "batchnorm") {
    const auto c = get<std::size_t>(j, "channels", src);
    BatchNormLayer l;
    l.eps = get<double>(j, "eps", src);
    l.gamma = blob.take({c});
    l.beta = blob.take({c});
    l.mean = blob.take({c});
    l.var = blob.take({c});
    return l;
  }
  if (kind == "activation") {
    const Json& a = j.at("activation");
    ActivationLayer l;
    try {
      l.spec.name = activation_kind_from_string(get<std::string>(a, "name", src));
    } catch (const ArgumentError& e) {
      throw FormatError(src + ": " + e.what());
    }
    l.spec.a = get<double>(a, "a", src);
    l.spec.l = get<int>(a, "l", src);
    if (const auto c = get<std::size_t>(j, "scale_channels", src); c > 0) l.scale = blob.take({c});
    return l;
  }
  throw FormatError(src + ": unknown layer kind '" + kind + "'");
}

inline Json model_json(const AnnModel& m, std::vector<double>& blob, const std::string& weights_file) {
  Json doc;
  doc["format_version"] = kFormatVersion;
  doc["input_shape"] = m.input_shape;
  doc["layers"] = Json::array();
  for (const auto& layer : m.layers) doc["layers"].push_back(layer_json(layer, blob));
  doc["weights_file"] = weights_file;
  return doc;
}

inline AnnModel model_from_json(const Json& doc, const std::filesystem::path& json_path) {
  const std::string src = json_path.string();
  if (get<int>(doc, "format_version", src) != kFormatVersion) throw FormatError(src + ": unsupported format_version");
  const auto weights = json_path.parent_path() / get<std::string>(doc, "weights_file", src);
  const auto blob = read_blob(weights);
  BlobCursor cursor(blob, weights.string());
  AnnModel m;
  m.input_shape = get<Shape>(doc, "input_shape", src);
  for (const auto& lj : doc.at("layers")) m.layers.push_back(layer_from_json(lj, cursor, src));
  cursor.finish();
  try {
    layer_shapes(m);
    stages(m);
  } catch (const Error& e) {
    throw FormatError(src + ": inconsistent model: " + e.what());
  }
  return m;
}

}  // namespace detail

inline void save_model(const AnnModel& m, const std::filesystem::path& path) {
  std::vector<double> blob;
  const auto doc = detail::model_json(m, blob, sidecar_path(path).filename().string());
  write_blob(sidecar_path(path), blob);
  write_json(path, doc);
}

inline AnnModel load_model(const std::filesystem::path& path) { return detail::model_from_json(read_json(path), path); }

// The SNN file is the model format plus thresholds, the initial potential
// policy and the readout rule. Its bias table lives in a separate file.
inline void save_snn(const SnnModel& m, const std::filesystem::path& path) {
  validate(m);
  std::vector<double> blob;
  auto doc = detail::model_json(m.network, blob, sidecar_path(path).filename().string());
  doc["thresholds"] = Json::array();
  for (const auto& th : m.thresholds) doc["thresholds"].push_back(th.values());
  doc["initial_potential"] = to_string(m.initial_potential);
  doc["readout"] = m.readout;
  write_blob(sidecar_path(path), blob);
  write_json(path, doc);
}

inline SnnModel load_snn(const std::filesystem::path& path) {
  const auto doc = read_json(path);
  const std::string src = path.string();
  SnnModel m;
  m.network = detail::model_from_json(doc, path);
  for (const auto& th : detail::get<std::vector<std::vector<double>>>(doc, "thresholds", src))
    m.thresholds.push_back(Tensor::from_external({th.size()}, th));
  try {
    m.initial_potential = initial_potential_from_string(detail::get<std::string>(doc, "initial_potential", src));
  } catch (const ArgumentError& e) {
    throw FormatError(src + ": " + e.what());
  }
  m.readout = detail::get<std::string>(doc, "readout", src);
  m.bias = BiasTable(spiking_channels(m.network));
  try {
    validate(m);
  } catch (const Error& e) {
    throw FormatError(src + ": " + e.what());
  }
  return m;
}

// Bias table index: one entry per stored (layer, timestep) with the byte
// offset of its channel values inside the blob.
inline void save_bias_table(const BiasTable& table, const std::filesystem::path& path) {
  Json doc;
  doc["format_version"] = kFormatVersion;
  doc["horizon"] = table.horizon();
  doc["channel_counts"] = table.channel_counts();
  doc["entries"] = Json::array();
  std::vector<double> blob;
  for (std::size_t l = 0; l < table.layers(); ++l)
    for (std::size_t t = 1; t <= table.horizon(); ++t)
      if (const Tensor* b = table.find(l, t)) {
        doc["entries"].push_back(
            {{"layer", l}, {"timestep", t}, {"channel_count", b->size()}, {"offset", blob.size() * 8}});
        detail::append(blob, *b);
      }
  doc["data_file"] = sidecar_path(path).filename().string();
  write_blob(sidecar_path(path), blob);
  write_json(path, doc);
}

inline BiasTable load_bias_table(const std::filesystem::path& path) {
  const auto doc = read_json(path);
  const std::string src = path.string();
  if (detail::get<int>(doc, "format_version", src) != kFormatVersion)
    throw FormatError(src + ": unsupported format_version");
  BiasTable table(detail::get<std::vector<std::size_t>>(doc, "channel_counts", src));
  table.extend_horizon(detail::get<std::size_t>(doc, "horizon", src));
  const auto blob = read_blob(path.parent_path() / detail::get<std::string>(doc, "data_file", src));
  for (const auto& e : doc.at("entries")) {
    const auto layer = detail::get<std::size_t>(e, "layer", src);
    const auto t = detail::get<std::size_t>(e, "timestep", src);
    const auto n = detail::get<std::size_t>(e, "channel_count", src);
    const auto offset = detail::get<std::size_t>(e, "offset", src);
    if (offset % 8 != 0 || offset / 8 + n > blob.size())
      throw FormatError(src + ": entry (" + std::to_string(layer) + ", " + std::to_string(t) +
                        ") points outside the blob at byte offset " + std::to_string(offset));
    std::vector<double> v(blob.begin() + static_cast<std::ptrdiff_t>(offset / 8),
                          blob.begin() + static_cast<std::ptrdiff_t>(offset / 8 + n));
    try {
      table.set(layer, t, Tensor::from_external({n}, std::move(v)));
    } catch (const Error& err) {
      throw FormatError(src + ": " + err.what());
    }
  }
  return table;
}

}  // namespace ftbc::io
