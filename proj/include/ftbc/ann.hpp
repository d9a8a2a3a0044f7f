#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "ftbc/dataset.hpp"
#include "ftbc/error.hpp"
#include "ftbc/tensor.hpp"

namespace ftbc {

enum class ActivationKind { relu, trelu, stairs };

inline const char* to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::relu: return "relu";
    case ActivationKind::trelu: return "trelu";
    case ActivationKind::stairs: return "stairs";
  }
  return "?";
}

inline ActivationKind activation_kind_from_string(const std::string& s) {
  if (s == "relu") return ActivationKind::relu;
  if (s == "trelu") return ActivationKind::trelu;
  if (s == "stairs") return ActivationKind::stairs;
  throw ArgumentError("unknown activation '" + s + "'");
}

// relu: max(x, 0); trelu: min(max(x, 0), a); stairs: floor(clamp(x, 0, 1) l + 0.5) / l.
struct ActivationSpec {
  ActivationKind name = ActivationKind::relu;
  double a = 1.0;
  int l = 1;

  void validate() const {
    if (name == ActivationKind::trelu && !(a > 0.0)) throw ArgumentError("trelu cap a must be positive");
    if (name == ActivationKind::stairs && l < 1) throw ArgumentError("stairs step count l must be >= 1");
  }

  double operator()(double x) const {
    switch (name) {
      case ActivationKind::relu: return std::max(x, 0.0);
      case ActivationKind::trelu: return std::min(std::max(x, 0.0), a);
      case ActivationKind::stairs: {
        const double y = std::clamp(x, 0.0, 1.0);
        return std::floor(y * l + 0.5) / l;
      }
    }
    return x;
  }

  // Derivative used by training; stairs passes gradients straight through
  // inside its clamp window.
  double derivative(double x) const {
    switch (name) {
      case ActivationKind::relu: return x > 0.0 ? 1.0 : 0.0;
      case ActivationKind::trelu: return x > 0.0 && x < a ? 1.0 : 0.0;
      case ActivationKind::stairs: return x > 0.0 && x < 1.0 ? 1.0 : 0.0;
    }
    return 0.0;
  }

  bool operator==(const ActivationSpec&) const = default;
};

inline Tensor activation_apply(const ActivationSpec& spec, const Tensor& x) {
  spec.validate();
  return map(x, [&](double v) { return spec(v); });
}

struct LinearLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]

  bool operator==(const LinearLayer&) const = default;
};

struct Conv2dLayer {
  Tensor weight;  // [C_out x C_in x kh x kw]
  Tensor bias;    // [C_out]
  std::size_t stride = 1;
  std::size_t pad = 0;

  bool operator==(const Conv2dLayer&) const = default;
};

struct AvgPoolLayer {
  std::size_t kernel = 2;

  bool operator==(const AvgPoolLayer&) const = default;
};

struct BatchNormLayer {
  Tensor gamma, beta, mean, var;
  double eps = 1e-5;

  bool operator==(const BatchNormLayer&) const = default;
};

// `scale`, when non-empty, holds one factor s per channel and the layer
// computes f(x s) / s. Weight scaling installs it so that capped activations
// keep their meaning in threshold-normalized units.
struct ActivationLayer {
  ActivationSpec spec;
  Tensor scale;

  bool operator==(const ActivationLayer&) const = default;
};

using LayerSpec = std::variant<LinearLayer, Conv2dLayer, AvgPoolLayer, BatchNormLayer, ActivationLayer>;

inline const char* kind_name(const LayerSpec& layer) {
  return std::visit(
      [](const auto& l) -> const char* {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, LinearLayer>) return "linear";
        else if constexpr (std::is_same_v<L, Conv2dLayer>) return "conv2d";
        else if constexpr (std::is_same_v<L, AvgPoolLayer>) return "avgpool";
        else if constexpr (std::is_same_v<L, BatchNormLayer>) return "batchnorm";
        else return "activation";
      },
      layer);
}

inline bool is_weighted(const LayerSpec& l) {
  return std::holds_alternative<LinearLayer>(l) || std::holds_alternative<Conv2dLayer>(l);
}

// A run of linear layers [begin, end) closed by the activation at index
// `end`. The readout stage has no activation.
struct Stage {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t weighted = 0;
  bool spiking = true;
};

struct AnnModel {
  Shape input_shape;  // per sample, without the batch axis
  std::vector<LayerSpec> layers;

  bool operator==(const AnnModel&) const = default;
};

// Per-sample output shape of one layer.
inline Shape layer_output_shape(const LayerSpec& layer, const Shape& in) {
  return std::visit(
      [&](const auto& l) -> Shape {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, LinearLayer>) {
          if (l.weight.rank() != 2 || l.weight.dim(1) != shape_size(in) || l.bias.size() != l.weight.dim(0))
            throw DimensionError("linear weight " + shape_str(l.weight.shape()) + " does not accept input " +
                                 shape_str(in));
          return {l.weight.dim(0)};
        } else if constexpr (std::is_same_v<L, Conv2dLayer>) {
          if (in.size() != 3 || l.weight.rank() != 4 || l.weight.dim(1) != in[0] ||
              l.bias.size() != l.weight.dim(0))
            throw DimensionError("conv2d weight " + shape_str(l.weight.shape()) + " does not accept input " +
                                 shape_str(in));
          const auto g = conv_geometry(in[1], in[2], l.weight.dim(2), l.weight.dim(3), l.stride, l.pad);
          return {l.weight.dim(0), g.out_h, g.out_w};
        } else if constexpr (std::is_same_v<L, AvgPoolLayer>) {
          if (in.size() != 3 || l.kernel == 0 || in[1] % l.kernel != 0 || in[2] % l.kernel != 0)
            throw DimensionError("avgpool " + std::to_string(l.kernel) + " does not accept input " + shape_str(in));
          return {in[0], in[1] / l.kernel, in[2] / l.kernel};
        } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
          const std::size_t c = in.at(0);
          if (l.gamma.size() != c || l.beta.size() != c || l.mean.size() != c || l.var.size() != c)
            throw DimensionError("batchnorm parameters do not match " + std::to_string(c) + " channels");
          return in;
        } else {
          l.spec.validate();
          if (!l.scale.empty() && l.scale.size() != in.at(0))
            throw DimensionError("activation scale length " + std::to_string(l.scale.size()) + " vs " +
                                 std::to_string(in.at(0)) + " channels");
          return in;
        }
      },
      layer);
}

// Input shape of every layer, plus the final output shape at the back.
inline std::vector<Shape> layer_shapes(const AnnModel& model) {
  if (model.input_shape.empty()) throw DimensionError("model has no input shape");
  std::vector<Shape> shapes{model.input_shape};
  for (const auto& layer : model.layers) shapes.push_back(layer_output_shape(layer, shapes.back()));
  return shapes;
}

// Splits the model into spiking-equivalent stages followed by the readout
// stage and checks the structural rules every converter relies on.
inline std::vector<Stage> stages(const AnnModel& model) {
  std::vector<Stage> out;
  std::size_t begin = 0;
  for (std::size_t i = 0; i <= model.layers.size(); ++i) {
    const bool last = i == model.layers.size();
    if (!last && !std::holds_alternative<ActivationLayer>(model.layers[i])) continue;
    Stage s{begin, i, 0, !last};
    std::size_t weighted = 0;
    for (std::size_t j = begin; j < i; ++j) {
      if (is_weighted(model.layers[j])) {
        ++weighted;
        s.weighted = j;
      }
      if (std::holds_alternative<BatchNormLayer>(model.layers[j]) && (j == begin || !is_weighted(model.layers[j - 1])))
        throw StructureError("batchnorm at layer " + std::to_string(j) + " does not follow a linear/conv layer");
    }
    if (weighted != 1)
      throw StructureError("stage ending at layer " + std::to_string(i) + " must contain exactly one linear/conv layer, found " +
                           std::to_string(weighted));
    if (last && (i == 0 || !std::holds_alternative<LinearLayer>(model.layers[i - 1])))
      throw StructureError("final layer must be a linear readout");
    out.push_back(s);
    begin = i + 1;
  }
  return out;
}

inline std::size_t spiking_layer_count(const AnnModel& model) { return stages(model).size() - 1; }

namespace detail {

inline void batchnorm_inplace(const BatchNormLayer& bn, Tensor& x) {
  const std::size_t channels = x.dim(1), inner = x.stride(1);
  auto d = x.data();
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const double s = bn.gamma[c] / std::sqrt(bn.var[c] + bn.eps);
      double* p = d.data() + (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] = s * (p[i] - bn.mean[c]) + bn.beta[c];
    }
}

inline void activation_inplace(const ActivationLayer& act, Tensor& x) {
  if (act.scale.empty()) {
    for (double& v : x.data()) v = act.spec(v);
    return;
  }
  const std::size_t channels = x.dim(1), inner = x.stride(1);
  auto d = x.data();
  for (std::size_t b = 0; b < x.dim(0); ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      const double s = act.scale[c];
      double* p = d.data() + (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] = act.spec(p[i] * s) / s;
    }
}

}  // namespace detail

// Applies one layer to a batch [B x per-sample shape].
inline Tensor apply_layer(const LayerSpec& layer, const Tensor& x) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, LinearLayer>) {
          return linear(x, l.weight, l.bias);
        } else if constexpr (std::is_same_v<L, Conv2dLayer>) {
          Tensor y = conv2d(x, l.weight, l.stride, l.pad);
          add_channel_bias(y, l.bias.data());
          return y;
        } else if constexpr (std::is_same_v<L, AvgPoolLayer>) {
          return avgpool2d(x, l.kernel);
        } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
          Tensor y = x;
          detail::batchnorm_inplace(l, y);
          return y;
        } else {
          Tensor y = x;
          detail::activation_inplace(l, y);
          return y;
        }
      },
      layer);
}

// The affine part of a stage (everything but its activation).
inline Tensor apply_stage_linear(const AnnModel& model, const Stage& stage, const Tensor& x) {
  Tensor y = apply_layer(model.layers[stage.begin], x);
  for (std::size_t j = stage.begin + 1; j < stage.end; ++j) y = apply_layer(model.layers[j], y);
  return y;
}

inline Tensor apply_stage(const AnnModel& model, const Stage& stage, const Tensor& x) {
  Tensor y = apply_stage_linear(model, stage, x);
  if (stage.spiking) detail::activation_inplace(std::get<ActivationLayer>(model.layers[stage.end]), y);
  return y;
}

inline void check_batch_shape(const AnnModel& model, const Tensor& batch) {
  if (batch.rank() != model.input_shape.size() + 1 ||
      !std::equal(model.input_shape.begin(), model.input_shape.end(), batch.shape().begin() + 1))
    throw DimensionError("batch " + shape_str(batch.shape()) + " does not match model input " +
                         shape_str(model.input_shape));
}

struct ForwardResult {
  Tensor logits;
  // Post-activation output of every spiking-equivalent layer, indexed like
  // the SNN's spiking layers.
  std::vector<Tensor> activations;
};

inline ForwardResult forward_collect(const AnnModel& model, const Tensor& batch) {
  check_batch_shape(model, batch);
  const auto st = stages(model);
  ForwardResult r;
  Tensor x = batch;
  for (const Stage& s : st) {
    x = apply_stage(model, s, x);
    if (s.spiking) r.activations.push_back(x);
  }
  r.logits = std::move(x);
  return r;
}

inline Tensor forward(const AnnModel& model, const Tensor& batch) { return forward_collect(model, batch).logits; }

inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.stride(0);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(i * k, k);
    out[i] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

inline std::vector<std::size_t> predict(const AnnModel& model, const Dataset& data, std::size_t chunk = 256) {
  std::vector<std::size_t> out;
  out.reserve(data.size());
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const auto p = argmax_rows(forward(model, data.inputs.slice_rows(b, std::min(chunk, data.size() - b))));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

inline double accuracy(const AnnModel& model, const Dataset& data) {
  const auto p = predict(model, data);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < p.size(); ++i) hit += p[i] == data.labels[i];
  return data.size() ? static_cast<double>(hit) / static_cast<double>(data.size()) : 0.0;
}

// Absorbs every batchnorm into the linear/conv layer in front of it:
// W' = g / sqrt(var + eps) W and b' = g / sqrt(var + eps) (b - mean) + beta.
inline AnnModel fold_batchnorm(const AnnModel& model) {
  AnnModel out{model.input_shape, {}};
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto* bn = std::get_if<BatchNormLayer>(&model.layers[i]);
    if (!bn) {
      out.layers.push_back(model.layers[i]);
      continue;
    }
    if (out.layers.empty() || !is_weighted(out.layers.back()) || !is_weighted(model.layers[i - 1]))
      throw StructureError("batchnorm at layer " + std::to_string(i) + " does not follow a linear/conv layer");
    std::visit(
        [&](auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, LinearLayer> || std::is_same_v<L, Conv2dLayer>) {
            const std::size_t channels = l.weight.dim(0), fan = l.weight.stride(0);
            if (bn->gamma.size() != channels)
              throw DimensionError("batchnorm at layer " + std::to_string(i) + " has " +
                                   std::to_string(bn->gamma.size()) + " channels, expected " +
                                   std::to_string(channels));
            for (std::size_t c = 0; c < channels; ++c) {
              const double s = bn->gamma[c] / std::sqrt(bn->var[c] + bn->eps);
              for (std::size_t k = 0; k < fan; ++k) l.weight[c * fan + k] *= s;
              l.bias[c] = s * (l.bias[c] - bn->mean[c]) + bn->beta[c];
            }
          }
        },
        out.layers.back());
  }
  stages(out);
  return out;
}

// ---------------------------------------------------------------------------
// Model builders (He-uniform init, zero biases).

namespace detail {

inline Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  const double lim = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-lim, lim);
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = u(rng);
  return t;
}

}  // namespace detail

inline AnnModel make_mlp(const Shape& input_shape, const std::vector<std::size_t>& hidden, std::size_t classes,
                         std::uint64_t seed, ActivationSpec act = {}) {
  std::mt19937_64 rng(seed);
  AnnModel m{input_shape, {}};
  std::size_t in = shape_size(input_shape);
  for (std::size_t h : hidden) {
    m.layers.emplace_back(LinearLayer{detail::he_uniform({h, in}, in, rng), Tensor({h})});
    m.layers.emplace_back(ActivationLayer{act, {}});
    in = h;
  }
  m.layers.emplace_back(LinearLayer{detail::he_uniform({classes, in}, in, rng), Tensor({classes})});
  return m;
}

struct ConvBlock {
  std::size_t channels = 8;
  bool pool_after = false;  // 2x2 average pooling before the next block
};

// 3x3 same-padded conv blocks with ReLU, then a linear readout.
inline AnnModel make_cnn(const Shape& input_shape, const std::vector<ConvBlock>& blocks, std::size_t classes,
                         std::uint64_t seed, ActivationSpec act = {}) {
  if (input_shape.size() != 3) throw DimensionError("make_cnn expects a [C x H x W] input shape");
  std::mt19937_64 rng(seed);
  AnnModel m{input_shape, {}};
  std::size_t c = input_shape[0];
  for (const ConvBlock& b : blocks) {
    m.layers.emplace_back(Conv2dLayer{detail::he_uniform({b.channels, c, 3, 3}, c * 9, rng), Tensor({b.channels}), 1, 1});
    m.layers.emplace_back(ActivationLayer{act, {}});
    if (b.pool_after) m.layers.emplace_back(AvgPoolLayer{2});
    c = b.channels;
  }
  m.layers.emplace_back(LinearLayer{Tensor({classes, 1}), Tensor({classes})});
  const std::size_t flat = shape_size(layer_shapes(AnnModel{input_shape, {m.layers.begin(), m.layers.end() - 1}}).back());
  m.layers.back() = LinearLayer{detail::he_uniform({classes, flat}, flat, rng), Tensor({classes})};
  stages(m);
  return m;
}

// The three-block digits network used by the benchmarks.
inline AnnModel make_desk_cnn(const Shape& input_shape, std::size_t classes, std::uint64_t seed) {
  return make_cnn(input_shape, {{8, false}, {16, true}, {32, true}}, classes, seed);
}

// ---------------------------------------------------------------------------
// Desk-scale training: minibatch SGD with momentum on softmax cross-entropy.
// Batchnorm layers are treated as fixed affine maps (their running
// statistics and affine parameters are not trained).

struct TrainOptions {
  std::size_t epochs = 10;
  double lr = 0.05;
  std::uint64_t seed = 0;
  std::size_t batch_size = 32;
  double momentum = 0.9;
};

struct TrainResult {
  AnnModel model;
  double train_accuracy = 0.0;
  double final_loss = 0.0;
};

namespace detail {

inline void conv2d_backward(const Tensor& x, const Conv2dLayer& l, const Tensor& dy, Tensor& dw, Tensor& db,
                            Tensor* dx) {
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = l.weight.dim(0), kh = l.weight.dim(2), kw = l.weight.dim(3);
  const std::size_t oh = dy.dim(2), ow = dy.dim(3);
  const long long pad = static_cast<long long>(l.pad);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t co = 0; co < cout; ++co) {
      const double* g = dy.data().data() + (b * cout + co) * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) db[co] += g[i];
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* plane = x.data().data() + (b * cin + ci) * h * w;
        double* dplane = dx ? dx->data().data() + (b * cin + ci) * h * w : nullptr;
        for (std::size_t ky = 0; ky < kh; ++ky)
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const std::size_t widx = ((co * cin + ci) * kh + ky) * kw + kx;
            const double wv = l.weight[widx];
            double acc = 0.0;
            for (std::size_t oy = 0; oy < oh; ++oy) {
              const long long iy = static_cast<long long>(oy * l.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<long long>(h)) continue;
              for (std::size_t ox = 0; ox < ow; ++ox) {
                const long long ix = static_cast<long long>(ox * l.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<long long>(w)) continue;
                const std::size_t in_idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
                const double gv = g[oy * ow + ox];
                acc += gv * plane[in_idx];
                if (dplane) dplane[in_idx] += gv * wv;
              }
            }
            dw[widx] += acc;
          }
      }
    }
}

}  // namespace detail

inline TrainResult train_sgd(const AnnModel& initial, const Dataset& data, const TrainOptions& opt) {
  data.validate();
  const auto st = stages(initial);
  if (st.back().spiking) throw StructureError("training requires a linear readout");
  check_batch_shape(initial, data.inputs.slice_rows(0, 1));
  if (opt.batch_size == 0) throw ArgumentError("batch_size must be positive");

  AnnModel model = initial;
  const std::size_t n_layers = model.layers.size();
  std::vector<Tensor> vel_w(n_layers), vel_b(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i)
    std::visit(
        [&](const auto& l) {
          using L = std::decay_t<decltype(l)>;
          if constexpr (std::is_same_v<L, LinearLayer> || std::is_same_v<L, Conv2dLayer>) {
            vel_w[i] = Tensor(l.weight.shape());
            vel_b[i] = Tensor(l.bias.shape());
          }
        },
        model.layers[i]);

  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double last_loss = 0.0;

  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += opt.batch_size) {
      const std::size_t bsz = std::min(opt.batch_size, order.size() - start);
      const std::span<const std::size_t> idx(order.data() + start, bsz);

      std::vector<Tensor> inputs;
      inputs.reserve(n_layers + 1);
      inputs.push_back(data.gather(idx));
      for (const auto& layer : model.layers) inputs.push_back(apply_layer(layer, inputs.back()));

      // softmax cross-entropy
      const Tensor& logits = inputs.back();
      const std::size_t k = logits.dim(1);
      Tensor grad({bsz, k});
      double loss = 0.0;
      for (std::size_t b = 0; b < bsz; ++b) {
        const double* z = logits.data().data() + b * k;
        const double zmax = *std::max_element(z, z + k);
        double denom = 0.0;
        for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
        const std::size_t y = data.labels[idx[b]];
        loss += -(z[y] - zmax - std::log(denom));
        for (std::size_t j = 0; j < k; ++j)
          grad[b * k + j] = (std::exp(z[j] - zmax) / denom - (j == y ? 1.0 : 0.0)) / static_cast<double>(bsz);
      }
      loss /= static_cast<double>(bsz);
      if (!std::isfinite(loss))
        throw TrainingError("loss diverged (non-finite) at epoch " + std::to_string(epoch) + ", batch offset " +
                            std::to_string(start) + ", lr " + std::to_string(opt.lr));
      last_loss = loss;

      for (std::size_t li = n_layers; li-- > 0;) {
        const Tensor& x = inputs[li];
        const bool need_dx = li > 0;
        Tensor dx;
        std::visit(
            [&](auto& l) {
              using L = std::decay_t<decltype(l)>;
              if constexpr (std::is_same_v<L, LinearLayer>) {
                const std::size_t in = l.weight.dim(1), out = l.weight.dim(0);
                Tensor dw(l.weight.shape()), db(l.bias.shape());
                if (need_dx) dx = Tensor(x.shape());
                for (std::size_t b = 0; b < bsz; ++b)
                  for (std::size_t o = 0; o < out; ++o) {
                    const double g = grad[b * out + o];
                    db[o] += g;
                    if (g == 0.0) continue;
                    for (std::size_t i = 0; i < in; ++i) {
                      dw[o * in + i] += g * x[b * in + i];
                      if (need_dx) dx[b * in + i] += g * l.weight[o * in + i];
                    }
                  }
                for (std::size_t i = 0; i < dw.size(); ++i) {
                  vel_w[li][i] = opt.momentum * vel_w[li][i] + dw[i];
                  l.weight[i] -= opt.lr * vel_w[li][i];
                }
                for (std::size_t i = 0; i < db.size(); ++i) {
                  vel_b[li][i] = opt.momentum * vel_b[li][i] + db[i];
                  l.bias[i] -= opt.lr * vel_b[li][i];
                }
              } else if constexpr (std::is_same_v<L, Conv2dLayer>) {
                Tensor dw(l.weight.shape()), db(l.bias.shape());
                if (need_dx) dx = Tensor(x.shape());
                detail::conv2d_backward(x, l, grad, dw, db, need_dx ? &dx : nullptr);
                for (std::size_t i = 0; i < dw.size(); ++i) {
                  vel_w[li][i] = opt.momentum * vel_w[li][i] + dw[i];
                  l.weight[i] -= opt.lr * vel_w[li][i];
                }
                for (std::size_t i = 0; i < db.size(); ++i) {
                  vel_b[li][i] = opt.momentum * vel_b[li][i] + db[i];
                  l.bias[i] -= opt.lr * vel_b[li][i];
                }
              } else if constexpr (std::is_same_v<L, AvgPoolLayer>) {
                dx = Tensor(x.shape());
                const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
                const std::size_t oh = h / l.kernel, ow = w / l.kernel;
                const double norm = 1.0 / static_cast<double>(l.kernel * l.kernel);
                for (std::size_t p = 0; p < planes; ++p)
                  for (std::size_t y = 0; y < h; ++y)
                    for (std::size_t xx = 0; xx < w; ++xx)
                      dx[p * h * w + y * w + xx] = grad[p * oh * ow + (y / l.kernel) * ow + xx / l.kernel] * norm;
              } else if constexpr (std::is_same_v<L, BatchNormLayer>) {
                dx = grad;
                const std::size_t channels = x.dim(1), inner = x.stride(1);
                for (std::size_t b = 0; b < x.dim(0); ++b)
                  for (std::size_t c = 0; c < channels; ++c) {
                    const double s = l.gamma[c] / std::sqrt(l.var[c] + l.eps);
                    for (std::size_t i = 0; i < inner; ++i) dx[(b * channels + c) * inner + i] *= s;
                  }
              } else {
                dx = grad;
                const std::size_t channels = x.dim(1), inner = x.stride(1);
                for (std::size_t b = 0; b < x.dim(0); ++b)
                  for (std::size_t c = 0; c < channels; ++c) {
                    const double s = l.scale.empty() ? 1.0 : l.scale[c];
                    for (std::size_t i = 0; i < inner; ++i) {
                      const std::size_t at = (b * channels + c) * inner + i;
                      dx[at] *= l.spec.derivative(x[at] * s);
                    }
                  }
              }
            },
            model.layers[li]);
        grad = std::move(dx);
      }
    }
  }

  TrainResult r{std::move(model), 0.0, last_loss};
  r.train_accuracy = accuracy(r.model, data);
  return r;
}

}  // namespace ftbc
