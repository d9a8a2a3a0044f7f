#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ftbc/error.hpp"

namespace ftbc {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

// Dense row-major array of doubles. Every dimension is positive and the data
// length always equals the product of the shape.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (shape_size(shape_) != data_.size())
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  // Construction from untrusted input: additionally rejects NaN/Inf.
  static Tensor from_external(Shape shape, std::vector<double> data) {
    for (std::size_t i = 0; i < data.size(); ++i)
      if (!std::isfinite(data[i]))
        throw ArgumentError("non-finite value at flat index " + std::to_string(i));
    return Tensor(std::move(shape), std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Number of elements spanned by one index along `axis`.
  std::size_t stride(std::size_t axis) const {
    std::size_t s = 1;
    for (std::size_t i = axis + 1; i < shape_.size(); ++i) s *= shape_[i];
    return s;
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
    return Tensor(std::move(shape), data_);
  }

  // Rows [begin, begin + count) along axis 0.
  Tensor slice_rows(std::size_t begin, std::size_t count) const {
    if (rank() == 0 || begin + count > shape_[0] || count == 0)
      throw DimensionError("row slice out of range for " + shape_str(shape_));
    Shape s = shape_;
    s[0] = count;
    const std::size_t row = stride(0);
    return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * row),
                                                    data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * row)));
  }

  bool operator==(const Tensor&) const = default;

private:
  void check_shape() const {
    for (std::size_t d : shape_)
      if (d == 0) throw DimensionError("zero-sized dimension in shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline Tensor identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t[i * n + i] = 1.0;
  return t;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

inline Tensor operator+(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Tensor operator-(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Tensor operator*(const Tensor& a, double s) {
  Tensor out = a;
  for (double& v : out.data()) v *= s;
  return out;
}

template <typename F>
Tensor map(const Tensor& t, F&& f) {
  Tensor out = t;
  for (double& v : out.data()) v = f(v);
  return out;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Standard matrix product; the inner sum runs left to right over k.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      out[i * n + j] = acc;
    }
  return out;
}

// Fully connected map over a batch: out[b] = weight * flatten(x[b]) + bias.
// `weight` is [out x in]; x is [B x ...] with prod(...) == in.
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 2 || weight.rank() != 2)
    throw DimensionError("linear: input " + shape_str(x.shape()) + ", weight " + shape_str(weight.shape()));
  const std::size_t batch = x.dim(0), in = x.stride(0), out = weight.dim(0);
  if (weight.dim(1) != in || bias.size() != out)
    throw DimensionError("linear: input features " + std::to_string(in) + " vs weight " +
                         shape_str(weight.shape()) + ", bias " + std::to_string(bias.size()));
  Tensor y({batch, out});
  const auto xs = x.data();
  const auto ws = weight.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = xs.data() + b * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = ws.data() + o * in;
      double acc = 0.0;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      y[b * out + o] = acc + bias[o];
    }
  }
  return y;
}

struct ConvGeometry {
  std::size_t out_h = 0;
  std::size_t out_w = 0;
};

inline ConvGeometry conv_geometry(std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                                  std::size_t stride, std::size_t pad) {
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  const auto span_h = static_cast<long long>(h + 2 * pad) - static_cast<long long>(kh);
  const auto span_w = static_cast<long long>(w + 2 * pad) - static_cast<long long>(kw);
  if (span_h < 0 || span_w < 0 || span_h % static_cast<long long>(stride) != 0 ||
      span_w % static_cast<long long>(stride) != 0)
    throw DimensionError("conv2d: non-integer output size for input " + std::to_string(h) + "x" +
                         std::to_string(w) + ", kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                         ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
  return {static_cast<std::size_t>(span_h) / stride + 1, static_cast<std::size_t>(span_w) / stride + 1};
}

namespace detail {

// Cross-correlation of one sample. `out` must be zeroed by the caller.
inline void conv2d_sample(const double* in, std::size_t cin, std::size_t h, std::size_t w, const double* k,
                          std::size_t cout, std::size_t kh, std::size_t kw, std::size_t stride,
                          std::size_t pad, const ConvGeometry& g, double* out) {
  for (std::size_t co = 0; co < cout; ++co) {
    double* o = out + co * g.out_h * g.out_w;
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* plane = in + ci * h * w;
      for (std::size_t ky = 0; ky < kh; ++ky)
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double wv = k[((co * cin + ci) * kh + ky) * kw + kx];
          for (std::size_t oy = 0; oy < g.out_h; ++oy) {
            const long long iy = static_cast<long long>(oy * stride + ky) - static_cast<long long>(pad);
            if (iy < 0 || iy >= static_cast<long long>(h)) continue;
            const double* row = plane + static_cast<std::size_t>(iy) * w;
            double* orow = o + oy * g.out_w;
            for (std::size_t ox = 0; ox < g.out_w; ++ox) {
              const long long ix = static_cast<long long>(ox * stride + kx) - static_cast<long long>(pad);
              if (ix < 0 || ix >= static_cast<long long>(w)) continue;
              orow[ox] += wv * row[ix];
            }
          }
        }
    }
  }
}

}  // namespace detail

// 2-D cross-correlation with zero padding. Accepts a single sample
// [C_in x H x W] or a batch [B x C_in x H x W].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t pad) {
  const bool batched = input.rank() == 4;
  if ((input.rank() != 3 && !batched) || kernel.rank() != 4)
    throw DimensionError("conv2d: input " + shape_str(input.shape()) + ", kernel " + shape_str(kernel.shape()));
  const std::size_t off = batched ? 1 : 0;
  const std::size_t batch = batched ? input.dim(0) : 1;
  const std::size_t cin = input.dim(off), h = input.dim(off + 1), w = input.dim(off + 2);
  const std::size_t cout = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kernel.dim(1) != cin)
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernel.dim(1)) + " input channels, got " +
                         std::to_string(cin));
  const ConvGeometry g = conv_geometry(h, w, kh, kw, stride, pad);
  Shape out_shape{cout, g.out_h, g.out_w};
  if (batched) out_shape.insert(out_shape.begin(), batch);
  Tensor out(out_shape);
  const std::size_t in_step = cin * h * w, out_step = cout * g.out_h * g.out_w;
  for (std::size_t b = 0; b < batch; ++b)
    detail::conv2d_sample(input.data().data() + b * in_step, cin, h, w, kernel.data().data(), cout, kh, kw,
                          stride, pad, g, out.data().data() + b * out_step);
  return out;
}

// Non-overlapping average pooling with window = stride = `k`, single sample
// or batch.
inline Tensor avgpool2d(const Tensor& input, std::size_t k) {
  const bool batched = input.rank() == 4;
  if ((input.rank() != 3 && !batched) || k == 0)
    throw DimensionError("avgpool2d: input " + shape_str(input.shape()));
  const std::size_t off = batched ? 1 : 0;
  const std::size_t planes = (batched ? input.dim(0) : 1) * input.dim(off);
  const std::size_t h = input.dim(off + 1), w = input.dim(off + 2);
  if (h % k != 0 || w % k != 0)
    throw DimensionError("avgpool2d: " + std::to_string(h) + "x" + std::to_string(w) + " not divisible by " +
                         std::to_string(k));
  const std::size_t oh = h / k, ow = w / k;
  Shape out_shape = input.shape();
  out_shape[off + 1] = oh;
  out_shape[off + 2] = ow;
  Tensor out(out_shape);
  const double norm = 1.0 / static_cast<double>(k * k);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t dy = 0; dy < k; ++dy)
          for (std::size_t dx = 0; dx < k; ++dx) acc += input[p * h * w + (oy * k + dy) * w + ox * k + dx];
        out[p * oh * ow + oy * ow + ox] = acc * norm;
      }
  return out;
}

// Adds bias[c] to every element of channel c, where axis 1 is the channel
// axis of a [B x C x ...] tensor.
inline void add_channel_bias(Tensor& t, std::span<const double> bias) {
  if (t.rank() < 2 || t.dim(1) != bias.size())
    throw DimensionError("channel bias of length " + std::to_string(bias.size()) + " for tensor " +
                         shape_str(t.shape()));
  const std::size_t channels = t.dim(1), inner = t.stride(1);
  auto d = t.data();
  for (std::size_t b = 0; b < t.dim(0); ++b)
    for (std::size_t c = 0; c < channels; ++c) {
      double* p = d.data() + (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) p[i] += bias[c];
    }
}

// Arithmetic mean over every axis except axis 1.
inline Tensor channel_mean(const Tensor& t) {
  if (t.rank() < 2) throw DimensionError("channel_mean: rank " + std::to_string(t.rank()) + " < 2");
  const std::size_t batch = t.dim(0), channels = t.dim(1), inner = t.stride(1);
  Tensor out({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* p = t.data().data() + (b * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) acc += p[i];
    }
    out[c] = acc / static_cast<double>(batch * inner);
  }
  return out;
}

// Nearest-rank percentile: the ceil(p/100 * n)-th smallest value (1-based);
// p = 0 gives the minimum.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw ArgumentError("percentile of an empty sequence");
  if (!(p >= 0.0 && p <= 100.0)) throw ArgumentError("percentile p outside [0, 100]");
  const std::size_t n = values.size();
  std::size_t rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(n) / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, n);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank - 1), values.end());
  return values[rank - 1];
}

}  // namespace ftbc
