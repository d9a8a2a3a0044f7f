#pragma once

// IDX reader/writer for unsigned-byte image and label files:
//
//   offset  type             value
//   0000    32 bit integer   0x00000803 (images) / 0x00000801 (labels), MSB first
//   0004    32 bit integer   item count
//   0008    32 bit integer   rows      (images only)
//   0012    32 bit integer   columns   (images only)
//   ....    unsigned bytes   pixels row-wise, or one label per item

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "ftbc/dataset.hpp"
#include "ftbc/error.hpp"
#include "ftbc/tensor.hpp"

namespace ftbc::idx {

inline constexpr std::uint32_t kImageMagic = 0x00000803;
inline constexpr std::uint32_t kLabelMagic = 0x00000801;

namespace detail {

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                               const std::filesystem::path& path) {
  if (offset + 4 > bytes.size())
    throw FormatError(path.string() + ": truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

inline void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                     static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace detail

// Images as [N x 1 x rows x cols], scaled to [0, 1] by 1/255.
inline Tensor read_images(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  const std::uint32_t magic = detail::read_be32(bytes, 0, path);
  if (magic != kImageMagic)
    throw FormatError(path.string() + ": bad image magic at byte offset 0");
  const std::uint32_t n = detail::read_be32(bytes, 4, path);
  const std::uint32_t rows = detail::read_be32(bytes, 8, path);
  const std::uint32_t cols = detail::read_be32(bytes, 12, path);
  if (n == 0 || rows == 0 || cols == 0) throw FormatError(path.string() + ": zero dimension at byte offset 4");
  const std::size_t need = 16 + std::size_t{n} * rows * cols;
  if (bytes.size() < need)
    throw FormatError(path.string() + ": truncated pixel data at byte offset " + std::to_string(bytes.size()) +
                      ", expected " + std::to_string(need) + " bytes");
  std::vector<double> data(need - 16);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(bytes[16 + i]) / 255.0;
  return Tensor({n, 1, rows, cols}, std::move(data));
}

inline std::vector<std::size_t> read_labels(const std::filesystem::path& path) {
  const auto bytes = detail::read_bytes(path);
  const std::uint32_t magic = detail::read_be32(bytes, 0, path);
  if (magic != kLabelMagic)
    throw FormatError(path.string() + ": bad label magic at byte offset 0");
  const std::uint32_t n = detail::read_be32(bytes, 4, path);
  if (bytes.size() < 8 + std::size_t{n})
    throw FormatError(path.string() + ": truncated label data at byte offset " + std::to_string(bytes.size()));
  return {bytes.begin() + 8, bytes.begin() + 8 + n};
}

inline Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        Split split = Split::train) {
  Dataset d;
  d.inputs = read_images(images);
  d.labels = read_labels(labels);
  d.split = split;
  if (d.labels.size() != d.inputs.dim(0))
    throw FormatError(labels.string() + ": " + std::to_string(d.labels.size()) + " labels for " +
                      std::to_string(d.inputs.dim(0)) + " images");
  std::size_t top = 0;
  for (std::size_t l : d.labels) top = std::max(top, l);
  d.classes = top + 1;
  return d;
}

// Writes [N x 1 x rows x cols] (or [N x rows x cols]) images in [0, 1],
// quantized to round(255 x).
inline void write_images(const std::filesystem::path& path, const Tensor& images) {
  if (images.rank() != 3 && !(images.rank() == 4 && images.dim(1) == 1))
    throw DimensionError("write_images: expected [N x 1 x H x W], got " + shape_str(images.shape()));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  const std::size_t r = images.rank();
  detail::write_be32(out, kImageMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(0)));
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(r - 2)));
  detail::write_be32(out, static_cast<std::uint32_t>(images.dim(r - 1)));
  for (double v : images.data()) {
    const double q = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
    out.put(static_cast<char>(static_cast<std::uint8_t>(q)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline void write_labels(const std::filesystem::path& path, const std::vector<std::size_t>& labels) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  detail::write_be32(out, kLabelMagic);
  detail::write_be32(out, static_cast<std::uint32_t>(labels.size()));
  for (std::size_t l : labels) {
    if (l > 255) throw ArgumentError("label " + std::to_string(l) + " does not fit in a byte");
    out.put(static_cast<char>(static_cast<std::uint8_t>(l)));
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace ftbc::idx
