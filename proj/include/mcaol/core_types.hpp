#pragma once

// Value types shared by every stage of the pipeline: images, filter banks,
// feature stacks, sinograms and per-energy channel pairs.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mcaol {

// Thrown for malformed inputs and violated preconditions.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Dense row-major 2D array. Used for feature maps, gradients and any
// image-shaped intermediate that is not a physical attenuation map.
struct Array2D {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> data;

  Array2D() = default;
  Array2D(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), data(w * h, fill) {}
  Array2D(std::size_t w, std::size_t h, std::vector<double> values)
      : width(w), height(h), data(std::move(values)) {
    if (data.size() != w * h) throw Error("Array2D: value count does not match dimensions");
  }

  std::size_t size() const { return data.size(); }
  double& operator()(std::size_t row, std::size_t col) { return data[row * width + col]; }
  double operator()(std::size_t row, std::size_t col) const { return data[row * width + col]; }
  std::span<double> span() { return data; }
  std::span<const double> span() const { return data; }
  bool same_shape(const Array2D& o) const { return width == o.width && height == o.height; }

  friend bool operator==(const Array2D&, const Array2D&) = default;
};

// Attenuation map (mm^-1) on a square grid of pixel_size mm pixels.
class Image {
 public:
  Image() = default;
  Image(std::size_t side, double pixel_size, std::vector<double> values)
      : Image(Array2D(side, side, std::move(values)), pixel_size) {}
  Image(Array2D grid, double pixel_size) : grid_(std::move(grid)), pixel_size_(pixel_size) {
    if (grid_.width != grid_.height) throw Error("Image: grid must be square");
    if (!(pixel_size_ > 0.0) || !std::isfinite(pixel_size_)) throw Error("Image: pixel_size must be positive");
    for (double v : grid_.data)
      if (!std::isfinite(v)) throw Error("Image: non-finite value");
  }

  static Image zeros(std::size_t side, double pixel_size) {
    return Image(Array2D(side, side), pixel_size);
  }

  std::size_t width() const { return grid_.width; }
  std::size_t height() const { return grid_.height; }
  std::size_t size() const { return grid_.size(); }
  double pixel_size() const { return pixel_size_; }
  const Array2D& grid() const { return grid_; }
  std::span<const double> values() const { return grid_.data; }
  double operator()(std::size_t row, std::size_t col) const { return grid_(row, col); }
  bool nonnegative() const {
    return std::all_of(grid_.data.begin(), grid_.data.end(), [](double v) { return v >= 0.0; });
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  Array2D grid_;
  double pixel_size_ = 1.0;
};

// K filters of side x side coefficients. Stacked as columns they form the
// P x K matrix M (column-major, filter k contiguous) whose scaled tight-frame
// residual ||M M^T - I/P||_F is tracked by the learning code.
class FilterBank {
 public:
  FilterBank() = default;
  FilterBank(std::size_t side, std::size_t count, std::vector<double> coeffs)
      : side_(side), count_(count), coeffs_(std::move(coeffs)) {
    if (side_ == 0 || side_ % 2 == 0) throw Error("FilterBank: filter side must be odd");
    if (coeffs_.size() != side_ * side_ * count_) throw Error("FilterBank: coefficient count mismatch");
    for (double v : coeffs_)
      if (!std::isfinite(v)) throw Error("FilterBank: non-finite coefficient");
  }

  std::size_t side() const { return side_; }
  std::size_t filter_size() const { return side_ * side_; }
  std::size_t count() const { return count_; }
  std::span<const double> filter(std::size_t k) const {
    return std::span<const double>(coeffs_).subspan(k * filter_size(), filter_size());
  }
  std::span<const double> coefficients() const { return coeffs_; }

  // ||M M^T - (1/P) I_P||_F for the stacked P x K matrix.
  double tight_frame_residual() const {
    const std::size_t p = filter_size();
    double acc = 0.0;
    for (std::size_t a = 0; a < p; ++a) {
      for (std::size_t b = 0; b < p; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < count_; ++k) s += coeffs_[k * p + a] * coeffs_[k * p + b];
        const double d = s - (a == b ? 1.0 / static_cast<double>(p) : 0.0);
        acc += d * d;
      }
    }
    return std::sqrt(acc);
  }

  friend bool operator==(const FilterBank&, const FilterBank&) = default;

 private:
  std::size_t side_ = 1;
  std::size_t count_ = 0;
  std::vector<double> coeffs_;
};

struct FeatureStack {
  std::vector<Array2D> maps;

  std::size_t count() const { return maps.size(); }
  friend bool operator==(const FeatureStack&, const FeatureStack&) = default;
};

enum class SinogramKind { Counts, MeanCounts, LineIntegrals };

// Detector x angle data, row-major with ray index i = detector * n_angles + angle.
class Sinogram {
 public:
  Sinogram() = default;
  Sinogram(std::size_t detectors, std::vector<double> angles, std::vector<double> values,
           SinogramKind kind)
      : detectors_(detectors), angles_(std::move(angles)), values_(std::move(values)), kind_(kind) {
    if (values_.size() != detectors_ * angles_.size()) throw Error("Sinogram: value count mismatch");
    for (double v : values_)
      if (!std::isfinite(v)) throw Error("Sinogram: non-finite value");
    if (kind_ == SinogramKind::Counts) {
      for (double v : values_)
        if (v < 0.0 || v != std::floor(v)) throw Error("Sinogram: counts must be nonnegative integers");
    }
  }

  std::size_t detectors() const { return detectors_; }
  std::size_t n_angles() const { return angles_.size(); }
  std::size_t size() const { return values_.size(); }
  const std::vector<double>& angles() const { return angles_; }
  std::span<const double> values() const { return values_; }
  SinogramKind kind() const { return kind_; }
  double operator()(std::size_t detector, std::size_t angle) const {
    return values_[detector * angles_.size() + angle];
  }

  friend bool operator==(const Sinogram&, const Sinogram&) = default;

 private:
  std::size_t detectors_ = 0;
  std::vector<double> angles_;
  std::vector<double> values_;
  SinogramKind kind_ = SinogramKind::LineIntegrals;
};

template <typename T>
struct ChannelPair {
  T low;
  T high;
  std::pair<double, double> kev{60.0, 120.0};

  const T& operator[](std::size_t e) const { return e == 0 ? low : high; }
  T& operator[](std::size_t e) { return e == 0 ? low : high; }

  friend bool operator==(const ChannelPair&, const ChannelPair&) = default;
};

// ---------------------------------------------------------------------------
// Raw little-endian float64 encoding.

struct RawHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  double pixel_size = 1.0;
  std::string units = "mm^-1";
  std::string energy;

  friend bool operator==(const RawHeader&, const RawHeader&) = default;
};

inline std::vector<std::uint8_t> encode_f64le(std::span<const double> values) {
  std::vector<std::uint8_t> out(values.size() * 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return out;
}

inline std::vector<double> decode_f64le(std::span<const std::uint8_t> bytes) {
  if (bytes.size() % 8 != 0) throw Error("raw buffer length is not a multiple of 8");
  std::vector<double> out(bytes.size() / 8);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[i * 8 + b]) << (8 * b);
    out[i] = std::bit_cast<double>(bits);
  }
  return out;
}

inline Image image_from_raw(std::span<const std::uint8_t> bytes, const RawHeader& header) {
  if (bytes.size() != 8 * header.width * header.height)
    throw Error("image_from_raw: buffer length " + std::to_string(bytes.size()) + " does not match header " +
                std::to_string(header.width) + "x" + std::to_string(header.height));
  return Image(Array2D(header.width, header.height, decode_f64le(bytes)), header.pixel_size);
}

inline std::pair<std::vector<std::uint8_t>, RawHeader> image_to_raw(const Image& img,
                                                                    std::string energy = {}) {
  RawHeader h;
  h.width = img.width();
  h.height = img.height();
  h.pixel_size = img.pixel_size();
  h.energy = std::move(energy);
  return {encode_f64le(img.values()), h};
}

// Small numeric helpers used across modules.

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// ||x - ref|| / ||ref||
inline double nrmse(std::span<const double> x, std::span<const double> ref) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += (x[i] - ref[i]) * (x[i] - ref[i]);
    den += ref[i] * ref[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

}  // namespace mcaol
