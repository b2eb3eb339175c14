#pragma once

// Parallel-beam system matrix built from exact ray/pixel intersection
// lengths over a square-pixel basis, with optional Gaussian detector blur
// folded into the rows. Stored row-compressed; forward and back projection
// are A x and A^T s.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcaol/core_types.hpp"

namespace mcaol {

struct ScanGeometry {
  std::size_t detectors = 0;
  std::vector<double> angles;  // radians, strictly increasing
  double detector_pitch = 1.0;  // mm
  double pixel_size = 1.0;      // mm
  double fwhm_blur = 0.0;       // mm, 0 disables

  static ScanGeometry equispaced(std::size_t detectors, std::size_t n_angles, double pitch, double pixel_size,
                                 double fwhm = 0.0) {
    ScanGeometry g;
    g.detectors = detectors;
    g.detector_pitch = pitch;
    g.pixel_size = pixel_size;
    g.fwhm_blur = fwhm;
    g.angles.resize(n_angles);
    for (std::size_t a = 0; a < n_angles; ++a)
      g.angles[a] = 2.0 * std::numbers::pi * static_cast<double>(a) / static_cast<double>(n_angles);
    return g;
  }

  void validate() const {
    if (detectors == 0 || angles.empty()) throw Error("ScanGeometry: empty detector or angle set");
    if (!(detector_pitch > 0.0)) throw Error("ScanGeometry: degenerate geometry (detector pitch must be > 0)");
    if (!(pixel_size > 0.0)) throw Error("ScanGeometry: degenerate geometry (pixel size must be > 0)");
    if (fwhm_blur < 0.0) throw Error("ScanGeometry: negative blur");
    for (std::size_t a = 1; a < angles.size(); ++a)
      if (!(angles[a] > angles[a - 1])) throw Error("ScanGeometry: angles must be strictly increasing");
  }

  // Detector-bin center, mm from the rotation axis.
  double detector_offset(std::size_t d) const {
    return (static_cast<double>(d) - 0.5 * static_cast<double>(detectors - 1)) * detector_pitch;
  }

  friend bool operator==(const ScanGeometry&, const ScanGeometry&) = default;
};

inline nlohmann::json to_json(const ScanGeometry& g) {
  return {{"detectors", g.detectors},       {"angles", g.angles},       {"detector_pitch", g.detector_pitch},
          {"pixel_size", g.pixel_size},     {"fwhm_blur", g.fwhm_blur}};
}

inline ScanGeometry geometry_from_json(const nlohmann::json& j) {
  ScanGeometry g;
  g.detectors = j.at("detectors").get<std::size_t>();
  g.angles = j.at("angles").get<std::vector<double>>();
  g.detector_pitch = j.at("detector_pitch").get<double>();
  g.pixel_size = j.at("pixel_size").get<double>();
  g.fwhm_blur = j.value("fwhm_blur", 0.0);
  return g;
}

struct SystemMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint64_t> row_offsets{0};
  std::vector<std::uint32_t> col_indices;
  std::vector<double> values;

  std::size_t nnz() const { return values.size(); }

  friend bool operator==(const SystemMatrix&, const SystemMatrix&) = default;
};

namespace detail {

struct RowEntry {
  std::uint32_t col;
  double len;
};

// Intersection lengths of the ray {u (cos, sin) + t (-sin, cos)} with the pixel grid.
inline std::vector<RowEntry> trace_ray(double u, double theta, std::size_t width, std::size_t height, double ps) {
  const double c = std::cos(theta), s = std::sin(theta);
  const double xmin = -0.5 * static_cast<double>(width) * ps, xmax = -xmin;
  const double ymin = -0.5 * static_cast<double>(height) * ps, ymax = -ymin;
  constexpr double tiny = 1e-12;
  double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
  // p_x(t) = u c - t s
  if (std::abs(s) < tiny) {
    const double px = u * c;
    if (px < xmin || px >= xmax) return {};
  } else {
    const double ta = (u * c - xmin) / s, tb = (u * c - xmax) / s;
    t0 = std::max(t0, std::min(ta, tb));
    t1 = std::min(t1, std::max(ta, tb));
  }
  // p_y(t) = u s + t c
  if (std::abs(c) < tiny) {
    const double py = u * s;
    if (py < ymin || py >= ymax) return {};
  } else {
    const double ta = (ymin - u * s) / c, tb = (ymax - u * s) / c;
    t0 = std::max(t0, std::min(ta, tb));
    t1 = std::min(t1, std::max(ta, tb));
  }
  if (!(t1 - t0 > tiny * ps)) return {};

  std::vector<double> ts{t0, t1};
  if (std::abs(s) >= tiny) {
    for (std::size_t k = 1; k < width; ++k) {
      const double t = (u * c - (xmin + static_cast<double>(k) * ps)) / s;
      if (t > t0 && t < t1) ts.push_back(t);
    }
  }
  if (std::abs(c) >= tiny) {
    for (std::size_t k = 1; k < height; ++k) {
      const double t = (ymin + static_cast<double>(k) * ps - u * s) / c;
      if (t > t0 && t < t1) ts.push_back(t);
    }
  }
  std::sort(ts.begin(), ts.end());

  std::vector<RowEntry> out;
  for (std::size_t n = 0; n + 1 < ts.size(); ++n) {
    const double len = ts[n + 1] - ts[n];
    if (len <= tiny * ps) continue;
    const double tm = 0.5 * (ts[n] + ts[n + 1]);
    const double px = u * c - tm * s, py = u * s + tm * c;
    auto col = static_cast<std::ptrdiff_t>(std::floor((px - xmin) / ps));
    auto row = static_cast<std::ptrdiff_t>(height) - 1 - static_cast<std::ptrdiff_t>(std::floor((py - ymin) / ps));
    col = std::clamp<std::ptrdiff_t>(col, 0, static_cast<std::ptrdiff_t>(width) - 1);
    row = std::clamp<std::ptrdiff_t>(row, 0, static_cast<std::ptrdiff_t>(height) - 1);
    out.push_back({static_cast<std::uint32_t>(row * static_cast<std::ptrdiff_t>(width) + col), len});
  }
  std::sort(out.begin(), out.end(), [](const RowEntry& a, const RowEntry& b) { return a.col < b.col; });
  std::vector<RowEntry> merged;
  for (const auto& e : out) {
    if (!merged.empty() && merged.back().col == e.col)
      merged.back().len += e.len;
    else
      merged.push_back(e);
  }
  return merged;
}

// weights[src][dst] of the normalized detector-space Gaussian, truncated at 4 sigma.
inline std::vector<std::vector<std::pair<std::size_t, double>>> blur_weights(const ScanGeometry& g) {
  std::vector<std::vector<std::pair<std::size_t, double>>> w(g.detectors);
  const double sigma = g.fwhm_blur / 2.3548;
  for (std::size_t src = 0; src < g.detectors; ++src) {
    double total = 0.0;
    for (std::size_t dst = 0; dst < g.detectors; ++dst) {
      const double dist = (static_cast<double>(dst) - static_cast<double>(src)) * g.detector_pitch;
      if (std::abs(dist) > 4.0 * sigma && dst != src) continue;
      const double v = std::exp(-0.5 * dist * dist / (sigma * sigma));
      w[src].emplace_back(dst, v);
      total += v;
    }
    for (auto& [dst, v] : w[src]) v /= total;
  }
  return w;
}

}  // namespace detail

// Builds A (rows ordered detector-major, i = d * n_angles + a) for a side x side image.
inline SystemMatrix build_system_matrix(const ScanGeometry& geom, std::size_t width, std::size_t height,
                                        unsigned workers = 0) {
  geom.validate();
  if (width == 0 || height == 0) throw Error("build_system_matrix: empty image");
  if (geom.detectors < width) throw Error("build_system_matrix: fewer detectors than image columns");
  const std::size_t nd = geom.detectors, na = geom.angles.size(), J = width * height;

  // rows_by_angle[a][d]
  std::vector<std::vector<std::vector<detail::RowEntry>>> rows(na, std::vector<std::vector<detail::RowEntry>>(nd));
  const bool blur = geom.fwhm_blur > 0.0;
  const auto weights = blur ? detail::blur_weights(geom) : decltype(detail::blur_weights(geom)){};

  auto build_angle = [&](std::size_t a) {
    std::vector<std::vector<detail::RowEntry>> raw(nd);
    for (std::size_t d = 0; d < nd; ++d)
      raw[d] = detail::trace_ray(geom.detector_offset(d), geom.angles[a], width, height, geom.pixel_size);
    if (!blur) {
      rows[a] = std::move(raw);
      return;
    }
    std::vector<double> acc(J, 0.0);
    std::vector<std::vector<std::uint32_t>> touched(nd);
    std::vector<std::vector<std::pair<std::size_t, double>>> incoming(nd);
    for (std::size_t src = 0; src < nd; ++src)
      for (const auto& [dst, w] : weights[src]) incoming[dst].emplace_back(src, w);
    for (std::size_t dst = 0; dst < nd; ++dst) {
      std::vector<std::uint32_t> cols;
      for (const auto& [src, w] : incoming[dst]) {
        for (const auto& e : raw[src]) {
          if (acc[e.col] == 0.0) cols.push_back(e.col);
          acc[e.col] += w * e.len;
        }
      }
      std::sort(cols.begin(), cols.end());
      cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
      auto& out = rows[a][dst];
      out.reserve(cols.size());
      for (auto col : cols) {
        if (acc[col] > 0.0) out.push_back({col, acc[col]});
        acc[col] = 0.0;
      }
    }
  };

  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, na));
  if (workers <= 1) {
    for (std::size_t a = 0; a < na; ++a) build_angle(a);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t a = w; a < na; a += workers) build_angle(a);
      });
    for (auto& t : pool) t.join();
  }

  SystemMatrix A;
  A.rows = nd * na;
  A.cols = J;
  A.row_offsets.reserve(A.rows + 1);
  for (std::size_t d = 0; d < nd; ++d) {
    for (std::size_t a = 0; a < na; ++a) {
      for (const auto& e : rows[a][d]) {
        A.col_indices.push_back(e.col);
        A.values.push_back(e.len);
      }
      A.row_offsets.push_back(A.values.size());
    }
  }
  return A;
}

inline void forward_project_into(const SystemMatrix& A, std::span<const double> x, std::span<double> out) {
  if (x.size() != A.cols || out.size() != A.rows) throw Error("forward_project: dimension mismatch");
  for (std::size_t i = 0; i < A.rows; ++i) {
    double s = 0.0;
    for (auto k = A.row_offsets[i]; k < A.row_offsets[i + 1]; ++k) s += A.values[k] * x[A.col_indices[k]];
    out[i] = s;
  }
}

inline void back_project_into(const SystemMatrix& A, std::span<const double> s, std::span<double> out) {
  if (s.size() != A.rows || out.size() != A.cols) throw Error("back_project: dimension mismatch");
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < A.rows; ++i) {
    const double v = s[i];
    if (v == 0.0) continue;
    for (auto k = A.row_offsets[i]; k < A.row_offsets[i + 1]; ++k) out[A.col_indices[k]] += A.values[k] * v;
  }
}

inline Sinogram forward_project(const SystemMatrix& A, const ScanGeometry& geom, const Image& x) {
  if (A.rows != geom.detectors * geom.angles.size()) throw Error("forward_project: geometry does not match matrix");
  std::vector<double> out(A.rows);
  forward_project_into(A, x.values(), out);
  return Sinogram(geom.detectors, geom.angles, std::move(out), SinogramKind::LineIntegrals);
}

inline Array2D back_project(const SystemMatrix& A, const Sinogram& s, std::size_t width, std::size_t height) {
  if (width * height != A.cols) throw Error("back_project: dimension mismatch");
  Array2D out(width, height);
  back_project_into(A, s.values(), out.data);
  return out;
}

// ---------------------------------------------------------------------------
// On-disk cache: <hash>.sysmat (u64 row offsets, u32 column indices, f64 values,
// all little-endian) plus a <hash>.json descriptor.

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline nlohmann::json system_matrix_key(const ScanGeometry& geom, std::size_t width, std::size_t height) {
  auto j = to_json(geom);
  j["width"] = width;
  j["height"] = height;
  j["format"] = 1;
  return j;
}

inline std::string geometry_hash(const ScanGeometry& geom, std::size_t width, std::size_t height) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(system_matrix_key(geom, width, height).dump())));
  return buf;
}

namespace detail {

template <typename T>
void write_le(std::ofstream& out, const std::vector<T>& v) {
  std::vector<char> buf(v.size() * sizeof(T));
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::uint64_t bits;
    if constexpr (std::is_same_v<T, double>)
      bits = std::bit_cast<std::uint64_t>(v[i]);
    else
      bits = static_cast<std::uint64_t>(v[i]);
    for (std::size_t b = 0; b < sizeof(T); ++b) buf[i * sizeof(T) + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

template <typename T>
std::vector<T> read_le(std::ifstream& in, std::size_t n) {
  std::vector<unsigned char> buf(n * sizeof(T));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw Error("sysmat cache: truncated file");
  std::vector<T> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<std::uint64_t>(buf[i * sizeof(T) + b]) << (8 * b);
    if constexpr (std::is_same_v<T, double>)
      v[i] = std::bit_cast<double>(bits);
    else
      v[i] = static_cast<T>(bits);
  }
  return v;
}

}  // namespace detail

inline void save_system_matrix(const SystemMatrix& A, const nlohmann::json& key, const std::filesystem::path& stem) {
  std::ofstream bin(stem.string() + ".sysmat", std::ios::binary);
  if (!bin) throw Error("cannot write " + stem.string() + ".sysmat");
  detail::write_le(bin, A.row_offsets);
  detail::write_le(bin, A.col_indices);
  detail::write_le(bin, A.values);
  nlohmann::json desc = {{"rows", A.rows}, {"cols", A.cols}, {"nnz", A.nnz()}, {"key", key},
                         {"layout", {"row_offsets:u64le", "col_indices:u32le", "values:f64le"}}};
  std::ofstream(stem.string() + ".json") << desc.dump(2) << "\n";
}

inline SystemMatrix load_system_matrix(const std::filesystem::path& stem, nlohmann::json* key_out = nullptr) {
  std::ifstream dj(stem.string() + ".json");
  if (!dj) throw Error("missing descriptor " + stem.string() + ".json");
  const auto desc = nlohmann::json::parse(dj);
  SystemMatrix A;
  A.rows = desc.at("rows").get<std::size_t>();
  A.cols = desc.at("cols").get<std::size_t>();
  const auto nnz = desc.at("nnz").get<std::size_t>();
  std::ifstream bin(stem.string() + ".sysmat", std::ios::binary);
  if (!bin) throw Error("missing " + stem.string() + ".sysmat");
  A.row_offsets = detail::read_le<std::uint64_t>(bin, A.rows + 1);
  A.col_indices = detail::read_le<std::uint32_t>(bin, nnz);
  A.values = detail::read_le<double>(bin, nnz);
  if (A.row_offsets.back() != nnz) throw Error("sysmat cache: inconsistent row offsets");
  if (key_out) *key_out = desc.at("key");
  return A;
}

// Loads <dir>/<hash>.sysmat when its descriptor matches the geometry, otherwise builds and stores it.
inline SystemMatrix load_or_build_system_matrix(const ScanGeometry& geom, std::size_t width, std::size_t height,
                                                const std::filesystem::path& dir) {
  const auto key = system_matrix_key(geom, width, height);
  const auto stem = dir / geometry_hash(geom, width, height);
  if (std::filesystem::exists(stem.string() + ".sysmat") && std::filesystem::exists(stem.string() + ".json")) {
    try {
      nlohmann::json stored;
      auto A = load_system_matrix(stem, &stored);
      if (stored == key) return A;
    } catch (const std::exception&) {
      // rebuild below
    }
  }
  auto A = build_system_matrix(geom, width, height);
  std::filesystem::create_directories(dir);
  save_system_matrix(A, key, stem);
  return A;
}

}  // namespace mcaol
