#pragma once

// Same-size zero-padded 2D convolution with centered odd kernels, its
// adjoint, and the filter-space Lipschitz estimate used by the learners.
//
//   (d * x)[i,j] = sum_{a,b} d[a,b] x[i + c - a, j + c - b],   c = (side-1)/2
//
// with x read as zero outside the grid.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "mcaol/core_types.hpp"

namespace mcaol {

struct ConvPlan {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t side = 1;

  ConvPlan(std::size_t w, std::size_t h, std::size_t filter_side) : width(w), height(h), side(filter_side) {
    if (side % 2 == 0) throw Error("ConvPlan: filter side must be odd");
    if (side > width || side > height) throw Error("ConvPlan: filter larger than image");
  }
  std::ptrdiff_t center() const { return static_cast<std::ptrdiff_t>(side / 2); }
  std::size_t filter_size() const { return side * side; }

  // Visits every (tap, dy, dx, row range, col range) with the valid output window
  // for which x[i+dy, j+dx] lies inside the grid.
  template <typename Fn>
  void for_each_tap(Fn&& fn) const {
    const auto c = center();
    const auto H = static_cast<std::ptrdiff_t>(height);
    const auto W = static_cast<std::ptrdiff_t>(width);
    for (std::size_t a = 0; a < side; ++a) {
      for (std::size_t b = 0; b < side; ++b) {
        const std::ptrdiff_t dy = c - static_cast<std::ptrdiff_t>(a);
        const std::ptrdiff_t dx = c - static_cast<std::ptrdiff_t>(b);
        const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, -dy), i1 = std::min(H, H - dy);
        const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -dx), j1 = std::min(W, W - dx);
        if (i0 >= i1 || j0 >= j1) continue;
        fn(a * side + b, dy, dx, i0, i1, j0, j1);
      }
    }
  }
};

namespace detail {

inline void check_filter(std::span<const double> d, const ConvPlan& plan) {
  if (d.size() != plan.filter_size()) throw Error("convolve: filter length does not match plan");
}

}  // namespace detail

// Accumulates (d * x) into out.
inline void convolve_accumulate(std::span<const double> d, const Array2D& x, Array2D& out, const ConvPlan& plan) {
  detail::check_filter(d, plan);
  const auto W = static_cast<std::ptrdiff_t>(plan.width);
  plan.for_each_tap([&](std::size_t p, std::ptrdiff_t dy, std::ptrdiff_t dx, std::ptrdiff_t i0, std::ptrdiff_t i1,
                        std::ptrdiff_t j0, std::ptrdiff_t j1) {
    const double w = d[p];
    if (w == 0.0) return;
    for (std::ptrdiff_t i = i0; i < i1; ++i) {
      const double* src = x.data.data() + (i + dy) * W + dx;
      double* dst = out.data.data() + i * W;
      for (std::ptrdiff_t j = j0; j < j1; ++j) dst[j] += w * src[j];
    }
  });
}

inline Array2D convolve(std::span<const double> d, const Array2D& x, std::size_t side) {
  const ConvPlan plan(x.width, x.height, side);
  Array2D out(x.width, x.height);
  convolve_accumulate(d, x, out, plan);
  return out;
}

inline Array2D convolve(std::span<const double> d, const Array2D& x) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d.size()))));
  if (side * side != d.size()) throw Error("convolve: filter is not square");
  return convolve(d, x, side);
}

// Accumulates the adjoint D^T r into out.
inline void convolve_adjoint_accumulate(std::span<const double> d, const Array2D& r, Array2D& out,
                                        const ConvPlan& plan) {
  detail::check_filter(d, plan);
  const auto W = static_cast<std::ptrdiff_t>(plan.width);
  plan.for_each_tap([&](std::size_t p, std::ptrdiff_t dy, std::ptrdiff_t dx, std::ptrdiff_t i0, std::ptrdiff_t i1,
                        std::ptrdiff_t j0, std::ptrdiff_t j1) {
    const double w = d[p];
    if (w == 0.0) return;
    for (std::ptrdiff_t i = i0; i < i1; ++i) {
      const double* src = r.data.data() + i * W;
      double* dst = out.data.data() + (i + dy) * W + dx;
      for (std::ptrdiff_t j = j0; j < j1; ++j) dst[j] += w * src[j];
    }
  });
}

inline Array2D convolve_adjoint(std::span<const double> d, const Array2D& r) {
  const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(d.size()))));
  if (side * side != d.size()) throw Error("convolve_adjoint: filter is not square");
  const ConvPlan plan(r.width, r.height, side);
  Array2D out(r.width, r.height);
  convolve_adjoint_accumulate(d, r, out, plan);
  return out;
}

// Gradient of 1/2 ||d * x - z||^2 with respect to d, given r = d * x - z:
// g[p] = sum_{i,j} r[i,j] x[i+dy_p, j+dx_p].
inline void filter_gradient_accumulate(const Array2D& x, const Array2D& r, std::span<double> g, const ConvPlan& plan) {
  const auto W = static_cast<std::ptrdiff_t>(plan.width);
  plan.for_each_tap([&](std::size_t p, std::ptrdiff_t dy, std::ptrdiff_t dx, std::ptrdiff_t i0, std::ptrdiff_t i1,
                        std::ptrdiff_t j0, std::ptrdiff_t j1) {
    double s = 0.0;
    for (std::ptrdiff_t i = i0; i < i1; ++i) {
      const double* xs = x.data.data() + (i + dy) * W + dx;
      const double* rs = r.data.data() + i * W;
      for (std::ptrdiff_t j = j0; j < j1; ++j) s += rs[j] * xs[j];
    }
    g[p] += s;
  });
}

// All K filter responses of x.
inline FeatureStack analyze(const FilterBank& bank, const Array2D& x) {
  const ConvPlan plan(x.width, x.height, bank.side());
  FeatureStack out;
  out.maps.reserve(bank.count());
  for (std::size_t k = 0; k < bank.count(); ++k) {
    Array2D m(x.width, x.height);
    convolve_accumulate(bank.filter(k), x, m, plan);
    out.maps.push_back(std::move(m));
  }
  return out;
}

// sum_k D_k^T z_k, skipping zero feature pixels.
inline Array2D analyze_adjoint(const FilterBank& bank, const FeatureStack& z) {
  if (z.count() != bank.count()) throw Error("analyze_adjoint: feature count mismatch");
  const std::size_t w = z.maps.front().width, h = z.maps.front().height;
  const ConvPlan plan(w, h, bank.side());
  const auto c = plan.center();
  const auto side = static_cast<std::ptrdiff_t>(bank.side());
  const auto W = static_cast<std::ptrdiff_t>(w), H = static_cast<std::ptrdiff_t>(h);
  Array2D out(w, h);
  for (std::size_t k = 0; k < bank.count(); ++k) {
    const auto d = bank.filter(k);
    const Array2D& zk = z.maps[k];
    for (std::ptrdiff_t i = 0; i < H; ++i) {
      for (std::ptrdiff_t j = 0; j < W; ++j) {
        const double v = zk.data[i * W + j];
        if (v == 0.0) continue;
        // x index (i + dy, j + dx) with dy = c - a, dx = c - b
        for (std::ptrdiff_t a = 0; a < side; ++a) {
          const std::ptrdiff_t m = i + c - a;
          if (m < 0 || m >= H) continue;
          for (std::ptrdiff_t b = 0; b < side; ++b) {
            const std::ptrdiff_t n = j + c - b;
            if (n < 0 || n >= W) continue;
            out.data[m * W + n] += d[a * side + b] * v;
          }
        }
      }
    }
  }
  return out;
}

// Diagonal of sum_k D_k^T D_k for a bank satisfying M M^T = I/P exactly:
// w_j = #{taps p : j + offset_p inside the grid} / P.
inline Array2D tight_frame_gram_diagonal(std::size_t width, std::size_t height, std::size_t side) {
  const ConvPlan plan(width, height, side);
  Array2D w(width, height);
  const auto W = static_cast<std::ptrdiff_t>(width);
  const double inv_p = 1.0 / static_cast<double>(plan.filter_size());
  // Adjoint windows: D^T writes to x index (i+dy, j+dx) for every valid output (i,j).
  plan.for_each_tap([&](std::size_t, std::ptrdiff_t dy, std::ptrdiff_t dx, std::ptrdiff_t i0, std::ptrdiff_t i1,
                        std::ptrdiff_t j0, std::ptrdiff_t j1) {
    for (std::ptrdiff_t i = i0; i < i1; ++i)
      for (std::ptrdiff_t j = j0; j < j1; ++j) w.data[(i + dy) * W + (j + dx)] += inv_p;
  });
  return w;
}

// Upper estimate of lambda_max(sum_l X_l^T X_l), X_l the map d -> d * x_l, by
// power iteration (relative tolerance 1e-4) inflated by 1%.
inline double operator_norm_sq(std::span<const Array2D> images, std::size_t side, std::uint64_t seed = 0x5eed) {
  if (images.empty()) throw Error("operator_norm_sq: empty image list");
  bool any = false;
  for (const auto& x : images)
    for (double v : x.data) any = any || v != 0.0;
  if (!any) throw Error("operator_norm_sq: all-zero training set");

  const std::size_t p = side * side;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> v(p), w(p);
  for (auto& e : v) e = normal(rng);
  double nv = norm2(v);
  for (auto& e : v) e /= nv;

  auto apply = [&](std::span<const double> in, std::span<double> out) {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& x : images) {
      const ConvPlan plan(x.width, x.height, side);
      Array2D r(x.width, x.height);
      convolve_accumulate(in, x, r, plan);
      filter_gradient_accumulate(x, r, out, plan);
    }
  };

  double lambda = 0.0;
  for (int it = 0; it < 20000; ++it) {
    apply(v, w);
    // ||A v|| with ||v|| = 1 lies between the Rayleigh quotient and lambda_max.
    const double next = norm2(w);
    if (next == 0.0) break;
    for (std::size_t i = 0; i < p; ++i) v[i] = w[i] / next;
    const bool converged = it > 0 && std::abs(next - lambda) <= 1e-4 * next;
    lambda = std::max(next, lambda);
    if (converged) break;
  }
  return lambda * 1.01;
}

}  // namespace mcaol
