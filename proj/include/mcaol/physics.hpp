#pragma once

// Transmission measurement model: Beer's-law mean counts, Poisson sampling,
// the Poisson negative log-likelihood with its gradient, and the
// log-transformed weighted least-squares surrogate.

#include <cmath>
#include <random>
#include <span>
#include <variant>
#include <vector>

#include "mcaol/core_types.hpp"
#include "mcaol/projector.hpp"

namespace mcaol {

inline constexpr double kMeanFloor = 1e-12;

struct SourceModel {
  double intensity = 1e5;          // S, photons per ray
  std::vector<double> background;  // eta per ray; size 1 broadcasts

  SourceModel() : background{0.0} {}
  SourceModel(double s, double eta) : intensity(s), background{eta} { validate(); }
  SourceModel(double s, std::vector<double> eta) : intensity(s), background(std::move(eta)) { validate(); }

  void validate() const {
    if (!(intensity > 0.0)) throw Error("SourceModel: intensity must be > 0");
    if (background.empty()) throw Error("SourceModel: empty background");
    for (double e : background)
      if (!(e >= 0.0)) throw Error("SourceModel: background must be >= 0");
  }
  double eta(std::size_t i) const { return background.size() == 1 ? background[0] : background[i]; }
  void check_rays(std::size_t rays) const {
    if (background.size() != 1 && background.size() != rays) throw Error("SourceModel: background length mismatch");
  }
};

namespace detail {

inline void check_nonnegative(std::span<const double> x, const char* what) {
  for (double v : x)
    if (v < 0.0) throw Error(std::string(what) + ": negative attenuation input");
}

}  // namespace detail

// ybar_i = S exp(-[Ax]_i) + eta_i, floored at 1e-12. `line` receives Ax when non-empty.
inline void mean_counts_into(const SystemMatrix& A, std::span<const double> x, const SourceModel& src,
                             std::span<double> ybar, std::span<double> line = {}) {
  src.check_rays(A.rows);
  std::vector<double> tmp;
  if (line.empty()) {
    tmp.resize(A.rows);
    line = tmp;
  }
  forward_project_into(A, x, line);
  for (std::size_t i = 0; i < A.rows; ++i)
    ybar[i] = std::max(src.intensity * std::exp(-line[i]) + src.eta(i), kMeanFloor);
}

inline Sinogram mean_counts(const SystemMatrix& A, const ScanGeometry& geom, const Image& x, const SourceModel& src) {
  detail::check_nonnegative(x.values(), "mean_counts");
  std::vector<double> ybar(A.rows);
  mean_counts_into(A, x.values(), src, ybar);
  return Sinogram(geom.detectors, geom.angles, std::move(ybar), SinogramKind::MeanCounts);
}

// Independent Poisson draws per entry, consuming `rng` in ray order.
template <typename Rng>
Sinogram sample_poisson(const Sinogram& mean, Rng& rng) {
  std::vector<double> counts(mean.size());
  const auto m = mean.values();
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] < 0.0) throw Error("sample_poisson: negative mean");
    if (m[i] == 0.0) {
      counts[i] = 0.0;
      continue;
    }
    std::poisson_distribution<long long> dist(m[i]);
    counts[i] = static_cast<double>(dist(rng));
  }
  return Sinogram(mean.detectors(), mean.angles(), std::move(counts), SinogramKind::Counts);
}

inline Sinogram sample_poisson(const Sinogram& mean, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sample_poisson(mean, rng);
}

// Poisson data term bound to one channel's measurements. Holds scratch buffers,
// so one instance per thread.
class PoissonNll {
 public:
  PoissonNll(const SystemMatrix& A, std::span<const double> y, SourceModel src)
      : A_(&A), y_(y.begin(), y.end()), src_(std::move(src)), line_(A.rows), ybar_(A.rows), g_(A.rows) {
    if (y_.size() != A.rows) throw Error("PoissonNll: measurement length mismatch");
    src_.check_rays(A.rows);
    for (double v : y_)
      if (v < 0.0) throw Error("PoissonNll: negative counts");
  }

  std::size_t dim() const { return A_->cols; }
  const SourceModel& source() const { return src_; }

  // L(x) = sum_i ybar_i - y_i log ybar_i; writes grad = A^T g when non-empty.
  double operator()(std::span<const double> x, std::span<double> grad = {}) {
    mean_counts_into(*A_, x, src_, ybar_, line_);
    double L = 0.0;
    for (std::size_t i = 0; i < y_.size(); ++i) {
      L += ybar_[i] - (y_[i] > 0.0 ? y_[i] * std::log(ybar_[i]) : 0.0);
      g_[i] = (y_[i] / ybar_[i] - 1.0) * src_.intensity * std::exp(-line_[i]);
    }
    if (!grad.empty()) back_project_into(*A_, g_, grad);
    return L;
  }

 private:
  const SystemMatrix* A_;
  std::vector<double> y_;
  SourceModel src_;
  std::vector<double> line_, ybar_, g_;
};

inline double poisson_nll(const SystemMatrix& A, const Image& x, const Sinogram& y, const SourceModel& src) {
  detail::check_nonnegative(x.values(), "poisson_nll");
  PoissonNll f(A, y.values(), src);
  return f(x.values());
}

inline Array2D poisson_nll_grad(const SystemMatrix& A, const Image& x, const Sinogram& y, const SourceModel& src) {
  detail::check_nonnegative(x.values(), "poisson_nll_grad");
  PoissonNll f(A, y.values(), src);
  Array2D g(x.width(), x.height());
  f(x.values(), g.data);
  return g;
}

struct PwlsData {
  std::vector<double> line;     // log(S / (y - eta))
  std::vector<double> weights;  // (y - eta)^2 / max(y, 1); 0 excludes the ray
};

inline PwlsData pwls_transform(std::span<const double> y, const SourceModel& src) {
  src.check_rays(y.size());
  PwlsData out{std::vector<double>(y.size(), 0.0), std::vector<double>(y.size(), 0.0)};
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] < 0.0) throw Error("pwls_transform: negative counts");
    const double yt = y[i] - src.eta(i);
    if (yt >= 1.0) {
      out.line[i] = std::log(src.intensity / yt);
      out.weights[i] = yt * yt / std::max(y[i], 1.0);
    }
  }
  return out;
}

// 1/2 sum_i w_i (l_i - [Ax]_i)^2
class PwlsDataTerm {
 public:
  PwlsDataTerm(const SystemMatrix& A, PwlsData data) : A_(&A), data_(std::move(data)), r_(A.rows), ax_(A.rows) {
    if (data_.line.size() != A.rows) throw Error("PwlsDataTerm: measurement length mismatch");
  }

  std::size_t dim() const { return A_->cols; }

  double operator()(std::span<const double> x, std::span<double> grad = {}) {
    forward_project_into(*A_, x, ax_);
    double v = 0.0;
    for (std::size_t i = 0; i < r_.size(); ++i) {
      const double d = ax_[i] - data_.line[i];
      v += 0.5 * data_.weights[i] * d * d;
      r_[i] = data_.weights[i] * d;
    }
    if (!grad.empty()) back_project_into(*A_, r_, grad);
    return v;
  }

 private:
  const SystemMatrix* A_;
  PwlsData data_;
  std::vector<double> r_, ax_;
};

}  // namespace mcaol
