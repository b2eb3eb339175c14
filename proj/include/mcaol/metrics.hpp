#pragma once

// Replicate error metrics over a pixel region.

#include <cmath>
#include <span>
#include <vector>

#include "mcaol/core_types.hpp"

namespace mcaol {

using Region = std::vector<std::size_t>;

// Pixels that are strictly positive in any of the given ground-truth channels.
inline Region support_region(std::span<const Image> gt) {
  if (gt.empty()) throw Error("support_region: no images");
  Region r;
  for (std::size_t j = 0; j < gt.front().size(); ++j) {
    bool pos = false;
    for (const auto& g : gt) pos = pos || g.values()[j] > 0.0;
    if (pos) r.push_back(j);
  }
  return r;
}

inline Region support_region(const Image& gt) { return support_region(std::span<const Image>(&gt, 1)); }

namespace detail {

inline void check_metric_inputs(std::span<const Image> recons, const Region& region, std::size_t size) {
  if (region.empty()) throw Error("metric: empty region");
  if (recons.empty()) throw Error("metric: no replicates");
  for (const auto& x : recons)
    if (x.size() != size) throw Error("metric: replicate size mismatch");
  for (auto j : region)
    if (j >= size) throw Error("metric: region index out of range");
}

}  // namespace detail

// Mean over region and replicates of |x_j - x*_j|.
inline double abs_bias(std::span<const Image> recons, const Image& gt, const Region& region) {
  detail::check_metric_inputs(recons, region, gt.size());
  double s = 0.0;
  for (auto j : region) {
    double pj = 0.0;
    for (const auto& x : recons) pj += std::abs(x.values()[j] - gt.values()[j]);
    s += pj;
  }
  return s / (static_cast<double>(region.size()) * static_cast<double>(recons.size()));
}

// Region mean of the per-pixel replicate standard deviation (1/n normalization).
inline double std_metric(std::span<const Image> recons, const Region& region) {
  if (recons.size() < 2) throw Error("std_metric: need at least two replicates");
  detail::check_metric_inputs(recons, region, recons.front().size());
  const double n = static_cast<double>(recons.size());
  double s = 0.0;
  for (auto j : region) {
    // Welford: identical replicates give exactly zero.
    double mean = 0.0, m2 = 0.0, k = 0.0;
    for (const auto& x : recons) {
      const double v = x.values()[j];
      k += 1.0;
      const double d = v - mean;
      mean += d / k;
      m2 += d * (v - mean);
    }
    s += std::sqrt(m2 / n);
  }
  return s / static_cast<double>(region.size());
}

}  // namespace mcaol
