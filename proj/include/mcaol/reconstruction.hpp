#pragma once

// Model-based reconstruction: learned-operator priors (joint and single
// channel), TV / JTV baselines, the prior-free likelihood fit, and the
// weighted least-squares variant.

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "mcaol/conv.hpp"
#include "mcaol/core_types.hpp"
#include "mcaol/learning.hpp"
#include "mcaol/optimizer.hpp"
#include "mcaol/physics.hpp"
#include "mcaol/projector.hpp"

namespace mcaol {

// ---------------------------------------------------------------------------
// Edge-preserving penalties

struct TvWeights {
  double axial = 1.0;
  double diagonal = 0.70710678118654752440;
};

struct PenaltyValue {
  double value = 0.0;
  Array2D grad;
};

struct JointPenaltyValue {
  double value = 0.0;
  Array2D grad1, grad2;
};

namespace detail {

// sum_j sum_{k in N8(j)} w_jk sqrt(sum_e (x_ej - x_ek)^2 + eps); each unordered
// pair appears twice. Accumulates scale * gradient into grads[e].
inline double joint_tv(std::span<const std::span<const double>> xs, std::size_t W, std::size_t H, double eps,
                       const TvWeights& w, std::span<const std::span<double>> grads, double scale) {
  if (!(eps > 0.0)) throw Error("tv: epsilon must be > 0");
  const std::size_t E = xs.size();
  // Half the 8-neighbourhood; the other half is the same pair seen from k.
  static constexpr int off[4][2] = {{0, 1}, {1, -1}, {1, 0}, {1, 1}};
  double total = 0.0;
  for (int o = 0; o < 4; ++o) {
    const int di = off[o][0], dj = off[o][1];
    const double wt = (di != 0 && dj != 0) ? w.diagonal : w.axial;
    for (std::size_t i = 0; i + di < H; ++i) {
      for (std::size_t j = 0; j < W; ++j) {
        const auto jj = static_cast<std::ptrdiff_t>(j) + dj;
        if (jj < 0 || jj >= static_cast<std::ptrdiff_t>(W)) continue;
        const std::size_t a = i * W + j, b = (i + di) * W + static_cast<std::size_t>(jj);
        // eps last so that channel order cannot change the rounding for E = 2.
        double s = 0.0;
        for (std::size_t e = 0; e < E; ++e) {
          const double d = xs[e][a] - xs[e][b];
          s += d * d;
        }
        const double r = std::sqrt(s + eps);
        total += 2.0 * wt * r;
        if (!grads.empty()) {
          const double c = scale * 2.0 * wt / r;
          for (std::size_t e = 0; e < E; ++e) {
            const double g = c * (xs[e][a] - xs[e][b]);
            grads[e][a] += g;
            grads[e][b] -= g;
          }
        }
      }
    }
  }
  return total;
}

}  // namespace detail

inline PenaltyValue tv_penalty(const Array2D& x, double eps, const TvWeights& w = {}) {
  PenaltyValue out{0.0, Array2D(x.width, x.height)};
  const std::span<const double> xs[1] = {x.data};
  const std::span<double> gs[1] = {out.grad.data};
  out.value = detail::joint_tv(xs, x.width, x.height, eps, w, gs, 1.0);
  return out;
}

inline JointPenaltyValue jtv_penalty(const Array2D& x1, const Array2D& x2, double eps, const TvWeights& w = {}) {
  if (!x1.same_shape(x2)) throw Error("jtv_penalty: channel dimensions differ");
  JointPenaltyValue out{0.0, Array2D(x1.width, x1.height), Array2D(x1.width, x1.height)};
  const std::span<const double> xs[2] = {x1.data, x2.data};
  const std::span<double> gs[2] = {out.grad1.data, out.grad2.data};
  out.value = detail::joint_tv(xs, x1.width, x1.height, eps, w, gs, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// Convolutional quadratic coupling  gamma/2 sum_k ||d_k * (x / s) - z_k||^2

class ConvCoupling {
 public:
  ConvCoupling(const FilterBank& bank, std::size_t width, std::size_t height, double gamma, double scale,
               bool allow_gram = true)
      : bank_(&bank), plan_(width, height, bank.side()), gamma_(gamma), inv_s_(1.0 / scale) {
    if (!(gamma >= 0.0)) throw Error("ConvCoupling: gamma must be >= 0");
    if (!(scale > 0.0)) throw Error("ConvCoupling: input scale must be > 0");
    gram_ = allow_gram && bank.tight_frame_residual() <= 1e-8;
    if (gram_) diag_ = tight_frame_gram_diagonal(width, height, bank.side());
    b_ = Array2D(width, height);
    u_ = Array2D(width, height);
  }

  bool uses_gram() const { return gram_; }
  double gamma() const { return gamma_; }

  // Filter responses of x / s.
  FeatureStack responses(std::span<const double> x) const {
    Array2D u(plan_.width, plan_.height);
    for (std::size_t j = 0; j < x.size(); ++j) u.data[j] = x[j] * inv_s_;
    return analyze(*bank_, u);
  }

  void set_codes(FeatureStack z) {
    if (z.count() != bank_->count()) throw Error("ConvCoupling: code count mismatch");
    z_ = std::move(z);
    zz_ = 0.0;
    for (const auto& m : z_.maps) zz_ += dot(m.data, m.data);
    if (gram_) b_ = analyze_adjoint(*bank_, z_);
  }

  // Value; accumulates the gradient w.r.t. x into grad when non-empty.
  double operator()(std::span<const double> x, std::span<double> grad) {
    if (gamma_ == 0.0) return 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) u_.data[j] = x[j] * inv_s_;
    const double c = gamma_ * inv_s_;
    if (gram_) {
      // ||Du - z||^2 = u'Wu - 2u'b + z'z since D'D = diag(W) for a tight frame.
      double v = zz_;
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double u = u_.data[j];
        v += u * (diag_.data[j] * u - 2.0 * b_.data[j]);
        if (!grad.empty()) grad[j] += c * (diag_.data[j] * u - b_.data[j]);
      }
      return 0.5 * gamma_ * v;
    }
    double v = 0.0;
    Array2D r(plan_.width, plan_.height), back(plan_.width, plan_.height);
    for (std::size_t k = 0; k < bank_->count(); ++k) {
      std::fill(r.data.begin(), r.data.end(), 0.0);
      convolve_accumulate(bank_->filter(k), u_, r, plan_);
      if (!z_.maps.empty())
        for (std::size_t j = 0; j < r.data.size(); ++j) r.data[j] -= z_.maps[k].data[j];
      v += dot(r.data, r.data);
      if (!grad.empty()) convolve_adjoint_accumulate(bank_->filter(k), r, back, plan_);
    }
    if (!grad.empty())
      for (std::size_t j = 0; j < x.size(); ++j) grad[j] += c * back.data[j];
    return 0.5 * gamma_ * v;
  }

 private:
  const FilterBank* bank_;
  ConvPlan plan_;
  double gamma_;
  double inv_s_;
  bool gram_ = false;
  Array2D diag_, b_, u_;
  FeatureStack z_;
  double zz_ = 0.0;
};

// ---------------------------------------------------------------------------
// Configuration and results

struct ReconConfig {
  std::vector<double> rhos{1.0, 1.0};
  std::vector<double> gammas{800.0, 800.0};
  double beta = 0.0;   // TV / JTV weight
  double alpha = 0.01;  // single-channel sparsity threshold
  double epsilon = 1e-8;
  std::size_t n_outer = 300;
  SolverConfig inner{};
  std::size_t init_iterations = 100;
  std::vector<double> input_scales;  // divide x_e by this before filtering; empty -> 1
  std::vector<Image> initial;        // warm start per channel; empty -> computed
  bool keep_codes = false;
  bool allow_gram = true;
  TvWeights tv_weights{};

  void validate(std::size_t channels) const {
    if (rhos.size() < channels) throw Error("ReconConfig: need one rho per channel");
    for (std::size_t e = 0; e < channels; ++e)
      if (!(rhos[e] > 0.0)) throw Error("ReconConfig: rho must be > 0");
    if (!(epsilon > 0.0)) throw Error("ReconConfig: epsilon must be > 0");
    if (!(beta >= 0.0)) throw Error("ReconConfig: beta must be >= 0");
    if (!initial.empty() && initial.size() < channels) throw Error("ReconConfig: initial image count mismatch");
    inner.validate();
  }
  double scale(std::size_t e) const { return input_scales.empty() ? 1.0 : input_scales.at(e); }
};

struct ObjectiveSample {
  std::size_t outer = 0;
  char half = 'z';  // 'z' after the code update, 'x' after the image update
  double value = 0.0;
};

struct ReconResult {
  std::vector<Image> images;
  std::vector<ObjectiveSample> trace;
  std::vector<FeatureStack> codes;  // final codes per channel, when requested
  std::vector<std::size_t> kept;    // kept pixel tuples per outer iteration
};

// One channel's measurement fit: value with the gradient written (not accumulated).
using DataTerm = std::function<double(std::span<const double>, std::span<double>)>;

inline DataTerm poisson_term(const SystemMatrix& A, const Sinogram& y, const SourceModel& src) {
  auto f = std::make_shared<PoissonNll>(A, y.values(), src);
  return [f](std::span<const double> x, std::span<double> g) { return (*f)(x, g); };
}

inline DataTerm pwls_term(const SystemMatrix& A, const Sinogram& y, const SourceModel& src) {
  auto f = std::make_shared<PwlsDataTerm>(A, pwls_transform(y.values(), src));
  return [f](std::span<const double> x, std::span<double> g) { return (*f)(x, g); };
}

namespace detail {

inline void check_sinogram(const SystemMatrix& A, const ScanGeometry& geom, const Sinogram& y) {
  if (y.size() != A.rows || y.detectors() != geom.detectors || y.n_angles() != geom.angles.size())
    throw Error("reconstruct: sinogram does not match the system geometry");
}

inline std::vector<double> start_point(const ReconConfig& cfg, std::size_t e, std::size_t n) {
  if (cfg.initial.empty()) return std::vector<double>(n, 0.0);
  const auto v = cfg.initial[e].values();
  if (v.size() != n) throw Error("reconstruct: initial image has the wrong size");
  std::vector<double> x(v.begin(), v.end());
  for (double& t : x) t = std::max(t, 0.0);
  return x;
}

inline Image to_image(std::vector<double> x, std::size_t side, double ps) {
  return Image(Array2D(side, side, std::move(x)), ps);
}

enum class CodeRule { Joint, Single };

// Alternates the exact code update with warm-started quasi-Newton image updates.
// Joint: keep tuple iff sum_e gamma_e a_e^2 / 2 >= 1 (penalty 1, weights gamma).
// Single: E independent hard thresholds at alpha (weights 1, penalty alpha).
inline ReconResult learned_reconstruct(std::vector<DataTerm> data, const std::vector<const FilterBank*>& banks,
                                       CodeRule rule, std::size_t side, double ps, const ReconConfig& cfg) {
  const std::size_t E = data.size();
  cfg.validate(E);
  if (banks.size() != E) throw Error("reconstruct: one filter bank per channel required");
  const std::size_t J = side * side;
  for (const auto* b : banks) {
    if (b->side() > side) throw Error("reconstruct: filter larger than image");
    if (b->count() != banks.front()->count()) throw Error("reconstruct: banks differ in filter count");
  }
  std::vector<double> weights(E);
  for (std::size_t e = 0; e < E; ++e) {
    weights[e] = rule == CodeRule::Joint ? cfg.gammas.at(e) : 1.0;
    if (rule == CodeRule::Joint && !(weights[e] > 0.0)) throw Error("reconstruct: gamma must be > 0");
  }
  if (rule == CodeRule::Single && !(cfg.alpha > 0.0)) throw Error("reconstruct: alpha must be > 0");
  const double penalty = rule == CodeRule::Joint ? 1.0 : cfg.alpha;
  const std::size_t K = banks.front()->count();

  std::vector<std::vector<double>> x(E);
  for (std::size_t e = 0; e < E; ++e) {
    x[e] = start_point(cfg, e, J);
    if (cfg.initial.empty() && cfg.init_iterations > 0) {
      SolverConfig ic = cfg.inner;
      ic.max_iter = cfg.init_iterations;
      x[e] = minimize(data[e], std::move(x[e]), ic).x;
    }
  }

  std::vector<ConvCoupling> coupling;
  for (std::size_t e = 0; e < E; ++e)
    coupling.emplace_back(*banks[e], side, side, weights[e], cfg.scale(e), cfg.allow_gram);

  std::vector<double> scratch(J);
  auto data_value = [&](std::size_t e) { return data[e](x[e], scratch); };

  ReconResult res;
  std::vector<FeatureStack> z(E);
  for (std::size_t t = 0; t < cfg.n_outer; ++t) {
    // Codes: exact minimizer given x.
    for (std::size_t e = 0; e < E; ++e) z[e] = coupling[e].responses(x[e]);
    double residual = 0.0;
    std::size_t kept = 0;
    std::vector<std::span<double>> views(E);
    for (std::size_t k = 0; k < K; ++k) {
      // Energy of the pixels that get zeroed stays in the objective.
      for (std::size_t j = 0; j < J; ++j) {
        double energy = 0.0;
        for (std::size_t e = 0; e < E; ++e) energy += 0.5 * weights[e] * z[e].maps[k].data[j] * z[e].maps[k].data[j];
        if (rule == CodeRule::Joint) {
          if (!(energy >= penalty)) residual += energy;
        } else {
          for (std::size_t e = 0; e < E; ++e) {
            const double a = z[e].maps[k].data[j];
            if (!(0.5 * a * a >= penalty)) residual += 0.5 * a * a;
          }
        }
      }
      if (rule == CodeRule::Joint) {
        for (std::size_t e = 0; e < E; ++e) views[e] = z[e].maps[k].data;
        kept += multi_hard_threshold_inplace(views, weights);
      } else {
        for (std::size_t e = 0; e < E; ++e) {
          auto& m = z[e].maps[k].data;
          hard_threshold_inplace(m, penalty);
          for (double v : m) kept += v != 0.0;
        }
      }
    }
    double fit = 0.0;
    for (std::size_t e = 0; e < E; ++e) fit += cfg.rhos[e] * data_value(e);
    const double sparsity = penalty * static_cast<double>(kept);
    res.trace.push_back({t, 'z', fit + residual + sparsity});
    res.kept.push_back(kept);

    // Images: channels are independent given the codes.
    double after = sparsity;
    for (std::size_t e = 0; e < E; ++e) {
      coupling[e].set_codes(std::move(z[e]));
      const double rho = cfg.rhos[e];
      auto& term = data[e];
      auto& cp = coupling[e];
      const Objective phi = [&](std::span<const double> v, std::span<double> g) {
        double val = rho * term(v, g);
        for (double& gi : g) gi *= rho;
        return val + cp(v, g);
      };
      auto sol = minimize(phi, std::move(x[e]), cfg.inner);
      x[e] = std::move(sol.x);
      after += sol.value;
      z[e] = FeatureStack{};
    }
    res.trace.push_back({t, 'x', after});
  }

  if (cfg.keep_codes) {
    for (std::size_t e = 0; e < E; ++e) {
      auto r = coupling[e].responses(x[e]);
      if (rule == CodeRule::Joint) {
        res.codes.push_back(std::move(r));
      } else {
        for (auto& m : r.maps) hard_threshold_inplace(m.data, penalty);
        res.codes.push_back(std::move(r));
      }
    }
    if (rule == CodeRule::Joint) {
      std::vector<std::span<double>> views(E);
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t e = 0; e < E; ++e) views[e] = res.codes[e].maps[k].data;
        multi_hard_threshold_inplace(views, weights);
      }
    }
  }
  for (std::size_t e = 0; e < E; ++e) res.images.push_back(to_image(std::move(x[e]), side, ps));
  return res;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Learned-prior reconstructions

// E-channel joint reconstruction; y, sources and banks are per channel.
inline ReconResult multichannel_reconstruct(const SystemMatrix& A, const ScanGeometry& geom,
                                            const std::vector<Sinogram>& y, const std::vector<SourceModel>& src,
                                            const std::vector<const FilterBank*>& banks, std::size_t side,
                                            const ReconConfig& cfg) {
  if (y.size() != src.size() || y.empty()) throw Error("reconstruct: channel count mismatch");
  std::vector<DataTerm> data;
  for (std::size_t e = 0; e < y.size(); ++e) {
    detail::check_sinogram(A, geom, y[e]);
    data.push_back(poisson_term(A, y[e], src[e]));
  }
  return detail::learned_reconstruct(std::move(data), banks, detail::CodeRule::Joint, side, geom.pixel_size, cfg);
}

inline ReconResult mcaol_reconstruct(const SystemMatrix& A, const ScanGeometry& geom, const ChannelPair<Sinogram>& y,
                                     const ChannelPair<SourceModel>& src, const ChannelPair<FilterBank>& banks,
                                     std::size_t side, const ReconConfig& cfg) {
  return multichannel_reconstruct(A, geom, {y.low, y.high}, {src.low, src.high}, {&banks.low, &banks.high}, side,
                                  cfg);
}

// Single channel: codes from hard_threshold(d * x, alpha), quadratic weight 1.
inline ReconResult caol_reconstruct(const SystemMatrix& A, const ScanGeometry& geom, const Sinogram& y,
                                    const SourceModel& src, const FilterBank& bank, std::size_t side,
                                    const ReconConfig& cfg) {
  detail::check_sinogram(A, geom, y);
  return detail::learned_reconstruct({poisson_term(A, y, src)}, {&bank}, detail::CodeRule::Single, side,
                                     geom.pixel_size, cfg);
}

inline ReconResult caol_pwls_reconstruct(const SystemMatrix& A, const ScanGeometry& geom, const Sinogram& y,
                                         const SourceModel& src, const FilterBank& bank, std::size_t side,
                                         const ReconConfig& cfg) {
  detail::check_sinogram(A, geom, y);
  return detail::learned_reconstruct({pwls_term(A, y, src)}, {&bank}, detail::CodeRule::Single, side,
                                     geom.pixel_size, cfg);
}

// ---------------------------------------------------------------------------
// Smooth single-solve baselines

// argmin_{x >= 0} L(x); warm start from cfg.initial[channel] when given.
inline Image mle_reconstruct(const SystemMatrix& A, const ScanGeometry& geom, const Sinogram& y,
                             const SourceModel& src, std::size_t side, const ReconConfig& cfg,
                             std::size_t channel = 0) {
  detail::check_sinogram(A, geom, y);
  cfg.inner.validate();
  auto f = poisson_term(A, y, src);
  auto x0 = cfg.initial.empty() ? std::vector<double>(side * side, 0.0) : detail::start_point(cfg, channel, side * side);
  return detail::to_image(minimize(f, std::move(x0), cfg.inner).x, side, geom.pixel_size);
}

// Unregularized weighted least-squares fit on log data.
inline Image pwls_fit(const SystemMatrix& A, const ScanGeometry& geom, const Sinogram& y, const SourceModel& src,
                      std::size_t side, const SolverConfig& solver) {
  detail::check_sinogram(A, geom, y);
  auto f = pwls_term(A, y, src);
  return detail::to_image(minimize(f, std::vector<double>(side * side, 0.0), solver).x, side, geom.pixel_size);
}

// argmin_{x >= 0} rho L(x) + beta R_tv(x).
inline Image tv_reconstruct(const SystemMatrix& A, const ScanGeometry& geom, const Sinogram& y,
                            const SourceModel& src, std::size_t side, const ReconConfig& cfg,
                            std::size_t channel = 0) {
  detail::check_sinogram(A, geom, y);
  cfg.validate(channel + 1);
  auto f = poisson_term(A, y, src);
  const double rho = cfg.rhos[channel], beta = cfg.beta, eps = cfg.epsilon;
  const TvWeights w = cfg.tv_weights;
  const Objective phi = [&](std::span<const double> v, std::span<double> g) {
    double val = rho * f(v, g);
    for (double& gi : g) gi *= rho;
    if (beta == 0.0) return val;
    const std::span<const double> xs[1] = {v};
    const std::span<double> gs[1] = {g};
    return val + beta * detail::joint_tv(xs, side, side, eps, w, gs, beta);
  };
  auto x0 = cfg.initial.empty() ? std::vector<double>(side * side, 0.0) : detail::start_point(cfg, channel, side * side);
  return detail::to_image(minimize(phi, std::move(x0), cfg.inner).x, side, geom.pixel_size);
}

// argmin sum_e rho_e L_e(x_e) + beta R_jtv(x_1, x_2), solved jointly.
inline ChannelPair<Image> jtv_reconstruct(const SystemMatrix& A, const ScanGeometry& geom,
                                          const ChannelPair<Sinogram>& y, const ChannelPair<SourceModel>& src,
                                          std::size_t side, const ReconConfig& cfg) {
  detail::check_sinogram(A, geom, y.low);
  detail::check_sinogram(A, geom, y.high);
  cfg.validate(2);
  const std::size_t J = side * side;
  auto f1 = poisson_term(A, y.low, src.low);
  auto f2 = poisson_term(A, y.high, src.high);
  const double r1 = cfg.rhos[0], r2 = cfg.rhos[1], beta = cfg.beta, eps = cfg.epsilon;
  const TvWeights w = cfg.tv_weights;
  const Objective phi = [&](std::span<const double> v, std::span<double> g) {
    const auto v1 = v.subspan(0, J), v2 = v.subspan(J, J);
    const auto g1 = g.subspan(0, J), g2 = g.subspan(J, J);
    double val = r1 * f1(v1, g1) + r2 * f2(v2, g2);
    for (double& gi : g1) gi *= r1;
    for (double& gi : g2) gi *= r2;
    if (beta == 0.0) return val;
    const std::span<const double> xs[2] = {v1, v2};
    const std::span<double> gs[2] = {g1, g2};
    return val + beta * detail::joint_tv(xs, side, side, eps, w, gs, beta);
  };
  std::vector<double> x0(2 * J, 0.0);
  if (!cfg.initial.empty()) {
    auto a = detail::start_point(cfg, 0, J), b = detail::start_point(cfg, 1, J);
    std::copy(a.begin(), a.end(), x0.begin());
    std::copy(b.begin(), b.end(), x0.begin() + static_cast<std::ptrdiff_t>(J));
  }
  auto x = minimize(phi, std::move(x0), cfg.inner).x;
  std::vector<double> a(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(J));
  std::vector<double> b(x.begin() + static_cast<std::ptrdiff_t>(J), x.end());
  ChannelPair<Image> out{detail::to_image(std::move(a), side, geom.pixel_size),
                         detail::to_image(std::move(b), side, geom.pixel_size)};
  out.kev = y.kev;
  return out;
}

}  // namespace mcaol
