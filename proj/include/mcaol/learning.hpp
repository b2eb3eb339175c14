#pragma once

// Unsupervised convolutional analysis operator learning.
//
// Single channel:   F_a  = sum_{l,k} 1/2 ||d_k * x_l - z_lk||^2 + alpha ||z_lk||_0
// Multi channel:    F_mc = sum_{l,k} sum_e gamma_e/2 ||d_ek * x_el - z_elk||^2 + ||(z_1lk..z_Elk)||_{1,0}
//
// Both are minimized by alternating an exact hard-thresholding step on the
// codes with a majorized gradient step on each filter bank followed by the
// SVD projection onto the scaled tight-frame set {D : D D^T = I/P}.

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "mcaol/conv.hpp"
#include "mcaol/core_types.hpp"

namespace mcaol {

// ---------------------------------------------------------------------------
// Sparse-code operators

// Keeps a_j iff a_j^2 / 2 >= beta.
inline std::vector<double> hard_threshold(std::span<const double> a, double beta) {
  if (!(beta > 0.0)) throw Error("hard_threshold: beta must be > 0");
  std::vector<double> z(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) z[j] = 0.5 * a[j] * a[j] >= beta ? a[j] : 0.0;
  return z;
}

inline void hard_threshold_inplace(std::span<double> a, double beta) {
  for (double& v : a)
    if (!(0.5 * v * v >= beta)) v = 0.0;
}

// Keeps the pixel tuple (a_1j..a_Ej) iff sum_e gamma_e a_ej^2 / 2 >= 1, else zeroes it.
inline std::vector<std::vector<double>> multi_hard_threshold(std::span<const std::span<const double>> channels,
                                                             std::span<const double> gammas) {
  if (channels.size() != gammas.size() || channels.empty())
    throw Error("multi_hard_threshold: channel/weight count mismatch");
  for (double g : gammas)
    if (!(g > 0.0)) throw Error("multi_hard_threshold: gamma must be > 0");
  const std::size_t n = channels.front().size();
  for (const auto& c : channels)
    if (c.size() != n) throw Error("multi_hard_threshold: length mismatch");
  std::vector<std::vector<double>> out(channels.size(), std::vector<double>(n, 0.0));
  for (std::size_t j = 0; j < n; ++j) {
    double energy = 0.0;
    for (std::size_t e = 0; e < channels.size(); ++e) energy += 0.5 * gammas[e] * channels[e][j] * channels[e][j];
    if (energy >= 1.0)
      for (std::size_t e = 0; e < channels.size(); ++e) out[e][j] = channels[e][j];
  }
  return out;
}

inline std::vector<std::vector<double>> multi_hard_threshold(const std::vector<std::vector<double>>& channels,
                                                             std::span<const double> gammas) {
  std::vector<std::span<const double>> views(channels.begin(), channels.end());
  return multi_hard_threshold(std::span<const std::span<const double>>(views), gammas);
}

// In-place joint threshold over E same-length buffers; returns the number of kept pixels.
inline std::size_t multi_hard_threshold_inplace(std::span<const std::span<double>> channels,
                                                std::span<const double> gammas) {
  const std::size_t n = channels.front().size();
  std::size_t kept = 0;
  for (std::size_t j = 0; j < n; ++j) {
    double energy = 0.0;
    for (std::size_t e = 0; e < channels.size(); ++e) energy += 0.5 * gammas[e] * channels[e][j] * channels[e][j];
    if (energy >= 1.0) {
      ++kept;
    } else {
      for (std::size_t e = 0; e < channels.size(); ++e) channels[e][j] = 0.0;
    }
  }
  return kept;
}

// ---------------------------------------------------------------------------
// Tight-frame projection

struct TightFrameProjection {
  FilterBank bank;
  bool rank_deficient = false;
};

// Frobenius-nearest D with D D^T = I/P to the P x K matrix G (P = rows): D = U V^T / sqrt(P).
inline Eigen::MatrixXd nearest_tight_frame(const Eigen::MatrixXd& G, bool* rank_deficient = nullptr) {
  const Eigen::Index P = G.rows();
  if (P == 0) throw Error("project_tight_frame: empty matrix");
  if (G.cols() < P) throw Error("project_tight_frame: need at least P filters for a tight frame");
  if (!G.allFinite()) throw Error("project_tight_frame: non-finite input");
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(G, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const bool deficient = !(sv(sv.size() - 1) >= 1e-12 * sv(0));
  if (rank_deficient) *rank_deficient = deficient;
  Eigen::MatrixXd U = svd.matrixU();
  Eigen::MatrixXd V = svd.matrixV();
  if (deficient) {
    // Null directions are arbitrary; make sure they complete orthonormal bases.
    auto complete = [](const Eigen::MatrixXd& M) {
      const Eigen::MatrixXd err = M.transpose() * M - Eigen::MatrixXd::Identity(M.cols(), M.cols());
      if (err.norm() <= 1e-12) return M;
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(M);
      Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(M.rows(), M.cols());
      for (Eigen::Index c = 0; c < M.cols(); ++c)
        if (Q.col(c).dot(M.col(c)) < 0) Q.col(c) *= -1;
      return Q;
    };
    U = complete(U);
    V = complete(V);
  }
  return U * V.transpose() / std::sqrt(static_cast<double>(P));
}

inline TightFrameProjection project_tight_frame(const Eigen::MatrixXd& G, std::size_t side) {
  if (G.rows() != static_cast<Eigen::Index>(side * side))
    throw Error("project_tight_frame: row count must equal filter size");
  TightFrameProjection out;
  const Eigen::MatrixXd D = nearest_tight_frame(G, &out.rank_deficient);
  std::vector<double> coeffs(D.data(), D.data() + D.size());  // column-major: filter k contiguous
  out.bank = FilterBank(side, static_cast<std::size_t>(G.cols()), std::move(coeffs));
  return out;
}

inline Eigen::MatrixXd bank_matrix(const FilterBank& bank) {
  return Eigen::Map<const Eigen::MatrixXd>(bank.coefficients().data(), static_cast<Eigen::Index>(bank.filter_size()),
                                           static_cast<Eigen::Index>(bank.count()));
}

// i.i.d. standard normal P x K matrix projected onto the tight-frame set.
inline FilterBank random_tight_frame(std::size_t side, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd G(static_cast<Eigen::Index>(side * side), static_cast<Eigen::Index>(count));
  for (Eigen::Index c = 0; c < G.cols(); ++c)
    for (Eigen::Index r = 0; r < G.rows(); ++r) G(r, c) = normal(rng);
  return project_tight_frame(G, side).bank;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double alpha = 0.01;                // single-channel sparsity weight
  std::vector<double> gammas{800.0, 800.0};
  std::size_t filter_side = 7;        // sqrt(P)
  std::size_t filter_count = 49;      // K
  std::size_t max_outer = 3000;
  double tol = 1e-4;
  bool extrapolation = false;
  bool normalize = true;              // scale each channel to unit max
  bool shared_init = true;            // same random start for every channel
  std::uint64_t seed = 1;
  const FilterBank* init = nullptr;   // overrides the random start when set

  void validate(std::size_t channels, bool multi) const {
    if (multi) {
      if (gammas.size() < channels) throw Error("TrainConfig: need one gamma per channel");
      for (std::size_t e = 0; e < channels; ++e)
        if (!(gammas[e] > 0.0)) throw Error("TrainConfig: gamma must be > 0");
    } else if (!(alpha > 0.0)) {
      throw Error("TrainConfig: alpha must be > 0");
    }
    if (!(tol > 0.0)) throw Error("TrainConfig: tol must be > 0");
    if (filter_side % 2 == 0) throw Error("TrainConfig: filter side must be odd");
    if (filter_count < filter_side * filter_side) throw Error("TrainConfig: need K >= P for a tight frame");
  }
};

struct TrainResult {
  std::vector<FilterBank> banks;              // one per channel
  std::vector<double> input_scales;           // per-channel normalization divisor
  std::vector<double> objective;              // per outer iteration, at the updated codes
  std::vector<std::vector<double>> frame_residuals;  // [iteration][channel] after each filter update
  std::vector<FeatureStack> final_codes;      // codes for training image 0, per channel
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

// Shared alternating scheme. `weights` are the quadratic weights per channel,
// `penalty` the cost per kept pixel tuple; the keep rule is
// sum_e weights_e a_e^2 / 2 >= penalty.
inline TrainResult train_alternating(const std::vector<std::vector<Array2D>>& channels,
                                     const std::vector<double>& weights, double penalty, const TrainConfig& cfg) {
  const std::size_t E = channels.size();
  if (E == 0 || channels.front().empty()) throw Error("train: empty training set");
  const std::size_t L = channels.front().size();
  const std::size_t W = channels.front().front().width, H = channels.front().front().height;
  for (const auto& ch : channels) {
    if (ch.size() != L) throw Error("train: channels have different image counts");
    for (const auto& x : ch)
      if (x.width != W || x.height != H) throw Error("train: mismatched image dimensions");
  }
  const std::size_t side = cfg.filter_side, P = side * side, K = cfg.filter_count;
  const ConvPlan plan(W, H, side);

  TrainResult res;
  std::vector<std::vector<Array2D>> data(E);
  for (std::size_t e = 0; e < E; ++e) {
    double scale = 1.0;
    if (cfg.normalize) {
      double mx = 0.0;
      for (const auto& x : channels[e])
        for (double v : x.data) mx = std::max(mx, std::abs(v));
      if (mx > 0.0) scale = mx;
    }
    res.input_scales.push_back(scale);
    for (const auto& x : channels[e]) {
      Array2D y = x;
      for (double& v : y.data) v /= scale;
      data[e].push_back(std::move(y));
    }
  }

  // Majorizer scale per channel; an all-zero channel has a zero gradient.
  std::vector<double> lip(E, 0.0);
  for (std::size_t e = 0; e < E; ++e) {
    bool any = false;
    for (const auto& x : data[e])
      for (double v : x.data) any = any || v != 0.0;
    lip[e] = any ? operator_norm_sq(data[e], side) : 1.0;
  }

  std::vector<FilterBank> banks;
  for (std::size_t e = 0; e < E; ++e) {
    if (cfg.init) {
      if (cfg.init->side() != side || cfg.init->count() != K) throw Error("train: init bank shape mismatch");
      banks.push_back(*cfg.init);
    } else {
      banks.push_back(random_tight_frame(side, K, cfg.shared_init ? cfg.seed : cfg.seed + e));
    }
  }
  std::vector<FilterBank> prev = banks;

  // responses[e][l][k]
  std::vector<std::vector<std::vector<Array2D>>> resp(
      E, std::vector<std::vector<Array2D>>(L, std::vector<Array2D>(K, Array2D(W, H))));
  std::vector<std::vector<std::vector<Array2D>>> codes = resp;

  auto compute_responses = [&](const std::vector<FilterBank>& bk, std::vector<std::vector<std::vector<Array2D>>>& out) {
    for (std::size_t e = 0; e < E; ++e)
      for (std::size_t l = 0; l < L; ++l)
        for (std::size_t k = 0; k < K; ++k) {
          auto& m = out[e][l][k];
          std::fill(m.data.begin(), m.data.end(), 0.0);
          convolve_accumulate(bk[e].filter(k), data[e][l], m, plan);
        }
  };

  double omega_scale = 1.0;  // extrapolation restart flag
  double prev_obj = std::numeric_limits<double>::infinity();
  std::vector<std::vector<std::vector<Array2D>>> extra;
  for (std::size_t t = 0; t < cfg.max_outer; ++t) {
    compute_responses(banks, resp);

    // Sparse codes (exact minimizer given the filters) and the objective.
    double obj = 0.0;
    std::size_t nnz = 0;
    std::vector<std::span<double>> views(E);
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t e = 0; e < E; ++e) {
          codes[e][l][k].data = resp[e][l][k].data;
          views[e] = codes[e][l][k].data;
        }
        std::size_t kept = 0;
        for (std::size_t j = 0; j < W * H; ++j) {
          double energy = 0.0;
          for (std::size_t e = 0; e < E; ++e) energy += 0.5 * weights[e] * views[e][j] * views[e][j];
          if (energy >= penalty) {
            ++kept;
          } else {
            obj += energy;
            for (std::size_t e = 0; e < E; ++e) views[e][j] = 0.0;
          }
        }
        nnz += kept;
      }
    }
    obj += penalty * static_cast<double>(nnz);
    res.objective.push_back(obj);
    res.iterations = t + 1;

    if (t > 0 && std::abs(prev_obj - obj) <= cfg.tol * std::abs(prev_obj)) {
      res.converged = true;
      break;
    }
    if (cfg.extrapolation && obj > prev_obj) omega_scale = 0.0;  // restart
    prev_obj = obj;

    // Filter update per channel: G = D - grad / Lmaj, D <- proj(G).
    std::vector<FilterBank> point = banks;
    const auto* r = &resp;
    if (cfg.extrapolation && t > 0 && omega_scale > 0.0) {
      const double omega = 0.9 * static_cast<double>(t) / static_cast<double>(t + 3);
      for (std::size_t e = 0; e < E; ++e) {
        std::vector<double> c(banks[e].coefficients().begin(), banks[e].coefficients().end());
        const auto pc = prev[e].coefficients();
        for (std::size_t i = 0; i < c.size(); ++i) c[i] += omega * (c[i] - pc[i]);
        point[e] = FilterBank(side, K, std::move(c));
      }
      if (extra.empty()) extra = resp;
      compute_responses(point, extra);
      r = &extra;
    }
    omega_scale = 1.0;
    prev = banks;
    std::vector<double> residuals(E);
    for (std::size_t e = 0; e < E; ++e) {
      Eigen::MatrixXd G = bank_matrix(point[e]);
      std::vector<double> g(P);
      Array2D rk(W, H);
      for (std::size_t k = 0; k < K; ++k) {
        std::fill(g.begin(), g.end(), 0.0);
        for (std::size_t l = 0; l < L; ++l) {
          const auto& a = (*r)[e][l][k].data;
          const auto& z = codes[e][l][k].data;
          for (std::size_t j = 0; j < a.size(); ++j) rk.data[j] = a[j] - z[j];
          filter_gradient_accumulate(data[e][l], rk, g, plan);
        }
        for (std::size_t p = 0; p < P; ++p) G(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)) -= g[p] / lip[e];
      }
      banks[e] = project_tight_frame(G, side).bank;
      residuals[e] = banks[e].tight_frame_residual();
    }
    res.frame_residuals.push_back(std::move(residuals));
  }

  res.banks = std::move(banks);
  for (std::size_t e = 0; e < E; ++e) {
    FeatureStack fs;
    for (std::size_t k = 0; k < K; ++k) fs.maps.push_back(codes[e][0][k]);
    res.final_codes.push_back(std::move(fs));
  }
  return res;
}

}  // namespace detail

// Single-channel training on images normalized to unit max.
inline TrainResult caol_train(const std::vector<Array2D>& images, const TrainConfig& cfg) {
  cfg.validate(1, false);
  if (images.empty()) throw Error("caol_train: empty training set");
  return detail::train_alternating({images}, {1.0}, cfg.alpha, cfg);
}

// E-channel joint training with the l_{1,0} coupling; channels[e][l].
inline TrainResult multichannel_train(const std::vector<std::vector<Array2D>>& channels, const TrainConfig& cfg) {
  cfg.validate(channels.size(), true);
  if (channels.empty() || channels.front().empty()) throw Error("mcaol_train: empty training set");
  std::vector<double> w(cfg.gammas.begin(), cfg.gammas.begin() + static_cast<std::ptrdiff_t>(channels.size()));
  return detail::train_alternating(channels, w, 1.0, cfg);
}

inline TrainResult mcaol_train(const std::vector<ChannelPair<Image>>& pairs, const TrainConfig& cfg) {
  if (pairs.empty()) throw Error("mcaol_train: empty training set");
  std::vector<std::vector<Array2D>> ch(2);
  for (const auto& p : pairs) {
    if (p.low.width() != p.high.width() || p.low.height() != p.high.height())
      throw Error("mcaol_train: mismatched pair dimensions");
    ch[0].push_back(p.low.grid());
    ch[1].push_back(p.high.grid());
  }
  return multichannel_train(ch, cfg);
}

}  // namespace mcaol
