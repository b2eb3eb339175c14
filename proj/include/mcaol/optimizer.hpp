#pragma once

// Limited-memory quasi-Newton minimizer over the box x >= lower_bound.
//
// Search directions come from the two-loop recursion applied to the
// projected gradient; bounds are handled by zeroing blocked components of
// the direction and projecting every trial point. Steps are capped at s = 1
// and backtracked until the Armijo condition holds.

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mcaol/core_types.hpp"

namespace mcaol {

struct SolverConfig {
  std::size_t memory = 10;
  std::size_t max_iter = 300;
  double grad_tol = 1e-7;  // sup-norm of the projected gradient
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
  double lower_bound = 0.0;
  std::size_t max_backtracks = 30;
  double backtrack = 0.5;

  void validate() const {
    if (!(0.0 < wolfe_c1 && wolfe_c1 < wolfe_c2 && wolfe_c2 < 1.0)) throw Error("SolverConfig: need 0 < c1 < c2 < 1");
    if (memory < 1) throw Error("SolverConfig: memory must be >= 1");
    if (!(backtrack > 0.0 && backtrack < 1.0)) throw Error("SolverConfig: backtrack factor must be in (0,1)");
  }
};

struct IterationRecord {
  std::size_t iter = 0;
  double objective = 0.0;
  double projected_grad_norm = 0.0;
  double step = 0.0;
  bool curvature = false;  // accepted step also met the curvature condition
};

struct SolverTrace {
  std::vector<IterationRecord> records;
  std::string stop_reason;
  std::size_t evaluations = 0;

  void write_csv(std::ostream& out) const {
    out << "iter,objective,projected_grad_norm,step\n";
    char buf[128];
    for (const auto& r : records) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", r.iter, r.objective, r.projected_grad_norm, r.step);
      out << buf;
    }
  }
};

struct SolverResult {
  std::vector<double> x;
  double value = 0.0;
  SolverTrace trace;
};

// f(x, grad) returns the objective and writes the gradient into grad.
using Objective = std::function<double(std::span<const double>, std::span<double>)>;

namespace detail {

inline double projected_grad_sup(std::span<const double> x, std::span<const double> g, double lb) {
  double m = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double pg = (x[j] <= lb && g[j] > 0.0) ? 0.0 : g[j];
    m = std::max(m, std::abs(pg));
  }
  return m;
}

}  // namespace detail

inline SolverResult minimize(const Objective& f, std::vector<double> x, const SolverConfig& cfg) {
  cfg.validate();
  const double lb = cfg.lower_bound;
  for (double v : x)
    if (!(v >= lb)) throw Error("minimize: infeasible starting point");
  const std::size_t n = x.size();

  SolverResult res;
  std::vector<double> g(n), xt(n), gt(n), d(n), q(n);
  double fx = f(x, g);
  res.trace.evaluations = 1;
  if (!std::isfinite(fx)) throw Error("minimize: non-finite objective at starting point");

  struct Pair {
    std::vector<double> s, y;
    double rho;
  };
  std::deque<Pair> mem;
  std::vector<double> alpha_buf;

  double pgn = detail::projected_grad_sup(x, g, lb);
  res.trace.records.push_back({0, fx, pgn, 0.0, true});

  auto steepest = [&](std::vector<double>& dir) {
    double m = 0.0;
    for (double v : q) m = std::max(m, std::abs(v));
    for (std::size_t j = 0; j < n; ++j) dir[j] = m > 0.0 ? -q[j] / m : 0.0;
  };

  res.trace.stop_reason = "max_iter";
  for (std::size_t it = 1; it <= cfg.max_iter; ++it) {
    if (pgn <= cfg.grad_tol) {
      res.trace.stop_reason = "grad_tol";
      break;
    }
    // Projected gradient: blocked coordinates sit on the bound with g pushing outward.
    for (std::size_t j = 0; j < n; ++j) q[j] = (x[j] <= lb && g[j] > 0.0) ? 0.0 : g[j];

    if (mem.empty()) {
      steepest(d);
    } else {
      std::vector<double> r = q;
      alpha_buf.assign(mem.size(), 0.0);
      for (std::size_t m = mem.size(); m-- > 0;) {
        alpha_buf[m] = mem[m].rho * dot(mem[m].s, r);
        for (std::size_t j = 0; j < n; ++j) r[j] -= alpha_buf[m] * mem[m].y[j];
      }
      const auto& last = mem.back();
      const double h0 = dot(last.s, last.y) / dot(last.y, last.y);
      for (double& v : r) v *= h0;
      for (std::size_t m = 0; m < mem.size(); ++m) {
        const double beta = mem[m].rho * dot(mem[m].y, r);
        for (std::size_t j = 0; j < n; ++j) r[j] += (alpha_buf[m] - beta) * mem[m].s[j];
      }
      for (std::size_t j = 0; j < n; ++j) d[j] = -r[j];
    }
    auto project_direction = [&] {
      for (std::size_t j = 0; j < n; ++j)
        if (x[j] <= lb && (d[j] < 0.0 || g[j] > 0.0)) d[j] = 0.0;
    };
    project_direction();
    double gd = dot(g, d);
    if (!(gd < 0.0)) {
      mem.clear();
      steepest(d);
      project_direction();
      gd = dot(g, d);
      if (!(gd < 0.0)) {
        res.trace.stop_reason = "no_descent";
        break;
      }
    }

    // Backtracking on s in (0, 1].
    double s = 1.0, best_f = std::numeric_limits<double>::infinity(), best_s = 0.0;
    std::vector<double> best_x, best_g;
    bool accepted = false;
    double ft = 0.0;
    for (std::size_t trial = 0; trial < cfg.max_backtracks; ++trial) {
      for (std::size_t j = 0; j < n; ++j) xt[j] = std::max(lb, x[j] + s * d[j]);
      ft = f(xt, gt);
      ++res.trace.evaluations;
      double decrease = 0.0;
      for (std::size_t j = 0; j < n; ++j) decrease += g[j] * (xt[j] - x[j]);
      if (std::isfinite(ft) && ft <= fx + cfg.wolfe_c1 * std::min(decrease, 0.0) && ft <= fx) {
        accepted = true;
        break;
      }
      if (std::isfinite(ft) && ft < best_f) {
        best_f = ft;
        best_s = s;
        best_x = xt;
        best_g = gt;
      }
      s *= cfg.backtrack;
    }
    if (!accepted) {
      if (best_f < fx) {
        xt = best_x;
        gt = best_g;
        ft = best_f;
        s = best_s;
      } else {
        res.trace.stop_reason = "line_search";
        break;
      }
    }

    Pair p{std::vector<double>(n), std::vector<double>(n), 0.0};
    for (std::size_t j = 0; j < n; ++j) {
      p.s[j] = xt[j] - x[j];
      p.y[j] = gt[j] - g[j];
    }
    const double sy = dot(p.s, p.y);
    if (sy > 1e-10 * norm2(p.s) * norm2(p.y)) {
      p.rho = 1.0 / sy;
      mem.push_back(std::move(p));
      if (mem.size() > cfg.memory) mem.pop_front();
    }
    const bool curvature = dot(gt, d) >= cfg.wolfe_c2 * gd;

    x.swap(xt);
    g.swap(gt);
    fx = ft;
    pgn = detail::projected_grad_sup(x, g, lb);
    res.trace.records.push_back({it, fx, pgn, s, curvature});
  }
  if (res.trace.stop_reason == "max_iter" && pgn <= cfg.grad_tol) res.trace.stop_reason = "grad_tol";

  res.x = std::move(x);
  res.value = fx;
  return res;
}

}  // namespace mcaol
