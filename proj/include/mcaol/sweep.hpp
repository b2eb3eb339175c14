#pragma once

// Noise-replicate sweeps: simulate n Poisson sinogram pairs, reconstruct each
// with every (method, parameter) combination and reduce to AbsBias / STD per
// channel.

#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcaol/learning.hpp"
#include "mcaol/metrics.hpp"
#include "mcaol/phantom.hpp"
#include "mcaol/physics.hpp"
#include "mcaol/projector.hpp"
#include "mcaol/reconstruction.hpp"

namespace mcaol {

inline const std::vector<std::string>& sweep_methods() {
  static const std::vector<std::string> m{"mcaol", "caol", "caol-pwls", "tv", "jtv", "none"};
  return m;
}

struct MethodGrid {
  std::string method;
  std::vector<double> params;  // rho for learned priors, beta for TV/JTV, ignored for none
};

struct TrainingSpec {
  std::size_t count = 10;
  std::uint64_t seed = 7;
  std::size_t max_outer = 100;
  double tol = 1e-4;
  std::size_t filter_side = 7;
  std::size_t filter_count = 49;
};

struct SweepSpec {
  std::string preset = "torso64";
  std::vector<MethodGrid> methods;
  std::size_t replicates = 5;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  // Reconstruction budgets; rhos/beta are overwritten per grid point.
  std::size_t n_outer = 30;
  std::size_t inner_iterations = 30;
  std::size_t init_iterations = 100;
  std::size_t baseline_iterations = 300;  // single-solve TV / JTV / MLE budget
  std::vector<double> gammas{800.0, 800.0};
  double alpha = 0.01;
  double epsilon = 1e-8;
  std::optional<double> intensity, background;  // preset overrides
  TrainingSpec training;
  std::map<std::string, std::vector<std::string>> bank_paths;  // method -> [low stem, high stem]

  void validate() const {
    if (replicates < 1) throw Error("SweepSpec: replicates must be >= 1");
    if (methods.empty()) throw Error("SweepSpec: no methods");
    for (const auto& m : methods) {
      if (std::find(sweep_methods().begin(), sweep_methods().end(), m.method) == sweep_methods().end())
        throw Error("SweepSpec: unknown method '" + m.method + "'");
      if (m.method != "none" && m.params.empty()) throw Error("SweepSpec: empty grid for " + m.method);
      for (double p : m.params)
        if (!(p > 0.0) && m.method != "none" && m.method != "tv" && m.method != "jtv")
          throw Error("SweepSpec: rho must be > 0 for " + m.method);
    }
    if (gammas.size() != 2) throw Error("SweepSpec: gammas must have two entries");
  }

  Preset resolved_preset() const {
    Preset p = make_preset(preset);
    if (intensity) p.intensity = *intensity;
    if (background) p.background = *background;
    return p;
  }
};

// n log-spaced values from lo to hi inclusive.
inline std::vector<double> log_grid(double lo, double hi, std::size_t n) {
  if (!(lo > 0.0 && hi >= lo) || n == 0) throw Error("log_grid: need 0 < lo <= hi and n >= 1");
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(n - 1));
  return g;
}

inline SweepSpec sweep_spec_from_json(const nlohmann::json& j) {
  SweepSpec s;
  try {
    s.preset = j.value("preset", s.preset);
    s.replicates = j.value("replicates", s.replicates);
    s.seed = j.value("seed", s.seed);
    s.workers = j.value("workers", s.workers);
    for (const auto& m : j.at("methods")) {
      MethodGrid g;
      g.method = m.at("name").get<std::string>();
      if (m.contains("grid")) {
        g.params = m.at("grid").get<std::vector<double>>();
      } else if (m.contains("log_grid")) {
        const auto& lg = m.at("log_grid");
        g.params = log_grid(lg.at(0).get<double>(), lg.at(1).get<double>(), lg.at(2).get<std::size_t>());
      }
      if (g.method == "none" && g.params.empty()) g.params = {0.0};
      s.methods.push_back(std::move(g));
    }
    if (j.contains("recon")) {
      const auto& r = j.at("recon");
      s.n_outer = r.value("n_outer", s.n_outer);
      s.inner_iterations = r.value("inner_iterations", s.inner_iterations);
      s.init_iterations = r.value("init_iterations", s.init_iterations);
      s.baseline_iterations = r.value("baseline_iterations", s.baseline_iterations);
      s.gammas = r.value("gammas", s.gammas);
      s.alpha = r.value("alpha", s.alpha);
      s.epsilon = r.value("epsilon", s.epsilon);
    }
    if (j.contains("source")) {
      const auto& r = j.at("source");
      if (r.contains("intensity")) s.intensity = r.at("intensity").get<double>();
      if (r.contains("background")) s.background = r.at("background").get<double>();
    }
    if (j.contains("training")) {
      const auto& t = j.at("training");
      s.training.count = t.value("count", s.training.count);
      s.training.seed = t.value("seed", s.training.seed);
      s.training.max_outer = t.value("max_outer", s.training.max_outer);
      s.training.tol = t.value("tol", s.training.tol);
      s.training.filter_side = t.value("filter_side", s.training.filter_side);
      s.training.filter_count = t.value("filter_count", s.training.filter_count);
    }
    if (j.contains("banks"))
      for (const auto& [k, v] : j.at("banks").items()) s.bank_paths[k] = v.get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed sweep config: ") + e.what());
  }
  s.validate();
  return s;
}

inline nlohmann::json to_json(const SweepSpec& s) {
  nlohmann::json methods = nlohmann::json::array();
  for (const auto& m : s.methods) methods.push_back({{"name", m.method}, {"grid", m.params}});
  nlohmann::json j = {{"preset", s.preset},
                      {"replicates", s.replicates},
                      {"seed", s.seed},
                      {"workers", s.workers},
                      {"methods", methods},
                      {"recon",
                       {{"n_outer", s.n_outer},
                        {"inner_iterations", s.inner_iterations},
                        {"init_iterations", s.init_iterations},
                        {"baseline_iterations", s.baseline_iterations},
                        {"gammas", s.gammas},
                        {"alpha", s.alpha},
                        {"epsilon", s.epsilon}}},
                      {"training",
                       {{"count", s.training.count},
                        {"seed", s.training.seed},
                        {"max_outer", s.training.max_outer},
                        {"tol", s.training.tol},
                        {"filter_side", s.training.filter_side},
                        {"filter_count", s.training.filter_count}}}};
  if (s.intensity || s.background) {
    j["source"] = nlohmann::json::object();
    if (s.intensity) j["source"]["intensity"] = *s.intensity;
    if (s.background) j["source"]["background"] = *s.background;
  }
  if (!s.bank_paths.empty()) j["banks"] = s.bank_paths;
  return j;
}

// ---------------------------------------------------------------------------

struct LearnedBanks {
  ChannelPair<FilterBank> banks;
  std::vector<double> input_scales{1.0, 1.0};
};

struct SweepBanks {
  std::optional<LearnedBanks> mcaol;
  std::optional<LearnedBanks> caol;  // trained per channel, shared by caol and caol-pwls
};

// Trains the banks a spec needs from perturbed phantoms of the preset grid.
inline SweepBanks train_sweep_banks(const SweepSpec& spec, bool want_mcaol, bool want_caol) {
  const Preset p = spec.resolved_preset();
  const auto pairs = training_set(p.side, p.pixel_size, spec.training.count, spec.training.seed);
  TrainConfig tc;
  tc.filter_side = spec.training.filter_side;
  tc.filter_count = spec.training.filter_count;
  tc.max_outer = spec.training.max_outer;
  tc.tol = spec.training.tol;
  tc.gammas = spec.gammas;
  tc.alpha = spec.alpha;
  tc.seed = spec.training.seed;
  SweepBanks out;
  if (want_mcaol) {
    auto r = mcaol_train(pairs, tc);
    out.mcaol = LearnedBanks{{r.banks[0], r.banks[1]}, r.input_scales};
  }
  if (want_caol) {
    std::vector<Array2D> lo, hi;
    for (const auto& pr : pairs) {
      lo.push_back(pr.low.grid());
      hi.push_back(pr.high.grid());
    }
    auto a = caol_train(lo, tc);
    auto b = caol_train(hi, tc);
    out.caol = LearnedBanks{{a.banks[0], b.banks[0]}, {a.input_scales[0], b.input_scales[0]}};
  }
  return out;
}

struct CurvePoint {
  std::string method;
  double param = 0.0;
  double std = std::numeric_limits<double>::quiet_NaN();
  double absbias = 0.0;
};

struct CurveTable {
  std::vector<CurvePoint> low, high;
  const std::vector<CurvePoint>& channel(std::size_t e) const { return e == 0 ? low : high; }
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_curve_csv(std::ostream& out, const std::vector<CurvePoint>& pts) {
  out << "method,param,std,absbias\n";
  for (const auto& p : pts)
    out << p.method << ',' << format_double(p.param) << ',' << format_double(p.std) << ','
        << format_double(p.absbias) << '\n';
}

// Minimum AbsBias over the grid for one method and channel.
inline double min_abs_bias(const CurveTable& t, const std::string& method, std::size_t channel) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& p : t.channel(channel))
    if (p.method == method) m = std::min(m, p.absbias);
  return m;
}

namespace detail {

// Runs fn(i) for i in [0, n) on up to `workers` threads; rethrows the first failure.
template <typename Fn>
void parallel_for(std::size_t n, unsigned workers, Fn&& fn) {
  const unsigned w = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  if (w == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < w; ++t)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!err) err = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detail

// Simulated replicate data for one preset, shared by every method.
struct ReplicateData {
  ChannelPair<Sinogram> y;
  std::vector<Image> mle_init;   // Poisson fit, per channel
  std::vector<Image> pwls_init;  // weighted least-squares fit, per channel (when needed)
};

// Counts for replicate r: one generator seeded base + r, low channel drawn first.
inline ChannelPair<Sinogram> simulate_replicate(const SystemMatrix& A, const ScanGeometry& geom,
                                                const ChannelPair<Image>& gt, const ChannelPair<SourceModel>& src,
                                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto lo = sample_poisson(mean_counts(A, geom, gt.low, src.low), rng);
  auto hi = sample_poisson(mean_counts(A, geom, gt.high, src.high), rng);
  return {std::move(lo), std::move(hi), gt.kev};
}

inline CurveTable run_sweep(const SweepSpec& spec, const ChannelPair<Image>& gt, const SweepBanks& banks,
                            const SystemMatrix& A, std::vector<std::vector<std::vector<ChannelPair<Image>>>>* keep = nullptr) {
  spec.validate();
  const Preset preset = spec.resolved_preset();
  const ScanGeometry& geom = preset.geometry;
  const auto src = preset.sources();
  const std::size_t side = gt.low.width();
  if (A.cols != side * side || A.rows != geom.detectors * geom.angles.size())
    throw Error("run_sweep: system matrix does not match the preset geometry");

  bool need_pwls = false;
  for (const auto& m : spec.methods) {
    if (m.method == "mcaol" && !banks.mcaol) throw Error("run_sweep: mcaol requires trained banks");
    if ((m.method == "caol" || m.method == "caol-pwls") && !banks.caol)
      throw Error("run_sweep: " + m.method + " requires trained banks");
    need_pwls = need_pwls || m.method == "caol-pwls";
  }

  const std::size_t n = spec.replicates;
  SolverConfig init_solver;
  init_solver.max_iter = spec.init_iterations;

  std::vector<ReplicateData> reps(n);
  detail::parallel_for(n, spec.workers, [&](std::size_t r) {
    auto& d = reps[r];
    d.y = simulate_replicate(A, geom, gt, src, spec.seed + r);
    for (std::size_t e = 0; e < 2; ++e) {
      ReconConfig c;
      c.inner = init_solver;
      d.mle_init.push_back(mle_reconstruct(A, geom, d.y[e], src[e], side, c));
      if (need_pwls) d.pwls_init.push_back(pwls_fit(A, geom, d.y[e], src[e], side, init_solver));
    }
  });

  struct Job {
    std::size_t m, p, r;
  };
  std::vector<Job> jobs;
  for (std::size_t m = 0; m < spec.methods.size(); ++m)
    for (std::size_t p = 0; p < spec.methods[m].params.size(); ++p)
      for (std::size_t r = 0; r < n; ++r) jobs.push_back({m, p, r});

  std::vector<std::vector<std::vector<ChannelPair<Image>>>> out(spec.methods.size());
  for (std::size_t m = 0; m < spec.methods.size(); ++m)
    out[m].assign(spec.methods[m].params.size(), std::vector<ChannelPair<Image>>(n));

  detail::parallel_for(jobs.size(), spec.workers, [&](std::size_t i) {
    const Job& job = jobs[i];
    const std::string& method = spec.methods[job.m].method;
    const double param = spec.methods[job.m].params[job.p];
    const ReplicateData& d = reps[job.r];

    ReconConfig cfg;
    cfg.gammas = spec.gammas;
    cfg.alpha = spec.alpha;
    cfg.epsilon = spec.epsilon;
    cfg.n_outer = spec.n_outer;
    cfg.inner.max_iter = spec.inner_iterations;
    cfg.initial = d.mle_init;

    ChannelPair<Image> res;
    res.kev = gt.kev;
    if (method == "mcaol") {
      cfg.rhos = {param, param};
      cfg.input_scales = banks.mcaol->input_scales;
      auto r = mcaol_reconstruct(A, geom, d.y, src, banks.mcaol->banks, side, cfg);
      res.low = std::move(r.images[0]);
      res.high = std::move(r.images[1]);
    } else if (method == "caol" || method == "caol-pwls") {
      const bool pwls = method == "caol-pwls";
      for (std::size_t e = 0; e < 2; ++e) {
        ReconConfig c = cfg;
        c.rhos = {param};
        c.input_scales = {banks.caol->input_scales[e]};
        c.initial = {pwls ? d.pwls_init[e] : d.mle_init[e]};
        auto r = pwls ? caol_pwls_reconstruct(A, geom, d.y[e], src[e], banks.caol->banks[e], side, c)
                      : caol_reconstruct(A, geom, d.y[e], src[e], banks.caol->banks[e], side, c);
        res[e] = std::move(r.images[0]);
      }
    } else if (method == "tv") {
      cfg.inner.max_iter = spec.baseline_iterations;
      cfg.beta = param;
      for (std::size_t e = 0; e < 2; ++e) res[e] = tv_reconstruct(A, geom, d.y[e], src[e], side, cfg, e);
    } else if (method == "jtv") {
      cfg.inner.max_iter = spec.baseline_iterations;
      cfg.beta = param;
      res = jtv_reconstruct(A, geom, d.y, src, side, cfg);
    } else {  // none
      cfg.inner.max_iter = spec.baseline_iterations;
      for (std::size_t e = 0; e < 2; ++e) res[e] = mle_reconstruct(A, geom, d.y[e], src[e], side, cfg, e);
    }
    out[job.m][job.p][job.r] = std::move(res);
  });

  const Image gts[2] = {gt.low, gt.high};
  const Region region = support_region(std::span<const Image>(gts, 2));
  CurveTable table;
  for (std::size_t m = 0; m < spec.methods.size(); ++m) {
    for (std::size_t p = 0; p < spec.methods[m].params.size(); ++p) {
      for (std::size_t e = 0; e < 2; ++e) {
        std::vector<Image> rec;
        for (const auto& pr : out[m][p]) rec.push_back(pr[e]);
        CurvePoint pt{spec.methods[m].method, spec.methods[m].params[p],
                      std::numeric_limits<double>::quiet_NaN(), abs_bias(rec, gts[e], region)};
        if (n >= 2) pt.std = std_metric(rec, region);
        (e == 0 ? table.low : table.high).push_back(pt);
      }
    }
  }
  if (keep) *keep = std::move(out);
  return table;
}

}  // namespace mcaol
