#pragma once

// Command-line front end. run_cli returns 0 on success, 1 on usage errors and
// 2 on data errors (bad files, malformed JSON, invalid inputs).

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mcaol/io.hpp"
#include "mcaol/learning.hpp"
#include "mcaol/metrics.hpp"
#include "mcaol/phantom.hpp"
#include "mcaol/reconstruction.hpp"
#include "mcaol/sweep.hpp"

#ifndef MCAOL_GIT_DESCRIBE
#define MCAOL_GIT_DESCRIBE "unknown"
#endif

namespace mcaol {

namespace cli_detail {

inline const char* channel_name(std::size_t e) { return e == 0 ? "low" : "high"; }

inline std::string replicate_stem(std::size_t e, std::size_t r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_r%03zu", channel_name(e), r);
  return buf;
}

inline nlohmann::json manifest(const std::string& command, std::uint64_t seed, const std::string& preset) {
  return {{"command", command}, {"git_describe", MCAOL_GIT_DESCRIBE}, {"seed", seed}, {"preset", preset}};
}

inline ChannelPair<Image> load_pair(const fs::path& dir) {
  return {load_image(dir / "low"), load_image(dir / "high")};
}

// Replicate stems "<channel>_rNNN" found in dir, sorted.
inline std::vector<fs::path> replicate_stems(const fs::path& dir, std::size_t e) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  const std::regex re(std::string(channel_name(e)) + "_r[0-9]+\\.json");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (std::regex_match(name, re)) out.push_back(dir / entry.path().stem());
  }
  std::sort(out.begin(), out.end());
  return out;
}

struct TrainOptions {
  std::string mode = "mcaol";
  std::string preset = "torso64";
  std::string images;
  std::string out;
  std::size_t count = 10;
  std::size_t max_outer = 100;
  double tol = 1e-4;
  double gamma = 800.0;
  double alpha = 0.01;
  std::size_t filter_side = 7;
  std::size_t filter_count = 49;
  std::uint64_t seed = 7;
};

inline int cmd_train(const TrainOptions& o) {
  std::vector<ChannelPair<Image>> pairs;
  if (!o.images.empty()) {
    const auto lo = replicate_stems(o.images, 0), hi = replicate_stems(o.images, 1);
    if (lo.empty() || lo.size() != hi.size()) throw Error("train: expected matching low_rNNN/high_rNNN images");
    for (std::size_t l = 0; l < lo.size(); ++l) pairs.push_back({load_image(lo[l]), load_image(hi[l])});
  } else {
    const Preset p = make_preset(o.preset);
    pairs = training_set(p.side, p.pixel_size, o.count, o.seed);
  }
  TrainConfig tc;
  tc.filter_side = o.filter_side;
  tc.filter_count = o.filter_count;
  tc.max_outer = o.max_outer;
  tc.tol = o.tol;
  tc.gammas = {o.gamma, o.gamma};
  tc.alpha = o.alpha;
  tc.seed = o.seed;

  std::vector<TrainResult> results;
  if (o.mode == "mcaol") {
    results.push_back(mcaol_train(pairs, tc));
  } else {
    for (std::size_t e = 0; e < 2; ++e) {
      std::vector<Array2D> ims;
      for (const auto& pr : pairs) ims.push_back(pr[e].grid());
      results.push_back(caol_train(ims, tc));
    }
  }
  const fs::path out(o.out);
  auto man = manifest("train", o.seed, o.preset);
  man["mode"] = o.mode;
  man["training_images"] = pairs.size();
  man["config"] = {{"gamma", o.gamma}, {"alpha", o.alpha}, {"max_outer", o.max_outer}, {"tol", o.tol},
                   {"filter_side", o.filter_side}, {"filter_count", o.filter_count}};
  for (std::size_t e = 0; e < 2; ++e) {
    const auto& r = o.mode == "mcaol" ? results[0] : results[e];
    const std::size_t idx = o.mode == "mcaol" ? e : 0;
    nlohmann::json meta = {{"channel", channel_name(e)}, {"mode", o.mode}, {"seed", o.seed},
                           {"training_images", pairs.size()}, {"iterations", r.iterations}};
    save_bank(out / (o.mode + "_" + channel_name(e)), r.banks[idx], r.input_scales[idx], meta);
    man[std::string("objective_") + channel_name(e)] = r.objective;
  }
  write_json(out / "manifest.json", man);
  std::cout << "trained " << o.mode << " banks on " << pairs.size() << " pairs -> " << out.string() << "\n";
  return 0;
}

struct ReconOptions {
  std::string prior = "mcaol";
  std::string sino;
  std::size_t replicate = 0;
  std::string banks;
  std::string out;
  std::string cache;
  double rho = 1.0;
  double beta = 0.0;
  double gamma = 800.0;
  double alpha = 0.01;
  double epsilon = 1e-8;
  std::size_t n_outer = 30;
  std::size_t inner = 30;
  std::size_t init = 100;
  std::size_t baseline = 300;
};

inline int cmd_reconstruct(const ReconOptions& o) {
  const fs::path dir(o.sino);
  const auto lo = load_sinogram(dir / replicate_stem(0, o.replicate));
  const auto hi = load_sinogram(dir / replicate_stem(1, o.replicate));
  if (!(lo.geometry == hi.geometry)) throw Error("reconstruct: channel geometries differ");
  const ScanGeometry& geom = lo.geometry;
  const std::size_t side = lo.sidecar.value("image_side", std::size_t{0});
  if (side == 0) throw Error("reconstruct: sinogram sidecar lacks image_side");
  const fs::path cache = o.cache.empty() ? dir / "cache" : fs::path(o.cache);
  const auto A = load_or_build_system_matrix(geom, side, side, cache);

  ReconConfig cfg;
  cfg.rhos = {o.rho, o.rho};
  cfg.gammas = {o.gamma, o.gamma};
  cfg.beta = o.beta;
  cfg.alpha = o.alpha;
  cfg.epsilon = o.epsilon;
  cfg.n_outer = o.n_outer;
  cfg.inner.max_iter = o.inner;
  cfg.init_iterations = o.init;

  const ChannelPair<Sinogram> y{lo.sino, hi.sino};
  const ChannelPair<SourceModel> src{lo.source, hi.source};
  ChannelPair<Image> img;
  std::vector<ObjectiveSample> trace;
  auto bank = [&](const std::string& mode, std::size_t e) { return load_bank(fs::path(o.banks) / (mode + "_" + channel_name(e))); };

  if (o.prior == "mcaol") {
    const auto b0 = bank("mcaol", 0), b1 = bank("mcaol", 1);
    cfg.input_scales = {b0.input_scale, b1.input_scale};
    auto r = mcaol_reconstruct(A, geom, y, src, {b0.bank, b1.bank}, side, cfg);
    img = {r.images[0], r.images[1]};
    trace = r.trace;
  } else if (o.prior == "caol" || o.prior == "caol-pwls") {
    for (std::size_t e = 0; e < 2; ++e) {
      const auto b = bank("caol", e);
      ReconConfig c = cfg;
      c.rhos = {o.rho};
      c.input_scales = {b.input_scale};
      auto r = o.prior == "caol" ? caol_reconstruct(A, geom, y[e], src[e], b.bank, side, c)
                                 : caol_pwls_reconstruct(A, geom, y[e], src[e], b.bank, side, c);
      img[e] = r.images[0];
    }
  } else if (o.prior == "tv") {
    cfg.inner.max_iter = o.baseline;
    for (std::size_t e = 0; e < 2; ++e) img[e] = tv_reconstruct(A, geom, y[e], src[e], side, cfg, e);
  } else if (o.prior == "jtv") {
    cfg.inner.max_iter = o.baseline;
    img = jtv_reconstruct(A, geom, y, src, side, cfg);
  } else {
    cfg.inner.max_iter = o.baseline;
    for (std::size_t e = 0; e < 2; ++e) img[e] = mle_reconstruct(A, geom, y[e], src[e], side, cfg, e);
  }

  const fs::path out(o.out);
  // Replicate-indexed names so several runs can share one directory for `metrics`.
  save_image(out / replicate_stem(0, o.replicate), img.low, "60keV");
  save_image(out / replicate_stem(1, o.replicate), img.high, "120keV");
  char tag[16];
  std::snprintf(tag, sizeof tag, "r%03zu", o.replicate);
  auto man = manifest("reconstruct", 0, "");
  man["prior"] = o.prior;
  man["sinograms"] = o.sino;
  man["replicate"] = o.replicate;
  man["config"] = {{"rho", o.rho},         {"beta", o.beta},       {"gamma", o.gamma}, {"alpha", o.alpha},
                   {"epsilon", o.epsilon}, {"n_outer", o.n_outer}, {"inner", o.inner}, {"init", o.init},
                   {"baseline", o.baseline}};
  if (!trace.empty()) {
    const std::string name = std::string("objective_") + tag + ".csv";
    std::ofstream t(out / name);
    t << "outer,half,objective\n";
    for (const auto& s : trace) t << s.outer << ',' << s.half << ',' << format_double(s.value) << '\n';
    man["objective_trace"] = name;
  }
  write_json(out / (std::string("manifest_") + tag + ".json"), man);
  return 0;
}

inline int cmd_sweep(const std::string& config, std::string out, const std::optional<std::uint64_t>& seed,
                     const std::optional<unsigned>& workers, std::string cache) {
  const fs::path cfg_path(config);
  auto j = read_json(cfg_path);
  SweepSpec spec = sweep_spec_from_json(j);
  if (seed) spec.seed = *seed;
  if (workers) spec.workers = *workers;
  if (out.empty()) out = j.value("out", std::string("sweep_out"));
  const fs::path out_dir(out);
  if (cache.empty()) cache = (out_dir / "cache").string();

  const Preset preset = spec.resolved_preset();
  const ChannelPair<Image> gt = make_phantom(preset.phantom());
  const auto A = load_or_build_system_matrix(preset.geometry, preset.side, preset.side, cache);

  bool want_m = false, want_c = false;
  for (const auto& m : spec.methods) {
    want_m = want_m || m.method == "mcaol";
    want_c = want_c || m.method == "caol" || m.method == "caol-pwls";
  }
  SweepBanks banks;
  auto from_paths = [&](const std::string& key) -> std::optional<LearnedBanks> {
    auto it = spec.bank_paths.find(key);
    if (it == spec.bank_paths.end()) return std::nullopt;
    if (it->second.size() != 2) throw Error("sweep: banks." + key + " needs [low, high] stems");
    auto resolve = [&](const std::string& s) {
      fs::path p(s);
      return p.is_absolute() ? p : cfg_path.parent_path() / p;
    };
    const auto a = load_bank(resolve(it->second[0])), b = load_bank(resolve(it->second[1]));
    return LearnedBanks{{a.bank, b.bank}, {a.input_scale, b.input_scale}};
  };
  if (want_m) banks.mcaol = from_paths("mcaol");
  if (want_c) banks.caol = from_paths("caol");
  if ((want_m && !banks.mcaol) || (want_c && !banks.caol)) {
    auto trained = train_sweep_banks(spec, want_m && !banks.mcaol, want_c && !banks.caol);
    for (const char* key : {"mcaol", "caol"}) {
      auto& slot = std::string(key) == "mcaol" ? trained.mcaol : trained.caol;
      if (!slot) continue;
      for (std::size_t e = 0; e < 2; ++e)
        save_bank(out_dir / "banks" / (std::string(key) + "_" + channel_name(e)), slot->banks[e],
                  slot->input_scales[e], {{"channel", channel_name(e)}, {"mode", key}});
    }
    if (trained.mcaol) banks.mcaol = trained.mcaol;
    if (trained.caol) banks.caol = trained.caol;
  }

  const auto table = run_sweep(spec, gt, banks, A);
  fs::create_directories(out_dir);
  for (std::size_t e = 0; e < 2; ++e) {
    std::ofstream f(out_dir / (std::string("curves_") + channel_name(e) + ".csv"));
    if (!f) throw Error("cannot write curves in " + out_dir.string());
    write_curve_csv(f, table.channel(e));
  }
  auto man = manifest("sweep", spec.seed, spec.preset);
  man["spec"] = to_json(spec);
  man["curves"] = {"curves_low.csv", "curves_high.csv"};
  write_json(out_dir / "manifest.json", man);
  std::cout << "sweep done -> " << out_dir.string() << "\n";
  return 0;
}

inline int cmd_metrics(const std::string& gt_dir, const std::string& recon_dir, const std::string& out) {
  const auto gt = load_pair(gt_dir);
  const Image gts[2] = {gt.low, gt.high};
  const Region region = support_region(std::span<const Image>(gts, 2));
  nlohmann::json res = nlohmann::json::object();
  for (std::size_t e = 0; e < 2; ++e) {
    std::vector<Image> rec;
    for (const auto& s : replicate_stems(recon_dir, e)) rec.push_back(load_image(s));
    if (rec.empty()) throw Error("metrics: no " + std::string(channel_name(e)) + "_rNNN images in " + recon_dir);
    nlohmann::json m = {{"replicates", rec.size()}, {"absbias", abs_bias(rec, gts[e], region)}};
    m["std"] = rec.size() >= 2 ? nlohmann::json(std_metric(rec, region)) : nlohmann::json(nullptr);
    res[channel_name(e)] = m;
  }
  res["region_pixels"] = region.size();
  if (!out.empty()) write_json(out, res);
  std::cout << res.dump(2) << "\n";
  return 0;
}

}  // namespace cli_detail

inline int run_cli(int argc, const char* const* argv) {
  using namespace cli_detail;
  CLI::App app{"Dual-energy CT reconstruction with learned convolutional operators"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MCAOL_GIT_DESCRIBE);

  // phantom
  std::string ph_preset = "torso64", ph_out;
  std::optional<std::uint64_t> ph_variant;
  std::uint64_t ph_seed = 0;
  auto* ph = app.add_subcommand("phantom", "write the ground-truth image pair of a preset");
  ph->add_option("--preset", ph_preset, "torso64 | lowdose64 | torso406 | toy32");
  ph->add_option("--out", ph_out, "output directory")->required();
  ph->add_option("--variant", ph_variant, "write a randomly perturbed training variant with this index");
  ph->add_option("--seed", ph_seed, "seed for --variant");

  // simulate
  std::string sim_gt, sim_out, sim_preset = "torso64", sim_cache;
  std::uint64_t sim_seed = 0;
  std::optional<std::size_t> sim_reps;
  std::optional<double> sim_intensity, sim_background;
  bool sim_noiseless = false;
  auto* sim = app.add_subcommand("simulate", "simulate noisy sinogram replicates from a ground-truth pair");
  sim->add_option("--gt", sim_gt, "ground-truth directory (low/high images)")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--preset", sim_preset, "scan preset");
  sim->add_option("--seed", sim_seed, "replicate r uses seed + r");
  sim->add_option("--replicates", sim_reps, "number of replicates (default: preset)");
  sim->add_option("--intensity", sim_intensity, "incident photons per ray");
  sim->add_option("--background", sim_background, "background events per ray");
  sim->add_flag("--noiseless", sim_noiseless, "write the mean counts instead of Poisson draws");
  sim->add_option("--cache", sim_cache, "system matrix cache directory");

  // train
  TrainOptions tr;
  auto* trn = app.add_subcommand("train", "learn filter banks");
  trn->add_option("--mode", tr.mode, "caol | mcaol")->check(CLI::IsMember({"caol", "mcaol"}));
  trn->add_option("--preset", tr.preset, "preset for synthetic training images");
  trn->add_option("--images", tr.images, "directory of low_rNNN/high_rNNN training images");
  trn->add_option("--out", tr.out, "output directory")->required();
  trn->add_option("--count", tr.count, "number of synthetic training pairs");
  trn->add_option("--max-outer", tr.max_outer, "outer iterations");
  trn->add_option("--tol", tr.tol, "relative objective tolerance");
  trn->add_option("--gamma", tr.gamma, "joint-sparsity weight (both channels)");
  trn->add_option("--alpha", tr.alpha, "single-channel sparsity weight");
  trn->add_option("--filter-side", tr.filter_side, "filter side length (odd)");
  trn->add_option("--filter-count", tr.filter_count, "number of filters");
  trn->add_option("--seed", tr.seed, "seed for initialization and synthetic images");

  // reconstruct
  ReconOptions ro;
  std::uint64_t ro_seed = 0;
  auto* rec = app.add_subcommand("reconstruct", "reconstruct one replicate");
  rec->add_option("--prior", ro.prior, "mcaol | caol | tv | jtv | none | caol-pwls")
      ->check(CLI::IsMember({"mcaol", "caol", "tv", "jtv", "none", "caol-pwls"}));
  rec->add_option("--sino", ro.sino, "sinogram directory")->required();
  rec->add_option("--replicate", ro.replicate, "replicate index");
  rec->add_option("--banks", ro.banks, "directory with <mode>_low / <mode>_high banks");
  rec->add_option("--out", ro.out, "output directory")->required();
  rec->add_option("--cache", ro.cache, "system matrix cache directory");
  rec->add_option("--rho", ro.rho, "data-fit weight (both channels)");
  rec->add_option("--beta", ro.beta, "TV / JTV weight");
  rec->add_option("--gamma", ro.gamma, "joint-sparsity weight (both channels)");
  rec->add_option("--alpha", ro.alpha, "single-channel threshold");
  rec->add_option("--epsilon", ro.epsilon, "TV smoothing");
  rec->add_option("--n-outer", ro.n_outer, "outer iterations");
  rec->add_option("--inner-iter", ro.inner, "inner solver iterations");
  rec->add_option("--init-iter", ro.init, "initial likelihood-fit iterations");
  rec->add_option("--baseline-iter", ro.baseline, "iterations for TV / JTV / none");
  rec->add_option("--seed", ro_seed, "unused; accepted for uniformity");

  // sweep
  std::string sw_config, sw_out, sw_cache;
  std::optional<std::uint64_t> sw_seed;
  std::optional<unsigned> sw_workers;
  auto* sw = app.add_subcommand("sweep", "run a replicate sweep from a JSON spec");
  sw->add_option("--config", sw_config, "sweep spec JSON")->required();
  sw->add_option("--out", sw_out, "output directory");
  sw->add_option("--seed", sw_seed, "override the spec's seed base");
  sw->add_option("--workers", sw_workers, "worker threads");
  sw->add_option("--cache", sw_cache, "system matrix cache directory");

  // metrics
  std::string mt_gt, mt_rec, mt_out;
  auto* mt = app.add_subcommand("metrics", "AbsBias / STD of a replicate directory");
  mt->add_option("--gt", mt_gt, "ground-truth directory")->required();
  mt->add_option("--recons", mt_rec, "directory of low_rNNN/high_rNNN reconstructions")->required();
  mt->add_option("--out", mt_out, "write the result JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*ph) {
      const Preset p = make_preset(ph_preset);
      const auto pair = ph_variant ? make_phantom(torso_variant(p.side, p.pixel_size, ph_seed * 1000003ULL + *ph_variant))
                                   : make_phantom(p.phantom());
      const fs::path out(ph_out);
      save_image(out / "low", pair.low, "60keV");
      save_image(out / "high", pair.high, "120keV");
      auto man = manifest("phantom", ph_seed, ph_preset);
      man["files"] = {"low", "high"};
      if (ph_variant) man["variant"] = *ph_variant;
      write_json(out / "manifest.json", man);
      return 0;
    }
    if (*sim) {
      const auto gt = load_pair(sim_gt);
      Preset p = make_preset(sim_preset);
      if (gt.low.width() != p.side) throw Error("simulate: ground truth does not match preset grid");
      if (sim_intensity) p.intensity = *sim_intensity;
      if (sim_background) p.background = *sim_background;
      const fs::path out(sim_out);
      const auto A = load_or_build_system_matrix(p.geometry, p.side, p.side,
                                                 sim_cache.empty() ? out / "cache" : fs::path(sim_cache));
      const auto src = p.sources();
      const std::size_t n = sim_reps.value_or(p.replicates);
      const nlohmann::json extra = {{"image_side", p.side}, {"preset", p.name}};
      for (std::size_t r = 0; r < n; ++r) {
        if (sim_noiseless) {
          for (std::size_t e = 0; e < 2; ++e)
            save_sinogram(out / replicate_stem(e, r), mean_counts(A, p.geometry, gt[e], src[e]), p.geometry, src[e],
                          e == 0 ? "60keV" : "120keV", extra);
          continue;
        }
        const auto y = simulate_replicate(A, p.geometry, gt, src, sim_seed + r);
        for (std::size_t e = 0; e < 2; ++e)
          save_sinogram(out / replicate_stem(e, r), y[e], p.geometry, src[e], e == 0 ? "60keV" : "120keV", extra);
      }
      auto man = manifest("simulate", sim_seed, sim_preset);
      man["replicates"] = n;
      man["noiseless"] = sim_noiseless;
      man["intensity"] = p.intensity;
      man["background"] = p.background;
      write_json(out / "manifest.json", man);
      return 0;
    }
    if (*trn) return cmd_train(tr);
    if (*rec) {
      if ((ro.prior == "mcaol" || ro.prior == "caol" || ro.prior == "caol-pwls") && ro.banks.empty()) {
        std::cerr << "reconstruct: --banks is required for prior " << ro.prior << "\n";
        return 1;
      }
      return cmd_reconstruct(ro);
    }
    if (*sw) return cmd_sweep(sw_config, sw_out, sw_seed, sw_workers, sw_cache);
    if (*mt) return cmd_metrics(mt_gt, mt_rec, mt_out);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace mcaol
