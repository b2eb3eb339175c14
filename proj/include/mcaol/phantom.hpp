#pragma once

// Synthetic dual-energy ellipse phantoms and the scan presets built on them.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mcaol/core_types.hpp"
#include "mcaol/physics.hpp"
#include "mcaol/projector.hpp"

namespace mcaol {

struct Ellipse {
  double cx = 0.0, cy = 0.0;  // mm, y pointing up
  double a = 1.0, b = 1.0;    // semi-axes, mm
  double angle = 0.0;         // radians, counter-clockwise
  std::vector<double> values; // additive attenuation per channel, mm^-1
};

struct Phantom {
  std::vector<Ellipse> ellipses;
  std::size_t side = 64;
  double pixel_size = 1.0;
  std::vector<double> kev{60.0, 120.0};
};

// Pixel value = sum of values of the ellipses covering the pixel centre.
inline std::vector<Image> make_phantom_channels(const Phantom& ph) {
  if (ph.side == 0 || !(ph.pixel_size > 0.0)) throw Error("make_phantom: invalid grid");
  const std::size_t E = ph.kev.size();
  for (const auto& el : ph.ellipses) {
    if (el.values.size() != E) throw Error("make_phantom: ellipse value count does not match channel count");
    if (!(el.a > 0.0 && el.b > 0.0)) throw Error("make_phantom: semi-axes must be > 0");
  }
  std::vector<Array2D> grids(E, Array2D(ph.side, ph.side));
  const double c = (static_cast<double>(ph.side) - 1.0) / 2.0;
  for (std::size_t r = 0; r < ph.side; ++r) {
    const double y = (c - static_cast<double>(r)) * ph.pixel_size;
    for (std::size_t col = 0; col < ph.side; ++col) {
      const double x = (static_cast<double>(col) - c) * ph.pixel_size;
      for (const auto& el : ph.ellipses) {
        const double cs = std::cos(el.angle), sn = std::sin(el.angle);
        const double u = (x - el.cx) * cs + (y - el.cy) * sn;
        const double v = -(x - el.cx) * sn + (y - el.cy) * cs;
        if ((u * u) / (el.a * el.a) + (v * v) / (el.b * el.b) <= 1.0)
          for (std::size_t e = 0; e < E; ++e) grids[e](r, col) += el.values[e];
      }
    }
  }
  std::vector<Image> out;
  for (auto& g : grids) {
    for (double& v : g.data) {
      if (v < 0.0 && v > -1e-15) v = 0.0;  // cancellation of nested ellipses
      if (v < 0.0) throw Error("make_phantom: negative attenuation; check nested ellipse values");
    }
    out.emplace_back(std::move(g), ph.pixel_size);
  }
  return out;
}

inline ChannelPair<Image> make_phantom(const Phantom& ph) {
  if (ph.kev.size() != 2) throw Error("make_phantom: a channel pair needs exactly two energies");
  auto ch = make_phantom_channels(ph);
  return {std::move(ch[0]), std::move(ch[1]), {ph.kev[0], ph.kev[1]}};
}

// ---------------------------------------------------------------------------
// Torso-like phantom. Values are approximate linear attenuation (mm^-1) at
// roughly 60 and 120 keV.

namespace materials {
inline constexpr double tissue[2] = {0.0203, 0.0160};
inline constexpr double lung[2] = {0.0055, 0.0043};
inline constexpr double bone[2] = {0.0480, 0.0290};
inline constexpr double blood[2] = {0.0215, 0.0168};
inline constexpr double iodine_blood[2] = {0.0300, 0.0195};
inline constexpr double fat[2] = {0.0180, 0.0148};
}  // namespace materials

namespace detail {

inline std::vector<double> delta(const double (&inner)[2], const double (&outer)[2]) {
  return {inner[0] - outer[0], inner[1] - outer[1]};
}

}  // namespace detail

// Torso cross-section on a field of view of side * pixel_size mm.
inline Phantom torso_phantom(std::size_t side, double pixel_size) {
  using namespace materials;
  const double R = 0.5 * static_cast<double>(side) * pixel_size;
  Phantom ph;
  ph.side = side;
  ph.pixel_size = pixel_size;
  auto add = [&](double cx, double cy, double a, double b, double ang, std::vector<double> v) {
    ph.ellipses.push_back({cx * R, cy * R, a * R, b * R, ang, std::move(v)});
  };
  add(0.0, 0.0, 0.88, 0.62, 0.0, {fat[0], fat[1]});
  add(0.0, 0.0, 0.82, 0.56, 0.0, detail::delta(tissue, fat));
  add(-0.38, 0.08, 0.24, 0.36, 0.15, detail::delta(lung, tissue));
  add(0.40, 0.08, 0.22, 0.34, -0.15, detail::delta(lung, tissue));
  add(0.06, -0.02, 0.17, 0.14, 0.4, detail::delta(blood, tissue));
  add(-0.05, -0.27, 0.055, 0.055, 0.0, detail::delta(iodine_blood, tissue));
  add(0.0, -0.44, 0.085, 0.075, 0.0, detail::delta(bone, tissue));
  add(0.0, 0.46, 0.07, 0.04, 0.0, detail::delta(bone, tissue));
  for (double sx : {-1.0, 1.0}) {
    add(sx * 0.70, 0.22, 0.04, 0.03, 0.0, detail::delta(bone, tissue));
    add(sx * 0.72, -0.10, 0.04, 0.03, 0.0, detail::delta(bone, tissue));
    add(sx * 0.58, -0.36, 0.04, 0.03, 0.0, detail::delta(bone, tissue));
  }
  return ph;
}

// Randomly perturbed torso: jittered centres, axes, rotations and values, plus
// a few small lesions. Edges stay aligned across channels.
inline Phantom torso_variant(std::size_t side, double pixel_size, std::uint64_t seed) {
  Phantom ph = torso_phantom(side, pixel_size);
  const double R = 0.5 * static_cast<double>(side) * pixel_size;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double body_scale = 1.0 + 0.08 * u(rng);
  for (std::size_t i = 0; i < ph.ellipses.size(); ++i) {
    auto& el = ph.ellipses[i];
    el.cx *= body_scale;
    el.cy *= body_scale;
    el.a *= body_scale;
    el.b *= body_scale;
    if (i >= 2) {
      el.cx += 0.04 * R * u(rng);
      el.cy += 0.04 * R * u(rng);
      el.a *= 1.0 + 0.12 * u(rng);
      el.b *= 1.0 + 0.12 * u(rng);
      el.angle += 0.2 * u(rng);
    }
    const double f = 1.0 + 0.05 * u(rng);
    for (double& v : el.values) v *= f;
  }
  // Keep nested lung/organ deltas from pushing below zero after scaling.
  std::uniform_int_distribution<int> count(0, 3);
  const int lesions = count(rng);
  for (int n = 0; n < lesions; ++n) {
    const double r = (0.03 + 0.04 * (u(rng) + 1.0) / 2.0) * R;
    const double s = 0.0015 * u(rng);
    ph.ellipses.push_back({0.35 * R * u(rng), 0.25 * R * u(rng) - 0.1 * R, r, r * (1.0 + 0.3 * u(rng)), 0.0,
                           {s, 0.6 * s}});
  }
  return ph;
}

inline std::vector<ChannelPair<Image>> training_set(std::size_t side, double pixel_size, std::size_t count,
                                                    std::uint64_t seed) {
  std::vector<ChannelPair<Image>> out;
  for (std::size_t l = 0; l < count; ++l) {
    auto ph = torso_variant(side, pixel_size, seed * 1000003ULL + l);
    // A lesion inside a lung can go negative; skip such draws deterministically.
    try {
      out.push_back(make_phantom(ph));
    } catch (const Error&) {
      auto base = torso_phantom(side, pixel_size);
      out.push_back(make_phantom(base));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scan presets

struct Preset {
  std::string name;
  std::size_t side = 64;
  double pixel_size = 5.0;
  ScanGeometry geometry;
  double intensity = 1e5;
  double background = 10.0;
  std::size_t replicates = 5;

  ChannelPair<SourceModel> sources() const {
    return {SourceModel(intensity, background), SourceModel(intensity, background)};
  }
  Phantom phantom() const { return torso_phantom(side, pixel_size); }
};

inline Preset make_preset(const std::string& name) {
  Preset p;
  p.name = name;
  if (name == "torso64" || name == "lowdose64") {
    p.side = 64;
    p.pixel_size = 5.0;
    const std::size_t views = name == "torso64" ? 60 : 120;
    p.geometry = ScanGeometry::equispaced(64, views, 5.0, 5.0, 10.0);
    p.intensity = name == "torso64" ? 1e5 : 1e3;
    p.background = 10.0;
    p.replicates = 5;
  } else if (name == "torso406") {
    p.side = 406;
    p.pixel_size = 1.0;
    p.geometry = ScanGeometry::equispaced(406, 60, 1.0, 1.0, 2.0);
    p.intensity = 1e5;
    p.background = 100.0;
    p.replicates = 20;
  } else if (name == "toy32") {
    p.side = 32;
    p.pixel_size = 10.0;
    p.geometry = ScanGeometry::equispaced(32, 48, 10.0, 10.0, 10.0);
    p.intensity = 1e5;
    p.background = 10.0;
    p.replicates = 3;
  } else {
    throw Error("unknown preset '" + name + "' (expected torso64, lowdose64, torso406 or toy32)");
  }
  return p;
}

}  // namespace mcaol
