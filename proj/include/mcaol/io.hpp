#pragma once

// File formats: <stem>.raw (float64 little-endian, row-major) + <stem>.json
// sidecar for images and sinograms; <stem>.bank.raw + <stem>.bank.json for
// filter banks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <nlohmann/json.hpp>

#include "mcaol/core_types.hpp"
#include "mcaol/physics.hpp"
#include "mcaol/projector.hpp"

namespace mcaol {

namespace fs = std::filesystem;

inline std::vector<std::uint8_t> read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& p, std::span<const std::uint8_t> bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON in " + p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const nlohmann::json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

inline fs::path with_suffix(const fs::path& stem, const char* suffix) { return fs::path(stem.string() + suffix); }

// ---------------------------------------------------------------------------

inline void save_image(const fs::path& stem, const Image& img, const std::string& energy = {}) {
  auto [bytes, h] = image_to_raw(img, energy);
  write_bytes(with_suffix(stem, ".raw"), bytes);
  write_json(with_suffix(stem, ".json"), {{"width", h.width},
                                          {"height", h.height},
                                          {"pixel_size", h.pixel_size},
                                          {"units", h.units},
                                          {"energy", h.energy}});
}

inline Image load_image(const fs::path& stem, std::string* energy = nullptr) {
  const auto j = read_json(with_suffix(stem, ".json"));
  RawHeader h;
  try {
    h.width = j.at("width").get<std::size_t>();
    h.height = j.at("height").get<std::size_t>();
    h.pixel_size = j.at("pixel_size").get<double>();
    h.energy = j.value("energy", std::string{});
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad image sidecar " + stem.string() + ".json: " + e.what());
  }
  if (energy) *energy = h.energy;
  return image_from_raw(read_bytes(with_suffix(stem, ".raw")), h);
}

inline const char* kind_name(SinogramKind k) {
  switch (k) {
    case SinogramKind::Counts: return "counts";
    case SinogramKind::MeanCounts: return "mean_counts";
    case SinogramKind::LineIntegrals: return "line_integrals";
  }
  return "counts";
}

inline SinogramKind kind_from_name(const std::string& s) {
  if (s == "counts") return SinogramKind::Counts;
  if (s == "mean_counts") return SinogramKind::MeanCounts;
  if (s == "line_integrals") return SinogramKind::LineIntegrals;
  throw Error("unknown sinogram kind '" + s + "'");
}

struct SinogramFile {
  Sinogram sino;
  ScanGeometry geometry;
  SourceModel source;
  std::string energy;
  nlohmann::json sidecar;
};

inline void save_sinogram(const fs::path& stem, const Sinogram& s, const ScanGeometry& geom, const SourceModel& src,
                          const std::string& energy = {}, const nlohmann::json& extra = {}) {
  write_bytes(with_suffix(stem, ".raw"), encode_f64le(s.values()));
  nlohmann::json j = {{"detectors", s.detectors()},
                      {"angles", s.angles()},
                      {"units", s.kind() == SinogramKind::LineIntegrals ? "mm^-1*mm" : "photons"},
                      {"kind", kind_name(s.kind())},
                      {"energy", energy},
                      {"geometry", to_json(geom)},
                      {"source", {{"intensity", src.intensity}, {"background", src.background}}}};
  if (extra.is_object()) j.update(extra);
  write_json(with_suffix(stem, ".json"), j);
}

inline SinogramFile load_sinogram(const fs::path& stem) {
  const auto j = read_json(with_suffix(stem, ".json"));
  try {
    const auto det = j.at("detectors").get<std::size_t>();
    auto angles = j.at("angles").get<std::vector<double>>();
    auto values = decode_f64le(read_bytes(with_suffix(stem, ".raw")));
    if (values.size() != det * angles.size()) throw Error("sinogram " + stem.string() + ": length mismatch");
    SinogramFile f{Sinogram(det, std::move(angles), std::move(values), kind_from_name(j.value("kind", "counts"))),
                   geometry_from_json(j.at("geometry")),
                   SourceModel(j.at("source").at("intensity").get<double>(),
                               j.at("source").at("background").get<std::vector<double>>()),
                   j.value("energy", std::string{}), j};
    f.geometry.validate();
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad sinogram sidecar " + stem.string() + ".json: " + e.what());
  }
}

// ---------------------------------------------------------------------------

struct BankFile {
  FilterBank bank;
  double input_scale = 1.0;
  nlohmann::json meta;
};

inline void save_bank(const fs::path& stem, const FilterBank& bank, double input_scale, nlohmann::json meta = {}) {
  write_bytes(with_suffix(stem, ".bank.raw"), encode_f64le(bank.coefficients()));
  if (meta.is_null()) meta = nlohmann::json::object();
  meta["P"] = bank.filter_size();
  meta["K"] = bank.count();
  meta["input_scale"] = input_scale;
  meta["layout"] = "float64le, filter-major";
  const std::string blob = nlohmann::json(std::vector<double>(bank.coefficients().begin(),
                                                               bank.coefficients().end())).dump();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(blob)));
  meta["hash"] = buf;
  write_json(with_suffix(stem, ".bank.json"), meta);
}

inline BankFile load_bank(const fs::path& stem) {
  const auto j = read_json(with_suffix(stem, ".bank.json"));
  try {
    const auto P = j.at("P").get<std::size_t>(), K = j.at("K").get<std::size_t>();
    const auto side = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(P))));
    if (side * side != P) throw Error("bank " + stem.string() + ": P is not a square");
    auto c = decode_f64le(read_bytes(with_suffix(stem, ".bank.raw")));
    if (c.size() != P * K) throw Error("bank " + stem.string() + ": coefficient count mismatch");
    return {FilterBank(side, K, std::move(c)), j.value("input_scale", 1.0), j};
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad bank sidecar " + stem.string() + ".bank.json: " + e.what());
  }
}

}  // namespace mcaol
