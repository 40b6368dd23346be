// On-disk dataset and solution formats: PFM float images (little-endian),
// PGM masks, a flat binary correspondence table, line-oriented manifests,
// lighting vectors as text, solver traces as CSV and optional 8-bit PNG
// previews.
#pragma once

#include <png.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "refmaps/core.hpp"
#include "refmaps/energy.hpp"
#include "refmaps/solver.hpp"
#include "refmaps/synth.hpp"

namespace refmaps {
namespace io {

namespace fs = std::filesystem;

inline std::string format_g17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::ifstream open_in(const fs::path& path, bool binary = true) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw ValidationError("cannot open file: " + path.string());
  return in;
}

inline std::ofstream open_out(const fs::path& path, bool binary = true) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw ValidationError("cannot write file: " + path.string());
  return out;
}

inline bool host_little_endian() {
  const std::uint32_t probe = 1;
  unsigned char b;
  std::memcpy(&b, &probe, 1);
  return b == 1;
}

inline void write_f32_le(std::ostream& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  const unsigned char bytes[4] = {static_cast<unsigned char>(bits & 0xff),
                                  static_cast<unsigned char>((bits >> 8) & 0xff),
                                  static_cast<unsigned char>((bits >> 16) & 0xff),
                                  static_cast<unsigned char>((bits >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(bytes), 4);
}

inline float read_f32(std::istream& in, bool little_endian) {
  unsigned char bytes[4];
  in.read(reinterpret_cast<char*>(bytes), 4);
  if (!in) throw ValidationError("truncated float payload");
  std::uint32_t bits;
  if (little_endian)
    bits = bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
  else
    bits = bytes[3] | (bytes[2] << 8) | (bytes[1] << 16) | (static_cast<std::uint32_t>(bytes[0]) << 24);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

template <typename T>
inline void write_uint_le(std::ostream& out, T v) {
  unsigned char bytes[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
inline T read_uint_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw ValidationError("truncated integer payload");
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace detail

// --- PFM ------------------------------------------------------------------
// "Pf" (1 channel) / "PF" (3 channels), rows bottom-to-top, float32 samples.
// The writer always emits little-endian data (scale -1).

inline void write_pfm(const fs::path& path, const std::vector<const ScalarField*>& channels) {
  if (channels.size() != 1 && channels.size() != 3)
    throw ValidationError("write_pfm: need 1 or 3 channels");
  const PixelDomain& dom = channels[0]->domain;
  for (const auto* f : channels)
    if (!(f->domain == dom)) throw ValidationError("write_pfm: channel domains differ");

  auto out = detail::open_out(path);
  out << (channels.size() == 1 ? "Pf" : "PF") << "\n" << dom.width << " " << dom.height << "\n-1\n";
  for (int r = dom.height - 1; r >= 0; --r)
    for (int c = 0; c < dom.width; ++c)
      for (const auto* f : channels) detail::write_f32_le(out, static_cast<float>(f->at(r, c)));
  if (!out) throw ValidationError("write_pfm: write failed for " + path.string());
}

inline void write_pfm(const fs::path& path, const ScalarField& f) { write_pfm(path, {&f}); }

// Returns one ScalarField per channel on a full mask; callers intersect with
// the real mask afterwards.
inline std::vector<ScalarField> read_pfm(const fs::path& path) {
  auto in = detail::open_in(path);
  std::string magic;
  in >> magic;
  if (magic != "Pf" && magic != "PF") throw ValidationError("read_pfm: bad magic in " + path.string());
  int width = 0, height = 0;
  double scale = 0.0;
  in >> width >> height >> scale;
  if (!in || width < 1 || height < 1 || scale == 0.0)
    throw ValidationError("read_pfm: bad header in " + path.string());
  in.get();  // single whitespace byte before the raster

  const int nch = (magic == "PF") ? 3 : 1;
  const bool little = scale < 0.0;
  const double factor = std::abs(scale);
  std::vector<ScalarField> out;
  out.reserve(nch);
  for (int ch = 0; ch < nch; ++ch) out.emplace_back(PixelDomain::full(width, height));
  for (int r = height - 1; r >= 0; --r)
    for (int c = 0; c < width; ++c)
      for (int ch = 0; ch < nch; ++ch) {
        double v = detail::read_f32(in, little);
        if (factor != 1.0) v *= factor;
        out[ch].at(r, c) = v;
      }
  return out;
}

// --- PGM masks --------------------------------------------------------------

inline void write_pgm_mask(const fs::path& path, const PixelDomain& dom) {
  auto out = detail::open_out(path);
  out << "P5\n" << dom.width << " " << dom.height << "\n255\n";
  for (int r = 0; r < dom.height; ++r)
    for (int c = 0; c < dom.width; ++c) out.put(dom.mask[dom.index(r, c)] ? char(255) : char(0));
  if (!out) throw ValidationError("write_pgm_mask: write failed for " + path.string());
}

inline PixelDomain read_pgm_mask(const fs::path& path) {
  auto in = detail::open_in(path);
  std::string magic;
  int width = 0, height = 0, maxval = 0;
  in >> magic >> width >> height >> maxval;
  if (magic != "P5" || width < 1 || height < 1 || maxval != 255)
    throw ValidationError("read_pgm_mask: bad header in " + path.string());
  in.get();
  std::vector<std::uint8_t> mask(static_cast<size_t>(width) * height);
  for (auto& m : mask) {
    const int b = in.get();
    if (b == EOF) throw ValidationError("read_pgm_mask: truncated " + path.string());
    if (b != 0 && b != 255) throw ValidationError("read_pgm_mask: mask must be 0/255 in " + path.string());
    m = (b == 255) ? 1 : 0;
  }
  return PixelDomain(width, height, std::move(mask));
}

// --- Normals and lifted geometry --------------------------------------------

inline void write_normals_pfm(const fs::path& path, const NormalField& nf) {
  ScalarField x(nf.domain), y(nf.domain), z(nf.domain);
  for (int r = 0; r < nf.domain.height; ++r)
    for (int c = 0; c < nf.domain.width; ++c) {
      if (!nf.domain.in(r, c)) continue;
      x.at(r, c) = nf.at(r, c)[0];
      y.at(r, c) = nf.at(r, c)[1];
      z.at(r, c) = nf.at(r, c)[2];
    }
  write_pfm(path, {&x, &y, &z});
}

inline NormalField read_normals_pfm(const fs::path& path, const PixelDomain& dom) {
  const auto planes = read_pfm(path);
  if (planes.size() != 3) throw ValidationError("normals file must be a 3-channel PFM: " + path.string());
  if (planes[0].domain.width != dom.width || planes[0].domain.height != dom.height)
    throw ValidationError("normals dimensions do not match mask: " + path.string());
  NormalField nf(dom);
  for (int r = 0; r < dom.height; ++r)
    for (int c = 0; c < dom.width; ++c)
      if (dom.in(r, c)) nf.at(r, c) = Vec3{planes[0].at(r, c), planes[1].at(r, c), planes[2].at(r, c)};
  return nf;
}

// Lifted geometry stored directly as a single-channel PFM of height 9*H:
// nine H-row planes stacked in component order.
inline void write_nu_pfm(const fs::path& path, const GeometricField& geo) {
  const PixelDomain& dom = geo.domain;
  ScalarField planes(PixelDomain::full(dom.width, dom.height * 9));
  for (int k = 0; k < 9; ++k)
    for (int r = 0; r < dom.height; ++r)
      for (int c = 0; c < dom.width; ++c)
        if (dom.in(r, c)) planes.at(k * dom.height + r, c) = geo.at(r, c)[k];
  write_pfm(path, planes);
}

inline GeometricField read_nu_pfm(const fs::path& path, const PixelDomain& dom) {
  const auto planes = read_pfm(path);
  if (planes.size() != 1 || planes[0].domain.width != dom.width ||
      planes[0].domain.height != dom.height * 9)
    throw ValidationError("nu file must be a 1-channel PFM of height 9*H: " + path.string());
  GeometricField geo(dom);
  for (int k = 0; k < 9; ++k)
    for (int r = 0; r < dom.height; ++r)
      for (int c = 0; c < dom.width; ++c)
        if (dom.in(r, c)) geo.at(r, c)[k] = planes[0].at(k * dom.height + r, c);
  return geo;
}

// --- Correspondences ---------------------------------------------------------
// u64 count, then per entry six little-endian u32:
// view_i, row_i, col_i, view_j, row_j, col_j. Canonical view_i < view_j.

inline void write_correspondences(const fs::path& path, const CorrespondenceSet& set) {
  auto out = detail::open_out(path);
  detail::write_uint_le<std::uint64_t>(out, set.entries.size());
  for (const Correspondence& e : set.entries) {
    detail::write_uint_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.view_i));
    detail::write_uint_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.row_i));
    detail::write_uint_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.col_i));
    detail::write_uint_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.view_j));
    detail::write_uint_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.row_j));
    detail::write_uint_le<std::uint32_t>(out, static_cast<std::uint32_t>(e.col_j));
  }
  if (!out) throw ValidationError("write_correspondences: write failed for " + path.string());
}

inline CorrespondenceSet read_correspondences(const fs::path& path) {
  auto in = detail::open_in(path);
  const std::uint64_t count = detail::read_uint_le<std::uint64_t>(in);
  CorrespondenceSet set;
  set.entries.reserve(count);
  for (std::uint64_t k = 0; k < count; ++k) {
    Correspondence e;
    e.view_i = static_cast<int>(detail::read_uint_le<std::uint32_t>(in));
    e.row_i = static_cast<int>(detail::read_uint_le<std::uint32_t>(in));
    e.col_i = static_cast<int>(detail::read_uint_le<std::uint32_t>(in));
    e.view_j = static_cast<int>(detail::read_uint_le<std::uint32_t>(in));
    e.row_j = static_cast<int>(detail::read_uint_le<std::uint32_t>(in));
    e.col_j = static_cast<int>(detail::read_uint_le<std::uint32_t>(in));
    if (e.view_i >= e.view_j)
      throw ValidationError("correspondences: entry " + std::to_string(k) +
                            " violates canonical view_i < view_j order");
    set.entries.push_back(e);
  }
  return set;
}

// --- Lighting vectors --------------------------------------------------------
// Text, one line per channel, nine %.17g numbers per line.

inline void write_lighting(const fs::path& path, const std::vector<LightingVector>& per_channel) {
  auto out = detail::open_out(path, false);
  for (const LightingVector& s : per_channel) {
    for (int k = 0; k < 9; ++k) out << (k ? " " : "") << format_g17(s[k]);
    out << "\n";
  }
  if (!out) throw ValidationError("write_lighting: write failed for " + path.string());
}

inline std::vector<LightingVector> read_lighting(const fs::path& path) {
  auto in = detail::open_in(path, false);
  std::vector<LightingVector> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    LightingVector s{};
    for (int k = 0; k < 9; ++k) {
      if (!(ls >> s[k])) throw ValidationError("read_lighting: bad line in " + path.string());
    }
    out.push_back(s);
  }
  if (out.empty()) throw ValidationError("read_lighting: no vectors in " + path.string());
  return out;
}

// --- Dataset manifest --------------------------------------------------------

struct ManifestView {
  std::string image;
  std::string normals;  // either normals or nu is set
  std::string nu;
  std::string mask;
  std::string gt_reflectance;  // optional
  std::string gt_lighting;     // optional
};

struct DatasetManifest {
  int version = 1;
  int channels = 1;
  std::string correspondences;
  std::vector<ManifestView> views;
};

inline void write_manifest(const fs::path& path, const DatasetManifest& m) {
  auto out = detail::open_out(path, false);
  out << "version = " << m.version << "\n";
  out << "channels = " << m.channels << "\n";
  out << "correspondences = " << m.correspondences << "\n";
  for (const ManifestView& v : m.views) {
    out << "\nview\n";
    out << "image = " << v.image << "\n";
    if (!v.normals.empty()) out << "normals = " << v.normals << "\n";
    if (!v.nu.empty()) out << "nu = " << v.nu << "\n";
    out << "mask = " << v.mask << "\n";
    if (!v.gt_reflectance.empty()) out << "gt_reflectance = " << v.gt_reflectance << "\n";
    if (!v.gt_lighting.empty()) out << "gt_lighting = " << v.gt_lighting << "\n";
  }
  if (!out) throw ValidationError("write_manifest: write failed for " + path.string());
}

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool split_kv(const std::string& line, std::string& key, std::string& value) {
  const auto eq = line.find('=');
  if (eq == std::string::npos) return false;
  key = trim(line.substr(0, eq));
  value = trim(line.substr(eq + 1));
  return true;
}

}  // namespace detail

inline DatasetManifest read_manifest(const fs::path& path) {
  auto in = detail::open_in(path, false);
  DatasetManifest m;
  ManifestView* cur = nullptr;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t == "view") {
      m.views.emplace_back();
      cur = &m.views.back();
      continue;
    }
    std::string key, value;
    if (!detail::split_kv(t, key, value))
      throw ValidationError("manifest: cannot parse line " + std::to_string(lineno) + " of " + path.string());
    if (cur == nullptr) {
      if (key == "version") m.version = std::stoi(value);
      else if (key == "channels") m.channels = std::stoi(value);
      else if (key == "correspondences") m.correspondences = value;
      else throw ValidationError("manifest: unknown key '" + key + "' at line " + std::to_string(lineno));
    } else {
      if (key == "image") cur->image = value;
      else if (key == "normals") cur->normals = value;
      else if (key == "nu") cur->nu = value;
      else if (key == "mask") cur->mask = value;
      else if (key == "gt_reflectance") cur->gt_reflectance = value;
      else if (key == "gt_lighting") cur->gt_lighting = value;
      else throw ValidationError("manifest: unknown view key '" + key + "' at line " + std::to_string(lineno));
    }
  }
  return m;
}

// --- Dataset store / load ----------------------------------------------------

struct LoadedDataset {
  MultiViewProblem problem;
  bool has_ground_truth = false;
  RhoMaps gt_reflectance;  // [channel][view]
  SigmaSet gt_lighting;    // [channel][view]
};

inline void store_dataset(const fs::path& dir, const GroundTruth& truth) {
  fs::create_directories(dir / "views");
  const int nviews = static_cast<int>(truth.problem.views.size());
  const int channels = truth.problem.channels;

  DatasetManifest m;
  m.channels = channels;
  m.correspondences = "correspondences.bin";
  for (int v = 0; v < nviews; ++v) {
    char id[16];
    std::snprintf(id, sizeof(id), "%03d", v);
    ManifestView mv;
    mv.image = std::string("views/") + id + "_image.pfm";
    mv.normals = std::string("views/") + id + "_normals.pfm";
    mv.mask = std::string("views/") + id + "_mask.pgm";
    mv.gt_reflectance = std::string("views/") + id + "_gt_reflectance.pfm";
    mv.gt_lighting = std::string("views/") + id + "_gt_lighting.txt";
    m.views.push_back(mv);

    const View& view = truth.problem.views[v];
    std::vector<const ScalarField*> img_ptrs, gt_ptrs;
    for (int ch = 0; ch < channels; ++ch) {
      img_ptrs.push_back(&view.images[ch]);
      gt_ptrs.push_back(&truth.reflectance[ch][v]);
    }
    write_pfm(dir / mv.image, img_ptrs);
    write_normals_pfm(dir / mv.normals, truth.normals[v]);
    write_pgm_mask(dir / mv.mask, view.geometry.domain);
    write_pfm(dir / mv.gt_reflectance, gt_ptrs);
    std::vector<LightingVector> per_channel;
    for (int ch = 0; ch < channels; ++ch) per_channel.push_back(truth.lighting[ch][v]);
    write_lighting(dir / mv.gt_lighting, per_channel);
  }
  write_correspondences(dir / m.correspondences, truth.problem.correspondences);
  write_manifest(dir / "manifest.txt", m);
}

inline LoadedDataset load_dataset(const fs::path& dir) {
  const DatasetManifest m = read_manifest(dir / "manifest.txt");
  if (m.version != 1) throw ValidationError("dataset: unsupported manifest version");
  if (m.channels != 1 && m.channels != 3) throw ValidationError("dataset: channels must be 1 or 3");
  if (m.views.empty()) throw ValidationError("dataset: manifest lists no views");

  LoadedDataset ds;
  ds.problem.channels = m.channels;

  int with_gt = 0;
  for (const ManifestView& mv : m.views) {
    if (mv.image.empty() || mv.mask.empty()) throw ValidationError("dataset: view missing image or mask");
    if (mv.normals.empty() == mv.nu.empty())
      throw ValidationError("dataset: view needs exactly one of normals/nu");
    if (!mv.gt_reflectance.empty() != !mv.gt_lighting.empty())
      throw ValidationError("dataset: ground truth requires both reflectance and lighting");
    with_gt += !mv.gt_reflectance.empty();
  }
  if (with_gt != 0 && with_gt != static_cast<int>(m.views.size()))
    throw ValidationError("dataset: ground truth must be present for all views or none");
  ds.has_ground_truth = with_gt > 0;
  if (ds.has_ground_truth) {
    ds.gt_reflectance.assign(m.channels, {});
    ds.gt_lighting.assign(m.channels, {});
  }

  for (const ManifestView& mv : m.views) {
    const PixelDomain dom = read_pgm_mask(dir / mv.mask);
    View view;
    if (!mv.normals.empty()) {
      view.geometry = lift_field(read_normals_pfm(dir / mv.normals, dom));
    } else {
      view.geometry = read_nu_pfm(dir / mv.nu, dom);
    }
    auto planes = read_pfm(dir / mv.image);
    if (static_cast<int>(planes.size()) != m.channels)
      throw ValidationError("dataset: image channel count mismatch in " + mv.image);
    if (planes[0].domain.width != dom.width || planes[0].domain.height != dom.height)
      throw ValidationError("dataset: image dimensions do not match mask in " + mv.image);
    for (auto& plane : planes) {
      ScalarField field(dom);
      for (int r = 0; r < dom.height; ++r)
        for (int c = 0; c < dom.width; ++c)
          if (dom.in(r, c)) field.at(r, c) = plane.at(r, c);
      view.images.push_back(std::move(field));
    }
    if (ds.has_ground_truth) {
      auto gt_planes = read_pfm(dir / mv.gt_reflectance);
      if (static_cast<int>(gt_planes.size()) != m.channels)
        throw ValidationError("dataset: ground-truth channel count mismatch in " + mv.gt_reflectance);
      if (gt_planes[0].domain.width != dom.width || gt_planes[0].domain.height != dom.height)
        throw ValidationError("dataset: ground-truth dimensions do not match mask");
      for (int ch = 0; ch < m.channels; ++ch) {
        ScalarField field(dom);
        for (int r = 0; r < dom.height; ++r)
          for (int c = 0; c < dom.width; ++c)
            if (dom.in(r, c)) field.at(r, c) = gt_planes[ch].at(r, c);
        ds.gt_reflectance[ch].push_back(std::move(field));
      }
      const auto lighting = read_lighting(dir / mv.gt_lighting);
      if (static_cast<int>(lighting.size()) != m.channels)
        throw ValidationError("dataset: ground-truth lighting channel count mismatch in " + mv.gt_lighting);
      for (int ch = 0; ch < m.channels; ++ch) ds.gt_lighting[ch].push_back(lighting[ch]);
    }
    ds.problem.views.push_back(std::move(view));
  }
  ds.problem.correspondences = read_correspondences(dir / m.correspondences);
  return ds;
}

// --- Solution store / load ---------------------------------------------------

struct SolutionManifest {
  int channels = 1;
  int views = 0;
  bool converged = false;
  int iterations = 0;
};

inline void store_solution(const fs::path& dir, const Solution& sol, const SolverConfig& cfg) {
  fs::create_directories(dir);
  const int channels = static_cast<int>(sol.reflectance.size());
  const int nviews = channels > 0 ? static_cast<int>(sol.reflectance[0].size()) : 0;

  auto out = detail::open_out(dir / "estimate.txt", false);
  out << "version = 1\n";
  out << "channels = " << channels << "\n";
  out << "views = " << nviews << "\n";
  out << "converged = " << (sol.converged ? 1 : 0) << "\n";
  out << "iterations = " << (sol.trace.records.empty() ? 0 : sol.trace.records.back().iteration) << "\n";
  out << "lambda = " << format_g17(cfg.lambda) << "\n";
  out << "mu = " << format_g17(cfg.mu) << "\n";
  out << "delta = " << format_g17(cfg.delta) << "\n";
  out << "rel_energy_tol = " << format_g17(cfg.rel_energy_tol) << "\n";
  out << "max_outer_iters = " << cfg.max_outer_iters << "\n";
  out << "cg_tol = " << format_g17(cfg.cg_tol) << "\n";
  out << "cg_max_iters = " << cfg.cg_max_iters << "\n";
  out << "normalize = " << (cfg.normalize_output ? 1 : 0) << "\n";

  for (int v = 0; v < nviews; ++v) {
    char id[16];
    std::snprintf(id, sizeof(id), "%03d", v);
    std::vector<const ScalarField*> ptrs;
    for (int ch = 0; ch < channels; ++ch) ptrs.push_back(&sol.reflectance[ch][v]);
    write_pfm(dir / (std::string("reflectance_") + id + ".pfm"), ptrs);
    std::vector<LightingVector> per_channel;
    for (int ch = 0; ch < channels; ++ch) per_channel.push_back(sol.lighting[ch][v]);
    write_lighting(dir / (std::string("lighting_") + id + ".txt"), per_channel);
  }
}

struct LoadedSolution {
  int channels = 1;
  RhoMaps reflectance;  // [channel][view], full-frame masks from the PFM dims
  SigmaSet lighting;
};

inline LoadedSolution load_solution(const fs::path& dir) {
  auto in = detail::open_in(dir / "estimate.txt", false);
  int channels = 0, nviews = 0;
  std::string line;
  while (std::getline(in, line)) {
    std::string key, value;
    if (!detail::split_kv(detail::trim(line), key, value)) continue;
    if (key == "channels") channels = std::stoi(value);
    if (key == "views") nviews = std::stoi(value);
  }
  if (channels < 1 || nviews < 1) throw ValidationError("estimate.txt: missing channels/views");

  LoadedSolution sol;
  sol.channels = channels;
  sol.reflectance.assign(channels, {});
  sol.lighting.assign(channels, {});
  for (int v = 0; v < nviews; ++v) {
    char id[16];
    std::snprintf(id, sizeof(id), "%03d", v);
    auto planes = read_pfm(dir / (std::string("reflectance_") + id + ".pfm"));
    if (static_cast<int>(planes.size()) != channels)
      throw ValidationError("solution: reflectance channel count mismatch in view " + std::to_string(v));
    for (int ch = 0; ch < channels; ++ch) sol.reflectance[ch].push_back(std::move(planes[ch]));
    const auto lighting = read_lighting(dir / (std::string("lighting_") + id + ".txt"));
    if (static_cast<int>(lighting.size()) != channels)
      throw ValidationError("solution: lighting channel count mismatch in view " + std::to_string(v));
    for (int ch = 0; ch < channels; ++ch) sol.lighting[ch].push_back(lighting[ch]);
  }
  return sol;
}

// --- Solver trace CSV --------------------------------------------------------

inline void write_trace_csv(const fs::path& path, const SolverTrace& trace) {
  auto out = detail::open_out(path, false);
  out << "iter,E_total,E_photo,E_smooth,E_consist,rel_change,cg_iters,seconds\n";
  for (const TraceRecord& r : trace.records) {
    out << r.iteration << "," << format_g17(r.energy.total) << "," << format_g17(r.energy.photometric)
        << "," << format_g17(r.energy.smoothness) << "," << format_g17(r.energy.consistency) << ","
        << format_g17(r.rel_change) << "," << r.cg_iterations << "," << format_g17(r.seconds) << "\n";
  }
  if (!out) throw ValidationError("write_trace_csv: write failed for " + path.string());
}

// --- PNG preview -------------------------------------------------------------
// 8-bit max-normalized preview of per-channel fields; display aid only.

inline void write_png_preview(const fs::path& path, const std::vector<const ScalarField*>& channels) {
  if (channels.size() != 1 && channels.size() != 3)
    throw ValidationError("write_png_preview: need 1 or 3 channels");
  const PixelDomain& dom = channels[0]->domain;

  double vmax = 0.0;
  for (const auto* f : channels)
    for (int r = 0; r < dom.height; ++r)
      for (int c = 0; c < dom.width; ++c)
        if (dom.in(r, c)) vmax = std::max(vmax, f->at(r, c));
  if (!(vmax > 0.0)) vmax = 1.0;

  std::FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw ValidationError("write_png_preview: cannot open " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info || setjmp(png_jmpbuf(png))) {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    std::fclose(fp);
    throw ValidationError("write_png_preview: libpng failure for " + path.string());
  }
  png_init_io(png, fp);
  const int color = (channels.size() == 1) ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, dom.width, dom.height, 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(static_cast<size_t>(dom.width) * channels.size());
  for (int r = 0; r < dom.height; ++r) {
    for (int c = 0; c < dom.width; ++c) {
      for (size_t ch = 0; ch < channels.size(); ++ch) {
        double v = dom.in(r, c) ? channels[ch]->at(r, c) / vmax : 0.0;
        v = std::clamp(v, 0.0, 1.0);
        row[c * channels.size() + ch] = static_cast<png_byte>(std::lround(v * 255.0));
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

}  // namespace io
}  // namespace refmaps
