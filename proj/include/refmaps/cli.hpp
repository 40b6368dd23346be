// Command implementations behind the CLI binary: dataset generation,
// estimation, evaluation against ground truth and forward re-rendering.
// Kept in the library so tests can drive them directly.
#pragma once

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "refmaps/core.hpp"
#include "refmaps/io.hpp"
#include "refmaps/solver.hpp"
#include "refmaps/synth.hpp"

namespace refmaps {
namespace cli {

namespace fs = std::filesystem;

// --- Scene spec files --------------------------------------------------------
// Line-oriented key = value format; see README for the full key list.

inline SceneSpec parse_scene_spec(const fs::path& path) {
  auto in = io::detail::open_in(path, false);
  SceneSpec spec;
  spec.view_rotations.clear();
  std::vector<LightingVector> light_lines;
  std::string lighting_mode;  // "", "fixed" or "varying"
  bool have_albedo_values = false;

  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = io::detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::string key, value;
    if (!io::detail::split_kv(t, key, value))
      throw ValidationError("scene spec: cannot parse line " + std::to_string(lineno));
    std::istringstream vs(value);
    auto bad = [&](const std::string& why) {
      return ValidationError("scene spec line " + std::to_string(lineno) + ": " + why);
    };

    if (key == "surface") {
      std::string kind;
      vs >> kind;
      if (kind == "sphere") {
        spec.surface = SurfaceKind::Sphere;
      } else if (kind == "height_field") {
        spec.surface = SurfaceKind::HeightField;
        std::string fn;
        vs >> fn;
        if (fn == "plane") spec.height_function = HeightFunction::Plane;
        else if (fn == "gaussian_bump") spec.height_function = HeightFunction::GaussianBump;
        else if (fn == "sinusoid") spec.height_function = HeightFunction::Sinusoid;
        else throw bad("unknown height function '" + fn + "'");
        spec.height_params.clear();
        double p;
        while (vs >> p) spec.height_params.push_back(p);
      } else {
        throw bad("unknown surface '" + kind + "'");
      }
    } else if (key == "radius") {
      vs >> spec.radius;
    } else if (key == "extent") {
      vs >> spec.extent;
    } else if (key == "image_size") {
      vs >> spec.image_size;
    } else if (key == "channels") {
      vs >> spec.channels;
    } else if (key == "albedo") {
      std::string kind;
      vs >> kind;
      if (kind == "constant") spec.albedo.kind = AlbedoKind::Constant;
      else if (kind == "bands") {
        spec.albedo.kind = AlbedoKind::Bands;
        if (!(vs >> spec.albedo.bands)) throw bad("bands needs a region count");
      } else if (kind == "octants") spec.albedo.kind = AlbedoKind::Octants;
      else if (kind == "sinusoid") {
        spec.albedo.kind = AlbedoKind::Sinusoid;
        double f;
        if (vs >> f) spec.albedo.frequency = f;
      } else throw bad("unknown albedo kind '" + kind + "'");
    } else if (key == "albedo_values") {
      std::vector<double> flat;
      double v;
      while (vs >> v) flat.push_back(v);
      if (flat.empty()) throw bad("albedo_values needs numbers");
      spec.albedo.values.clear();
      spec.albedo.values.push_back(flat);  // reshaped after channels are known
      have_albedo_values = true;
    } else if (key == "view") {
      double ax, ay, az, deg;
      if (!(vs >> ax >> ay >> az >> deg)) throw bad("view needs: axis_x axis_y axis_z angle_degrees");
      spec.view_rotations.push_back(rotation_about(ax, ay, az, deg));
    } else if (key == "lighting") {
      vs >> lighting_mode;
      if (lighting_mode != "fixed" && lighting_mode != "varying")
        throw bad("lighting must be fixed or varying");
    } else if (key == "light") {
      LightingVector s{};
      for (int k = 0; k < 9; ++k)
        if (!(vs >> s[k])) throw bad("light needs 9 numbers");
      light_lines.push_back(s);
    } else if (key == "noise_sigma") {
      vs >> spec.noise_sigma;
    } else if (key == "specular_fraction") {
      vs >> spec.specular_fraction;
    } else if (key == "normal_smoothing") {
      vs >> spec.normal_smoothing;
    } else {
      throw bad("unknown key '" + key + "'");
    }
  }

  const int nviews = static_cast<int>(spec.view_rotations.size());
  if (nviews == 0) throw ValidationError("scene spec: at least one view line required");

  // Reshape the flat albedo value list into [region][channel].
  if (have_albedo_values) {
    const std::vector<double> flat = spec.albedo.values[0];
    size_t regions = 1;
    if (spec.albedo.kind == AlbedoKind::Bands) regions = static_cast<size_t>(spec.albedo.bands);
    if (spec.albedo.kind == AlbedoKind::Octants) regions = 8;
    if (spec.albedo.kind == AlbedoKind::Sinusoid) regions = 2;
    if (flat.size() != regions * spec.channels)
      throw ValidationError("scene spec: albedo_values needs regions x channels = " +
                            std::to_string(regions * spec.channels) + " numbers");
    spec.albedo.values.assign(regions, std::vector<double>(spec.channels));
    for (size_t rg = 0; rg < regions; ++rg)
      for (int ch = 0; ch < spec.channels; ++ch)
        spec.albedo.values[rg][ch] = flat[rg * spec.channels + ch];
  }

  // Resolve lighting lines: channels lines (fixed, broadcast) or
  // views*channels lines in view-major order (varying).
  const size_t fixed_count = static_cast<size_t>(spec.channels);
  const size_t varying_count = static_cast<size_t>(spec.channels) * nviews;
  bool fixed;
  if (lighting_mode == "fixed") fixed = true;
  else if (lighting_mode == "varying") fixed = false;
  else if (light_lines.size() == varying_count) fixed = false;
  else if (light_lines.size() == fixed_count) fixed = true;
  else
    throw ValidationError("scene spec: expected " + std::to_string(fixed_count) + " (fixed) or " +
                          std::to_string(varying_count) + " (varying) light lines, got " +
                          std::to_string(light_lines.size()));
  if (fixed && light_lines.size() != fixed_count)
    throw ValidationError("scene spec: fixed lighting needs one light line per channel");
  if (!fixed && light_lines.size() != varying_count)
    throw ValidationError("scene spec: varying lighting needs views x channels light lines");

  spec.lighting.assign(nviews, std::vector<LightingVector>(spec.channels));
  for (int v = 0; v < nviews; ++v)
    for (int ch = 0; ch < spec.channels; ++ch)
      spec.lighting[v][ch] = fixed ? light_lines[ch] : light_lines[static_cast<size_t>(v) * spec.channels + ch];
  return spec;
}

// --- Commands ----------------------------------------------------------------

struct GenerateOptions {
  std::string spec_path;
  std::string out_dir;
  std::uint64_t seed = 0;
};

inline GroundTruth run_generate(const GenerateOptions& opt) {
  const SceneSpec spec = parse_scene_spec(opt.spec_path);
  GroundTruth truth = generate(spec, opt.seed);
  io::store_dataset(opt.out_dir, truth);
  return truth;
}

struct EstimateOptions {
  std::string dataset_dir;
  std::string out_dir;
  SolverConfig config;
  std::string trace_path;  // optional CSV
  bool preview = false;    // optional PNG previews
};

inline Solution run_estimate(const EstimateOptions& opt) {
  const io::LoadedDataset ds = io::load_dataset(opt.dataset_dir);
  const auto violations = validate_problem(ds.problem);
  if (!violations.empty())
    throw ValidationError("dataset failed validation: " + violations.front().message);
  Solution sol = solve(ds.problem, opt.config);
  io::store_solution(opt.out_dir, sol, opt.config);
  if (!opt.trace_path.empty()) io::write_trace_csv(opt.trace_path, sol.trace);
  if (opt.preview) {
    const int channels = static_cast<int>(sol.reflectance.size());
    const int nviews = channels > 0 ? static_cast<int>(sol.reflectance[0].size()) : 0;
    for (int v = 0; v < nviews; ++v) {
      char id[16];
      std::snprintf(id, sizeof(id), "%03d", v);
      std::vector<const ScalarField*> ptrs;
      for (int ch = 0; ch < channels; ++ch) ptrs.push_back(&sol.reflectance[ch][v]);
      io::write_png_preview(fs::path(opt.out_dir) / (std::string("preview_") + id + ".png"), ptrs);
    }
  }
  return sol;
}

struct EvaluateOptions {
  std::string estimate_dir;
  std::string dataset_dir;
  std::string csv_path;  // optional
};

struct EvaluateReport {
  struct Channel {
    double kappa = 0.0;
    double rmse = 0.0;
    std::vector<double> per_view_rmse;
  };
  std::vector<Channel> channels;
};

// Table-style evaluation protocol: ground truth is scaled to [0,1] per
// channel, the estimate is aligned to it with one scale factor shared by all
// views of the channel, and the RMSE is taken over every masked-in pixel.
inline EvaluateReport run_evaluate(const EvaluateOptions& opt, std::ostream& human = std::cout) {
  const io::LoadedDataset ds = io::load_dataset(opt.dataset_dir);
  if (!ds.has_ground_truth) throw ValidationError("evaluate: dataset has no ground truth");
  const io::LoadedSolution est = io::load_solution(opt.estimate_dir);
  if (est.channels != ds.problem.channels)
    throw ValidationError("evaluate: estimate channel count does not match dataset");
  const size_t nviews = ds.problem.views.size();
  if (est.reflectance[0].size() != nviews)
    throw ValidationError("evaluate: estimate view count does not match dataset");

  EvaluateReport report;
  for (int ch = 0; ch < ds.problem.channels; ++ch) {
    // Reframe estimate planes onto the dataset masks.
    std::vector<ScalarField> est_masked, gt_scaled;
    double gmax = 0.0;
    for (size_t v = 0; v < nviews; ++v) {
      const PixelDomain& dom = ds.problem.views[v].geometry.domain;
      if (est.reflectance[ch][v].domain.width != dom.width ||
          est.reflectance[ch][v].domain.height != dom.height)
        throw ValidationError("evaluate: estimate dimensions do not match dataset in view " +
                              std::to_string(v));
      for (int r = 0; r < dom.height; ++r)
        for (int c = 0; c < dom.width; ++c)
          if (dom.in(r, c)) gmax = std::max(gmax, ds.gt_reflectance[ch][v].at(r, c));
    }
    if (!(gmax > 0.0)) throw ValidationError("evaluate: ground truth channel has no positive values");
    for (size_t v = 0; v < nviews; ++v) {
      const PixelDomain& dom = ds.problem.views[v].geometry.domain;
      ScalarField e(dom), g(dom);
      for (int r = 0; r < dom.height; ++r)
        for (int c = 0; c < dom.width; ++c)
          if (dom.in(r, c)) {
            e.at(r, c) = est.reflectance[ch][v].at(r, c);
            g.at(r, c) = ds.gt_reflectance[ch][v].at(r, c) / gmax;
          }
      est_masked.push_back(std::move(e));
      gt_scaled.push_back(std::move(g));
    }

    auto [aligned, kappa] = align_scale(est_masked, gt_scaled);
    EvaluateReport::Channel cr;
    cr.kappa = kappa;
    double sq_sum = 0.0;
    long count = 0;
    for (size_t v = 0; v < nviews; ++v) {
      const PixelDomain& dom = aligned[v].domain;
      double view_sq = 0.0;
      long view_count = 0;
      for (int r = 0; r < dom.height; ++r)
        for (int c = 0; c < dom.width; ++c)
          if (dom.in(r, c)) {
            const double d = aligned[v].at(r, c) - gt_scaled[v].at(r, c);
            view_sq += d * d;
            ++view_count;
          }
      cr.per_view_rmse.push_back(view_count ? std::sqrt(view_sq / view_count) : 0.0);
      sq_sum += view_sq;
      count += view_count;
    }
    cr.rmse = count ? std::sqrt(sq_sum / count) : 0.0;
    report.channels.push_back(std::move(cr));
  }

  for (size_t ch = 0; ch < report.channels.size(); ++ch) {
    human << "channel " << ch << ": rmse " << report.channels[ch].rmse << " (kappa "
          << report.channels[ch].kappa << ")\n";
    for (size_t v = 0; v < report.channels[ch].per_view_rmse.size(); ++v)
      human << "  view " << v << ": rmse " << report.channels[ch].per_view_rmse[v] << "\n";
  }

  if (!opt.csv_path.empty()) {
    auto out = io::detail::open_out(opt.csv_path, false);
    out << "channel,view,kappa,rmse\n";
    for (size_t ch = 0; ch < report.channels.size(); ++ch) {
      out << ch << ",all," << io::format_g17(report.channels[ch].kappa) << ","
          << io::format_g17(report.channels[ch].rmse) << "\n";
      for (size_t v = 0; v < report.channels[ch].per_view_rmse.size(); ++v)
        out << ch << "," << v << ",," << io::format_g17(report.channels[ch].per_view_rmse[v]) << "\n";
    }
  }
  return report;
}

struct RenderOptions {
  std::string reflectance_dir;  // estimate-layout directory
  std::string dataset_dir;      // provides geometry and masks
  std::string lighting_path;    // estimate-layout directory or single text file
  std::string out_dir;
  bool preview = false;
};

// Forward-renders I = rho * sigma . nu per view and channel. Supplying a
// different lighting file relights the reflectance.
inline void run_render(const RenderOptions& opt) {
  const io::LoadedDataset ds = io::load_dataset(opt.dataset_dir);
  const io::LoadedSolution est = io::load_solution(opt.reflectance_dir);
  const size_t nviews = ds.problem.views.size();
  const int channels = ds.problem.channels;
  if (est.channels != channels) throw ValidationError("render: channel count mismatch");
  if (est.reflectance[0].size() != nviews) throw ValidationError("render: view count mismatch");

  // Lighting: estimate-layout directory (lighting_###.txt) or a single file
  // holding views x channels lines in view-major order.
  SigmaSet lighting(channels);
  if (fs::is_directory(opt.lighting_path)) {
    for (size_t v = 0; v < nviews; ++v) {
      char id[16];
      std::snprintf(id, sizeof(id), "%03d", static_cast<int>(v));
      const auto per_channel = io::read_lighting(fs::path(opt.lighting_path) / (std::string("lighting_") + id + ".txt"));
      if (static_cast<int>(per_channel.size()) != channels)
        throw ValidationError("render: lighting channel count mismatch in view " + std::to_string(v));
      for (int ch = 0; ch < channels; ++ch) lighting[ch].push_back(per_channel[ch]);
    }
  } else {
    const auto lines = io::read_lighting(opt.lighting_path);
    if (lines.size() != nviews * channels)
      throw ValidationError("render: lighting file needs views x channels lines");
    for (size_t v = 0; v < nviews; ++v)
      for (int ch = 0; ch < channels; ++ch) lighting[ch].push_back(lines[v * channels + ch]);
  }

  fs::create_directories(opt.out_dir);
  for (size_t v = 0; v < nviews; ++v) {
    const PixelDomain& dom = ds.problem.views[v].geometry.domain;
    if (est.reflectance[0][v].domain.width != dom.width ||
        est.reflectance[0][v].domain.height != dom.height)
      throw ValidationError("render: reflectance dimensions do not match dataset in view " +
                            std::to_string(v));
    std::vector<ScalarField> rendered;
    for (int ch = 0; ch < channels; ++ch) {
      ScalarField img(dom);
      const GeometricField& geo = ds.problem.views[v].geometry;
      for (int r = 0; r < dom.height; ++r)
        for (int c = 0; c < dom.width; ++c)
          if (dom.in(r, c))
            img.at(r, c) = est.reflectance[ch][v].at(r, c) * dot9(lighting[ch][v], geo.at(r, c));
      rendered.push_back(std::move(img));
    }
    char id[16];
    std::snprintf(id, sizeof(id), "%03d", static_cast<int>(v));
    std::vector<const ScalarField*> ptrs;
    for (int ch = 0; ch < channels; ++ch) ptrs.push_back(&rendered[ch]);
    io::write_pfm(fs::path(opt.out_dir) / (std::string("render_") + id + ".pfm"), ptrs);
    if (opt.preview)
      io::write_png_preview(fs::path(opt.out_dir) / (std::string("preview_") + id + ".png"), ptrs);
  }
}

}  // namespace cli
}  // namespace refmaps
