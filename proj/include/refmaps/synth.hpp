// Synthetic scene generator: analytic surfaces (sphere, height fields)
// rendered under orthographic cameras with SH lighting, with exact ground
// truth, exact cross-view correspondences, and optional noise / specular
// corruption and geometry degradation.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "refmaps/core.hpp"
#include "refmaps/energy.hpp"
#include "refmaps/rng.hpp"

namespace refmaps {

enum class SurfaceKind { Sphere, HeightField };
enum class HeightFunction { Plane, GaussianBump, Sinusoid };
enum class AlbedoKind { Constant, Bands, Octants, Sinusoid };

struct AlbedoSpec {
  AlbedoKind kind = AlbedoKind::Constant;
  int bands = 2;  // for Bands
  // Piecewise kinds: values[region][channel]. Sinusoid: values[0] = base per
  // channel, values[1] = amplitude per channel.
  std::vector<std::vector<double>> values{{0.5}};
  double frequency = 3.0;  // for Sinusoid
};

struct SceneSpec {
  SurfaceKind surface = SurfaceKind::Sphere;
  double radius = 1.0;  // sphere
  HeightFunction height_function = HeightFunction::GaussianBump;
  std::vector<double> height_params{0.5, 0.5};
  double extent = 1.0;  // height-field half-width in world units
  AlbedoSpec albedo;
  int image_size = 64;
  int channels = 1;
  std::vector<Eigen::Matrix3d> view_rotations;
  std::vector<std::vector<LightingVector>> lighting;  // [view][channel]
  double noise_sigma = 0.0;
  double specular_fraction = 0.0;
  int normal_smoothing = 0;  // box kernel radius applied to the normals
};

struct GroundTruth {
  MultiViewProblem problem;             // images after corruption, geometry as solved against
  RhoMaps reflectance;                  // [channel][view], clean
  SigmaSet lighting;                    // [channel][view], clean
  std::vector<NormalField> normals;     // per view, matching problem geometry
};

inline Eigen::Matrix3d rotation_about(double ax, double ay, double az, double degrees) {
  Eigen::Vector3d axis(ax, ay, az);
  const double n = axis.norm();
  if (n == 0.0) throw ValidationError("rotation axis must be nonzero");
  return Eigen::AngleAxisd(degrees * 3.14159265358979323846 / 180.0, axis / n).toRotationMatrix();
}

namespace detail {

struct Camera {
  Eigen::Vector3d u, v, f;  // right, up, forward (looking direction)
  int width = 0, height = 0;
  double scale = 0.0;  // world units per pixel

  // Pixel centers sit at half-integer offsets from the image center.
  double plane_a(int col) const { return (col + 0.5 - width / 2.0) * scale; }
  double plane_b(int row) const { return (height / 2.0 - row - 0.5) * scale; }
  double col_of(double a) const { return a / scale + width / 2.0 - 0.5; }
  double row_of(double b) const { return height / 2.0 - 0.5 - b / scale; }
};

inline Camera make_camera(const Eigen::Matrix3d& rot, int size, double scale) {
  Camera cam;
  cam.u = rot * Eigen::Vector3d(1, 0, 0);
  cam.v = rot * Eigen::Vector3d(0, 1, 0);
  cam.f = rot * Eigen::Vector3d(0, 0, -1);
  cam.width = size;
  cam.height = size;
  cam.scale = scale;
  return cam;
}

struct SurfaceHit {
  Eigen::Vector3d point;
  Eigen::Vector3d normal;
};

// Orthographic back-projection of the camera-plane coordinates (a, b) onto
// the near side of the surface.
inline std::optional<SurfaceHit> backproject(const SceneSpec& spec, const Camera& cam, double a, double b) {
  if (spec.surface == SurfaceKind::Sphere) {
    const double rr = spec.radius * spec.radius - a * a - b * b;
    if (rr <= 0.0) return std::nullopt;
    const double z = std::sqrt(rr);
    SurfaceHit hit;
    hit.point = a * cam.u + b * cam.v - z * cam.f;
    hit.normal = hit.point / spec.radius;
    return hit;
  }
  // Height field over [-extent, extent]^2, viewed along -z only.
  if (std::abs(a) > spec.extent || std::abs(b) > spec.extent) return std::nullopt;
  double h = 0.0, ha = 0.0, hb = 0.0;
  const auto& pr = spec.height_params;
  switch (spec.height_function) {
    case HeightFunction::Plane: {
      h = pr[0] * a + pr[1] * b;
      ha = pr[0];
      hb = pr[1];
      break;
    }
    case HeightFunction::GaussianBump: {
      const double w2 = pr[1] * pr[1];
      h = pr[0] * std::exp(-(a * a + b * b) / (2.0 * w2));
      ha = h * (-a / w2);
      hb = h * (-b / w2);
      break;
    }
    case HeightFunction::Sinusoid: {
      h = pr[0] * std::sin(pr[1] * a) * std::sin(pr[2] * b);
      ha = pr[0] * pr[1] * std::cos(pr[1] * a) * std::sin(pr[2] * b);
      hb = pr[0] * pr[2] * std::sin(pr[1] * a) * std::cos(pr[2] * b);
      break;
    }
  }
  SurfaceHit hit;
  hit.point = Eigen::Vector3d(a, b, h);
  hit.normal = Eigen::Vector3d(-ha, -hb, 1.0).normalized();
  return hit;
}

inline double albedo_at(const SceneSpec& spec, const Eigen::Vector3d& x, int channel) {
  const AlbedoSpec& al = spec.albedo;
  const double unit = (spec.surface == SurfaceKind::Sphere) ? spec.radius : spec.extent;
  switch (al.kind) {
    case AlbedoKind::Constant:
      return al.values[0][channel];
    case AlbedoKind::Bands: {
      const double t = std::clamp((x[0] / unit + 1.0) / 2.0, 0.0, 1.0);
      const int region = std::min(al.bands - 1, static_cast<int>(t * al.bands));
      return al.values[region][channel];
    }
    case AlbedoKind::Octants: {
      const int region = (x[0] > 0.0 ? 1 : 0) + (x[1] > 0.0 ? 2 : 0) + (x[2] > 0.0 ? 4 : 0);
      return al.values[region][channel];
    }
    case AlbedoKind::Sinusoid: {
      const double s = std::sin(al.frequency * x[0]) * std::sin(al.frequency * x[1]);
      return al.values[0][channel] + al.values[1][channel] * s;
    }
  }
  return 0.0;
}

inline void validate_spec(const SceneSpec& spec) {
  if (spec.image_size < 1) throw ValidationError("scene: image_size must be >= 1");
  if (spec.channels != 1 && spec.channels != 3) throw ValidationError("scene: channels must be 1 or 3");
  if (spec.view_rotations.empty()) throw ValidationError("scene: at least one view required");
  if (spec.lighting.size() != spec.view_rotations.size())
    throw ValidationError("scene: one lighting entry per view required");
  for (const auto& per_view : spec.lighting)
    if (static_cast<int>(per_view.size()) != spec.channels)
      throw ValidationError("scene: one lighting vector per channel required");
  if (spec.surface == SurfaceKind::Sphere && !(spec.radius > 0.0))
    throw ValidationError("scene: sphere radius must be > 0");
  if (spec.surface == SurfaceKind::HeightField) {
    if (!(spec.extent > 0.0)) throw ValidationError("scene: extent must be > 0");
    const size_t need = (spec.height_function == HeightFunction::Sinusoid) ? 3 : 2;
    if (spec.height_params.size() < need) throw ValidationError("scene: missing height function parameters");
    for (const auto& rot : spec.view_rotations)
      if ((rot - Eigen::Matrix3d::Identity()).norm() > 1e-12)
        throw ValidationError("scene: height-field scenes require identity view rotations");
  }
  const AlbedoSpec& al = spec.albedo;
  size_t regions = 1;
  if (al.kind == AlbedoKind::Bands) regions = static_cast<size_t>(al.bands);
  if (al.kind == AlbedoKind::Octants) regions = 8;
  if (al.kind == AlbedoKind::Sinusoid) regions = 2;  // base + amplitude rows
  if (al.values.size() != regions) throw ValidationError("scene: albedo value rows do not match regions");
  for (const auto& row : al.values)
    if (static_cast<int>(row.size()) != spec.channels)
      throw ValidationError("scene: albedo values per region must match channel count");
  if (al.kind == AlbedoKind::Bands && al.bands < 1) throw ValidationError("scene: bands must be >= 1");
  if (spec.noise_sigma < 0.0 || spec.specular_fraction < 0.0 || spec.specular_fraction > 1.0)
    throw ValidationError("scene: invalid corruption parameters");
  if (spec.normal_smoothing < 0) throw ValidationError("scene: normal_smoothing must be >= 0");
}

}  // namespace detail

// Replaces each view's normals by a box-averaged, renormalized field and
// re-lifts the geometry. Images and ground-truth reflectance are left
// untouched, so the inverse problem becomes model-inconsistent on purpose.
inline GroundTruth smooth_normals(const GroundTruth& truth, int radius) {
  if (radius < 0) throw ValidationError("smooth_normals: radius must be >= 0");
  GroundTruth out = truth;
  if (radius == 0) return out;
  for (size_t v = 0; v < out.normals.size(); ++v) {
    const NormalField& src = truth.normals[v];
    NormalField dst(src.domain);
    const PixelDomain& dom = src.domain;
    for (int r = 0; r < dom.height; ++r) {
      for (int c = 0; c < dom.width; ++c) {
        if (!dom.in(r, c)) continue;
        Vec3 acc{0.0, 0.0, 0.0};
        for (int dr = -radius; dr <= radius; ++dr) {
          for (int dc = -radius; dc <= radius; ++dc) {
            if (!dom.in(r + dr, c + dc)) continue;
            const Vec3& n = src.at(r + dr, c + dc);
            acc[0] += n[0];
            acc[1] += n[1];
            acc[2] += n[2];
          }
        }
        const double len = norm3(acc);
        if (len < 1e-12) {
          dst.at(r, c) = src.at(r, c);  // cancellation; keep the original
        } else {
          dst.at(r, c) = Vec3{acc[0] / len, acc[1] / len, acc[2] / len};
        }
      }
    }
    out.normals[v] = dst;
    out.problem.views[v].geometry = lift_field(dst);
  }
  return out;
}

// Renders the scene deterministically: back-projects every pixel, lifts the
// analytic normal, evaluates I = rho * sigma . nu, then applies the seeded
// corruptions. Correspondences pair pixels of different views whose
// back-projections coincide within 1e-9.
inline GroundTruth generate(const SceneSpec& spec, std::uint64_t seed) {
  detail::validate_spec(spec);
  const int size = spec.image_size;
  const int nviews = static_cast<int>(spec.view_rotations.size());
  const double scale = (spec.surface == SurfaceKind::Sphere)
                           ? spec.radius / (0.45 * size)
                           : 2.0 * spec.extent / size;

  std::vector<detail::Camera> cams;
  cams.reserve(nviews);
  for (const auto& rot : spec.view_rotations) cams.push_back(detail::make_camera(rot, size, scale));

  // Per view: mask, surface points, normals.
  std::vector<PixelDomain> domains;
  std::vector<std::vector<Eigen::Vector3d>> points(nviews);
  std::vector<NormalField> normals;
  for (int v = 0; v < nviews; ++v) {
    std::vector<std::uint8_t> mask(static_cast<size_t>(size) * size, 0);
    points[v].assign(static_cast<size_t>(size) * size, Eigen::Vector3d::Zero());
    std::vector<Vec3> norm(static_cast<size_t>(size) * size, Vec3{0, 0, 0});
    for (int r = 0; r < size; ++r) {
      for (int c = 0; c < size; ++c) {
        const auto hit = detail::backproject(spec, cams[v], cams[v].plane_a(c), cams[v].plane_b(r));
        if (!hit) continue;
        const int i = r * size + c;
        mask[i] = 1;
        points[v][i] = hit->point;
        norm[i] = Vec3{hit->normal[0], hit->normal[1], hit->normal[2]};
      }
    }
    bool any = false;
    for (auto m : mask) any = any || m;
    if (!any) throw ValidationError("scene: view " + std::to_string(v) + " shows no surface");
    domains.push_back(PixelDomain(size, size, std::move(mask)));
    NormalField nf(domains.back());
    nf.normals = std::move(norm);
    normals.push_back(std::move(nf));
  }

  GroundTruth truth;
  truth.problem.channels = spec.channels;
  truth.normals = normals;
  truth.reflectance.assign(spec.channels, {});
  truth.lighting.assign(spec.channels, {});

  for (int v = 0; v < nviews; ++v) {
    View view;
    view.geometry = lift_field(normals[v]);
    view.images.assign(spec.channels, ScalarField(domains[v]));
    truth.problem.views.push_back(std::move(view));
  }

  for (int ch = 0; ch < spec.channels; ++ch) {
    for (int v = 0; v < nviews; ++v) {
      truth.reflectance[ch].push_back(ScalarField(domains[v]));
      truth.lighting[ch].push_back(spec.lighting[v][ch]);
    }
  }

  // Forward render; track the worst shading value to report on rejection.
  double worst_shading = std::numeric_limits<double>::infinity();
  int worst_view = -1, worst_row = -1, worst_col = -1, worst_channel = -1;
  for (int ch = 0; ch < spec.channels; ++ch) {
    for (int v = 0; v < nviews; ++v) {
      const PixelDomain& dom = domains[v];
      const GeometricField& geo = truth.problem.views[v].geometry;
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          if (!dom.in(r, c)) continue;
          const double rho = detail::albedo_at(spec, points[v][dom.index(r, c)], ch);
          const double shading = dot9(spec.lighting[v][ch], geo.at(r, c));
          if (shading < worst_shading) {
            worst_shading = shading;
            worst_view = v;
            worst_row = r;
            worst_col = c;
            worst_channel = ch;
          }
          truth.reflectance[ch][v].at(r, c) = rho;
          truth.problem.views[v].images[ch].at(r, c) = rho * shading;
        }
      }
    }
  }
  if (!(worst_shading > 0.0)) {
    std::ostringstream msg;
    msg << "scene: non-positive shading " << worst_shading << " at view " << worst_view << " pixel "
        << worst_row << "," << worst_col << " channel " << worst_channel;
    throw ValidationError(msg.str());
  }

  // Bit-level forward-model audit before any corruption.
  for (int ch = 0; ch < spec.channels; ++ch) {
    for (int v = 0; v < nviews; ++v) {
      const PixelDomain& dom = domains[v];
      const GeometricField& geo = truth.problem.views[v].geometry;
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          if (!dom.in(r, c)) continue;
          const double expected =
              truth.reflectance[ch][v].at(r, c) * dot9(truth.lighting[ch][v], geo.at(r, c));
          if (truth.problem.views[v].images[ch].at(r, c) != expected)
            throw NumericalError("scene: forward model audit failed");
        }
      }
    }
  }

  // Exact correspondences: a pixel pair matches when the back-projections
  // agree within 1e-9 in world units.
  constexpr double kCorrTol = 1e-9;
  for (int vi = 0; vi < nviews; ++vi) {
    for (int vj = vi + 1; vj < nviews; ++vj) {
      const PixelDomain& di = domains[vi];
      const PixelDomain& dj = domains[vj];
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          if (!di.in(r, c)) continue;
          const Eigen::Vector3d& x = points[vi][di.index(r, c)];
          const double a = x.dot(cams[vj].u);
          const double b = x.dot(cams[vj].v);
          const long rj = std::lround(cams[vj].row_of(b));
          const long cj = std::lround(cams[vj].col_of(a));
          if (rj < 0 || rj >= size || cj < 0 || cj >= size) continue;
          if (!dj.in(static_cast<int>(rj), static_cast<int>(cj))) continue;
          const Eigen::Vector3d& xj = points[vj][dj.index(static_cast<int>(rj), static_cast<int>(cj))];
          if ((x - xj).norm() > kCorrTol) continue;
          truth.problem.correspondences.entries.push_back(
              Correspondence{vi, r, c, vj, static_cast<int>(rj), static_cast<int>(cj)});
        }
      }
    }
  }

  // Clean per-view-per-channel maxima, captured before any corruption; the
  // specular outlier magnitudes are relative to these.
  std::vector<std::vector<double>> clean_max(nviews, std::vector<double>(spec.channels, 0.0));
  for (int v = 0; v < nviews; ++v) {
    const PixelDomain& dom = domains[v];
    for (int ch = 0; ch < spec.channels; ++ch)
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
          if (dom.in(r, c))
            clean_max[v][ch] = std::max(clean_max[v][ch], truth.problem.views[v].images[ch].at(r, c));
  }

  // Seeded corruption: Gaussian noise first, then sparse positive outliers
  // of magnitude [0.5, 1.0] x the clean per-view-per-channel maximum.
  Rng rng(seed);
  if (spec.noise_sigma > 0.0) {
    for (int v = 0; v < nviews; ++v) {
      const PixelDomain& dom = domains[v];
      for (int ch = 0; ch < spec.channels; ++ch) {
        ScalarField& img = truth.problem.views[v].images[ch];
        for (int r = 0; r < size; ++r)
          for (int c = 0; c < size; ++c)
            if (dom.in(r, c)) img.at(r, c) += spec.noise_sigma * rng.normal();
      }
    }
  }
  if (spec.specular_fraction > 0.0) {
    for (int v = 0; v < nviews; ++v) {
      const PixelDomain& dom = domains[v];
      std::vector<int> pix;
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c)
          if (dom.in(r, c)) pix.push_back(dom.index(r, c));
      const int k = static_cast<int>(std::lround(spec.specular_fraction * pix.size()));
      for (int t = 0; t < k; ++t) {  // partial Fisher-Yates pick without replacement
        const std::uint64_t j = t + rng.below(pix.size() - t);
        std::swap(pix[t], pix[j]);
        const double mag = rng.uniform(0.5, 1.0);
        for (int ch = 0; ch < spec.channels; ++ch)
          truth.problem.views[v].images[ch].values[pix[t]] += mag * clean_max[v][ch];
      }
    }
  }

  if (spec.normal_smoothing > 0) truth = smooth_normals(truth, spec.normal_smoothing);
  return truth;
}

}  // namespace refmaps
