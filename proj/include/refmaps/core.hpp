// Core domain types: pixel grids with validity masks, spherical-harmonics
// lighting vectors, lifted per-pixel geometry, cross-view correspondences
// and solver configuration.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace refmaps {

using Vec3 = std::array<double, 3>;
using Vec9 = std::array<double, 9>;

// 9-D second-order SH lighting coefficients; camera gain and 1/pi are
// absorbed into the vector.
using LightingVector = Vec9;

// Thrown on malformed inputs (bad data, invalid specs, broken files).
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when a numerical routine breaks down (non-finite CG residual, ...).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double dot3(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

inline double norm3(const Vec3& a) { return std::sqrt(dot3(a, a)); }

inline double dot9(const Vec9& a, const Vec9& b) {
  double s = 0.0;
  for (int k = 0; k < 9; ++k) s += a[k] * b[k];
  return s;
}

// The diffuse (ambient) lighting vector: dotted with any lifted normal it
// yields exactly 1, since component 4 of the lifting is the constant 1.
inline LightingVector diffuse_lighting() {
  return {0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0};
}

// A rectangular pixel grid with a boolean validity mask. Masked-out pixels
// carry no data and are skipped by every operation.
struct PixelDomain {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> mask;  // row-major, size width*height

  PixelDomain() = default;

  PixelDomain(int w, int h, std::vector<std::uint8_t> m) : width(w), height(h), mask(std::move(m)) {
    if (width < 1 || height < 1) throw ValidationError("PixelDomain: width and height must be >= 1");
    if (static_cast<int>(mask.size()) != width * height)
      throw ValidationError("PixelDomain: mask size does not match dimensions");
    bool any = false;
    for (auto v : mask) any = any || (v != 0);
    if (!any) throw ValidationError("PixelDomain: mask has no valid pixels");
  }

  // Full-frame domain.
  static PixelDomain full(int w, int h) {
    return PixelDomain(w, h, std::vector<std::uint8_t>(static_cast<size_t>(w) * h, 1));
  }

  int size() const { return width * height; }
  int index(int row, int col) const { return row * width + col; }
  bool contains(int row, int col) const { return row >= 0 && row < height && col >= 0 && col < width; }
  bool in(int row, int col) const { return contains(row, col) && mask[index(row, col)] != 0; }

  int masked_count() const {
    int n = 0;
    for (auto v : mask) n += (v != 0);
    return n;
  }

  bool operator==(const PixelDomain& o) const {
    return width == o.width && height == o.height && mask == o.mask;
  }
};

// A scalar per masked-in pixel (image graylevels, reflectance, residuals).
// Masked-out entries are zero-filled and must never be read.
struct ScalarField {
  PixelDomain domain;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(PixelDomain d) : domain(std::move(d)), values(domain.size(), 0.0) {}
  ScalarField(PixelDomain d, std::vector<double> v) : domain(std::move(d)), values(std::move(v)) {
    if (static_cast<int>(values.size()) != domain.size())
      throw ValidationError("ScalarField: value count does not match domain");
  }

  double& at(int row, int col) { return values[domain.index(row, col)]; }
  double at(int row, int col) const { return values[domain.index(row, col)]; }
};

// Per-pixel unit outer normals in world coordinates.
struct NormalField {
  PixelDomain domain;
  std::vector<Vec3> normals;

  NormalField() = default;
  explicit NormalField(PixelDomain d) : domain(std::move(d)), normals(domain.size(), Vec3{0, 0, 0}) {}

  Vec3& at(int row, int col) { return normals[domain.index(row, col)]; }
  const Vec3& at(int row, int col) const { return normals[domain.index(row, col)]; }
};

// Per-pixel 9-vector lifting of the normal, the geometric factor the
// lighting vector is dotted against.
struct GeometricField {
  PixelDomain domain;
  std::vector<Vec9> nu;

  GeometricField() = default;
  explicit GeometricField(PixelDomain d) : domain(std::move(d)), nu(domain.size(), Vec9{}) {}

  Vec9& at(int row, int col) { return nu[domain.index(row, col)]; }
  const Vec9& at(int row, int col) const { return nu[domain.index(row, col)]; }
};

inline constexpr double kUnitNormalTol = 1e-6;

// Lifts a unit normal to the 9-vector the second-order SH shading model
// consumes: [n1, n2, n3, 1, n1 n2, n1 n3, n2 n3, n1^2 - n2^2, 3 n3^2 - 1].
inline Vec9 lift_normal(const Vec3& n) {
  const double len = norm3(n);
  if (!(std::abs(len - 1.0) <= kUnitNormalTol)) {
    std::ostringstream msg;
    msg << "lift_normal: normal has length " << len << ", expected unit";
    throw ValidationError(msg.str());
  }
  return Vec9{n[0],
              n[1],
              n[2],
              1.0,
              n[0] * n[1],
              n[0] * n[2],
              n[1] * n[2],
              n[0] * n[0] - n[1] * n[1],
              3.0 * n[2] * n[2] - 1.0};
}

// Lifts every masked-in normal of a field; masked-out pixels keep a zero
// 9-vector that must not be read.
inline GeometricField lift_field(const NormalField& normals) {
  GeometricField out(normals.domain);
  for (int r = 0; r < normals.domain.height; ++r) {
    for (int c = 0; c < normals.domain.width; ++c) {
      if (!normals.domain.in(r, c)) continue;
      try {
        out.at(r, c) = lift_normal(normals.at(r, c));
      } catch (const ValidationError& e) {
        std::ostringstream msg;
        msg << e.what() << " (pixel " << r << "," << c << ")";
        throw ValidationError(msg.str());
      }
    }
  }
  return out;
}

// Cross-view pixel pairs asserting same-surface-point identity, stored in
// canonical view_i < view_j order.
struct Correspondence {
  int view_i = 0;
  int row_i = 0;
  int col_i = 0;
  int view_j = 0;
  int row_j = 0;
  int col_j = 0;

  bool operator==(const Correspondence& o) const = default;
};

struct CorrespondenceSet {
  std::vector<Correspondence> entries;
};

struct SolverConfig {
  // TV and multi-view consistency weights. No defaults: results depend
  // critically on them, so callers must choose.
  double lambda = std::numeric_limits<double>::quiet_NaN();
  double mu = std::numeric_limits<double>::quiet_NaN();
  double delta = 1e-4;          // Huber threshold
  int max_outer_iters = 50;     // outer MM iterations
  double rel_energy_tol = 1e-3; // stopping rule on relative energy change
  int cg_max_iters = 0;         // 0 = 10 * sqrt(#unknowns)
  double cg_tol = 1e-6;         // relative residual for the rho-update CG
  bool normalize_output = true; // rescale each channel so max reflectance is 1
  int threads = 1;
};

inline void validate_config(const SolverConfig& cfg) {
  if (!(cfg.lambda >= 0.0) || !std::isfinite(cfg.lambda))
    throw ValidationError("SolverConfig: lambda must be supplied and >= 0");
  if (!(cfg.mu >= 0.0) || !std::isfinite(cfg.mu))
    throw ValidationError("SolverConfig: mu must be supplied and >= 0");
  if (!(cfg.delta > 0.0)) throw ValidationError("SolverConfig: delta must be > 0");
  if (cfg.max_outer_iters < 0) throw ValidationError("SolverConfig: max_outer_iters must be >= 0");
  if (!(cfg.rel_energy_tol > 0.0)) throw ValidationError("SolverConfig: rel_energy_tol must be > 0");
  if (!(cfg.cg_tol > 0.0)) throw ValidationError("SolverConfig: cg_tol must be > 0");
  if (cfg.cg_max_iters < 0) throw ValidationError("SolverConfig: cg_max_iters must be >= 0");
  if (cfg.threads < 1) throw ValidationError("SolverConfig: threads must be >= 1");
}

// One view of the scene: per-channel images plus the lifted geometry, all
// on a shared pixel domain.
struct View {
  std::vector<ScalarField> images;  // one per channel
  GeometricField geometry;
};

struct MultiViewProblem {
  std::vector<View> views;
  CorrespondenceSet correspondences;
  int channels = 1;  // 1 (graylevel) or 3 (RGB, treated independently)
};

// A single invariant violation found by validate_problem. Violations are
// data, not errors: callers decide what to do with them.
struct Violation {
  std::string message;
};

inline std::vector<Violation> validate_problem(const MultiViewProblem& p) {
  std::vector<Violation> out;
  auto add = [&out](const std::string& m) { out.push_back(Violation{m}); };

  if (p.channels != 1 && p.channels != 3) add("channels must be 1 or 3");
  if (p.views.empty()) add("problem has no views");

  for (size_t v = 0; v < p.views.size(); ++v) {
    const View& view = p.views[v];
    const std::string tag = "view " + std::to_string(v) + ": ";
    if (static_cast<int>(view.images.size()) != p.channels)
      add(tag + "expected " + std::to_string(p.channels) + " image channel(s), got " +
          std::to_string(view.images.size()));
    for (size_t ch = 0; ch < view.images.size(); ++ch) {
      if (!(view.images[ch].domain == view.geometry.domain))
        add(tag + "channel " + std::to_string(ch) + " image domain differs from geometry domain");
    }
    const PixelDomain& dom = view.geometry.domain;
    for (int r = 0; r < dom.height; ++r) {
      for (int c = 0; c < dom.width; ++c) {
        if (!dom.in(r, c)) continue;
        for (size_t ch = 0; ch < view.images.size(); ++ch) {
          if (!(view.images[ch].domain == dom)) continue;
          if (!std::isfinite(view.images[ch].at(r, c)))
            add(tag + "non-finite image value at pixel " + std::to_string(r) + "," + std::to_string(c) +
                " channel " + std::to_string(ch));
        }
        const Vec9& nu = view.geometry.at(r, c);
        const Vec3 n{nu[0], nu[1], nu[2]};
        const double len = norm3(n);
        if (!(std::abs(len - 1.0) <= kUnitNormalTol)) {
          add(tag + "invalid normal (length " + std::to_string(len) + ") at pixel " + std::to_string(r) +
              "," + std::to_string(c));
          continue;
        }
        if (nu[3] != 1.0)
          add(tag + "nu component 4 is not 1 at pixel " + std::to_string(r) + "," + std::to_string(c));
        const Vec9 ref = {n[0], n[1], n[2], 1.0,          n[0] * n[1], n[0] * n[2],
                          n[1] * n[2],     n[0] * n[0] - n[1] * n[1], 3.0 * n[2] * n[2] - 1.0};
        for (int k = 4; k < 9; ++k) {
          if (!(std::abs(nu[k] - ref[k]) <= kUnitNormalTol)) {
            add(tag + "nu polynomial identity broken (component " + std::to_string(k + 1) + ") at pixel " +
                std::to_string(r) + "," + std::to_string(c));
            break;
          }
        }
      }
    }
  }

  const int nviews = static_cast<int>(p.views.size());
  for (size_t e = 0; e < p.correspondences.entries.size(); ++e) {
    const Correspondence& cr = p.correspondences.entries[e];
    const std::string tag = "correspondence " + std::to_string(e) + ": ";
    if (cr.view_i >= cr.view_j) {
      add(tag + "views not in canonical i<j order");
      continue;
    }
    if (cr.view_i < 0 || cr.view_j >= nviews) {
      add(tag + "view index out of range");
      continue;
    }
    const PixelDomain& di = p.views[cr.view_i].geometry.domain;
    const PixelDomain& dj = p.views[cr.view_j].geometry.domain;
    if (!di.in(cr.row_i, cr.col_i))
      add(tag + "pixel " + std::to_string(cr.row_i) + "," + std::to_string(cr.col_i) +
          " is masked out in view " + std::to_string(cr.view_i));
    if (!dj.in(cr.row_j, cr.col_j))
      add(tag + "pixel " + std::to_string(cr.row_j) + "," + std::to_string(cr.col_j) +
          " is masked out in view " + std::to_string(cr.view_j));
  }
  // Duplicate detection on the canonical entry tuples.
  {
    std::vector<Correspondence> sorted = p.correspondences.entries;
    auto key = [](const Correspondence& c) {
      return std::array<int, 6>{c.view_i, c.row_i, c.col_i, c.view_j, c.row_j, c.col_j};
    };
    std::sort(sorted.begin(), sorted.end(),
              [&](const Correspondence& a, const Correspondence& b) { return key(a) < key(b); });
    for (size_t e = 1; e < sorted.size(); ++e) {
      if (sorted[e] == sorted[e - 1]) {
        add("duplicate correspondence entry (view " + std::to_string(sorted[e].view_i) + " pixel " +
            std::to_string(sorted[e].row_i) + "," + std::to_string(sorted[e].col_i) + ")");
      }
    }
  }
  return out;
}

}  // namespace refmaps
