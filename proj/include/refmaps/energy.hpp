// Huber loss, its quadratic majorant, forward-difference gradients and the
// three-term variational energy (photometric + smoothness + consistency).
#pragma once

#include <cmath>
#include <vector>

#include "refmaps/core.hpp"

namespace refmaps {

// Reflectance maps and lighting vectors indexed [channel][view].
using RhoMaps = std::vector<std::vector<ScalarField>>;
using SigmaSet = std::vector<std::vector<LightingVector>>;

struct SolverState {
  RhoMaps rho;
  SigmaSet sigma;
};

struct EnergyBreakdown {
  double photometric = 0.0;
  double smoothness = 0.0;   // includes the lambda factor
  double consistency = 0.0;  // includes the mu factor
  double total = 0.0;
};

// Huber loss: quadratic within delta of zero, linear beyond.
inline double huber(double x, double delta) {
  const double ax = std::abs(x);
  if (ax <= delta) return x * x / (2.0 * delta);
  return ax - delta / 2.0;
}

// Quadratic majorant of the Huber loss anchored at x0: touches huber at x0
// and dominates it everywhere. Its curvature 1/max(delta,|x0|) is the IRLS
// weight used by the solver.
inline double huber_majorant(double x, double x0, double delta) {
  const double ax0 = std::abs(x0);
  if (ax0 <= delta) return x * x / (2.0 * delta);
  return x * x / (2.0 * ax0) + ax0 / 2.0 - delta / 2.0;
}

inline double irls_weight(double x0, double delta) {
  return 1.0 / std::max(delta, std::abs(x0));
}

// Forward-difference gradient with Neumann conditions at mask boundaries:
// a component is zero whenever the forward neighbor is masked out.
struct GradientField {
  PixelDomain domain;
  std::vector<double> dx;
  std::vector<double> dy;
};

inline GradientField grad_forward(const ScalarField& f) {
  GradientField g{f.domain, std::vector<double>(f.domain.size(), 0.0),
                  std::vector<double>(f.domain.size(), 0.0)};
  const PixelDomain& dom = f.domain;
  for (int r = 0; r < dom.height; ++r) {
    for (int c = 0; c < dom.width; ++c) {
      if (!dom.in(r, c)) continue;
      const int i = dom.index(r, c);
      if (dom.in(r, c + 1)) g.dx[i] = f.values[dom.index(r, c + 1)] - f.values[i];
      if (dom.in(r + 1, c)) g.dy[i] = f.values[dom.index(r + 1, c)] - f.values[i];
    }
  }
  return g;
}

namespace detail {

inline void check_state_dims(const RhoMaps& rho, const SigmaSet& sigma, const MultiViewProblem& p) {
  if (static_cast<int>(rho.size()) != p.channels || static_cast<int>(sigma.size()) != p.channels)
    throw ValidationError("state channel count does not match problem");
  for (int ch = 0; ch < p.channels; ++ch) {
    if (rho[ch].size() != p.views.size() || sigma[ch].size() != p.views.size())
      throw ValidationError("state view count does not match problem");
    for (size_t v = 0; v < p.views.size(); ++v) {
      if (!(rho[ch][v].domain == p.views[v].geometry.domain))
        throw ValidationError("reflectance domain does not match problem geometry");
    }
  }
}

}  // namespace detail

// Evaluates the relaxed variational energy. Summation order is fixed
// (channel, view, row, column; correspondence entries in stored order) so
// totals are bit-reproducible. All accumulation is in double.
inline EnergyBreakdown eval_energy(const SolverState& state, const MultiViewProblem& p,
                                   const SolverConfig& cfg) {
  detail::check_state_dims(state.rho, state.sigma, p);
  const double delta = cfg.delta;

  double photo = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (size_t v = 0; v < p.views.size(); ++v) {
      const ScalarField& rho = state.rho[ch][v];
      const ScalarField& img = p.views[v].images[ch];
      const GeometricField& geo = p.views[v].geometry;
      const PixelDomain& dom = geo.domain;
      const LightingVector& sig = state.sigma[ch][v];
      for (int r = 0; r < dom.height; ++r) {
        for (int c = 0; c < dom.width; ++c) {
          if (!dom.in(r, c)) continue;
          const double shading = dot9(sig, geo.at(r, c));
          photo += huber(rho.at(r, c) * shading - img.at(r, c), delta);
        }
      }
    }
  }

  double smooth_raw = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (size_t v = 0; v < p.views.size(); ++v) {
      const ScalarField& rho = state.rho[ch][v];
      const PixelDomain& dom = rho.domain;
      for (int r = 0; r < dom.height; ++r) {
        for (int c = 0; c < dom.width; ++c) {
          if (!dom.in(r, c)) continue;
          const double fv = rho.at(r, c);
          const double gx = dom.in(r, c + 1) ? rho.at(r, c + 1) - fv : 0.0;
          const double gy = dom.in(r + 1, c) ? rho.at(r + 1, c) - fv : 0.0;
          smooth_raw += huber(gx, delta);
          smooth_raw += huber(gy, delta);
        }
      }
    }
  }

  double consist_raw = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (const Correspondence& e : p.correspondences.entries) {
      const double d =
          state.rho[ch][e.view_i].at(e.row_i, e.col_i) - state.rho[ch][e.view_j].at(e.row_j, e.col_j);
      consist_raw += huber(d, delta);
    }
  }

  EnergyBreakdown out;
  out.photometric = photo;
  out.smoothness = cfg.lambda * smooth_raw;
  out.consistency = cfg.mu * consist_raw;
  out.total = out.photometric + out.smoothness + out.consistency;
  return out;
}

// Majorant of the energy in rho, anchored at the previous reflectance maps
// with the lighting frozen. Every Huber term becomes its quadratic majorant
// anchored at the corresponding anchor residual / gradient / difference.
inline double eval_majorant_rho(const RhoMaps& rho, const RhoMaps& anchor, const SigmaSet& sigma,
                                const MultiViewProblem& p, const SolverConfig& cfg) {
  detail::check_state_dims(rho, sigma, p);
  detail::check_state_dims(anchor, sigma, p);
  const double delta = cfg.delta;

  double photo = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (size_t v = 0; v < p.views.size(); ++v) {
      const ScalarField& img = p.views[v].images[ch];
      const GeometricField& geo = p.views[v].geometry;
      const PixelDomain& dom = geo.domain;
      const LightingVector& sig = sigma[ch][v];
      for (int r = 0; r < dom.height; ++r) {
        for (int c = 0; c < dom.width; ++c) {
          if (!dom.in(r, c)) continue;
          const double shading = dot9(sig, geo.at(r, c));
          const double res = rho[ch][v].at(r, c) * shading - img.at(r, c);
          const double res0 = anchor[ch][v].at(r, c) * shading - img.at(r, c);
          photo += huber_majorant(res, res0, delta);
        }
      }
    }
  }

  double smooth_raw = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (size_t v = 0; v < p.views.size(); ++v) {
      const ScalarField& f = rho[ch][v];
      const ScalarField& f0 = anchor[ch][v];
      const PixelDomain& dom = f.domain;
      for (int r = 0; r < dom.height; ++r) {
        for (int c = 0; c < dom.width; ++c) {
          if (!dom.in(r, c)) continue;
          const bool right = dom.in(r, c + 1);
          const bool down = dom.in(r + 1, c);
          const double gx = right ? f.at(r, c + 1) - f.at(r, c) : 0.0;
          const double gy = down ? f.at(r + 1, c) - f.at(r, c) : 0.0;
          const double gx0 = right ? f0.at(r, c + 1) - f0.at(r, c) : 0.0;
          const double gy0 = down ? f0.at(r + 1, c) - f0.at(r, c) : 0.0;
          smooth_raw += huber_majorant(gx, gx0, delta);
          smooth_raw += huber_majorant(gy, gy0, delta);
        }
      }
    }
  }

  double consist_raw = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (const Correspondence& e : p.correspondences.entries) {
      const double d = rho[ch][e.view_i].at(e.row_i, e.col_i) - rho[ch][e.view_j].at(e.row_j, e.col_j);
      const double d0 =
          anchor[ch][e.view_i].at(e.row_i, e.col_i) - anchor[ch][e.view_j].at(e.row_j, e.col_j);
      consist_raw += huber_majorant(d, d0, delta);
    }
  }

  return photo + cfg.lambda * smooth_raw + cfg.mu * consist_raw;
}

// Majorant of the energy in sigma at fixed reflectance. Only the photometric
// term depends on sigma; smoothness and consistency enter as Huber values of
// the fixed rho and are constants of the minimization.
inline double eval_majorant_sigma(const SigmaSet& sigma, const SigmaSet& anchor_sigma, const RhoMaps& rho,
                                  const MultiViewProblem& p, const SolverConfig& cfg) {
  detail::check_state_dims(rho, sigma, p);
  detail::check_state_dims(rho, anchor_sigma, p);
  const double delta = cfg.delta;

  double photo = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (size_t v = 0; v < p.views.size(); ++v) {
      const ScalarField& img = p.views[v].images[ch];
      const GeometricField& geo = p.views[v].geometry;
      const PixelDomain& dom = geo.domain;
      for (int r = 0; r < dom.height; ++r) {
        for (int c = 0; c < dom.width; ++c) {
          if (!dom.in(r, c)) continue;
          const Vec9& nu = geo.at(r, c);
          const double rv = rho[ch][v].at(r, c);
          const double res = rv * dot9(sigma[ch][v], nu) - img.at(r, c);
          const double res0 = rv * dot9(anchor_sigma[ch][v], nu) - img.at(r, c);
          photo += huber_majorant(res, res0, delta);
        }
      }
    }
  }

  double smooth_raw = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (size_t v = 0; v < p.views.size(); ++v) {
      const ScalarField& f = rho[ch][v];
      const PixelDomain& dom = f.domain;
      for (int r = 0; r < dom.height; ++r) {
        for (int c = 0; c < dom.width; ++c) {
          if (!dom.in(r, c)) continue;
          const double fv = f.at(r, c);
          const double gx = dom.in(r, c + 1) ? f.at(r, c + 1) - fv : 0.0;
          const double gy = dom.in(r + 1, c) ? f.at(r + 1, c) - fv : 0.0;
          smooth_raw += huber(gx, delta);
          smooth_raw += huber(gy, delta);
        }
      }
    }
  }

  double consist_raw = 0.0;
  for (int ch = 0; ch < p.channels; ++ch) {
    for (const Correspondence& e : p.correspondences.entries) {
      const double d = rho[ch][e.view_i].at(e.row_i, e.col_i) - rho[ch][e.view_j].at(e.row_j, e.col_j);
      consist_raw += huber(d, delta);
    }
  }

  return photo + cfg.lambda * smooth_raw + cfg.mu * consist_raw;
}

}  // namespace refmaps
