// Alternating majorization-minimization solver: trivial initialization, the
// joint rho-update (one sparse weighted least-squares solve per channel via
// preconditioned conjugate gradient on the normal equations), per-view
// 9-parameter sigma-updates via pseudo-inverse, stopping logic and tracing.
#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <chrono>
#include <functional>
#include <mutex>
#include <thread>
#include <utility>
#include <vector>

#include "refmaps/core.hpp"
#include "refmaps/energy.hpp"

namespace refmaps {

struct TraceRecord {
  int iteration = 0;
  EnergyBreakdown energy;
  double rel_change = 0.0;
  int cg_iterations = 0;
  double seconds = 0.0;             // wall time since solve start
  bool sigma_rank_deficient = false;
};

struct SolverTrace {
  std::vector<TraceRecord> records;
};

struct Solution {
  RhoMaps reflectance;  // [channel][view]
  SigmaSet lighting;    // [channel][view]
  SolverTrace trace;
  bool converged = false;
};

using ProgressObserver = std::function<void(const TraceRecord&)>;

// Trivial solution of the non-regularized problem: diffuse lighting and the
// images themselves as reflectance. Since the 4th component of every lifted
// normal is 1, the photometric residual is exactly zero at this state.
inline SolverState init_trivial(const MultiViewProblem& p) {
  SolverState s;
  s.rho.resize(p.channels);
  s.sigma.resize(p.channels);
  for (int ch = 0; ch < p.channels; ++ch) {
    s.rho[ch].reserve(p.views.size());
    s.sigma[ch].assign(p.views.size(), diffuse_lighting());
    for (const View& v : p.views) s.rho[ch].push_back(v.images[ch]);
  }
  return s;
}

// Flattened unknown indexing shared by all channels: one unknown per
// masked-in pixel per view, views concatenated, pixels in row-major order.
struct SolverWorkspace {
  int total_unknowns = 0;
  std::vector<int> view_offset;               // per view
  std::vector<std::vector<int>> unknown_at;   // per view, W*H, -1 when masked out
  std::vector<std::vector<int>> pixel_of;     // per view, linear pixel index per local unknown
  // Forward-difference pairs (p, q) as global unknown indices, q the right or
  // down neighbor; ordered view, row, column, x before y.
  std::vector<std::pair<int, int>> grad_pairs;
  std::vector<std::pair<int, int>> view_grad_range;  // [begin,end) into grad_pairs per view
  std::vector<std::pair<int, int>> corr_pairs;       // correspondence entries as unknown indices
};

inline SolverWorkspace build_workspace(const MultiViewProblem& p) {
  SolverWorkspace ws;
  const int nviews = static_cast<int>(p.views.size());
  ws.view_offset.resize(nviews);
  ws.unknown_at.resize(nviews);
  ws.pixel_of.resize(nviews);
  int next = 0;
  for (int v = 0; v < nviews; ++v) {
    const PixelDomain& dom = p.views[v].geometry.domain;
    ws.view_offset[v] = next;
    ws.unknown_at[v].assign(dom.size(), -1);
    for (int r = 0; r < dom.height; ++r) {
      for (int c = 0; c < dom.width; ++c) {
        if (!dom.in(r, c)) continue;
        ws.unknown_at[v][dom.index(r, c)] = next;
        ws.pixel_of[v].push_back(dom.index(r, c));
        ++next;
      }
    }
  }
  ws.total_unknowns = next;

  ws.view_grad_range.resize(nviews);
  for (int v = 0; v < nviews; ++v) {
    const PixelDomain& dom = p.views[v].geometry.domain;
    const int begin = static_cast<int>(ws.grad_pairs.size());
    for (int r = 0; r < dom.height; ++r) {
      for (int c = 0; c < dom.width; ++c) {
        if (!dom.in(r, c)) continue;
        const int u = ws.unknown_at[v][dom.index(r, c)];
        if (dom.in(r, c + 1)) ws.grad_pairs.emplace_back(u, ws.unknown_at[v][dom.index(r, c + 1)]);
        if (dom.in(r + 1, c)) ws.grad_pairs.emplace_back(u, ws.unknown_at[v][dom.index(r + 1, c)]);
      }
    }
    ws.view_grad_range[v] = {begin, static_cast<int>(ws.grad_pairs.size())};
  }

  ws.corr_pairs.reserve(p.correspondences.entries.size());
  for (const Correspondence& e : p.correspondences.entries) {
    const PixelDomain& di = p.views[e.view_i].geometry.domain;
    const PixelDomain& dj = p.views[e.view_j].geometry.domain;
    ws.corr_pairs.emplace_back(ws.unknown_at[e.view_i][di.index(e.row_i, e.col_i)],
                               ws.unknown_at[e.view_j][dj.index(e.row_j, e.col_j)]);
  }
  return ws;
}

inline std::vector<double> flatten_rho(const RhoMaps& rho, int channel, const SolverWorkspace& ws,
                                       const MultiViewProblem& p) {
  std::vector<double> x(ws.total_unknowns);
  for (size_t v = 0; v < p.views.size(); ++v) {
    const ScalarField& f = rho[channel][v];
    const auto& pix = ws.pixel_of[v];
    for (size_t k = 0; k < pix.size(); ++k) x[ws.view_offset[v] + k] = f.values[pix[k]];
  }
  return x;
}

inline void unflatten_rho(const std::vector<double>& x, int channel, const SolverWorkspace& ws,
                          const MultiViewProblem& p, RhoMaps& rho) {
  for (size_t v = 0; v < p.views.size(); ++v) {
    ScalarField& f = rho[channel][v];
    const auto& pix = ws.pixel_of[v];
    for (size_t k = 0; k < pix.size(); ++k) f.values[pix[k]] = x[ws.view_offset[v] + k];
  }
}

// Normal equations H x = b of the quadratic rho-majorant for one channel,
// kept matrix-free: H is applied term by term. diag(H) doubles as the Jacobi
// preconditioner.
struct RhoNormalEquations {
  int n = 0;
  std::vector<double> photo_coef;  // w * a^2 per unknown
  std::vector<double> rhs;         // w * a * I per unknown
  std::vector<double> grad_weight;  // lambda / max(delta, |anchor gradient|) per pair
  std::vector<double> corr_weight;  // mu / max(delta, |anchor difference|) per entry
  const SolverWorkspace* ws = nullptr;
  int threads = 1;

  std::vector<double> diagonal() const {
    std::vector<double> d = photo_coef;
    for (size_t k = 0; k < ws->grad_pairs.size(); ++k) {
      d[ws->grad_pairs[k].first] += grad_weight[k];
      d[ws->grad_pairs[k].second] += grad_weight[k];
    }
    for (size_t k = 0; k < ws->corr_pairs.size(); ++k) {
      d[ws->corr_pairs[k].first] += corr_weight[k];
      d[ws->corr_pairs[k].second] += corr_weight[k];
    }
    return d;
  }

  // out = H x. The photometric and gradient phases touch only view-local
  // entries and may run per view in parallel; the result does not depend on
  // the thread count because each view's terms keep their sequential order.
  void apply(const std::vector<double>& x, std::vector<double>& out) const {
    const int nviews = static_cast<int>(ws->view_offset.size());
    auto view_part = [&](int v) {
      const int begin = ws->view_offset[v];
      const int end = (v + 1 < nviews) ? ws->view_offset[v + 1] : n;
      for (int u = begin; u < end; ++u) out[u] = photo_coef[u] * x[u];
      const auto [gb, ge] = ws->view_grad_range[v];
      for (int k = gb; k < ge; ++k) {
        const auto [up, uq] = ws->grad_pairs[k];
        const double d = grad_weight[k] * (x[uq] - x[up]);
        out[up] -= d;
        out[uq] += d;
      }
    };
    if (threads > 1 && nviews > 1) {
      std::vector<std::thread> pool;
      std::atomic<int> cursor{0};
      const int nt = std::min(threads, nviews);
      for (int t = 0; t < nt; ++t) {
        pool.emplace_back([&]() {
          for (int v = cursor.fetch_add(1); v < nviews; v = cursor.fetch_add(1)) view_part(v);
        });
      }
      for (auto& th : pool) th.join();
    } else {
      for (int v = 0; v < nviews; ++v) view_part(v);
    }
    for (size_t k = 0; k < ws->corr_pairs.size(); ++k) {
      const auto [ui, uj] = ws->corr_pairs[k];
      const double d = corr_weight[k] * (x[ui] - x[uj]);
      out[ui] += d;
      out[uj] -= d;
    }
  }
};

// Assembles the rho-update normal equations for one channel, with IRLS
// weights 1/max(delta, |anchor value|) taken at the current state.
inline RhoNormalEquations build_rho_normal_equations(const SolverState& state, const MultiViewProblem& p,
                                                     const SolverConfig& cfg, int channel,
                                                     const SolverWorkspace& ws) {
  RhoNormalEquations sys;
  sys.n = ws.total_unknowns;
  sys.ws = &ws;
  sys.threads = cfg.threads;
  sys.photo_coef.assign(sys.n, 0.0);
  sys.rhs.assign(sys.n, 0.0);

  for (size_t v = 0; v < p.views.size(); ++v) {
    const GeometricField& geo = p.views[v].geometry;
    const ScalarField& img = p.views[v].images[channel];
    const ScalarField& rho0 = state.rho[channel][v];
    const LightingVector& sig = state.sigma[channel][v];
    const auto& pix = ws.pixel_of[v];
    for (size_t k = 0; k < pix.size(); ++k) {
      const int i = pix[k];
      const double a = dot9(sig, geo.nu[i]);
      const double r0 = rho0.values[i] * a - img.values[i];
      const double w = irls_weight(r0, cfg.delta);
      const int u = ws.view_offset[v] + static_cast<int>(k);
      sys.photo_coef[u] = w * a * a;
      sys.rhs[u] = w * a * img.values[i];
    }
  }

  sys.grad_weight.resize(ws.grad_pairs.size());
  {
    size_t k = 0;
    for (size_t v = 0; v < p.views.size(); ++v) {
      const ScalarField& rho0 = state.rho[channel][v];
      const PixelDomain& dom = rho0.domain;
      for (int r = 0; r < dom.height; ++r) {
        for (int c = 0; c < dom.width; ++c) {
          if (!dom.in(r, c)) continue;
          if (dom.in(r, c + 1))
            sys.grad_weight[k++] = cfg.lambda * irls_weight(rho0.at(r, c + 1) - rho0.at(r, c), cfg.delta);
          if (dom.in(r + 1, c))
            sys.grad_weight[k++] = cfg.lambda * irls_weight(rho0.at(r + 1, c) - rho0.at(r, c), cfg.delta);
        }
      }
    }
  }

  sys.corr_weight.resize(ws.corr_pairs.size());
  for (size_t k = 0; k < p.correspondences.entries.size(); ++k) {
    const Correspondence& e = p.correspondences.entries[k];
    const double d0 =
        state.rho[channel][e.view_i].at(e.row_i, e.col_i) - state.rho[channel][e.view_j].at(e.row_j, e.col_j);
    sys.corr_weight[k] = cfg.mu * irls_weight(d0, cfg.delta);
  }
  return sys;
}

namespace detail {

inline double dot_vec(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Jacobi-preconditioned CG on the normal equations, warm-started at x.
// Returns the iteration count. The quadratic objective never increases, so
// the MM descent guarantee survives inexact solves.
inline int pcg_solve(const RhoNormalEquations& sys, const SolverConfig& cfg, std::vector<double>& x) {
  const int n = sys.n;
  int max_iters = cfg.cg_max_iters;
  if (max_iters == 0) max_iters = 10 * static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n)))) + 10;

  const double bnorm = std::sqrt(dot_vec(sys.rhs, sys.rhs));
  if (bnorm == 0.0) {
    x.assign(n, 0.0);
    return 0;
  }

  std::vector<double> diag = sys.diagonal();
  for (double& d : diag) d = (d > 1e-300) ? d : 1e-300;

  std::vector<double> r(n), z(n), pdir(n), q(n);
  sys.apply(x, q);
  for (int i = 0; i < n; ++i) r[i] = sys.rhs[i] - q[i];
  for (int i = 0; i < n; ++i) z[i] = r[i] / diag[i];
  pdir = z;
  double rz = dot_vec(r, z);

  int it = 0;
  while (it < max_iters) {
    const double rnorm = std::sqrt(dot_vec(r, r));
    if (!std::isfinite(rnorm))
      throw NumericalError("CG breakdown: non-finite residual at iteration " + std::to_string(it));
    if (rnorm <= cfg.cg_tol * bnorm) break;
    sys.apply(pdir, q);
    const double pq = dot_vec(pdir, q);
    if (!std::isfinite(pq))
      throw NumericalError("CG breakdown: non-finite curvature at iteration " + std::to_string(it));
    if (pq <= 0.0) break;  // flat or null direction; nothing left to gain
    const double alpha = rz / pq;
    for (int i = 0; i < n; ++i) x[i] += alpha * pdir[i];
    for (int i = 0; i < n; ++i) r[i] -= alpha * q[i];
    for (int i = 0; i < n; ++i) z[i] = r[i] / diag[i];
    const double rz_new = dot_vec(r, z);
    const double beta = rz_new / rz;
    rz = rz_new;
    for (int i = 0; i < n; ++i) pdir[i] = z[i] + beta * pdir[i];
    ++it;
  }
  return it;
}

}  // namespace detail

struct RhoUpdateResult {
  RhoMaps rho;
  int cg_iterations = 0;  // summed over channels
};

// Minimizes the rho-majorant anchored at the current state, all views
// jointly (the consistency term couples them), one CG solve per channel.
inline RhoUpdateResult update_rho(const SolverState& state, const MultiViewProblem& p,
                                  const SolverConfig& cfg, const SolverWorkspace& ws) {
  RhoUpdateResult out;
  out.rho = state.rho;
  for (int ch = 0; ch < p.channels; ++ch) {
    RhoNormalEquations sys = build_rho_normal_equations(state, p, cfg, ch, ws);
    std::vector<double> x = flatten_rho(state.rho, ch, ws, p);
    out.cg_iterations += detail::pcg_solve(sys, cfg, x);
    unflatten_rho(x, ch, ws, p, out.rho);
  }
  return out;
}

inline RhoUpdateResult update_rho(const SolverState& state, const MultiViewProblem& p,
                                  const SolverConfig& cfg) {
  const SolverWorkspace ws = build_workspace(p);
  return update_rho(state, p, cfg, ws);
}

struct SigmaUpdateResult {
  SigmaSet sigma;
  bool rank_deficient = false;  // any view's design matrix was rank-deficient
};

// Relative eigenvalue cutoff below which a direction of the 9x9 normal
// matrix is treated as null (minimum-norm solution on the remainder).
inline constexpr double kSigmaRankTol = 1e-10;

// Minimizes the sigma-majorant: one independent 9-parameter weighted
// least-squares problem per view and channel, solved by pseudo-inverse.
// state.rho holds the just-updated reflectance; state.sigma is the anchor
// whose residuals provide the IRLS weights.
inline SigmaUpdateResult update_sigma(const SolverState& state, const MultiViewProblem& p,
                                      const SolverConfig& cfg) {
  using Mat9 = Eigen::Matrix<double, 9, 9>;
  using EVec9 = Eigen::Matrix<double, 9, 1>;

  SigmaUpdateResult out;
  out.sigma = state.sigma;
  const int nviews = static_cast<int>(p.views.size());

  std::vector<char> rank_flag(static_cast<size_t>(p.channels) * nviews, 0);
  auto solve_one = [&](int ch, int v) {
    const GeometricField& geo = p.views[v].geometry;
    const ScalarField& img = p.views[v].images[ch];
    const ScalarField& rho = state.rho[ch][v];
    const LightingVector& sig0 = state.sigma[ch][v];
    const PixelDomain& dom = geo.domain;

    if (dom.masked_count() < 1) throw NumericalError("degenerate view: no masked-in pixels");

    Mat9 H = Mat9::Zero();
    EVec9 g = EVec9::Zero();
    for (int r = 0; r < dom.height; ++r) {
      for (int c = 0; c < dom.width; ++c) {
        if (!dom.in(r, c)) continue;
        const Vec9& nu = geo.at(r, c);
        const double rv = rho.at(r, c);
        const double res0 = rv * dot9(sig0, nu) - img.at(r, c);
        const double w = irls_weight(res0, cfg.delta);
        EVec9 row;
        for (int k = 0; k < 9; ++k) row[k] = nu[k];
        H.noalias() += (w * rv * rv) * row * row.transpose();
        g.noalias() += (w * rv * img.at(r, c)) * row;
      }
    }

    Eigen::SelfAdjointEigenSolver<Mat9> eig(H);
    const auto& evals = eig.eigenvalues();
    const auto& evecs = eig.eigenvectors();
    const double emax = evals.maxCoeff();
    const double cutoff = emax * kSigmaRankTol;
    EVec9 sol = EVec9::Zero();
    int rank = 0;
    if (emax > 0.0) {
      for (int k = 0; k < 9; ++k) {
        if (evals[k] > cutoff) {
          sol += evecs.col(k) * (evecs.col(k).dot(g) / evals[k]);
          ++rank;
        }
      }
    }
    if (rank < 9) rank_flag[static_cast<size_t>(ch) * nviews + v] = 1;
    for (int k = 0; k < 9; ++k) out.sigma[ch][v][k] = sol[k];
  };

  if (cfg.threads > 1 && p.channels * nviews > 1) {
    std::atomic<int> cursor{0};
    const int total = p.channels * nviews;
    std::vector<std::thread> pool;
    const int nt = std::min(cfg.threads, total);
    std::exception_ptr first_error;
    std::mutex err_mutex;
    for (int t = 0; t < nt; ++t) {
      pool.emplace_back([&]() {
        try {
          for (int i = cursor.fetch_add(1); i < total; i = cursor.fetch_add(1))
            solve_one(i / nviews, i % nviews);
        } catch (...) {
          std::lock_guard<std::mutex> lock(err_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
  } else {
    for (int ch = 0; ch < p.channels; ++ch)
      for (int v = 0; v < nviews; ++v) solve_one(ch, v);
  }

  for (char f : rank_flag) out.rank_deficient = out.rank_deficient || (f != 0);
  return out;
}

// Rescales each channel so the maximum reflectance over all views is 1 and
// applies the reciprocal to the lighting, fixing the global scale ambiguity.
inline void normalize_state(SolverState& s, const MultiViewProblem& p) {
  for (int ch = 0; ch < p.channels; ++ch) {
    double m = 0.0;
    for (size_t v = 0; v < p.views.size(); ++v) {
      const ScalarField& f = s.rho[ch][v];
      const PixelDomain& dom = f.domain;
      for (int r = 0; r < dom.height; ++r)
        for (int c = 0; c < dom.width; ++c)
          if (dom.in(r, c)) m = std::max(m, f.at(r, c));
    }
    if (!(m > 0.0) || !std::isfinite(m)) continue;
    for (size_t v = 0; v < p.views.size(); ++v) {
      ScalarField& f = s.rho[ch][v];
      const PixelDomain& dom = f.domain;
      for (int r = 0; r < dom.height; ++r)
        for (int c = 0; c < dom.width; ++c)
          if (dom.in(r, c)) f.at(r, c) /= m;
      for (int k = 0; k < 9; ++k) s.sigma[ch][v][k] *= m;
    }
  }
}

// Runs the full alternation: trivial init, then rho-update followed by
// sigma-update until the relative energy change drops below tolerance or the
// iteration budget is exhausted.
inline Solution solve(const MultiViewProblem& p, const SolverConfig& cfg,
                      const ProgressObserver& observer = {}) {
  validate_config(cfg);
  {
    const auto violations = validate_problem(p);
    if (!violations.empty()) throw ValidationError("invalid problem: " + violations.front().message);
  }

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0]() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  SolverState state = init_trivial(p);
  const SolverWorkspace ws = build_workspace(p);

  Solution sol;
  EnergyBreakdown prev = eval_energy(state, p, cfg);
  TraceRecord rec{0, prev, 0.0, 0, elapsed(), false};
  sol.trace.records.push_back(rec);
  if (observer) observer(rec);

  for (int k = 1; k <= cfg.max_outer_iters; ++k) {
    if (prev.total == 0.0) {
      sol.converged = true;  // nothing left to minimize
      break;
    }
    RhoUpdateResult rres = update_rho(state, p, cfg, ws);
    state.rho = std::move(rres.rho);
    SigmaUpdateResult sres = update_sigma(state, p, cfg);
    state.sigma = std::move(sres.sigma);

    const EnergyBreakdown e = eval_energy(state, p, cfg);
    const double rel = std::abs(e.total - prev.total) / prev.total;
    rec = TraceRecord{k, e, rel, rres.cg_iterations, elapsed(), sres.rank_deficient};
    sol.trace.records.push_back(rec);
    if (observer) observer(rec);
    prev = e;
    if (rel < cfg.rel_energy_tol) {
      sol.converged = true;
      break;
    }
  }

  if (cfg.normalize_output) normalize_state(state, p);
  sol.reflectance = std::move(state.rho);
  sol.lighting = std::move(state.sigma);
  return sol;
}

// Least-squares alignment of estimated reflectance maps to a reference with
// one shared scale factor: kappa = <est, ref> / <est, est>.
inline std::pair<std::vector<ScalarField>, double> align_scale(const std::vector<ScalarField>& estimated,
                                                               const std::vector<ScalarField>& reference) {
  if (estimated.size() != reference.size())
    throw ValidationError("align_scale: view count mismatch");
  double ee = 0.0, er = 0.0;
  for (size_t v = 0; v < estimated.size(); ++v) {
    if (!(estimated[v].domain == reference[v].domain))
      throw ValidationError("align_scale: domain mismatch in view " + std::to_string(v));
    const PixelDomain& dom = estimated[v].domain;
    for (int r = 0; r < dom.height; ++r) {
      for (int c = 0; c < dom.width; ++c) {
        if (!dom.in(r, c)) continue;
        const double e = estimated[v].at(r, c);
        ee += e * e;
        er += e * reference[v].at(r, c);
      }
    }
  }
  if (ee == 0.0) throw NumericalError("align_scale: estimated maps are identically zero");
  const double kappa = er / ee;
  std::vector<ScalarField> scaled = estimated;
  for (auto& f : scaled) {
    const PixelDomain& dom = f.domain;
    for (int r = 0; r < dom.height; ++r)
      for (int c = 0; c < dom.width; ++c)
        if (dom.in(r, c)) f.at(r, c) *= kappa;
  }
  return {std::move(scaled), kappa};
}

}  // namespace refmaps
