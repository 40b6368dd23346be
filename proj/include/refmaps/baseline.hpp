// Surface-domain least-squares baseline: the nearest-Kronecker-product
// factorization under full visibility, solved by SVD, plus the trivial
// diffuse-lighting solution. Used as a sanity oracle and as the witness for
// the ill-posedness of the fixed-lighting problem.
#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <utility>

#include "refmaps/core.hpp"

namespace refmaps {

// n surface samples seen by m views: lifted geometry per sample, graylevels
// and a visibility table.
struct SurfaceSamples {
  Eigen::MatrixXd nu;           // n x 9
  Eigen::MatrixXd intensities;  // n x m
  Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> visibility;  // n x m

  int samples() const { return static_cast<int>(nu.rows()); }
  int views() const { return static_cast<int>(intensities.cols()); }

  void check() const {
    if (nu.rows() < 1 || intensities.cols() < 1) throw ValidationError("SurfaceSamples: need n >= 1, m >= 1");
    if (nu.cols() != 9) throw ValidationError("SurfaceSamples: nu must have 9 columns");
    if (intensities.rows() != nu.rows())
      throw ValidationError("SurfaceSamples: intensity rows do not match nu rows");
    if (visibility.rows() != intensities.rows() || visibility.cols() != intensities.cols())
      throw ValidationError("SurfaceSamples: visibility dimensions do not match intensities");
  }
};

struct KroneckerFactorization {
  Eigen::VectorXd rho;                     // n, with ||rho|| = 1
  Eigen::Matrix<double, 9, Eigen::Dynamic> S;  // 9 x m lighting columns
  bool dominant_tie = false;               // top two singular values coincide
  double singular_gap = 0.0;               // sigma1 - sigma2
};

// Residual of a candidate factorization against the Lambertian forward
// model: || N (rho (x) S) - I ||_F, i.e. per sample j and view i the misfit
// rho_j * nu_j . S_col_i - I_j_i.
inline double kronecker_residual(const SurfaceSamples& samples, const Eigen::VectorXd& rho,
                                 const Eigen::Matrix<double, 9, Eigen::Dynamic>& S) {
  double sq = 0.0;
  for (int j = 0; j < samples.samples(); ++j) {
    for (int i = 0; i < samples.views(); ++i) {
      const double model = rho[j] * samples.nu.row(j).dot(S.col(i));
      const double d = model - samples.intensities(j, i);
      sq += d * d;
    }
  }
  return std::sqrt(sq);
}

// Nearest-Kronecker-product solution under full visibility: B = N^+ I with
// the blockwise pseudo-inverse nu_j / ||nu_j||^2, rearranged so row j holds
// vec of the j-th 9 x m block, then factorized by the dominant singular
// triplet. Scale convention: ||rho|| = 1 and the first nonzero component of
// rho is positive.
inline KroneckerFactorization solve_kronecker(const SurfaceSamples& samples) {
  samples.check();
  const int n = samples.samples();
  const int m = samples.views();

  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i)
      if (!samples.visibility(j, i))
        throw ValidationError("solve_kronecker: partial visibility is not supported");

  // Rearranged matrix: row j = vec(nu_j I_j^T / ||nu_j||^2), column-major vec.
  Eigen::MatrixXd R(n, 9 * m);
  for (int j = 0; j < n; ++j) {
    const double nn = samples.nu.row(j).squaredNorm();
    if (nn == 0.0) throw ValidationError("solve_kronecker: zero nu row " + std::to_string(j));
    for (int i = 0; i < m; ++i) {
      const double scale = samples.intensities(j, i) / nn;
      for (int k = 0; k < 9; ++k) R(j, i * 9 + k) = scale * samples.nu(j, k);
    }
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(R, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();

  KroneckerFactorization out;
  out.rho = svd.matrixU().col(0);
  out.S.resize(9, m);
  const Eigen::VectorXd v1 = svd.matrixV().col(0) * sv[0];
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < 9; ++k) out.S(k, i) = v1[i * 9 + k];

  for (int j = 0; j < n; ++j) {
    if (out.rho[j] != 0.0) {
      if (out.rho[j] < 0.0) {
        out.rho = -out.rho;
        out.S = -out.S;
      }
      break;
    }
  }

  if (sv.size() > 1) {
    out.singular_gap = sv[0] - sv[1];
    out.dominant_tie = out.singular_gap <= 1e-12 * sv[0];
  }
  return out;
}

// The trivial interpretation: completely diffuse lighting in every view and
// the per-sample mean graylevel as reflectance.
inline std::pair<Eigen::VectorXd, Eigen::Matrix<double, 9, Eigen::Dynamic>> trivial_solution(
    const SurfaceSamples& samples) {
  samples.check();
  const int n = samples.samples();
  const int m = samples.views();

  Eigen::Matrix<double, 9, Eigen::Dynamic> S(9, m);
  S.setZero();
  const LightingVector diffuse = diffuse_lighting();
  for (int i = 0; i < m; ++i)
    for (int k = 0; k < 9; ++k) S(k, i) = diffuse[k];

  Eigen::VectorXd rho(n);
  for (int j = 0; j < n; ++j) rho[j] = samples.intensities.row(j).mean();
  return {std::move(rho), std::move(S)};
}

}  // namespace refmaps
