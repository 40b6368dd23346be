#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "refmaps/baseline.hpp"
#include "refmaps/rng.hpp"

using namespace refmaps;

namespace {

Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> all_visible(int n, int m) {
  return Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>::Ones(n, m);
}

Eigen::RowVector<double, 9> lifted_row(Rng& rng) {
  while (true) {
    Vec3 n{rng.normal(), rng.normal(), rng.normal()};
    const double len = norm3(n);
    if (len < 1e-3) continue;
    const Vec9 nu = lift_normal({n[0] / len, n[1] / len, n[2] / len});
    Eigen::RowVector<double, 9> row;
    for (int k = 0; k < 9; ++k) row[k] = nu[k];
    return row;
  }
}

// Instance whose blockwise-pseudo-inverse matrix is an exact Kronecker
// product: one shared geometric vector and lighting columns proportional to
// it. Returns the samples together with the generating factors.
struct Rank1Instance {
  SurfaceSamples samples;
  Eigen::VectorXd rho;
  Eigen::Matrix<double, 9, Eigen::Dynamic> S;
};

Rank1Instance make_rank1_instance(Rng& rng, int n, int m) {
  Rank1Instance inst;
  const Eigen::RowVector<double, 9> nu_bar = lifted_row(rng);
  inst.rho.resize(n);
  for (int j = 0; j < n; ++j) inst.rho[j] = rng.uniform(0.2, 2.0);
  Eigen::VectorXd sbar(m);
  for (int i = 0; i < m; ++i) sbar[i] = rng.uniform(0.5, 1.5) * (rng.uniform() < 0.2 ? -1.0 : 1.0);
  inst.S = nu_bar.transpose() * sbar.transpose();  // 9 x m, columns along nu_bar

  inst.samples.nu.resize(n, 9);
  for (int j = 0; j < n; ++j) inst.samples.nu.row(j) = nu_bar;
  inst.samples.intensities.resize(n, m);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i)
      inst.samples.intensities(j, i) = inst.rho[j] * inst.samples.nu.row(j).dot(inst.S.col(i));
  inst.samples.visibility = all_visible(n, m);
  return inst;
}

}  // namespace

TEST_CASE("solve_kronecker recovers exact rank-1 instances") {
  Rng rng(7);
  for (int t = 0; t < 20; ++t) {
    const int n = 2 + static_cast<int>(rng.below(30));
    const int m = 1 + static_cast<int>(rng.below(6));
    const Rank1Instance inst = make_rank1_instance(rng, n, m);
    const KroneckerFactorization fac = solve_kronecker(inst.samples);

    CHECK(std::abs(fac.rho.norm() - 1.0) < 1e-12);
    // Product reconstruction is scale-convention free.
    double err = 0.0;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i)
        for (int k = 0; k < 9; ++k) {
          const double d = fac.rho[j] * fac.S(k, i) - inst.rho[j] * inst.S(k, i);
          err += d * d;
        }
    CHECK(std::sqrt(err) < 1e-10);
    // rho recovered up to the documented convention.
    const Eigen::VectorXd expected_rho = inst.rho / inst.rho.norm();
    CHECK((fac.rho - expected_rho).norm() < 1e-10);
    // Exact fit of the forward model.
    CHECK(kronecker_residual(inst.samples, fac.rho, fac.S) < 1e-10);
  }
}

TEST_CASE("solve_kronecker with a single sample is exact for any geometry") {
  Rng rng(19);
  SurfaceSamples s;
  s.nu.resize(1, 9);
  s.nu.row(0) = lifted_row(rng);
  s.intensities.resize(1, 4);
  for (int i = 0; i < 4; ++i) s.intensities(0, i) = rng.uniform(-1.0, 2.0);
  s.visibility = all_visible(1, 4);

  const KroneckerFactorization fac = solve_kronecker(s);
  CHECK(fac.rho.size() == 1);
  CHECK(fac.rho[0] == Catch::Approx(1.0).margin(1e-14));
  // S equals the blockwise pseudo-inverse applied to the intensity row.
  const double nn = s.nu.row(0).squaredNorm();
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 9; ++k)
      CHECK(fac.S(k, i) == Catch::Approx(s.nu(0, k) * s.intensities(0, i) / nn).margin(1e-12));
  CHECK(kronecker_residual(s, fac.rho, fac.S) < 1e-10);
}

TEST_CASE("fixed lighting is ill-posed: the trivial solution ties the SVD fit") {
  Rng rng(31);
  const int n = 12, m = 5;
  SurfaceSamples s;
  s.nu.resize(n, 9);
  const Eigen::RowVector<double, 9> nu_bar = lifted_row(rng);
  for (int j = 0; j < n; ++j) s.nu.row(j) = nu_bar;

  // One lighting vector shared by all views.
  Eigen::VectorXd sigma(9);
  for (int k = 0; k < 9; ++k) sigma[k] = rng.uniform(-0.3, 0.3);
  sigma[3] += 1.0;
  s.intensities.resize(n, m);
  for (int j = 0; j < n; ++j) {
    const double rho = rng.uniform(0.2, 1.0);
    const double value = rho * s.nu.row(j).dot(sigma);
    for (int i = 0; i < m; ++i) s.intensities(j, i) = value;  // identical columns
  }
  s.visibility = all_visible(n, m);

  const KroneckerFactorization fac = solve_kronecker(s);
  const auto [trho, tS] = trivial_solution(s);

  // Recovered lighting columns are identical across views.
  for (int i = 1; i < m; ++i)
    for (int k = 0; k < 9; ++k) CHECK(fac.S(k, i) == Catch::Approx(fac.S(k, 0)).margin(1e-10));

  const double r_svd = kronecker_residual(s, fac.rho, fac.S);
  const double r_trivial = kronecker_residual(s, trho, tS);
  CHECK(r_svd == Catch::Approx(r_trivial).margin(1e-10));
  CHECK(r_svd < 1e-10);  // both interpretations explain the data perfectly
}

TEST_CASE("solve_kronecker minimizes the rearranged Frobenius error over sampled competitors") {
  Rng rng(43);
  for (int t = 0; t < 5; ++t) {
    const int n = 2 + static_cast<int>(rng.below(3));
    const int m = 2 + static_cast<int>(rng.below(2));
    SurfaceSamples s;
    s.nu.resize(n, 9);
    for (int j = 0; j < n; ++j) s.nu.row(j) = lifted_row(rng);
    s.intensities.resize(n, m);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) s.intensities(j, i) = rng.uniform(-1.0, 1.0);
    s.visibility = all_visible(n, m);

    // Oracle objective: distance to B = N^+ I in the Kronecker arrangement.
    auto b_error = [&](const Eigen::VectorXd& rho, const Eigen::Matrix<double, 9, Eigen::Dynamic>& S) {
      double sq = 0.0;
      for (int j = 0; j < n; ++j) {
        const double nn = s.nu.row(j).squaredNorm();
        for (int i = 0; i < m; ++i)
          for (int k = 0; k < 9; ++k) {
            const double bjk = s.nu(j, k) * s.intensities(j, i) / nn;
            const double d = rho[j] * S(k, i) - bjk;
            sq += d * d;
          }
      }
      return sq;
    };

    const KroneckerFactorization fac = solve_kronecker(s);
    const double best = b_error(fac.rho, fac.S);

    for (int probe = 0; probe < 200; ++probe) {
      Eigen::VectorXd rho(n);
      Eigen::Matrix<double, 9, Eigen::Dynamic> S(9, m);
      if (probe % 2 == 0) {
        for (int j = 0; j < n; ++j) rho[j] = rng.uniform(-1.5, 1.5);
        for (int i = 0; i < m; ++i)
          for (int k = 0; k < 9; ++k) S(k, i) = rng.uniform(-1.5, 1.5);
      } else {  // perturbations of the found optimum
        rho = fac.rho;
        S = fac.S;
        for (int j = 0; j < n; ++j) rho[j] += rng.uniform(-0.05, 0.05);
        for (int i = 0; i < m; ++i)
          for (int k = 0; k < 9; ++k) S(k, i) += rng.uniform(-0.05, 0.05);
      }
      CHECK(b_error(rho, S) >= best - 1e-9);
    }

    // The trivial solution is itself a structured competitor.
    const auto [trho, tS] = trivial_solution(s);
    CHECK(b_error(trho, tS) >= best - 1e-9);
  }
}

TEST_CASE("trivial_solution") {
  SECTION("identical columns reproduce the column with zero residual") {
    Rng rng(53);
    const int n = 6, m = 4;
    SurfaceSamples s;
    s.nu.resize(n, 9);
    for (int j = 0; j < n; ++j) s.nu.row(j) = lifted_row(rng);
    Eigen::VectorXd col(n);
    for (int j = 0; j < n; ++j) col[j] = rng.uniform(0.1, 1.0);
    s.intensities.resize(n, m);
    for (int i = 0; i < m; ++i) s.intensities.col(i) = col;
    s.visibility = all_visible(n, m);

    const auto [rho, S] = trivial_solution(s);
    for (int j = 0; j < n; ++j) CHECK(rho[j] == Catch::Approx(col[j]).margin(1e-15));
    CHECK(kronecker_residual(s, rho, S) < 1e-12);
  }

  SECTION("arithmetic mean over views") {
    const int n = 5, m = 3;
    SurfaceSamples s;
    s.nu.resize(n, 9);
    Rng rng(59);
    for (int j = 0; j < n; ++j) s.nu.row(j) = lifted_row(rng);
    s.intensities.resize(n, m);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < m; ++i) s.intensities(j, i) = j + i;
    s.visibility = all_visible(n, m);
    const auto [rho, S] = trivial_solution(s);
    for (int j = 0; j < n; ++j) CHECK(rho[j] == Catch::Approx(j + 1.0).margin(1e-13));  // mean(i)=1
    const LightingVector diffuse = diffuse_lighting();
    for (int i = 0; i < m; ++i)
      for (int k = 0; k < 9; ++k) CHECK(S(k, i) == diffuse[k]);
  }
}

TEST_CASE("solve_kronecker rejects unsupported inputs") {
  Rng rng(61);
  SurfaceSamples s;
  s.nu.resize(2, 9);
  s.nu.row(0) = lifted_row(rng);
  s.nu.row(1) = lifted_row(rng);
  s.intensities = Eigen::MatrixXd::Ones(2, 2);
  s.visibility = all_visible(2, 2);

  SECTION("partial visibility") {
    s.visibility(1, 0) = 0;
    CHECK_THROWS_AS(solve_kronecker(s), ValidationError);
  }
  SECTION("zero nu row") {
    s.nu.row(1).setZero();
    CHECK_THROWS_AS(solve_kronecker(s), ValidationError);
  }
  SECTION("dimension mismatches") {
    s.intensities = Eigen::MatrixXd::Ones(3, 2);
    CHECK_THROWS_AS(solve_kronecker(s), ValidationError);
  }
}

TEST_CASE("solve_kronecker flags a dominant singular tie") {
  // Two orthogonal rows of equal norm in the rearranged matrix.
  SurfaceSamples s;
  s.nu.resize(2, 9);
  const Vec9 nu = lift_normal({0, 0, 1});
  for (int k = 0; k < 9; ++k) {
    s.nu(0, k) = nu[k];
    s.nu(1, k) = nu[k];
  }
  s.intensities.resize(2, 2);
  s.intensities << 1.0, 0.0, 0.0, 1.0;
  s.visibility = all_visible(2, 2);
  const KroneckerFactorization fac = solve_kronecker(s);
  CHECK(fac.dominant_tie);
}
