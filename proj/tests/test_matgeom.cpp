#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "fisherlab/matgeom.hpp"
#include "fisherlab/matrix_io.hpp"
#include "oracles.hpp"

using namespace fisherlab;

namespace {

SymMatrix sym2(double a, double b, double c) {
  Matrix m(2, 2);
  m << a, b, b, c;
  return SymMatrix(m);
}

SymMatrix diag2(double a, double b) { return SymMatrix::diagonal(Eigen::Vector2d(a, b)); }

double rel_fro(const Matrix& a, const Matrix& b) { return (a - b).norm() / b.norm(); }

}  // namespace

// ---------------------------------------------------------------------------
// SymMatrix / sym_eig
// ---------------------------------------------------------------------------

TEST(SymMatrix, RejectsNonSquareAndAsymmetric) {
  EXPECT_THROW(SymMatrix(Matrix::Zero(2, 3)), std::invalid_argument);
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  EXPECT_THROW(SymMatrix{m}, std::invalid_argument);
}

TEST(SymMatrix, SymmetrizesRoundoffExactly) {
  Matrix m(2, 2);
  m << 1.0, 0.1 + 0.2, 0.3, 1.0;
  const SymMatrix s(m);
  EXPECT_EQ(s(0, 1), s(1, 0));
}

TEST(SymEig, Identity) {
  const EigDecomp e = sym_eig(SymMatrix::identity(2));
  EXPECT_DOUBLE_EQ(e.values(0), 1.0);
  EXPECT_DOUBLE_EQ(e.values(1), 1.0);
}

TEST(SymEig, DiagonalGivesAxisVectors) {
  const EigDecomp e = sym_eig(diag2(1.0, 0.1));
  EXPECT_DOUBLE_EQ(e.values(0), 0.1);
  EXPECT_DOUBLE_EQ(e.values(1), 1.0);
  EXPECT_NEAR(e.vectors(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(e.vectors(1, 0), 1.0, 1e-15);
  EXPECT_NEAR(e.vectors(0, 1), 1.0, 1e-15);
}

TEST(SymEig, CharacteristicPolynomial2x2) {
  // det([[2-l,1],[1,1-l]]) = l^2 - 3l + 1
  const EigDecomp e = sym_eig(sym2(2, 1, 1));
  EXPECT_NEAR(e.values(0), (3.0 - std::sqrt(5.0)) / 2.0, 1e-14);
  EXPECT_NEAR(e.values(1), (3.0 + std::sqrt(5.0)) / 2.0, 1e-14);
}

TEST(SymEig, ReconstructionOrthonormalityAndSign) {
  Stream rng(11, "sym_eig", 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.uniform_index(10));
    Matrix z(d, d);
    for (Index i = 0; i < d; ++i)
      for (Index j = 0; j < d; ++j) z(i, j) = rng.normal();
    const SymMatrix a(Matrix(z + z.transpose()));
    const EigDecomp e = sym_eig(a);
    EXPECT_LT(rel_fro(e.reconstruct(), a.mat()), 1e-10);
    EXPECT_LT((e.vectors.transpose() * e.vectors - Matrix::Identity(d, d)).norm(), 1e-10);
    for (Index k = 1; k < d; ++k) EXPECT_LE(e.values(k - 1), e.values(k));
    for (Index k = 0; k < d; ++k) {
      const auto col = e.vectors.col(k);
      const auto first = std::find_if(col.begin(), col.end(), [](double v) { return std::abs(v) > 1e-12; });
      ASSERT_NE(first, col.end());
      EXPECT_GT(*first, 0.0);
    }
  }
}

// ---------------------------------------------------------------------------
// psd_sqrt
// ---------------------------------------------------------------------------

TEST(PsdSqrt, IdentityAndDiagonal) {
  EXPECT_LT((psd_sqrt(SymMatrix::identity(3)).mat() - Matrix::Identity(3, 3)).norm(), 1e-15);
  const SymMatrix c = psd_sqrt(diag2(4, 9));
  EXPECT_NEAR(c(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(c(1, 1), 3.0, 1e-15);
  EXPECT_NEAR(c(0, 1), 0.0, 1e-15);
}

TEST(PsdSqrt, RandomSpdReconstruction) {
  Stream rng(5, "psd_sqrt", 0);
  for (int trial = 0; trial < 20; ++trial) {
    const SymMatrix g = oracle::random_spd(5, rng);
    const SymMatrix c = psd_sqrt(g);
    EXPECT_LT(rel_fro(c.mat() * c.mat(), g.mat()), 1e-10);
  }
}

TEST(PsdSqrt, RankDeficientAndErrors) {
  Stream rng(6, "psd_sqrt", 0);
  const SymMatrix g = oracle::random_psd(4, 2, rng);
  const SymMatrix c = psd_sqrt(g);
  EXPECT_LT(rel_fro(c.mat() * c.mat(), g.mat()), 1e-10);
  EXPECT_THROW(psd_sqrt(diag2(1.0, -0.5)), NotPositiveDefinite);
}

// ---------------------------------------------------------------------------
// Lyapunov solvers
// ---------------------------------------------------------------------------

TEST(LyapunovContinuous, DiagonalClosedForm) {
  const SymMatrix s = solve_lyapunov_continuous(diag2(1.0, 0.1), diag2(2.0, 2.0));
  EXPECT_NEAR(s(0, 0), 1.0, 1e-14);
  EXPECT_NEAR(s(1, 1), 10.0, 1e-13);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-14);
}

TEST(LyapunovContinuous, IdentityGivesHalf) {
  const SymMatrix s = solve_lyapunov_continuous(SymMatrix::identity(3), SymMatrix::identity(3));
  EXPECT_LT((s.mat() - 0.5 * Matrix::Identity(3, 3)).norm(), 1e-15);
}

TEST(LyapunovContinuous, NonDiagonalMatchesKroneckerOracle) {
  // Hand solution of H S + S H = I for H = [[2,1],[1,1]]:
  //   4a + 2b = 1, a + 3b + c = 0, 2b + 2c = 1  =>  a = 1/2, b = -1/2, c = 1.
  const SymMatrix h = sym2(2, 1, 1);
  const SymMatrix s = solve_lyapunov_continuous(h, SymMatrix::identity(2));
  EXPECT_NEAR(s(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(s(0, 1), -0.5, 1e-14);
  EXPECT_NEAR(s(1, 1), 1.0, 1e-14);
  const Matrix o = oracle::lyapunov_continuous(h.mat(), Matrix::Identity(2, 2));
  EXPECT_LT((s.mat() - o).norm(), 1e-13);
}

TEST(LyapunovContinuous, RejectsNonSpd) {
  EXPECT_THROW(solve_lyapunov_continuous(diag2(1.0, -1.0), SymMatrix::identity(2)), NotPositiveDefinite);
  EXPECT_THROW(solve_lyapunov_continuous(diag2(1.0, 0.0), SymMatrix::identity(2)), NotPositiveDefinite);
  EXPECT_THROW(solve_lyapunov_continuous(SymMatrix::identity(2), SymMatrix::identity(3)), std::invalid_argument);
}

TEST(LyapunovDiscrete, ScalarGeometricSeries) {
  const SymMatrix s = solve_lyapunov_discrete(SymMatrix::diagonal(Vector::Constant(1, 0.5)),
                                              SymMatrix::identity(1));
  EXPECT_NEAR(s(0, 0), 4.0 / 3.0, 1e-15);
}

TEST(LyapunovDiscrete, ZeroCoefficientReturnsQ) {
  Stream rng(3, "dlyap", 0);
  const SymMatrix q = oracle::random_spd(4, rng);
  const SymMatrix s = solve_lyapunov_discrete(SymMatrix::zero(4), q);
  EXPECT_LT(rel_fro(s.mat(), q.mat()), 1e-14);
}

TEST(LyapunovDiscrete, DiagonalClosedForm) {
  const SymMatrix s = solve_lyapunov_discrete(diag2(0.9, 0.5), SymMatrix::identity(2));
  EXPECT_NEAR(s(0, 0), 100.0 / 19.0, 1e-13);
  EXPECT_NEAR(s(1, 1), 4.0 / 3.0, 1e-14);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-14);
}

TEST(LyapunovDiscrete, RejectsUnstable) {
  EXPECT_THROW(solve_lyapunov_discrete(diag2(1.0, 0.5), SymMatrix::identity(2)), Unstable);
  EXPECT_THROW(solve_lyapunov_discrete(diag2(-1.2, 0.5), SymMatrix::identity(2)), Unstable);
}

TEST(Lyapunov, ResidualsAndOracleOnRandomInstances) {
  Stream rng(17, "lyap_prop", 0);
  for (int trial = 0; trial < 100; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.uniform_index(10));
    const SymMatrix h = oracle::random_spd(d, rng, 0.05, 20.0);
    const SymMatrix q = oracle::random_psd(d, 1 + static_cast<Index>(rng.uniform_index(d)), rng);
    const SymMatrix s = solve_lyapunov_continuous(h, q);
    EXPECT_LT(lyapunov_residual_continuous(h, s, q), 1e-10);
    if (d <= 6) {
      EXPECT_LT(rel_fro(s.mat(), oracle::lyapunov_continuous(h.mat(), q.mat())), 1e-9);
    }

    const double scale = 0.99 / sym_eig(h).max();
    const SymMatrix a(Matrix(Matrix::Identity(d, d) - scale * h.mat()));
    const SymMatrix sd = solve_lyapunov_discrete(a, q);
    EXPECT_LT(lyapunov_residual_discrete(a, sd, q), 1e-10);
    if (d <= 6) {
      EXPECT_LT(rel_fro(sd.mat(), oracle::lyapunov_discrete(a.mat(), q.mat())), 1e-9);
    }
  }
}

TEST(Lyapunov, LinearInRightHandSide) {
  Stream rng(19, "lyap_lin", 0);
  const SymMatrix h = oracle::random_spd(5, rng);
  const SymMatrix q = oracle::random_spd(5, rng);
  const SymMatrix a(Matrix(Matrix::Identity(5, 5) - 0.05 * h.mat()));
  for (double c : {0.0, 0.25, 3.0}) {
    const SymMatrix s1 = solve_lyapunov_continuous(h, c * q);
    const SymMatrix s0 = solve_lyapunov_continuous(h, q);
    EXPECT_LE((s1.mat() - c * s0.mat()).norm(), 1e-12 * std::max(1.0, c) * s0.mat().norm());
    const SymMatrix d1 = solve_lyapunov_discrete(a, c * q);
    const SymMatrix d0 = solve_lyapunov_discrete(a, q);
    EXPECT_LE((d1.mat() - c * d0.mat()).norm(), 1e-12 * std::max(1.0, c) * d0.mat().norm());
  }
}

TEST(Lyapunov, IntegralRepresentation) {
  Stream rng(23, "lyap_integral", 0);
  for (int trial = 0; trial < 5; ++trial) {
    const SymMatrix h = oracle::random_spd(4, rng, 0.5, 5.0);
    const SymMatrix q = oracle::random_spd(4, rng, 0.1, 2.0);
    const SymMatrix s = solve_lyapunov_continuous(h, q);
    EXPECT_LT(rel_fro(oracle::lyapunov_integral(h.mat(), q.mat()), s.mat()), 1e-6);
  }
}

// ---------------------------------------------------------------------------
// OU stationary covariance
// ---------------------------------------------------------------------------

TEST(StationaryOu, ContinuousDiagonalAndBatchLaw) {
  const Geometry geom{diag2(1.0, 0.1), SymMatrix::identity(2), SymMatrix::identity(2)};
  const SymMatrix s8 = stationary_covariance_ou(geom, 0.05, 8, 1.0, Comparator::continuous);
  EXPECT_NEAR(s8(0, 0), 1.0 / 8.0, 1e-15);
  EXPECT_NEAR(s8(1, 1), 10.0 / 8.0, 1e-13);
  const SymMatrix s16 = stationary_covariance_ou(geom, 0.05, 16, 1.0, Comparator::continuous);
  EXPECT_LT((s16.mat() - 0.5 * s8.mat()).norm(), 1e-15);
}

TEST(StationaryOu, DiscreteRotatedNoiseMatchesOracle) {
  const double eta = 0.05, dt = 1.0;
  const int b = 64;
  const Geometry geom{diag2(1.0, 0.1), rotated_shape(std::numbers::pi / 6), SymMatrix::identity(2)};
  const SymMatrix s = stationary_covariance_ou(geom, eta, b, dt, Comparator::discrete);
  const Matrix a = Matrix::Identity(2, 2) - eta * dt * geom.hessian.mat();
  const Matrix o = oracle::lyapunov_discrete(a, 2.0 * eta * dt / b * geom.noise.mat());
  EXPECT_LT(rel_fro(s.mat(), o), 1e-12);
  EXPECT_GT(std::abs(s(0, 1)), 1e-4);
}

TEST(StationaryOu, DiscreteRejectsUnstableStep) {
  const Geometry geom{diag2(1.0, 0.1), SymMatrix::identity(2), SymMatrix::identity(2)};
  EXPECT_THROW(stationary_covariance_ou(geom, 2.5, 1, 1.0, Comparator::discrete), Unstable);
}

TEST(StationaryOu, ContinuousInvariantUnderTemperaturePreservingRescale) {
  // (eta, b) -> (c eta, c b) keeps tau = eta / b; the OU-time comparator
  // depends only on b, so compare the sgd-time form tau G instead.
  Stream rng(29, "temperature", 0);
  const SymMatrix h = oracle::random_spd(3, rng);
  const SymMatrix g = oracle::random_spd(3, rng);
  for (double c : {0.5, 2.0, 4.0}) {
    const double tau1 = 0.1 / 8.0, tau2 = (c * 0.1) / (c * 8.0);
    const SymMatrix s1 = solve_lyapunov_continuous(h, tau1 * g);
    const SymMatrix s2 = solve_lyapunov_continuous(h, tau2 * g);
    EXPECT_LT(rel_fro(s2.mat(), s1.mat()), 1e-14);
  }
}

TEST(StationarySgd, MatchesExactRecursionLimit) {
  Stream rng(31, "sgd_path", 0);
  const SymMatrix h = oracle::random_spd(4, rng, 0.5, 5.0);
  const SymMatrix g = oracle::random_spd(4, rng, 0.5, 5.0);
  const Geometry geom{h, g, h};
  const double eta = 0.1;
  const std::vector<std::int64_t> steps{20000};
  const auto path = sgd_covariance_path(h, g, 8, [&](std::int64_t) { return eta; }, steps);
  const SymMatrix lim = stationary_covariance_sgd(geom, eta, 8);
  EXPECT_LT(rel_fro(path.back().mat(), lim.mat()), 1e-12);
}

TEST(SgdCovariancePath, OneStepByHand) {
  const SymMatrix h = diag2(2.0, 1.0);
  const SymMatrix g = sym2(1.0, 0.5, 2.0);
  const std::vector<std::int64_t> steps{1, 2};
  const auto path = sgd_covariance_path(h, g, 4, [](std::int64_t t) { return 0.1 / (1.0 + t); }, steps);
  // step 0: S1 = 0.01 G / 4
  EXPECT_NEAR(path[0](0, 1), 0.01 * 0.5 / 4, 1e-17);
  // step 1: S2 = A S1 A + 0.0025 G / 4 with A = diag(0.9, 0.95)
  EXPECT_NEAR(path[1](0, 0), 0.81 * 0.01 / 4 + 0.0025 / 4, 1e-17);
  EXPECT_NEAR(path[1](0, 1), 0.9 * 0.95 * 0.005 / 4 + 0.0025 * 0.5 / 4, 1e-17);
}

// ---------------------------------------------------------------------------
// Trace identity
// ---------------------------------------------------------------------------

TEST(TraceIdentity, CommutingCase) {
  const SymMatrix h = diag2(1.0, 0.1);
  const SymMatrix g = diag2(1.5, 0.5);
  const double tau = 0.05 / 64;
  const SymMatrix s = solve_lyapunov_continuous(h, tau * g);
  EXPECT_LT(trace_identity_check(h, s, g, tau), 1e-10);
  EXPECT_NEAR(2.0 * s.trace(), tau * (g.mat() * spd_inverse(h).mat()).trace(), 1e-15);
}

TEST(TraceIdentity, NonCommutingCase) {
  const SymMatrix h = sym2(2, 1, 1);
  const SymMatrix g = rotated_shape(0.7);
  const double tau = 0.3;
  const SymMatrix s = solve_lyapunov_continuous(h, tau * g);
  EXPECT_LT(trace_identity_check(h, s, g, tau), 1e-10);
}

TEST(TraceIdentity, ZeroTemperature) {
  const SymMatrix h = sym2(2, 1, 1);
  const SymMatrix s = solve_lyapunov_continuous(h, 0.0 * SymMatrix::identity(2));
  EXPECT_EQ(s.mat().norm(), 0.0);
  EXPECT_EQ(trace_identity_check(h, s, SymMatrix::identity(2), 0.0), 0.0);
}

TEST(TraceIdentity, SingularH) {
  EXPECT_THROW(trace_identity_check(diag2(1.0, 0.0), SymMatrix::identity(2), SymMatrix::identity(2), 1.0),
               std::domain_error);
}

// ---------------------------------------------------------------------------
// Scalar geometry functionals
// ---------------------------------------------------------------------------

TEST(MuFisher, IdentityMetric) { EXPECT_NEAR(mu_fisher(diag2(1.0, 0.1), SymMatrix::identity(2)), 0.1, 1e-15); }

TEST(MuFisher, CommutingMetricLeavesSpectrum) {
  const SymMatrix h = sym2(2, 1, 1);
  EXPECT_NEAR(mu_fisher(h, h), (3.0 - std::sqrt(5.0)) / 2.0, 1e-14);
}

TEST(MuFisher, ExplicitSymmetrizedConjugation) {
  // diag(2,1) [[2,1],[1,1]] diag(1/2,1) = [[2,2],[1/2,1]]; Sym = [[2,5/4],[5/4,1]];
  // lambda_min = (3 - sqrt(9 - 4 * 0.4375)) / 2.
  EXPECT_NEAR(mu_fisher(sym2(2, 1, 1), diag2(4, 1)), (3.0 - std::sqrt(7.25)) / 2.0, 1e-14);
}

TEST(MuFisher, RejectsNonSpd) {
  EXPECT_THROW(mu_fisher(diag2(1, 0), SymMatrix::identity(2)), NotPositiveDefinite);
  EXPECT_THROW(mu_fisher(SymMatrix::identity(2), diag2(1, 0)), NotPositiveDefinite);
}

TEST(GeometrySummary, IdentityAndDiagonal) {
  const GeometrySummary id = geometry_summary(SymMatrix::identity(7), SymMatrix::identity(7));
  EXPECT_DOUBLE_EQ(id.d_eff, 7.0);
  EXPECT_DOUBLE_EQ(id.kappa_F, 1.0);
  const GeometrySummary dg = geometry_summary(diag2(1.5, 0.5), SymMatrix::identity(2));
  EXPECT_NEAR(dg.d_eff, 4.0 / 3.0, 1e-15);
  EXPECT_NEAR(dg.kappa_F, 3.0, 1e-15);
}

TEST(GeometrySummary, LogSpacedSpectrum) {
  // Direct summation of 10 eigenvalues log-spaced from 0.5 to 5:
  // sum = 20.434763060936017, d_eff = sum / 5.
  const Vector spec = logspace(0.5, 5.0, 10);
  Stream rng(1, "geometry", 0);
  const SymMatrix g = random_spd_with_spectrum(spec, rng);
  const GeometrySummary s = geometry_summary(g, SymMatrix::diagonal(logspace(1.0, 100.0, 10)));
  EXPECT_NEAR(s.trace_F, 20.434763060936017, 1e-12);
  EXPECT_NEAR(s.d_eff, 20.434763060936017 / 5.0, 1e-12);
  EXPECT_NEAR(s.kappa_F, 10.0, 1e-12);
}

TEST(GeometrySummary, InvariantsOnRandomInstances) {
  Stream rng(37, "summary_prop", 0);
  for (int trial = 0; trial < 200; ++trial) {
    const Index d = 1 + static_cast<Index>(rng.uniform_index(10));
    const SymMatrix f = oracle::random_spd(d, rng);
    const SymMatrix h = oracle::random_spd(d, rng);
    const GeometrySummary s = geometry_summary(f, h);
    EXPECT_GT(s.d_eff, 0.0);
    EXPECT_LE(s.d_eff, static_cast<double>(d) * (1 + 1e-14));
    EXPECT_GE(s.kappa_F, 1.0);
    // The symmetric part's smallest eigenvalue never exceeds the smallest
    // eigenvalue of the (similar) conjugated Hessian.
    EXPECT_LE(s.mu_F, sym_eig(h).min() * (1 + 1e-12));
    // Positive whenever the metric commutes with the Hessian.
    const EigDecomp eh = sym_eig(h);
    Vector metric_spec(d);
    for (Index i = 0; i < d; ++i) metric_spec(i) = 0.1 + 10.0 * rng.uniform();
    const SymMatrix commuting(Matrix(eh.vectors * metric_spec.asDiagonal() * eh.vectors.transpose()));
    EXPECT_NEAR(mu_fisher(h, commuting), eh.min(), 1e-10 * eh.max());
  }
}

TEST(MuFisher, CanBeNegativeForNonCommutingPair) {
  // F^{1/2} H F^{-1/2} is similar to H but not symmetric; its symmetric part
  // need not be positive. H = [[1,0.99],[0.99,1]], F = diag(100,1):
  // M = [[1, 9.9],[0.099, 1]], Sym(M) = [[1, 4.9995],[4.9995, 1]].
  Matrix hm(2, 2);
  hm << 1.0, 0.99, 0.99, 1.0;
  EXPECT_NEAR(mu_fisher(SymMatrix(hm), diag2(100, 1)), 1.0 - 4.9995, 1e-12);
}

TEST(Whitening, SimilarityPreservesSpectrum) {
  Stream rng(41, "whitening", 0);
  for (int trial = 0; trial < 50; ++trial) {
    const Index d = 2 + static_cast<Index>(rng.uniform_index(9));
    const SymMatrix f = oracle::random_spd(d, rng);
    const SymMatrix h = oracle::random_spd(d, rng);
    const Matrix m = psd_sqrt(f).mat() * h.mat() * spd_inverse_sqrt(f).mat();
    Eigen::VectorXcd ev = m.eigenvalues();
    std::vector<double> re(static_cast<std::size_t>(d));
    for (Index i = 0; i < d; ++i) {
      EXPECT_LT(std::abs(ev(i).imag()), 1e-9);
      re[static_cast<std::size_t>(i)] = ev(i).real();
    }
    std::sort(re.begin(), re.end());
    const EigDecomp eh = sym_eig(h);
    for (Index i = 0; i < d; ++i) EXPECT_NEAR(re[static_cast<std::size_t>(i)], eh.values(i), 1e-9 * eh.max());
  }
}

TEST(FisherNorm, IdentityIsEuclidean) {
  const Vector v = Eigen::Vector3d(1, -2, 2);
  EXPECT_NEAR(fisher_norm(v, SymMatrix::identity(3)), 3.0, 1e-15);
  EXPECT_NEAR(fisher_dual_norm(v, SymMatrix::identity(3)), 3.0, 1e-15);
}

TEST(FisherNorm, DiagonalMetric) {
  const Vector v = Eigen::Vector2d(1, 0);
  EXPECT_NEAR(fisher_norm(v, diag2(4, 1)), 2.0, 1e-15);
  EXPECT_NEAR(fisher_dual_norm(v, diag2(4, 1)), 0.5, 1e-15);
}

TEST(FisherNorm, CauchySchwarzOnRandomDraws) {
  Stream rng(43, "cauchy_schwarz", 0);
  const SymMatrix f = oracle::random_spd(4, rng, 0.01, 100.0);
  for (int i = 0; i < 1000; ++i) {
    Vector v(4);
    for (Index k = 0; k < 4; ++k) v(k) = rng.normal();
    EXPECT_GE(fisher_norm(v, f) * fisher_dual_norm(v, f), v.squaredNorm() * (1 - 1e-12));
  }
}

TEST(FisherNorm, Errors) {
  EXPECT_THROW(fisher_dual_norm(Eigen::Vector2d(1, 0), diag2(1, 0)), NotPositiveDefinite);
  EXPECT_THROW(fisher_norm(Eigen::Vector3d(1, 0, 0), diag2(1, 1)), std::invalid_argument);
  EXPECT_NO_THROW(fisher_norm(Eigen::Vector2d(1, 1), diag2(1, 0)));
}

TEST(FisherRisk, Basic) {
  EXPECT_DOUBLE_EQ(fisher_risk(SymMatrix::identity(2), diag2(1, 10)), 11.0);
  EXPECT_DOUBLE_EQ(fisher_risk(sym2(2, 1, 1), SymMatrix::zero(2)), 0.0);
}

TEST(FisherRisk, TenDimensionalPlateau) {
  // d = 10, H log-spaced 1..100, G eigenvalues log-spaced 0.5..5, eta = 0.5/100,
  // b = 64, risk metric H. The isotropic plateau depends on the spectrum
  // only and equals 8.58e-4. The anisotropic one depends on the
  // eigenbasis of G and is covered in test_experiments.
  const SymMatrix h = SymMatrix::diagonal(logspace(1.0, 100.0, 10));
  const Vector spec = logspace(0.5, 5.0, 10);
  const double eta = 0.005;
  const SymMatrix iso = (spec.sum() / 10.0) * SymMatrix::identity(10);
  const double r_iso = fisher_risk(h, stationary_covariance_sgd({h, iso, h}, eta, 64));
  EXPECT_NEAR(r_iso, 8.58e-4, 0.005e-4);
}

TEST(Rotation, SpecialAngles) {
  EXPECT_LT((rotation2(0.0) - Eigen::Matrix2d::Identity()).norm(), 1e-15);
  const SymMatrix f90 = rotated_shape(std::numbers::pi / 2);
  EXPECT_NEAR(f90(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(f90(1, 1), 1.5, 1e-15);
  EXPECT_NEAR(f90(0, 1), 0.0, 1e-15);
  // phi = pi/4: diagonal (1.5 + 0.5)/2 = 1, off-diagonal (1.5 - 0.5) cos sin = 0.5.
  const SymMatrix f45 = rotated_shape(std::numbers::pi / 4);
  EXPECT_NEAR(f45(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(f45(0, 1), 0.5, 1e-15);
  const Eigen::Matrix2d r = rotation2(1.234);
  EXPECT_LT((r * r.transpose() - Eigen::Matrix2d::Identity()).norm(), 1e-15);
}

TEST(OracleComplexity, UnitCase) {
  const OracleComplexity o = oracle_complexity(1.0, 1.0, 1.0, std::exp(-1.0));
  EXPECT_NEAR(o.calls, 1.0, 1e-15);
  EXPECT_FALSE(o.constant.empty());
}

TEST(OracleComplexity, LinearInDeff) {
  EXPECT_NEAR(oracle_complexity(3.0, 4.0, 0.1, 0.05).calls, 2.0 * oracle_complexity(3.0, 2.0, 0.1, 0.05).calls,
              1e-9);
}

TEST(OracleComplexity, ComposesWithGeometrySummary) {
  Stream rng(7, "geometry", 0);
  const SymMatrix g = random_spd_with_spectrum(logspace(0.5, 5.0, 10), rng);
  const GeometrySummary s = geometry_summary(g, SymMatrix::diagonal(logspace(1.0, 100.0, 10)));
  // kappa = 10, d_eff = 20.434763060936017 / 5 from the constructed spectrum.
  const double expected = 10.0 * (20.434763060936017 / 5.0) * std::log(1.0 / 0.05) / 0.01;
  EXPECT_NEAR(oracle_complexity(s.kappa_F, s.d_eff, 0.1, 0.05).calls, expected, 1e-8 * expected);
}

TEST(OracleComplexity, DomainErrors) {
  EXPECT_THROW(oracle_complexity(1, 1, 0.0, 0.5), std::invalid_argument);
  EXPECT_THROW(oracle_complexity(1, 1, 0.1, 1.0), std::invalid_argument);
  EXPECT_THROW(oracle_complexity(1, 1, 0.1, 0.0), std::invalid_argument);
}

TEST(RandomSpd, HasRequestedSpectrum) {
  Stream rng(2, "spd", 0);
  const Vector spec = logspace(0.5, 5.0, 10);
  const EigDecomp e = sym_eig(random_spd_with_spectrum(spec, rng));
  for (Index i = 0; i < 10; ++i) EXPECT_NEAR(e.values(i), spec(i), 1e-12);
}

TEST(MatrixCsv, RoundTripIsExact) {
  Stream rng(4, "csv", 0);
  const SymMatrix g = oracle::random_spd(3, rng);
  std::stringstream ss;
  write_matrix_csv(ss, g);
  EXPECT_EQ(ss.str().rfind("dim=3\n", 0), 0u);
  const Matrix back = read_matrix_csv(ss);
  EXPECT_EQ(back, g.mat());
}

TEST(MatrixCsv, MalformedInput) {
  std::stringstream a("3\n1,2,3\n");
  EXPECT_THROW(read_matrix_csv(a), std::runtime_error);
  std::stringstream b("dim=2\n1,2\n3\n");
  EXPECT_THROW(read_matrix_csv(b), std::runtime_error);
  std::stringstream c("dim=2\n1,x\n3,4\n");
  EXPECT_THROW(read_matrix_csv(c), std::runtime_error);
}
