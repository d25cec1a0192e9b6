#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fisherlab/rng.hpp"

namespace fisherlab {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

// Eigenvalues within psd_clamp * lambda_max of zero are treated as zero;
// SPD additionally requires lambda_min > spd_floor * lambda_max.
inline constexpr double kPsdClamp = 1e-12;
inline constexpr double kSpdFloor = 1e-10;
// Largest relative asymmetry accepted (and then removed) by SymMatrix.
inline constexpr double kSymmetryTolerance = 1e-9;

struct NotPositiveDefinite : std::domain_error {
  using std::domain_error::domain_error;
};
struct Unstable : std::domain_error {
  using std::domain_error::domain_error;
};
struct NoConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense real symmetric matrix. Entries (i,j) and (j,i) are bitwise equal.
class SymMatrix {
 public:
  SymMatrix() = default;

  explicit SymMatrix(Matrix m) : m_(std::move(m)) {
    if (m_.rows() != m_.cols()) {
      throw std::invalid_argument("SymMatrix: matrix is " + std::to_string(m_.rows()) + "x" +
                                  std::to_string(m_.cols()) + ", not square");
    }
    const double scale = std::max(1.0, m_.cwiseAbs().maxCoeff());
    const double asym = (m_ - m_.transpose()).cwiseAbs().maxCoeff();
    if (!(asym <= kSymmetryTolerance * scale)) {
      throw std::invalid_argument("SymMatrix: input not symmetric (max asymmetry " +
                                  std::to_string(asym) + ")");
    }
    for (Index i = 0; i < m_.rows(); ++i) {
      for (Index j = i + 1; j < m_.cols(); ++j) {
        const double v = 0.5 * (m_(i, j) + m_(j, i));
        m_(i, j) = v;
        m_(j, i) = v;
      }
    }
  }

  static SymMatrix identity(Index d) { return SymMatrix(Matrix::Identity(d, d)); }
  static SymMatrix zero(Index d) { return SymMatrix(Matrix::Zero(d, d)); }
  static SymMatrix diagonal(const Vector& diag) { return SymMatrix(Matrix(diag.asDiagonal())); }

  Index dim() const { return m_.rows(); }
  const Matrix& mat() const { return m_; }
  double operator()(Index i, Index j) const { return m_(i, j); }
  double trace() const { return m_.trace(); }

  friend SymMatrix operator+(const SymMatrix& a, const SymMatrix& b) {
    return SymMatrix(a.m_ + b.m_);
  }
  friend SymMatrix operator-(const SymMatrix& a, const SymMatrix& b) {
    return SymMatrix(a.m_ - b.m_);
  }
  friend SymMatrix operator*(double c, const SymMatrix& a) { return SymMatrix(c * a.m_); }

 private:
  Matrix m_;
};

/// Ascending eigenvalues with orthonormal eigenvector columns.
struct EigDecomp {
  Vector values;
  Matrix vectors;

  Matrix reconstruct() const { return vectors * values.asDiagonal() * vectors.transpose(); }
  double min() const { return values(0); }
  double max() const { return values(values.size() - 1); }
};

/// Symmetric eigendecomposition. Each eigenvector's first component with
/// magnitude above 1e-12 is made positive so serialized output is stable.
inline EigDecomp sym_eig(const SymMatrix& a, std::string_view name = "matrix") {
  if (a.dim() == 0) throw std::invalid_argument("sym_eig: " + std::string(name) + " is empty");
  Eigen::SelfAdjointEigenSolver<Matrix> solver(a.mat());
  if (solver.info() != Eigen::Success) {
    throw NoConvergence("sym_eig: eigensolver did not converge for " + std::string(name));
  }
  EigDecomp out{solver.eigenvalues(), solver.eigenvectors()};
  for (Index k = 0; k < out.vectors.cols(); ++k) {
    for (Index i = 0; i < out.vectors.rows(); ++i) {
      const double v = out.vectors(i, k);
      if (std::abs(v) > 1e-12) {
        if (v < 0.0) out.vectors.col(k) *= -1.0;
        break;
      }
    }
  }
  return out;
}

inline bool is_spd(const EigDecomp& e) {
  return e.max() > 0.0 && e.min() > kSpdFloor * e.max();
}

inline bool is_psd(const EigDecomp& e) {
  return e.min() >= -kPsdClamp * std::max(e.max(), 0.0);
}

inline EigDecomp require_spd(const SymMatrix& a, std::string_view name) {
  EigDecomp e = sym_eig(a, name);
  if (!is_spd(e)) {
    throw NotPositiveDefinite(std::string(name) + " is not SPD (eigenvalues in [" +
                              std::to_string(e.min()) + ", " + std::to_string(e.max()) + "])");
  }
  return e;
}

inline EigDecomp require_psd(const SymMatrix& a, std::string_view name) {
  EigDecomp e = sym_eig(a, name);
  if (!is_psd(e)) {
    throw NotPositiveDefinite(std::string(name) + " is not PSD (min eigenvalue " +
                              std::to_string(e.min()) + ")");
  }
  return e;
}

namespace detail {

inline SymMatrix from_eigenbasis(const Matrix& v, const Matrix& inner) {
  return SymMatrix(v * inner * v.transpose());
}

inline SymMatrix spectral_map(const EigDecomp& e, double (*f)(double)) {
  Vector mapped = e.values.unaryExpr(f);
  return SymMatrix(e.vectors * mapped.asDiagonal() * e.vectors.transpose());
}

}  // namespace detail

/// Symmetric PSD square root; small negative eigenvalues are clamped to zero.
inline SymMatrix psd_sqrt(const SymMatrix& g) {
  EigDecomp e = require_psd(g, "psd_sqrt input");
  for (Index i = 0; i < e.values.size(); ++i) e.values(i) = std::max(e.values(i), 0.0);
  return detail::spectral_map(e, [](double x) { return std::sqrt(x); });
}

inline SymMatrix spd_inverse_sqrt(const SymMatrix& g) {
  const EigDecomp e = require_spd(g, "spd_inverse_sqrt input");
  return detail::spectral_map(e, [](double x) { return 1.0 / std::sqrt(x); });
}

inline SymMatrix spd_inverse(const SymMatrix& g) {
  const EigDecomp e = require_spd(g, "spd_inverse input");
  return detail::spectral_map(e, [](double x) { return 1.0 / x; });
}

// ---------------------------------------------------------------------------
// Lyapunov equations. Coefficient matrices are symmetric, so both solves
// diagonalize the coefficient once and divide entrywise in its eigenbasis.
// ---------------------------------------------------------------------------

/// Unique symmetric solution of H S + S H = Q for SPD H.
inline SymMatrix solve_lyapunov_continuous(const SymMatrix& h, const SymMatrix& q) {
  if (h.dim() != q.dim()) throw std::invalid_argument("solve_lyapunov_continuous: dimension mismatch");
  const EigDecomp e = require_spd(h, "H (continuous Lyapunov coefficient; Hurwitz condition fails)");
  require_psd(q, "Q (continuous Lyapunov right-hand side)");
  Matrix inner = e.vectors.transpose() * q.mat() * e.vectors;
  for (Index i = 0; i < inner.rows(); ++i)
    for (Index j = 0; j < inner.cols(); ++j) inner(i, j) /= e.values(i) + e.values(j);
  return detail::from_eigenbasis(e.vectors, inner);
}

/// Unique symmetric solution of S = A S A + Q for symmetric A with spectral
/// radius below one.
inline SymMatrix solve_lyapunov_discrete(const SymMatrix& a, const SymMatrix& q) {
  if (a.dim() != q.dim()) throw std::invalid_argument("solve_lyapunov_discrete: dimension mismatch");
  const EigDecomp e = sym_eig(a, "A (discrete Lyapunov coefficient)");
  const double radius = e.values.cwiseAbs().maxCoeff();
  if (!(radius < 1.0)) {
    throw Unstable("solve_lyapunov_discrete: spectral radius of A is " + std::to_string(radius) +
                   " >= 1 (step size too large for the curvature)");
  }
  require_psd(q, "Q (discrete Lyapunov right-hand side)");
  Matrix inner = e.vectors.transpose() * q.mat() * e.vectors;
  for (Index i = 0; i < inner.rows(); ++i)
    for (Index j = 0; j < inner.cols(); ++j) inner(i, j) /= 1.0 - e.values(i) * e.values(j);
  return detail::from_eigenbasis(e.vectors, inner);
}

inline double relative_residual(const Matrix& r, const SymMatrix& q) {
  const double qn = q.mat().norm();
  return qn > 0.0 ? r.norm() / qn : r.norm();
}

inline double lyapunov_residual_continuous(const SymMatrix& h, const SymMatrix& s,
                                           const SymMatrix& q) {
  return relative_residual(h.mat() * s.mat() + s.mat() * h.mat().transpose() - q.mat(), q);
}

inline double lyapunov_residual_discrete(const SymMatrix& a, const SymMatrix& s,
                                         const SymMatrix& q) {
  return relative_residual(s.mat() - a.mat() * s.mat() * a.mat().transpose() - q.mat(), q);
}

// ---------------------------------------------------------------------------
// Problem geometry
// ---------------------------------------------------------------------------

/// One problem instance: curvature, gradient-noise shape, and the metric in
/// which risk is measured.
struct Geometry {
  SymMatrix hessian;
  SymMatrix noise;
  SymMatrix metric;

  Index dim() const { return hessian.dim(); }

  void validate() const {
    if (noise.dim() != hessian.dim() || metric.dim() != hessian.dim()) {
      throw std::invalid_argument("Geometry: hessian, noise and metric dimensions differ");
    }
  }
};

enum class Comparator { continuous, discrete };

/// Stationary covariance of the OU surrogate
///   d theta = -eta H theta dt + sqrt(2 eta / b) G^{1/2} dW.
/// continuous: H S + S H = (2/b) G.
/// discrete (Euler-Maruyama with step dt): S = A S A + Q,
///   A = I - eta H dt, Q = (2 eta / b) G dt.
inline SymMatrix stationary_covariance_ou(const Geometry& geom, double eta, int b, double dt,
                                          Comparator mode) {
  geom.validate();
  if (b < 1) throw std::invalid_argument("stationary_covariance_ou: batch size must be >= 1");
  if (mode == Comparator::continuous) {
    return solve_lyapunov_continuous(geom.hessian, (2.0 / b) * geom.noise);
  }
  if (!(eta > 0.0) || !(dt > 0.0)) {
    throw std::invalid_argument("stationary_covariance_ou: eta and dt must be positive");
  }
  const Index d = geom.dim();
  const SymMatrix a(Matrix::Identity(d, d) - eta * dt * geom.hessian.mat());
  return solve_lyapunov_discrete(a, (2.0 * eta * dt / b) * geom.noise);
}

/// Stationary covariance of the linearized SGD recursion
///   theta <- theta - eta (H theta + xi),  Cov(xi) = G / b,
/// i.e. S = A S A + eta^2 G / b with A = I - eta H.
inline SymMatrix stationary_covariance_sgd(const Geometry& geom, double eta, int b) {
  geom.validate();
  if (b < 1) throw std::invalid_argument("stationary_covariance_sgd: batch size must be >= 1");
  const Index d = geom.dim();
  const SymMatrix a(Matrix::Identity(d, d) - eta * geom.hessian.mat());
  return solve_lyapunov_discrete(a, (eta * eta / b) * geom.noise);
}

/// Exact covariance of the linearized SGD recursion started from a fixed
/// point, evaluated at each requested step count (ascending). Step t (0-based)
/// uses stepsize eta_at(t).
template <class StepFn>
std::vector<SymMatrix> sgd_covariance_path(const SymMatrix& h, const SymMatrix& g, int b,
                                           StepFn&& eta_at,
                                           std::span<const std::int64_t> checkpoints) {
  if (h.dim() != g.dim()) throw std::invalid_argument("sgd_covariance_path: dimension mismatch");
  if (b < 1) throw std::invalid_argument("sgd_covariance_path: batch size must be >= 1");
  const EigDecomp e = sym_eig(h, "H");
  const Matrix g_rot = e.vectors.transpose() * g.mat() * e.vectors / static_cast<double>(b);
  const Index d = h.dim();
  Matrix s = Matrix::Zero(d, d);
  std::vector<SymMatrix> out;
  out.reserve(checkpoints.size());
  std::int64_t t = 0;
  for (std::int64_t stop : checkpoints) {
    if (stop < t) throw std::invalid_argument("sgd_covariance_path: checkpoints must ascend");
    for (; t < stop; ++t) {
      const double eta = eta_at(t);
      const Vector contraction = (1.0 - eta * e.values.array()).matrix();
      s = contraction.asDiagonal() * s * contraction.asDiagonal();
      s += eta * eta * g_rot;
    }
    out.push_back(detail::from_eigenbasis(e.vectors, s));
  }
  return out;
}

/// |Tr(S) + Tr(H^{-1} S H) - tau Tr(H^{-1} G)|; zero for any solution of
/// H S + S H = tau G.
inline double trace_identity_check(const SymMatrix& h, const SymMatrix& sigma, const SymMatrix& g,
                                   double tau) {
  const EigDecomp e = sym_eig(h, "H");
  const double scale = e.values.cwiseAbs().maxCoeff();
  if (!(e.values.cwiseAbs().minCoeff() > kSpdFloor * scale)) {
    throw std::domain_error("trace_identity_check: H is singular");
  }
  const Eigen::PartialPivLU<Matrix> lu(h.mat());
  const double lhs = sigma.trace() + lu.solve(sigma.mat() * h.mat()).trace();
  return std::abs(lhs - tau * lu.solve(g.mat()).trace());
}

/// Fisher strong-convexity constant: lambda_min of Sym(F^{1/2} H F^{-1/2}).
inline double mu_fisher(const SymMatrix& h, const SymMatrix& f) {
  require_spd(h, "H");
  const SymMatrix f_half = psd_sqrt(f);
  const SymMatrix f_inv_half = spd_inverse_sqrt(f);
  const Matrix m = f_half.mat() * h.mat() * f_inv_half.mat();
  return sym_eig(SymMatrix(0.5 * (m + m.transpose())), "Sym(F^1/2 H F^-1/2)").min();
}

struct GeometrySummary {
  double mu_F = 0.0;
  double d_eff = 0.0;
  double kappa_F = 0.0;
  double trace_F = 0.0;
};

inline GeometrySummary geometry_summary(const SymMatrix& f, const SymMatrix& h) {
  const EigDecomp e = require_spd(f, "F");
  GeometrySummary s;
  s.trace_F = e.values.sum();
  s.d_eff = s.trace_F / e.max();
  s.kappa_F = e.max() / e.min();
  s.mu_F = mu_fisher(h, f);
  return s;
}

/// sqrt(v' F v).
inline double fisher_norm(const Vector& v, const SymMatrix& f) {
  if (v.size() != f.dim()) throw std::invalid_argument("fisher_norm: dimension mismatch");
  const double q = v.dot(f.mat() * v);
  const double floor = kPsdClamp * f.mat().norm() * v.squaredNorm();
  if (q < -floor) throw NotPositiveDefinite("fisher_norm: F is not PSD along v");
  return std::sqrt(std::max(q, 0.0));
}

/// sqrt(v' F^{-1} v).
inline double fisher_dual_norm(const Vector& v, const SymMatrix& f) {
  if (v.size() != f.dim()) throw std::invalid_argument("fisher_dual_norm: dimension mismatch");
  const EigDecomp e = require_spd(f, "F (dual norm needs an invertible metric)");
  const Vector w = e.vectors.transpose() * v;
  return std::sqrt((w.array().square() / e.values.array()).sum());
}

/// Tr(F S).
inline double fisher_risk(const SymMatrix& f, const SymMatrix& sigma) {
  if (f.dim() != sigma.dim()) throw std::invalid_argument("fisher_risk: dimension mismatch");
  return f.mat().cwiseProduct(sigma.mat()).sum();
}

inline Eigen::Matrix2d rotation2(double phi) {
  Eigen::Matrix2d r;
  r << std::cos(phi), -std::sin(phi), std::sin(phi), std::cos(phi);
  return r;
}

/// R(phi) diag(major, minor) R(phi)'.
inline SymMatrix rotated_shape(double phi, double major = 1.5, double minor = 0.5) {
  const Eigen::Matrix2d r = rotation2(phi);
  return SymMatrix(Matrix(r * Eigen::Vector2d(major, minor).asDiagonal() * r.transpose()));
}

struct OracleComplexity {
  double calls = 0.0;
  // The leading constant of the Theta(.) bound is not known; calls uses 1.
  std::string_view constant = "unit (Theta constant unspecified)";
};

/// kappa_F d_eff log(1/delta) / eps^2.
inline OracleComplexity oracle_complexity(double kappa_f, double d_eff, double eps, double delta) {
  if (!(eps > 0.0)) throw std::invalid_argument("oracle_complexity: eps must be positive");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("oracle_complexity: delta must lie in (0,1)");
  if (!(kappa_f >= 1.0)) throw std::invalid_argument("oracle_complexity: kappa_F must be >= 1");
  if (!(d_eff > 0.0)) throw std::invalid_argument("oracle_complexity: d_eff must be positive");
  return {kappa_f * d_eff * std::log(1.0 / delta) / (eps * eps)};
}

inline Vector logspace(double lo, double hi, Index n) {
  Vector v(n);
  for (Index i = 0; i < n; ++i) {
    const double t = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
    v(i) = std::pow(10.0, std::log10(lo) + t * (std::log10(hi) - std::log10(lo)));
  }
  return v;
}

/// Q diag(spectrum) Q' where Q is the orthogonal factor (with positive R
/// diagonal) of a standard normal matrix drawn from rng in column-major order.
inline SymMatrix random_spd_with_spectrum(const Vector& spectrum, Stream& rng) {
  const Index d = spectrum.size();
  Matrix z(d, d);
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < d; ++i) z(i, j) = rng.normal();
  const Eigen::HouseholderQR<Matrix> qr(z);
  Matrix q = qr.householderQ() * Matrix::Identity(d, d);
  const Matrix& r = qr.matrixQR();
  for (Index k = 0; k < d; ++k)
    if (r(k, k) < 0.0) q.col(k) *= -1.0;
  return SymMatrix(q * spectrum.asDiagonal() * q.transpose());
}

}  // namespace fisherlab
