#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace fisherlab {

/// Gauss-Hermite rule for expectations under the standard normal density.
/// Weights sum to one.
struct GaussHermite {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  template <class F>
  double expect(F&& f) const {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < nodes.size(); ++i) acc += weights(i) * f(nodes(i));
    return acc;
  }
};

/// Golub-Welsch: nodes are eigenvalues of the Jacobi matrix of the
/// probabilists' Hermite recurrence x He_k = He_{k+1} + k He_{k-1}; weights
/// are squared first components of the normalized eigenvectors.
inline GaussHermite gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("gauss_hermite: need at least one node");
  Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd sub(n > 1 ? n - 1 : 0);
  for (int k = 1; k < n; ++k) sub(k - 1) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
  solver.computeFromTridiagonal(diag, sub, Eigen::ComputeEigenvectors);
  if (solver.info() != Eigen::Success) throw std::runtime_error("gauss_hermite: eigensolver failed");
  GaussHermite rule{solver.eigenvalues(), solver.eigenvectors().row(0).transpose().array().square()};
  // Enforce the exact symmetry of the rule.
  for (int i = 0; i < n / 2; ++i) {
    const double x = 0.5 * (rule.nodes(n - 1 - i) - rule.nodes(i));
    const double w = 0.5 * (rule.weights(n - 1 - i) + rule.weights(i));
    rule.nodes(i) = -x;
    rule.nodes(n - 1 - i) = x;
    rule.weights(i) = w;
    rule.weights(n - 1 - i) = w;
  }
  if (n % 2) rule.nodes(n / 2) = 0.0;
  rule.weights /= rule.weights.sum();
  return rule;
}

inline constexpr int kQuadratureNodes = 200;

inline const GaussHermite& default_rule() {
  static const GaussHermite rule = gauss_hermite(kQuadratureNodes);
  return rule;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace fisherlab
