#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "fisherlab/matgeom.hpp"
#include "fisherlab/matrix_io.hpp"
#include "fisherlab/quadrature.hpp"
#include "fisherlab/rng.hpp"

namespace fisherlab {

// ---------------------------------------------------------------------------
// Finite populations and without-replacement mini-batches
// ---------------------------------------------------------------------------

/// Per-sample gradients psi_1..psi_n of a fixed dataset.
class Population {
 public:
  explicit Population(std::vector<Vector> vectors) : vectors_(std::move(vectors)) {
    if (vectors_.empty()) throw std::invalid_argument("Population: need at least one vector");
    for (const auto& v : vectors_) {
      if (v.size() != vectors_.front().size() || v.size() == 0) {
        throw std::invalid_argument("Population: vectors must share a positive dimension");
      }
    }
  }

  std::size_t size() const { return vectors_.size(); }
  Index dim() const { return vectors_.front().size(); }
  const Vector& operator[](std::size_t i) const { return vectors_[i]; }
  const std::vector<Vector>& vectors() const { return vectors_; }

 private:
  std::vector<Vector> vectors_;
};

/// One vector per line, comma separated.
inline Population load_population_csv(std::istream& in) {
  std::vector<Vector> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto vals = parse_csv_reals(line, line_no);
    rows.emplace_back(Eigen::Map<const Vector>(vals.data(), static_cast<Index>(vals.size())));
  }
  return Population(std::move(rows));
}

inline Population load_population_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return load_population_csv(in);
}

struct FinitePopStats {
  Vector mean;
  SymMatrix sample_cov;  // 1/(n-1) normalization
};

inline FinitePopStats finite_pop_stats(const Population& pop) {
  const std::size_t n = pop.size();
  if (n < 2) throw std::invalid_argument("finite_pop_stats: sample covariance needs n >= 2");
  Vector mean = Vector::Zero(pop.dim());
  for (const auto& v : pop.vectors()) mean += v;
  mean /= static_cast<double>(n);
  Matrix s = Matrix::Zero(pop.dim(), pop.dim());
  for (const auto& v : pop.vectors()) s += (v - mean) * (v - mean).transpose();
  s /= static_cast<double>(n - 1);
  return {mean, SymMatrix(s)};
}

/// Covariance of the mean of a size-b simple random sample drawn without
/// replacement: (1/b)(1 - b/n) S_n.
inline SymMatrix finite_pop_cov(const Population& pop, std::size_t b) {
  const std::size_t n = pop.size();
  if (b < 1 || b > n) {
    throw std::invalid_argument("finite_pop_cov: need 1 <= b <= n (b=" + std::to_string(b) +
                                ", n=" + std::to_string(n) + ")");
  }
  const FinitePopStats stats = finite_pop_stats(pop);
  const double nb = static_cast<double>(b);
  return ((1.0 / nb) * (1.0 - nb / static_cast<double>(n))) * stats.sample_cov;
}

inline double binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0.0;
  k = std::min(k, n - k);
  double c = 1.0;
  for (std::size_t i = 1; i <= k; ++i) c = c * static_cast<double>(n - k + i) / static_cast<double>(i);
  return std::round(c);
}

inline constexpr double kMaxEnumeratedBatches = 1e6;

/// Exact covariance of the batch mean by averaging over every size-b subset.
inline SymMatrix enumerate_batch_cov(const Population& pop, std::size_t b) {
  const std::size_t n = pop.size();
  if (b < 1 || b > n) throw std::invalid_argument("enumerate_batch_cov: need 1 <= b <= n");
  const double count = binomial(n, b);
  if (count > kMaxEnumeratedBatches) {
    throw std::invalid_argument("enumerate_batch_cov: C(" + std::to_string(n) + "," + std::to_string(b) +
                                ") exceeds the enumeration cap");
  }
  Vector center = Vector::Zero(pop.dim());
  for (const auto& v : pop.vectors()) center += v;
  center /= static_cast<double>(n);

  std::vector<std::size_t> idx(b);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Matrix acc = Matrix::Zero(pop.dim(), pop.dim());
  Vector m(pop.dim());
  while (true) {
    m.setZero();
    for (std::size_t i : idx) m += pop[i];
    m = m / static_cast<double>(b) - center;
    acc += m * m.transpose();
    // Advance to the next combination in lexicographic order.
    std::size_t k = b;
    while (k > 0 && idx[k - 1] == n - b + k - 1) --k;
    if (k == 0) break;
    ++idx[k - 1];
    for (std::size_t j = k; j < b; ++j) idx[j] = idx[j - 1] + 1;
  }
  return SymMatrix(acc / count);
}

/// Uniform size-b subset of {0..n-1} by a partial Fisher-Yates shuffle.
inline std::vector<std::size_t> draw_minibatch(std::size_t n, std::size_t b, Stream& rng) {
  if (b < 1 || b > n) throw std::invalid_argument("draw_minibatch: need 1 <= b <= n");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
    std::swap(perm[i], perm[j]);
  }
  perm.resize(b);
  return perm;
}

inline std::vector<std::size_t> draw_minibatch(const Population& pop, std::size_t b, Stream& rng) {
  return draw_minibatch(pop.size(), b, rng);
}

// ---------------------------------------------------------------------------
// Gradient models
// ---------------------------------------------------------------------------

/// psi = H theta + G^{1/2} zeta: the linearized surrogate with exact mean H theta
/// and noise covariance G.
struct GaussianScore {
  SymMatrix hessian;
  SymMatrix noise;
  SymMatrix noise_root;
};

enum class Link { probit, logistic };

/// Binary responses Y | X ~ Bernoulli(link(beta0' X)), X ~ N(0, I), fitted
/// with the logistic loss. link = probit gives the misspecified setting.
struct BinaryRegression {
  Vector beta0;
  Link dgp = Link::probit;
};

/// How a gaussian_score batch mean is produced. per_sample averages b draws;
/// batch_mean draws the average directly from N(H theta, G / b), which has
/// the same law at 1/b of the cost.
enum class BatchDraw { per_sample, batch_mean };

class GradientModel {
 public:
  static GradientModel gaussian_score(SymMatrix hessian, SymMatrix noise) {
    if (hessian.dim() != noise.dim()) throw std::invalid_argument("gaussian_score: dimension mismatch");
    require_psd(noise, "gaussian_score noise covariance");
    SymMatrix root = psd_sqrt(noise);
    return GradientModel(GaussianScore{std::move(hessian), std::move(noise), std::move(root)});
  }

  static GradientModel probit_dgp_logistic_fit(Vector beta0) {
    return GradientModel(BinaryRegression{std::move(beta0), Link::probit});
  }

  static GradientModel logistic_dgp_logistic_fit(Vector beta0) {
    return GradientModel(BinaryRegression{std::move(beta0), Link::logistic});
  }

  Index dim() const {
    return std::visit(
        [](const auto& m) -> Index {
          if constexpr (std::is_same_v<std::decay_t<decltype(m)>, GaussianScore>) {
            return m.hessian.dim();
          } else {
            return m.beta0.size();
          }
        },
        model_);
  }

  const GaussianScore* gaussian() const { return std::get_if<GaussianScore>(&model_); }
  const BinaryRegression* binary() const { return std::get_if<BinaryRegression>(&model_); }

 private:
  explicit GradientModel(std::variant<GaussianScore, BinaryRegression> m) : model_(std::move(m)) {}
  std::variant<GaussianScore, BinaryRegression> model_;
};

inline double link_value(Link link, double z) { return link == Link::probit ? normal_cdf(z) : sigmoid(z); }

/// Reusable workspace for drawing mini-batch gradients without allocating.
class GradientSampler {
 public:
  GradientSampler(const GradientModel& model, BatchDraw draw = BatchDraw::per_sample)
      : model_(&model), draw_(draw), x_(model.dim()), z_(model.dim()), tmp_(model.dim()) {}

  /// Writes the average of b fresh per-sample gradients at theta into out.
  void draw(const Vector& theta, int b, Stream& rng, Vector& out) {
    if (theta.size() != model_->dim()) throw std::invalid_argument("sample_gradient: dimension mismatch");
    if (b < 1) throw std::invalid_argument("sample_gradient: batch size must be >= 1");
    out.resize(theta.size());
    if (const GaussianScore* g = model_->gaussian()) {
      draw_gaussian(*g, theta, b, rng, out);
    } else {
      draw_binary(*model_->binary(), theta, b, rng, out);
    }
  }

 private:
  void fill_normal(Vector& v, Stream& rng) {
    for (Index i = 0; i < v.size(); ++i) v(i) = rng.normal();
  }

  void draw_gaussian(const GaussianScore& g, const Vector& theta, int b, Stream& rng, Vector& out) {
    out.noalias() = g.hessian.mat() * theta;
    if (draw_ == BatchDraw::batch_mean) {
      fill_normal(z_, rng);
      tmp_.noalias() = g.noise_root.mat() * z_;
      out += tmp_ / std::sqrt(static_cast<double>(b));
      return;
    }
    x_.setZero();
    for (int i = 0; i < b; ++i) {
      fill_normal(z_, rng);
      x_.noalias() += g.noise_root.mat() * z_;
    }
    out += x_ / static_cast<double>(b);
  }

  void draw_binary(const BinaryRegression& m, const Vector& theta, int b, Stream& rng, Vector& out) {
    out.setZero();
    for (int i = 0; i < b; ++i) {
      fill_normal(x_, rng);
      const double eta_fit = theta.dot(x_);
      const double eta_true = m.beta0.dot(x_);
      double y = 0.0;
      if (m.dgp == Link::probit) {
        y = eta_true + rng.normal() > 0.0 ? 1.0 : 0.0;
      } else {
        y = rng.uniform() < sigmoid(eta_true) ? 1.0 : 0.0;
      }
      out += (sigmoid(eta_fit) - y) * x_;
    }
    out /= static_cast<double>(b);
  }

  const GradientModel* model_;
  BatchDraw draw_;
  Vector x_, z_, tmp_;
};

inline Vector sample_gradient(const GradientModel& model, const Vector& theta, int b, Stream& rng,
                              BatchDraw draw = BatchDraw::per_sample) {
  GradientSampler sampler(model, draw);
  Vector out;
  sampler.draw(theta, b, rng, out);
  return out;
}

// ---------------------------------------------------------------------------
// Population moments of the binary-regression gradient
// ---------------------------------------------------------------------------

struct GradientMoments {
  Vector mean;         // E[psi]
  SymMatrix second;    // E[psi psi']
  SymMatrix hessian;   // E[d psi / d theta]

  SymMatrix covariance() const { return SymMatrix(Matrix(second.mat() - mean * mean.transpose())); }
};

namespace detail {

// theta = a u and beta0 = c u for a common unit vector u.
struct Collinear {
  Vector u;
  double a = 0.0;
  double c = 0.0;
};

inline Collinear collinear(const Vector& theta, const Vector& beta0) {
  const Index d = beta0.size();
  Collinear out{Vector::Unit(d, 0)};
  if (beta0.norm() > 0.0) {
    out.u = beta0 / beta0.norm();
  } else if (theta.norm() > 0.0) {
    out.u = theta / theta.norm();
  }
  out.a = theta.dot(out.u);
  out.c = beta0.dot(out.u);
  if ((theta - out.a * out.u).norm() > 1e-8 * (1.0 + theta.norm())) {
    throw std::invalid_argument(
        "binary regression moments: theta must be parallel to beta0 (the one-dimensional quadrature "
        "covers only that direction)");
  }
  return out;
}

inline SymMatrix axis_split(const Vector& u, double along, double across) {
  const Index d = u.size();
  return SymMatrix(Matrix(along * u * u.transpose() + across * (Matrix::Identity(d, d) - u * u.transpose())));
}

}  // namespace detail

/// Exact population moments of the logistic-loss gradient under the model's
/// data-generating process, by Gauss-Hermite quadrature along beta0.
inline GradientMoments binary_gradient_moments(const BinaryRegression& m, const Vector& theta) {
  if (theta.size() != m.beta0.size()) throw std::invalid_argument("binary_gradient_moments: dimension mismatch");
  const detail::Collinear cl = detail::collinear(theta, m.beta0);
  const GaussHermite& rule = default_rule();
  double mean_z = 0.0, v_z2 = 0.0, v_1 = 0.0, h_z2 = 0.0, h_1 = 0.0;
  for (Index i = 0; i < rule.nodes.size(); ++i) {
    const double z = rule.nodes(i), w = rule.weights(i);
    const double s = sigmoid(cl.a * z);
    const double p = link_value(m.dgp, cl.c * z);
    // E[(s - Y)^2 | Z] with Y ~ Bernoulli(p).
    const double v = s * s - 2.0 * s * p + p;
    const double curv = s * (1.0 - s);
    mean_z += w * (s - p) * z;
    v_z2 += w * v * z * z;
    v_1 += w * v;
    h_z2 += w * curv * z * z;
    h_1 += w * curv;
  }
  return {mean_z * cl.u, detail::axis_split(cl.u, v_z2, v_1), detail::axis_split(cl.u, h_z2, h_1)};
}

/// Noise covariance of a single per-sample gradient at theta.
inline SymMatrix gradient_covariance(const GradientModel& model, const Vector& theta) {
  if (const GaussianScore* g = model.gaussian()) return g->noise;
  return binary_gradient_moments(*model.binary(), theta).covariance();
}

// ---------------------------------------------------------------------------
// KL projection and sandwich matrices
// ---------------------------------------------------------------------------

/// Minimizer of the expected logistic loss when Y | X follows the given link
/// with coefficient beta0 and X ~ N(0, I). The solution is parallel to beta0;
/// its length solves E[(sigmoid(c Z) - link(|beta0| Z)) Z] = 0 by Newton's method.
inline Vector kl_projection_probit_logistic(const Vector& beta0, Link dgp = Link::probit) {
  const double s = beta0.norm();
  if (s == 0.0) return Vector::Zero(beta0.size());
  const GaussHermite& rule = default_rule();
  const auto moment = [&](double c) {
    double f = 0.0, df = 0.0;
    for (Index i = 0; i < rule.nodes.size(); ++i) {
      const double z = rule.nodes(i), w = rule.weights(i);
      const double sg = sigmoid(c * z);
      f += w * (sg - link_value(dgp, s * z)) * z;
      df += w * sg * (1.0 - sg) * z * z;
    }
    return std::pair{f, df};
  };
  double c = dgp == Link::probit ? 1.6 * s : s;
  for (int iter = 0; iter < 100; ++iter) {
    const auto [f, df] = moment(c);
    if (std::abs(f) < 1e-13) return (c / s) * beta0;
    const double step = f / df;
    c -= step;
    if (std::abs(step) < 1e-15 * std::max(1.0, std::abs(c))) {
      const auto [f2, df2] = moment(c);
      (void)df2;
      if (std::abs(f2) < 1e-10) return (c / s) * beta0;
    }
  }
  throw NoConvergence("kl_projection_probit_logistic: Newton iteration did not converge in 100 steps");
}

struct SandwichPair {
  SymMatrix hessian;  // H*: Hessian of the expected loss at beta*
  SymMatrix noise;    // J*: covariance of the per-sample gradient at beta*
};

inline SandwichPair sandwich_matrices(const Vector& beta_star, const Vector& beta0, Link dgp = Link::probit) {
  const GradientMoments mom = binary_gradient_moments(BinaryRegression{beta0, dgp}, beta_star);
  return {mom.hessian, mom.covariance()};
}

// ---------------------------------------------------------------------------
// Alignment check
// ---------------------------------------------------------------------------

struct AlignmentReport {
  SymMatrix empirical;
  SymMatrix predicted;
  Matrix stderr_jackknife;
  double max_deviation_se = 0.0;
};

inline constexpr int kJackknifeGroups = 50;

/// Monte Carlo covariance of sample_gradient at theta against G(theta)/b,
/// with elementwise deviations scaled by grouped-jackknife standard errors.
inline AlignmentReport alignment_check(const GradientModel& model, const Vector& theta, int b, int reps,
                                       Stream& rng) {
  if (reps < 100) throw std::invalid_argument("alignment_check: need at least 100 replicates");
  const Index d = model.dim();
  GradientSampler sampler(model);
  std::vector<Vector> draws(static_cast<std::size_t>(reps));
  for (auto& g : draws) sampler.draw(theta, b, rng, g);

  const int groups = kJackknifeGroups;
  std::vector<Vector> gsum(groups, Vector::Zero(d));
  std::vector<Matrix> gsq(groups, Matrix::Zero(d, d));
  std::vector<double> gcount(groups, 0.0);
  for (int r = 0; r < reps; ++r) {
    const int k = r % groups;
    gsum[k] += draws[static_cast<std::size_t>(r)];
    gsq[k] += draws[static_cast<std::size_t>(r)] * draws[static_cast<std::size_t>(r)].transpose();
    gcount[k] += 1.0;
  }
  Vector tsum = Vector::Zero(d);
  Matrix tsq = Matrix::Zero(d, d);
  for (int k = 0; k < groups; ++k) {
    tsum += gsum[k];
    tsq += gsq[k];
  }
  const auto cov_of = [](const Vector& sum, const Matrix& sq, double n) {
    const Vector mean = sum / n;
    return Matrix((sq - n * mean * mean.transpose()) / (n - 1.0));
  };
  const Matrix full = cov_of(tsum, tsq, reps);
  std::vector<Matrix> leave(groups);
  Matrix leave_mean = Matrix::Zero(d, d);
  for (int k = 0; k < groups; ++k) {
    leave[k] = cov_of(tsum - gsum[k], tsq - gsq[k], reps - gcount[k]);
    leave_mean += leave[k] / groups;
  }
  Matrix var = Matrix::Zero(d, d);
  for (int k = 0; k < groups; ++k) var += (leave[k] - leave_mean).array().square().matrix();
  var *= static_cast<double>(groups - 1) / groups;

  AlignmentReport rep{SymMatrix(full), (1.0 / b) * gradient_covariance(model, theta), var.cwiseSqrt()};
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) {
      const double dev = std::abs(rep.empirical(i, j) - rep.predicted(i, j));
      rep.max_deviation_se = std::max(rep.max_deviation_se, dev / rep.stderr_jackknife(i, j));
    }
  return rep;
}

}  // namespace fisherlab
