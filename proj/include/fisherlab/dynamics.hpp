#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fisherlab/matgeom.hpp"
#include "fisherlab/parallel.hpp"
#include "fisherlab/rng.hpp"
#include "fisherlab/sampling.hpp"

namespace fisherlab {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// How stationary statistics are estimated from replicate trajectories.
/// cross_replicate: one terminal state per replicate.
/// time_average: every post-burn-in state of every replicate, pooled.
enum class Estimator { cross_replicate, time_average };

inline const char* to_string(Estimator e) {
  return e == Estimator::cross_replicate ? "cross_replicate" : "time_average";
}

struct SdeConfig {
  double eta = 0.05;
  int b = 1;
  double dt = 1.0;
  std::int64_t steps = 0;
  double burn_in_fraction = 0.4;
  Estimator estimator = Estimator::cross_replicate;
  std::optional<Vector> theta0;  // empty: a standard normal draw per replicate

  double tau() const { return eta / b; }

  std::int64_t burn_in_steps() const {
    return static_cast<std::int64_t>(std::floor(burn_in_fraction * static_cast<double>(steps)));
  }

  void validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("SdeConfig: eta must be positive");
    if (b < 1) throw std::invalid_argument("SdeConfig: batch size must be >= 1");
    if (!(dt > 0.0)) throw std::invalid_argument("SdeConfig: dt must be positive");
    if (steps < 1) throw std::invalid_argument("SdeConfig: steps must be >= 1");
    if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) {
      throw std::invalid_argument("SdeConfig: burn_in_fraction must lie in [0, 1)");
    }
  }
};

/// eta_t for 0-based step t.
struct StepSchedule {
  enum class Kind { constant, polynomial };
  Kind kind = Kind::constant;
  double eta0 = 0.0;
  double t0 = 0.0;

  static StepSchedule constant(double eta) {
    StepSchedule s{Kind::constant, eta, 0.0};
    s.validate();
    return s;
  }

  /// eta_t = eta0 / (t + t0).
  static StepSchedule polynomial(double eta0, double t0) {
    StepSchedule s{Kind::polynomial, eta0, t0};
    s.validate();
    return s;
  }

  void validate() const {
    if (!(eta0 > 0.0)) throw std::invalid_argument("StepSchedule: eta0 must be positive");
    if (kind == Kind::polynomial && !(t0 > 0.0)) {
      throw std::invalid_argument("StepSchedule: polynomial schedule needs t0 > 0");
    }
  }

  double operator()(std::int64_t t) const {
    return kind == Kind::constant ? eta0 : eta0 / (static_cast<double>(t) + t0);
  }
};

/// Replicate r draws from Stream(seed, tag, r).
struct StreamFamily {
  std::uint64_t seed = 0;
  std::string tag;

  Stream replicate(std::uint32_t r) const { return Stream(seed, tag, r); }
};

/// Throws Unstable unless the spectral radius of I - eta dt H is below one.
inline void check_stability(const SymMatrix& h, double eta, double dt) {
  const EigDecomp e = sym_eig(h, "H");
  const double lmax = e.max() * eta * dt;
  const double lmin = e.min() * eta * dt;
  const double rho = std::max(std::abs(1.0 - lmax), std::abs(1.0 - lmin));
  if (!(rho < 1.0)) {
    throw Unstable("unstable step: lambda_max(H)*eta*dt = " + std::to_string(lmax) +
                   " and lambda_min(H)*eta*dt = " + std::to_string(lmin) +
                   "; both must lie in (0, 2)");
  }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct TrajectoryStats {
  Matrix terminal_states;   // replicates x d
  SymMatrix empirical_cov;
  Vector empirical_mean;
  Matrix cov_stderr;        // elementwise standard error of empirical_cov
  double fisher_risk = 0.0;  // mean of theta' F theta
  double risk_stderr = 0.0;
  std::int64_t replicate_count = 0;
  std::int64_t sample_count = 0;  // states entering the estimate
  Estimator estimator = Estimator::cross_replicate;
};

/// Running first and second moments of one block of samples, accumulated
/// about the first sample to limit cancellation.
class MomentAccumulator {
 public:
  MomentAccumulator() = default;
  explicit MomentAccumulator(Index d) : shift_(Vector::Zero(d)), s1_(Vector::Zero(d)), s2_(Matrix::Zero(d, d)) {}

  void add(const Vector& x) {
    if (n_ == 0) shift_ = x;
    const Index d = x.size();
    for (Index j = 0; j < d; ++j) {
      const double dj = x(j) - shift_(j);
      s1_(j) += dj;
      for (Index i = 0; i <= j; ++i) s2_(i, j) += (x(i) - shift_(i)) * dj;
    }
    ++n_;
  }

  std::int64_t count() const { return n_; }

  Vector mean() const { return shift_ + s1_ / static_cast<double>(n_); }

  /// sum (x - mean)(x - mean)'.
  Matrix scatter() const {
    Matrix s = s2_.selfadjointView<Eigen::Upper>();
    return s - s1_ * s1_.transpose() / static_cast<double>(n_);
  }

 private:
  std::int64_t n_ = 0;
  Vector shift_, s1_;
  Matrix s2_;
};

namespace detail {

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double stderr_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

inline TrajectoryStats cross_replicate_stats(Matrix terminal, const SymMatrix& metric) {
  const Index reps = terminal.rows(), d = terminal.cols();
  if (reps < 2) throw std::invalid_argument("estimate_stationary: cross-replicate mode needs >= 2 replicates");
  TrajectoryStats out;
  out.empirical_mean = terminal.colwise().mean().transpose();
  const Matrix centered = terminal.rowwise() - out.empirical_mean.transpose();
  out.empirical_cov = SymMatrix(Matrix(centered.transpose() * centered / static_cast<double>(reps - 1)));
  out.cov_stderr = Matrix::Zero(d, d);
  std::vector<double> unit(reps);
  for (Index i = 0; i < d; ++i)
    for (Index j = i; j < d; ++j) {
      for (Index r = 0; r < reps; ++r) unit[r] = centered(r, i) * centered(r, j);
      out.cov_stderr(i, j) = out.cov_stderr(j, i) = stderr_of(unit);
    }
  for (Index r = 0; r < reps; ++r) {
    const Vector x = terminal.row(r).transpose();
    unit[r] = x.dot(metric.mat() * x);
  }
  out.fisher_risk = mean_of(unit);
  out.risk_stderr = stderr_of(unit);
  out.replicate_count = reps;
  out.sample_count = reps;
  out.estimator = Estimator::cross_replicate;
  out.terminal_states = std::move(terminal);
  return out;
}

/// Pools blocks of post-burn-in samples. Standard errors come from the
/// spread of the per-block estimates.
inline TrajectoryStats time_average_stats(const std::vector<MomentAccumulator>& blocks, Matrix terminal,
                                          const SymMatrix& metric) {
  const Index d = metric.dim();
  std::int64_t total = 0;
  for (const auto& b : blocks) total += b.count();
  if (total < 100) throw std::invalid_argument("estimate_stationary: fewer than 100 post-burn-in samples");
  if (blocks.size() < 2) throw std::invalid_argument("estimate_stationary: need >= 2 blocks for a standard error");
  for (const auto& b : blocks) {
    if (b.count() < 2) throw std::invalid_argument("estimate_stationary: a block holds fewer than 2 samples");
  }
  Vector mean = Vector::Zero(d);
  for (const auto& b : blocks) mean += static_cast<double>(b.count()) * b.mean();
  mean /= static_cast<double>(total);
  Matrix scatter = Matrix::Zero(d, d);
  std::vector<Matrix> block_cov;
  std::vector<double> block_risk;
  for (const auto& b : blocks) {
    const Vector m = b.mean();
    const Matrix s = b.scatter();
    scatter += s + static_cast<double>(b.count()) * (m - mean) * (m - mean).transpose();
    block_cov.push_back(s / static_cast<double>(b.count() - 1));
    const Matrix second = s / static_cast<double>(b.count()) + m * m.transpose();
    block_risk.push_back((metric.mat().cwiseProduct(second)).sum());
  }
  TrajectoryStats out;
  out.empirical_mean = mean;
  out.empirical_cov = SymMatrix(Matrix(scatter / static_cast<double>(total - 1)));
  out.cov_stderr = Matrix::Zero(d, d);
  std::vector<double> unit(blocks.size());
  for (Index i = 0; i < d; ++i)
    for (Index j = i; j < d; ++j) {
      for (std::size_t u = 0; u < blocks.size(); ++u) unit[u] = block_cov[u](i, j);
      out.cov_stderr(i, j) = out.cov_stderr(j, i) = stderr_of(unit);
    }
  double risk = 0.0;
  for (std::size_t u = 0; u < blocks.size(); ++u) risk += static_cast<double>(blocks[u].count()) * block_risk[u];
  out.fisher_risk = risk / static_cast<double>(total);
  out.risk_stderr = stderr_of(block_risk);
  out.replicate_count = terminal.rows();
  out.sample_count = total;
  out.estimator = Estimator::time_average;
  out.terminal_states = std::move(terminal);
  return out;
}

}  // namespace detail

/// A single trajectory in time-average mode is cut into this many
/// contiguous blocks to obtain a standard error.
inline constexpr int kSingleTrajectoryBlocks = 20;

/// Stationary statistics from recorded trajectories (each samples x d, one
/// state per row). Risk is measured about the optimum at the origin.
inline TrajectoryStats estimate_stationary(const std::vector<Matrix>& trajectories, double burn_in_fraction,
                                           Estimator mode, const SymMatrix& metric) {
  if (trajectories.empty()) throw std::invalid_argument("estimate_stationary: no trajectories");
  if (!(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0)) {
    throw std::invalid_argument("estimate_stationary: burn_in_fraction must lie in [0, 1)");
  }
  const Index d = metric.dim();
  Matrix terminal(static_cast<Index>(trajectories.size()), d);
  for (std::size_t r = 0; r < trajectories.size(); ++r) {
    const Matrix& t = trajectories[r];
    if (t.rows() < 1 || t.cols() != d) throw std::invalid_argument("estimate_stationary: malformed trajectory");
    terminal.row(static_cast<Index>(r)) = t.row(t.rows() - 1);
  }
  if (mode == Estimator::cross_replicate) return detail::cross_replicate_stats(std::move(terminal), metric);

  std::vector<MomentAccumulator> blocks;
  for (const Matrix& t : trajectories) {
    const Index start = static_cast<Index>(std::floor(burn_in_fraction * static_cast<double>(t.rows())));
    const Index kept = t.rows() - start;
    const int nblocks = trajectories.size() == 1 ? kSingleTrajectoryBlocks : 1;
    for (int k = 0; k < nblocks; ++k) {
      MomentAccumulator acc(d);
      const Index lo = start + kept * k / nblocks, hi = start + kept * (k + 1) / nblocks;
      for (Index i = lo; i < hi; ++i) acc.add(t.row(i).transpose());
      blocks.push_back(std::move(acc));
    }
  }
  return detail::time_average_stats(blocks, std::move(terminal), metric);
}

inline TrajectoryStats estimate_stationary(const std::vector<Matrix>& trajectories, double burn_in_fraction,
                                           Estimator mode = Estimator::cross_replicate) {
  if (trajectories.empty()) throw std::invalid_argument("estimate_stationary: no trajectories");
  return estimate_stationary(trajectories, burn_in_fraction, mode,
                             SymMatrix::identity(trajectories.front().cols()));
}

// ---------------------------------------------------------------------------
// Euler-Maruyama OU simulation
// ---------------------------------------------------------------------------

namespace detail {

/// theta <- (I - eta dt H) theta + sqrt(2 eta dt / b) C zeta.
class OuStepper {
 public:
  OuStepper(const Geometry& geom, const SdeConfig& cfg)
      : a_(Matrix::Identity(geom.dim(), geom.dim()) - cfg.eta * cfg.dt * geom.hessian.mat()),
        c_(std::sqrt(2.0 * cfg.eta * cfg.dt / cfg.b) * psd_sqrt(geom.noise).mat()),
        zeta_(geom.dim()),
        next_(geom.dim()) {}

  Vector initial(const SdeConfig& cfg, Stream& rng) {
    if (cfg.theta0) {
      if (cfg.theta0->size() != a_.rows()) throw std::invalid_argument("simulate_ou: theta0 dimension mismatch");
      return *cfg.theta0;
    }
    Vector theta(a_.rows());
    for (Index i = 0; i < theta.size(); ++i) theta(i) = rng.normal();
    return theta;
  }

  void step(Vector& theta, Stream& rng) {
    for (Index i = 0; i < zeta_.size(); ++i) zeta_(i) = rng.normal();
    next_.noalias() = a_ * theta;
    next_.noalias() += c_ * zeta_;
    theta.swap(next_);
  }

 private:
  Matrix a_, c_;
  Vector zeta_, next_;
};

}  // namespace detail

/// Runs reps replicates of the OU surrogate and returns post-burn-in
/// stationary statistics. Replicate r uses family.replicate(r), so results
/// do not depend on the thread count.
inline TrajectoryStats simulate_ou(const Geometry& geom, const SdeConfig& cfg, int reps, const StreamFamily& family,
                                   unsigned threads = 1) {
  geom.validate();
  cfg.validate();
  if (reps < 1) throw std::invalid_argument("simulate_ou: reps must be >= 1");
  require_spd(geom.hessian, "H");
  check_stability(geom.hessian, cfg.eta, cfg.dt);
  const Index d = geom.dim();
  const std::int64_t burn = cfg.burn_in_steps();
  const bool pooled = cfg.estimator == Estimator::time_average;
  const int blocks_per_rep = pooled && reps == 1 ? kSingleTrajectoryBlocks : 1;
  const std::int64_t kept = cfg.steps - burn;

  Matrix terminal(reps, d);
  std::vector<MomentAccumulator> blocks(pooled ? static_cast<std::size_t>(reps * blocks_per_rep) : 0,
                                        MomentAccumulator(d));
  parallel_for(static_cast<std::size_t>(reps), threads, [&](std::size_t r) {
    detail::OuStepper stepper(geom, cfg);
    Stream rng = family.replicate(static_cast<std::uint32_t>(r));
    Vector theta = stepper.initial(cfg, rng);
    for (std::int64_t k = 1; k <= cfg.steps; ++k) {
      stepper.step(theta, rng);
      if (pooled && k > burn) {
        const std::int64_t block = (k - burn - 1) * blocks_per_rep / kept;
        blocks[r * blocks_per_rep + block].add(theta);
      }
    }
    terminal.row(static_cast<Index>(r)) = theta.transpose();
  });
  if (!pooled) return detail::cross_replicate_stats(std::move(terminal), geom.metric);
  return detail::time_average_stats(blocks, std::move(terminal), geom.metric);
}

/// Records OU states every `thin` steps (row k holds the state after
/// (k + 1) * thin steps). No stationarity is assumed, so H need only be
/// symmetric.
inline std::vector<Matrix> record_ou_paths(const Geometry& geom, const SdeConfig& cfg, int reps,
                                           const StreamFamily& family, std::int64_t thin = 1,
                                           unsigned threads = 1) {
  geom.validate();
  cfg.validate();
  if (reps < 1) throw std::invalid_argument("record_ou_paths: reps must be >= 1");
  if (thin < 1) throw std::invalid_argument("record_ou_paths: thin must be >= 1");
  std::vector<Matrix> paths(static_cast<std::size_t>(reps));
  parallel_for(paths.size(), threads, [&](std::size_t r) {
    detail::OuStepper stepper(geom, cfg);
    Stream rng = family.replicate(static_cast<std::uint32_t>(r));
    Vector theta = stepper.initial(cfg, rng);
    Matrix path(cfg.steps / thin, geom.dim());
    for (std::int64_t k = 1; k <= cfg.steps; ++k) {
      stepper.step(theta, rng);
      if (k % thin == 0) path.row(k / thin - 1) = theta.transpose();
    }
    paths[r] = std::move(path);
  });
  return paths;
}

// ---------------------------------------------------------------------------
// SGD recursion
// ---------------------------------------------------------------------------

struct Diverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kDivergenceNorm = 1e8;

/// theta_{t+1} = theta_t - eta_t g_t(theta_t) for t = 0 .. steps-1.
/// observe(t, theta) is called after each step with t the number of steps
/// completed.
template <class Observer>
Vector run_sgd(const GradientModel& model, const StepSchedule& schedule, int b, std::int64_t steps, Vector theta,
               Stream& rng, BatchDraw draw, Observer&& observe) {
  schedule.validate();
  if (theta.size() != model.dim()) throw std::invalid_argument("run_sgd: theta0 dimension mismatch");
  if (b < 1) throw std::invalid_argument("run_sgd: batch size must be >= 1");
  if (steps < 0) throw std::invalid_argument("run_sgd: steps must be >= 0");
  GradientSampler sampler(model, draw);
  Vector g(theta.size());
  for (std::int64_t t = 0; t < steps; ++t) {
    sampler.draw(theta, b, rng, g);
    theta.noalias() -= schedule(t) * g;
    const double norm = theta.norm();
    if (!(norm <= kDivergenceNorm)) {
      throw Diverged("run_sgd: |theta| = " + std::to_string(norm) + " exceeded 1e8 at step " +
                     std::to_string(t + 1) + " (eta_t = " + std::to_string(schedule(t)) + ")");
    }
    observe(t + 1, static_cast<const Vector&>(theta));
  }
  return theta;
}

inline Vector run_sgd(const GradientModel& model, const StepSchedule& schedule, int b, std::int64_t steps,
                      Vector theta0, Stream& rng, BatchDraw draw = BatchDraw::per_sample) {
  return run_sgd(model, schedule, b, steps, std::move(theta0), rng, draw, [](std::int64_t, const Vector&) {});
}

/// States after each checkpoint step count (ascending, positive). Row k of
/// the result is theta at checkpoints[k].
inline Matrix run_sgd_checkpoints(const GradientModel& model, const StepSchedule& schedule, int b,
                                  std::span<const std::int64_t> checkpoints, Vector theta0, Stream& rng,
                                  BatchDraw draw = BatchDraw::per_sample) {
  for (std::size_t k = 0; k < checkpoints.size(); ++k) {
    if (checkpoints[k] < 1 || (k > 0 && checkpoints[k] <= checkpoints[k - 1])) {
      throw std::invalid_argument("run_sgd_checkpoints: checkpoints must be positive and strictly ascending");
    }
  }
  Matrix out(static_cast<Index>(checkpoints.size()), model.dim());
  if (checkpoints.empty()) return out;
  std::size_t next = 0;
  run_sgd(model, schedule, b, checkpoints.back(), std::move(theta0), rng, draw,
          [&](std::int64_t t, const Vector& theta) {
            if (t == checkpoints[next]) out.row(static_cast<Index>(next++)) = theta.transpose();
          });
  return out;
}

}  // namespace fisherlab
