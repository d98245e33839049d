#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "egc/schema.hpp"

namespace egc {

// Latent pre-image of one observed cell: an interval (lb, ub], possibly
// unbounded. Continuous observations give a single point (lb == ub).
struct LatentInterval {
  double lb;
  double ub;
  bool point;
};

// Empirical marginal of an ordered (continuous or ordinal) variable.
// Continuous: the sorted observed sample, transformed by interpolated
// empirical quantiles. Ordinal: per-level counts with latent cutoffs at
// Phi^{-1} of the scaled empirical CDF.
class OrderedMarginal {
 public:
  static OrderedMarginal fit(const Eigen::VectorXd& observed, VarKind kind, int levels = 0);
  // Ordinal marginal with prescribed cutoffs (ground-truth models).
  static OrderedMarginal from_cutoffs(const Eigen::VectorXd& cutoffs);

  VarKind kind() const { return kind_; }
  Eigen::Index observation_count() const { return n_; }
  const Eigen::VectorXd& sorted_values() const { return sorted_; }
  const Eigen::VectorXd& level_counts() const { return counts_; }
  const Eigen::VectorXd& cutoffs() const { return cutoffs_; }
  bool has_counts() const { return counts_.size() > 0; }

  // f(z): interpolated empirical quantile at Phi(z), or 1 + #cutoffs below z.
  double forward(double z) const;

  // f^{-1}(x). Continuous: the point Phi^{-1}(F(x)) with the n/(n+1) scaling
  // (nearest-rank for values never observed); degenerate constant columns map
  // to the full real line. Ordinal level l: (s_{l-1}, s_l].
  LatentInterval inverse(double x) const;

 private:
  VarKind kind_ = VarKind::Continuous;
  Eigen::Index n_ = 0;
  Eigen::VectorXd sorted_;   // continuous
  Eigen::VectorXd counts_;   // ordinal, size L
  Eigen::VectorXd cutoffs_;  // ordinal, size L-1
  bool constant_ = false;
};

// Mean vector of a Gaussian-Max categorical variable; mu[0] == 0.
struct CategoricalMarginal {
  Eigen::VectorXd mu;
  int category_count() const { return static_cast<int>(mu.size()); }
};

struct MarginalFitConfig {
  int mc_samples = 5000;       // M
  double beta = 1000.0;        // softmax inverse temperature
  std::uint64_t seed = 17;     // common-random-numbers sample set
  double tol = 1e-6;           // max |residual| on the K-1 equations
  int max_iter = 300;
  double rare_threshold = 1e-4;
};

// Ordered marginal from observed values. Throws on empty input.
OrderedMarginal fit_ordered_marginal(const Eigen::VectorXd& observed, VarKind kind,
                                     int levels = 0);

// Monte Carlo estimate of P[argmax(z + mu) = k] via the expectation of a
// sharp softmax over a fixed sample set regenerated from cfg.seed.
Eigen::VectorXd argmax_prob(const Eigen::VectorXd& mu, const MarginalFitConfig& cfg);

// Solves the K-1 nonlinear equations argmax_prob(mu) = freqs for mu with
// mu[0] = 0 using a Powell-style dogleg on the Monte Carlo residuals with
// an analytic softmax Jacobian. Throws for zero-frequency or rare categories.
CategoricalMarginal estimate_categorical_mu(const Eigen::VectorXd& freqs,
                                            const MarginalFitConfig& cfg);
CategoricalMarginal estimate_categorical_mu(const Eigen::VectorXd& freqs,
                                            const MarginalFitConfig& cfg,
                                            const Eigen::VectorXd& mu_init);

}  // namespace egc
