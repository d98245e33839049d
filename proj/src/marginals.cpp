#include "egc/marginals.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "egc/normal.hpp"
#include "egc/rng.hpp"

namespace egc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

OrderedMarginal OrderedMarginal::fit(const Eigen::VectorXd& observed, VarKind kind, int levels) {
  if (observed.size() == 0)
    throw std::invalid_argument("no observations for variable");
  if (kind == VarKind::Categorical)
    throw std::invalid_argument("ordered marginal cannot be categorical");

  OrderedMarginal m;
  m.kind_ = kind;
  m.n_ = observed.size();

  if (kind == VarKind::Continuous) {
    m.sorted_ = observed;
    std::sort(m.sorted_.data(), m.sorted_.data() + m.sorted_.size());
    m.constant_ = m.sorted_(0) == m.sorted_(m.sorted_.size() - 1);
    return m;
  }

  if (levels < 2) throw std::invalid_argument("ordinal marginal needs at least 2 levels");
  m.counts_ = Eigen::VectorXd::Zero(levels);
  for (Eigen::Index i = 0; i < observed.size(); ++i) {
    const double x = observed(i);
    if (x != std::floor(x) || x < 1.0 || x > levels)
      throw std::invalid_argument("ordinal observation out of range [1, " +
                                  std::to_string(levels) + "]");
    m.counts_(static_cast<Eigen::Index>(x) - 1) += 1.0;
  }
  m.cutoffs_ = Eigen::VectorXd(levels - 1);
  const double n = static_cast<double>(m.n_);
  double cum = 0.0;
  for (int l = 0; l + 1 < levels; ++l) {
    cum += m.counts_(l);
    // Clamp keeps Phi^{-1} finite when boundary levels are unobserved.
    const double c = std::min(std::max(cum, 1.0), n);
    m.cutoffs_(l) = norm_quantile(c / (n + 1.0));
  }
  return m;
}

OrderedMarginal OrderedMarginal::from_cutoffs(const Eigen::VectorXd& cutoffs) {
  for (Eigen::Index l = 1; l < cutoffs.size(); ++l)
    if (cutoffs(l) < cutoffs(l - 1))
      throw std::invalid_argument("cutoffs must be nondecreasing");
  OrderedMarginal m;
  m.kind_ = VarKind::Ordinal;
  m.n_ = 0;
  m.cutoffs_ = cutoffs;
  return m;
}

double OrderedMarginal::forward(double z) const {
  if (kind_ == VarKind::Ordinal) {
    // 1 + number of cutoffs strictly below z.
    const double* begin = cutoffs_.data();
    const double* end = begin + cutoffs_.size();
    return 1.0 + static_cast<double>(std::lower_bound(begin, end, z) - begin);
  }
  const Eigen::Index n = sorted_.size();
  if (n == 1 || constant_) return sorted_(0);
  const double u = norm_cdf(z);
  const double h = static_cast<double>(n - 1) * u;
  const Eigen::Index i = std::min<Eigen::Index>(static_cast<Eigen::Index>(h), n - 2);
  const double frac = h - static_cast<double>(i);
  return sorted_(i) + frac * (sorted_(i + 1) - sorted_(i));
}

LatentInterval OrderedMarginal::inverse(double x) const {
  if (kind_ == VarKind::Ordinal) {
    const Eigen::Index L = cutoffs_.size() + 1;
    const Eigen::Index l = static_cast<Eigen::Index>(x);
    if (x != std::floor(x) || l < 1 || l > L)
      throw std::invalid_argument("ordinal value outside [1, " + std::to_string(L) + "]");
    const double lb = (l == 1) ? -kInf : cutoffs_(l - 2);
    const double ub = (l == L) ? kInf : cutoffs_(l - 1);
    return {lb, ub, false};
  }
  if (constant_) return {-kInf, kInf, false};
  const Eigen::Index n = sorted_.size();
  const double* begin = sorted_.data();
  const double* end = begin + n;
  // Midpoint tie convention: ties contribute half their multiplicity, values
  // never observed fall back to the nearest rank.
  const double below = static_cast<double>(std::lower_bound(begin, end, x) - begin);
  const double upto = static_cast<double>(std::upper_bound(begin, end, x) - begin);
  double count = below + 0.5 * (upto - below);
  count = std::min(std::max(count, 0.5), static_cast<double>(n));
  const double z = norm_quantile(count / (static_cast<double>(n) + 1.0));
  return {z, z, true};
}

OrderedMarginal fit_ordered_marginal(const Eigen::VectorXd& observed, VarKind kind, int levels) {
  return OrderedMarginal::fit(observed, kind, levels);
}

namespace {

// Common-random-numbers sample set: materialized when it fits comfortably in
// memory, regenerated from the seed otherwise. Both paths draw in the same
// order, so results are identical.
class SampleSet {
 public:
  SampleSet(Eigen::Index k, const MarginalFitConfig& cfg) : k_(k), cfg_(cfg) {
    if (static_cast<long long>(k) * cfg.mc_samples <= 8'000'000) {
      Rng rng(cfg.seed);
      cache_.resize(k, cfg.mc_samples);
      for (int i = 0; i < cfg.mc_samples; ++i)
        for (Eigen::Index r = 0; r < k; ++r) cache_(r, i) = rng.normal();
    }
  }

  // Accumulates the softmax probability estimate and optionally its Jacobian.
  void pass(const Eigen::VectorXd& mu, Eigen::VectorXd& probs, Eigen::MatrixXd* jac) const {
    const double beta = cfg_.beta;
    Eigen::VectorXd e(k_), w(k_);
    probs.setZero(k_);
    if (jac) jac->setZero(k_, k_);
    Rng rng(cfg_.seed);
    for (int i = 0; i < cfg_.mc_samples; ++i) {
      if (cache_.size() > 0) {
        e = beta * (cache_.col(i) + mu);
      } else {
        for (Eigen::Index r = 0; r < k_; ++r) e(r) = beta * (rng.normal() + mu(r));
      }
      const double m = e.maxCoeff();
      double sum = 0.0;
      for (Eigen::Index r = 0; r < k_; ++r) {
        w(r) = std::exp(e(r) - m);
        sum += w(r);
      }
      w /= sum;
      probs += w;
      if (jac) {
        // d w_k / d mu_j = beta * w_k (delta_kj - w_j)
        jac->noalias() -= (beta * w) * w.transpose();
        jac->diagonal() += beta * w;
      }
    }
    const double inv_m = 1.0 / static_cast<double>(cfg_.mc_samples);
    probs *= inv_m;
    if (jac) *jac *= inv_m;
  }

 private:
  Eigen::Index k_;
  MarginalFitConfig cfg_;
  Eigen::MatrixXd cache_;
};

}  // namespace

Eigen::VectorXd argmax_prob(const Eigen::VectorXd& mu, const MarginalFitConfig& cfg) {
  if (mu.size() < 2) throw std::invalid_argument("argmax_prob: need K >= 2");
  if (cfg.mc_samples < 1 || cfg.beta <= 0.0)
    throw std::invalid_argument("argmax_prob: invalid config");
  Eigen::VectorXd p;
  SampleSet samples(mu.size(), cfg);
  samples.pass(mu, p, nullptr);
  return p;
}

CategoricalMarginal estimate_categorical_mu(const Eigen::VectorXd& freqs,
                                            const MarginalFitConfig& cfg) {
  const Eigen::Index K = freqs.size();
  Eigen::VectorXd init(K);
  // Gumbel-softmax closed form as the starting point.
  for (Eigen::Index k = 0; k < K; ++k)
    init(k) = std::log(std::max(freqs(k), 1e-12)) - std::log(std::max(freqs(0), 1e-12));
  return estimate_categorical_mu(freqs, cfg, init);
}

CategoricalMarginal estimate_categorical_mu(const Eigen::VectorXd& freqs,
                                            const MarginalFitConfig& cfg,
                                            const Eigen::VectorXd& mu_init) {
  const Eigen::Index K = freqs.size();
  if (K < 2) throw std::invalid_argument("categorical variable needs K >= 2");
  if (std::abs(freqs.sum() - 1.0) > 1e-8)
    throw std::invalid_argument("category frequencies must sum to 1");
  for (Eigen::Index k = 0; k < K; ++k) {
    if (freqs(k) <= 0.0)
      throw std::invalid_argument("zero-frequency category " + std::to_string(k + 1) +
                                  ": merge or drop rare categories before fitting");
    if (freqs(k) < cfg.rare_threshold)
      throw std::runtime_error("category " + std::to_string(k + 1) + " has frequency " +
                               std::to_string(freqs(k)) +
                               " below the rare threshold; merge rare categories "
                               "(--merge-rare) or drop them");
  }
  if (mu_init.size() != K) throw std::invalid_argument("mu_init has wrong size");

  const Eigen::Index D = K - 1;
  Eigen::VectorXd mu = mu_init;
  mu.array() -= mu(0);  // normalize mu[0] = 0

  Eigen::VectorXd probs(K);
  Eigen::MatrixXd jac_full(K, K);
  const SampleSet samples(K, cfg);

  auto residual = [&](const Eigen::VectorXd& m, Eigen::VectorXd& r) {
    samples.pass(m, probs, nullptr);
    r = probs.tail(D) - freqs.tail(D);
  };
  auto residual_jac = [&](const Eigen::VectorXd& m, Eigen::VectorXd& r, Eigen::MatrixXd& J) {
    samples.pass(m, probs, &jac_full);
    r = probs.tail(D) - freqs.tail(D);
    J = jac_full.bottomRightCorner(D, D);
    // The sharp-softmax Jacobian at a point sees only the handful of samples
    // currently in transition: it underflows to zero between transitions and
    // is noisy close to the root. A central difference spanning many
    // transitions recovers the averaged slope.
    if (J.diagonal().minCoeff() < 1e-3 || r.cwiseAbs().maxCoeff() < 1e-2) {
      const double h = 10.0 / cfg.beta;
      Eigen::VectorXd lo(K), hi(K), mp = m;
      for (Eigen::Index j = 0; j < D; ++j) {
        mp(j + 1) = m(j + 1) + h;
        samples.pass(mp, hi, nullptr);
        mp(j + 1) = m(j + 1) - h;
        samples.pass(mp, lo, nullptr);
        mp(j + 1) = m(j + 1);
        J.col(j) = (hi.tail(D) - lo.tail(D)) / (2.0 * h);
      }
    }
  };

  Eigen::VectorXd r(D);
  Eigen::MatrixXd J(D, D);
  residual_jac(mu, r, J);

  // Dogleg trust-region phase with a damped-Newton fallback. Returns when
  // converged or stalled.
  auto run_dogleg = [&](int iterations) {
    double radius = 1.0;
    int stalls = 0;
    int steps_since_jac = 0;
    double lm_lambda = 1e-3;
    for (int it = 0; it < iterations && stalls < 12; ++it) {
      if (r.cwiseAbs().maxCoeff() <= cfg.tol) return;

      Eigen::VectorXd step(D);
      if (stalls < 6) {
        Eigen::VectorXd newton = J.fullPivLu().solve(-r);
        const Eigen::VectorXd g = J.transpose() * r;
        const double gnorm2 = g.squaredNorm();
        const double jg2 = (J * g).squaredNorm();
        Eigen::VectorXd cauchy =
            (jg2 > 0.0) ? ((-gnorm2 / jg2) * g).eval() : Eigen::VectorXd::Zero(D).eval();
        if (newton.allFinite() && newton.norm() <= radius) {
          step = newton;
        } else if (cauchy.norm() >= radius) {
          step = (cauchy.norm() > 0.0) ? (radius / cauchy.norm()) * cauchy : cauchy;
        } else if (newton.allFinite()) {
          const Eigen::VectorXd d = newton - cauchy;
          const double a = d.squaredNorm();
          const double b = 2.0 * cauchy.dot(d);
          const double c = cauchy.squaredNorm() - radius * radius;
          const double t =
              (a > 0.0) ? (-b + std::sqrt(std::max(b * b - 4 * a * c, 0.0))) / (2 * a) : 0.0;
          step = cauchy + t * d;
        } else {
          step = cauchy;
        }
      } else {
        // Damped Newton once the trust region stalls.
        Eigen::MatrixXd H = J.transpose() * J;
        H.diagonal().array() += lm_lambda;
        step = H.ldlt().solve(-J.transpose() * r);
      }

      Eigen::VectorXd mu_trial = mu;
      mu_trial.tail(D) += step;
      Eigen::VectorXd r_trial(D);
      residual(mu_trial, r_trial);

      const double pred = r.squaredNorm() - (r + J * step).squaredNorm();
      const double actual = r.squaredNorm() - r_trial.squaredNorm();

      if (actual > 0.0) {
        mu = mu_trial;
        // The smoothed Jacobian drifts slowly; refresh it only every few
        // accepted steps.
        if (++steps_since_jac >= 4) {
          residual_jac(mu, r, J);
          steps_since_jac = 0;
        } else {
          r = r_trial;
        }
        stalls = 0;
        lm_lambda = std::max(lm_lambda * 0.5, 1e-6);
        if (pred > 0.0 && actual > 0.75 * pred) radius = std::min(radius * 2.0, 1e3);
      } else {
        ++stalls;
        if (stalls == 3 || stalls == 7) {
          residual_jac(mu, r, J);
          steps_since_jac = 0;
        }
        radius = std::max(radius * 0.25, 1e-8);
        lm_lambda = std::min(lm_lambda * 10.0, 1e6);
      }
    }
  };

  // One cyclic pass of safeguarded bisection: p_k is strictly increasing in
  // mu_k on the fixed sample set, so each equation can be solved exactly
  // given the others even where curvature information underflows.
  auto gauss_seidel_sweep = [&] {
    for (Eigen::Index j = 1; j < K; ++j) {
      if (std::abs(r(j - 1)) <= 0.5 * cfg.tol) continue;
      auto rj = [&](double t) {
        Eigen::VectorXd m = mu;
        m(j) = t;
        samples.pass(m, probs, nullptr);
        return probs(j) - freqs(j);
      };
      double lo = mu(j), hi = mu(j);
      double rlo = r(j - 1), rhi = rlo;
      double width = 0.01;
      for (int e = 0; e < 60 && rlo * rhi > 0.0; ++e) {
        if (rlo > 0.0) {
          lo -= width;
          rlo = rj(lo);
        } else {
          hi += width;
          rhi = rj(hi);
        }
        width *= 1.6;
      }
      if (rlo * rhi > 0.0) continue;
      double mid = 0.5 * (lo + hi);
      for (int b = 0; b < 60 && hi - lo > 1e-12; ++b) {
        mid = 0.5 * (lo + hi);
        const double rm = rj(mid);
        if (std::abs(rm) <= 0.25 * cfg.tol) break;
        (rm > 0.0 ? hi : lo) = mid;
      }
      mu(j) = mid;
      residual(mu, r);
    }
  };

  run_dogleg(cfg.max_iter);
  for (int round = 0; round < 20 && r.cwiseAbs().maxCoeff() > cfg.tol; ++round) {
    gauss_seidel_sweep();
    if (r.cwiseAbs().maxCoeff() <= cfg.tol) break;
    residual_jac(mu, r, J);
    run_dogleg(30);
  }

  if (r.cwiseAbs().maxCoeff() <= cfg.tol) return CategoricalMarginal{mu};
  throw std::runtime_error("categorical marginal estimation did not converge (max residual " +
                           std::to_string(r.cwiseAbs().maxCoeff()) + ")");
}

}  // namespace egc
