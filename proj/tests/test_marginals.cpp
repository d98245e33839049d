#include <doctest.h>

#include <cmath>
#include <random>

#include "egc/marginals.hpp"
#include "egc/normal.hpp"
#include "test_support.hpp"

using namespace egc;

namespace {

// Independent oracle: argmax frequencies from fresh std::mt19937_64 draws.
Eigen::VectorXd argmax_freq_oracle(const Eigen::VectorXd& mu, long samples, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(mu.size());
  for (long s = 0; s < samples; ++s) {
    int best = 0;
    double best_val = nd(gen) + mu(0);
    for (int k = 1; k < mu.size(); ++k) {
      const double v = nd(gen) + mu(k);
      if (v > best_val) {
        best_val = v;
        best = k;
      }
    }
    counts(best) += 1.0;
  }
  return counts / static_cast<double>(samples);
}

}  // namespace

TEST_CASE("normal quantile against frozen reference values") {
  CHECK(norm_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(norm_quantile(0.4) == doctest::Approx(-0.2533471031357997).epsilon(1e-12));
  CHECK(norm_quantile(0.45) == doctest::Approx(-0.12566134685507402).epsilon(1e-12));
  CHECK(norm_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  // Round trip through the erfc-based CDF, center to far tail.
  for (double p : {0.123456, 0.5, 0.9, 1e-4, 1e-10, 1e-50})
    CHECK(norm_cdf(norm_quantile(p)) == doctest::Approx(p).epsilon(1e-8));
  CHECK(norm_quantile(0.0) == -std::numeric_limits<double>::infinity());
  CHECK(norm_quantile(1.0) == std::numeric_limits<double>::infinity());
}

TEST_CASE("mills ratio is continuous across the series switch") {
  const double lo = norm_pdf(4.999) / norm_ccdf(4.999);
  CHECK(mills_ratio(4.999) == doctest::Approx(lo).epsilon(1e-10));
  CHECK(mills_ratio(5.001) == doctest::Approx(lo).epsilon(1e-3));
  CHECK(mills_ratio(30.0) == doctest::Approx(30.0 + 1.0 / 30.0).epsilon(1e-3));
}

TEST_CASE("ordinal marginal cutoffs use the n/(n+1) scaling") {
  Eigen::VectorXd obs(4);
  obs << 1, 1, 2, 2;
  const auto m = fit_ordered_marginal(obs, VarKind::Ordinal, 2);
  REQUIRE(m.cutoffs().size() == 1);
  // Phi^{-1}(0.5 * (4/5)) = Phi^{-1}(0.4)
  CHECK(m.cutoffs()(0) == doctest::Approx(-0.2533471031357997).epsilon(1e-12));
}

TEST_CASE("ordered forward transform") {
  SUBCASE("continuous median of 1..100") {
    Eigen::VectorXd obs(100);
    for (int i = 0; i < 100; ++i) obs(i) = i + 1;
    const auto m = fit_ordered_marginal(obs, VarKind::Continuous);
    CHECK(m.forward(0.0) == doctest::Approx(50.5).epsilon(1e-12));
  }
  SUBCASE("continuous two-point interpolation") {
    Eigen::VectorXd obs(2);
    obs << 10, 20;
    const auto m = fit_ordered_marginal(obs, VarKind::Continuous);
    CHECK(m.forward(0.0) == doctest::Approx(15.0).epsilon(1e-12));
  }
  SUBCASE("ordinal counts cutoffs strictly below z") {
    Eigen::VectorXd cuts(2);
    cuts << -1.0, 1.0;
    const auto m = OrderedMarginal::from_cutoffs(cuts);
    CHECK(m.forward(0.0) == 2.0);
    CHECK(m.forward(-1.0) == 1.0);  // ties do not count as below
    CHECK(m.forward(2.0) == 3.0);
  }
  SUBCASE("very negative z maps to the bottom") {
    Eigen::VectorXd obs(5);
    obs << 3, 1, 4, 1, 5;
    const auto mc = fit_ordered_marginal(obs, VarKind::Continuous);
    CHECK(mc.forward(-40.0) == 1.0);
    Eigen::VectorXd lv(6);
    lv << 1, 2, 3, 1, 2, 3;
    const auto mo = fit_ordered_marginal(lv, VarKind::Ordinal, 3);
    CHECK(mo.forward(-40.0) == 1.0);
  }
  SUBCASE("forward is nondecreasing in z") {
    std::mt19937_64 gen(5);
    std::normal_distribution<double> nd;
    Eigen::VectorXd obs(37);
    for (Eigen::Index i = 0; i < obs.size(); ++i) obs(i) = std::cosh(nd(gen));
    const auto m = fit_ordered_marginal(obs, VarKind::Continuous);
    double prev = -1e300;
    for (double z = -4.0; z <= 4.0; z += 0.05) {
      const double v = m.forward(z);
      CHECK(v >= prev);
      prev = v;
    }
  }
}

TEST_CASE("ordered inverse transform") {
  SUBCASE("ordinal boundary levels are unbounded") {
    Eigen::VectorXd obs(9);
    obs << 1, 1, 1, 2, 2, 2, 3, 3, 3;
    const auto m = fit_ordered_marginal(obs, VarKind::Ordinal, 3);
    const auto lo = m.inverse(1.0);
    CHECK(lo.lb == -std::numeric_limits<double>::infinity());
    CHECK(lo.ub == m.cutoffs()(0));
    const auto hi = m.inverse(3.0);
    CHECK(hi.lb == m.cutoffs()(1));
    CHECK(hi.ub == std::numeric_limits<double>::infinity());
    CHECK_FALSE(lo.point);
  }
  SUBCASE("continuous point with nearest-rank scaling") {
    Eigen::VectorXd obs(9);
    for (int i = 0; i < 9; ++i) obs(i) = i + 1;
    const auto m = fit_ordered_marginal(obs, VarKind::Continuous);
    const auto iv = m.inverse(5.0);
    CHECK(iv.point);
    CHECK(iv.lb == doctest::Approx(-0.12566134685507402).epsilon(1e-12));  // Phi^{-1}(0.45)
    // Never-observed values use the nearest rank; no error.
    CHECK(m.inverse(4.5).lb >= m.inverse(4.0).lb);
    CHECK(m.inverse(4.5).lb <= m.inverse(5.0).lb);
    CHECK(std::isfinite(m.inverse(-100.0).lb));
    CHECK(std::isfinite(m.inverse(100.0).lb));
  }
  SUBCASE("constant continuous column collapses to the full line") {
    Eigen::VectorXd obs = Eigen::VectorXd::Constant(12, 3.25);
    const auto m = fit_ordered_marginal(obs, VarKind::Continuous);
    const auto iv = m.inverse(3.25);
    CHECK(iv.lb == -std::numeric_limits<double>::infinity());
    CHECK(iv.ub == std::numeric_limits<double>::infinity());
    CHECK(m.forward(1.3) == 3.25);
  }
  SUBCASE("ordinal forward/inverse containment") {
    std::mt19937_64 gen(11);
    Eigen::VectorXd obs(40);
    for (Eigen::Index i = 0; i < obs.size(); ++i) obs(i) = 1.0 + static_cast<double>(gen() % 5);
    const auto m = fit_ordered_marginal(obs, VarKind::Ordinal, 5);
    for (double z = -3.0; z <= 3.0; z += 0.21) {
      const auto iv = m.inverse(m.forward(z));
      CHECK(z > iv.lb);
      CHECK(z <= iv.ub);
    }
  }
  SUBCASE("empty input is an error") {
    CHECK_THROWS_WITH_AS(fit_ordered_marginal(Eigen::VectorXd(0), VarKind::Continuous),
                         doctest::Contains("no observations"), std::invalid_argument);
  }
}

TEST_CASE("argmax_prob estimates") {
  MarginalFitConfig cfg;
  cfg.mc_samples = 20000;
  cfg.seed = 3;

  SUBCASE("symmetric mu gives uniform probabilities") {
    const auto p = argmax_prob(Eigen::VectorXd::Zero(4), cfg);
    for (int k = 0; k < 4; ++k) CHECK(p(k) == doctest::Approx(0.25).epsilon(0.05));
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("entries form a probability vector") {
    Eigen::VectorXd mu(5);
    mu << 0, 1.3, -0.4, 0.2, 2.1;
    const auto p = argmax_prob(mu, cfg);
    CHECK(p.minCoeff() >= 0.0);
    CHECK(p.maxCoeff() <= 1.0);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("closed-form binary case") {
    // P[argmax = 2] = Phi(mu_2 / sqrt(2)); mu_2 = 0.9539 gives 0.75.
    Eigen::VectorXd mu(2);
    mu << 0.0, 0.9538725524087588;
    cfg.mc_samples = 200000;
    const auto p = argmax_prob(mu, cfg);
    CHECK(p(1) == doctest::Approx(0.75).epsilon(0.01));
  }
  SUBCASE("translation invariance on the same sample set") {
    Eigen::VectorXd mu(3);
    mu << 0.25, -1.5, 0.75;
    const auto p0 = argmax_prob(mu, cfg);
    const auto p1 = argmax_prob((mu.array() + 0.5).matrix(), cfg);
    CHECK((p0 - p1).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("monotonicity in mu_k") {
    Eigen::VectorXd mu(4);
    mu << 0, 0.3, -0.2, 0.1;
    const auto p0 = argmax_prob(mu, cfg);
    mu(2) += 0.2;
    const auto p1 = argmax_prob(mu, cfg);
    CHECK(p1(2) > p0(2));
  }
}

TEST_CASE("estimate_categorical_mu") {
  MarginalFitConfig cfg;
  cfg.seed = 19;

  SUBCASE("uniform frequencies give mu = 0") {
    cfg.mc_samples = 50000;
    const auto m = estimate_categorical_mu(Eigen::VectorXd::Constant(4, 0.25), cfg);
    CHECK(m.mu(0) == 0.0);
    for (int k = 1; k < 4; ++k) CHECK(m.mu(k) == doctest::Approx(0.0).epsilon(0.06));
  }
  SUBCASE("binary closed form") {
    cfg.mc_samples = 200000;
    Eigen::VectorXd freqs(2);
    freqs << 0.25, 0.75;
    const auto m = estimate_categorical_mu(freqs, cfg);
    CHECK(m.mu(0) == 0.0);
    CHECK(m.mu(1) == doctest::Approx(0.9538725524087588).epsilon(0.02));
  }
  SUBCASE("zero frequency category") {
    Eigen::VectorXd freqs(3);
    freqs << 0.5, 0.5, 0.0;
    CHECK_THROWS_WITH_AS(estimate_categorical_mu(freqs, cfg), doctest::Contains("merge"),
                         std::invalid_argument);
  }
  SUBCASE("rare category is refused with a merge hint") {
    Eigen::VectorXd freqs(3);
    freqs << 0.49995, 0.5, 0.00005;
    CHECK_THROWS_WITH_AS(estimate_categorical_mu(freqs, cfg), doctest::Contains("merge"),
                         std::runtime_error);
  }
  SUBCASE("round trip against an independent oracle") {
    std::mt19937_64 gen(101);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    cfg.mc_samples = 200000;
    for (int rep = 0; rep < 4; ++rep) {
      const int K = 2 + static_cast<int>(gen() % 9);
      Eigen::VectorXd freqs(K);
      for (;;) {
        double total = 0;
        for (int k = 0; k < K; ++k) {
          freqs(k) = -std::log(ud(gen));
          total += freqs(k);
        }
        freqs /= total;
        if (freqs.minCoeff() > 0.02) break;
      }
      const auto m = estimate_categorical_mu(freqs, cfg);
      const auto oracle = argmax_freq_oracle(m.mu, 1000000, 500 + rep);
      CHECK((oracle - freqs).cwiseAbs().maxCoeff() <= 0.005);
    }
  }
  SUBCASE("solved mu reproduces the sample-set equations to tolerance") {
    Eigen::VectorXd freqs(5);
    freqs << 0.1, 0.3, 0.2, 0.25, 0.15;
    cfg.mc_samples = 20000;
    const auto m = estimate_categorical_mu(freqs, cfg);
    const auto p = argmax_prob(m.mu, cfg);
    CHECK((p - freqs).tail(4).cwiseAbs().maxCoeff() <= cfg.tol);
    CHECK(std::abs(p(0) - freqs(0)) <= 5 * cfg.tol);
  }
}
