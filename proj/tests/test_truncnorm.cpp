#include <doctest.h>

#include <cmath>
#include <random>

#include "egc/normal.hpp"
#include "egc/truncnorm.hpp"
#include "test_support.hpp"

using namespace egc;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();

VariableSchema cat_schema(int K) {
  return VariableSchema({VariableSpec::categorical("c", labels_1_to(K))});
}

// Rejection oracle: moments of N(mean, chol chol^T) restricted to the region
// (checked in the original frame), independent std RNG.
MomentStats rejection_box_oracle(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                 const TruncationRegion& region, long want,
                                 std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  const Eigen::MatrixXd chol = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
  const Eigen::MatrixXd a = region.involution.dense();
  std::vector<Eigen::VectorXd> kept;
  long tries = 0;
  while (static_cast<long>(kept.size()) < want && ++tries < want * 4000) {
    const Eigen::VectorXd z = mean + mvn_draw(chol, gen);
    const Eigen::VectorXd zt = a * z;
    bool inside = true;
    for (Eigen::Index i = 0; i < region.dim() && inside; ++i) {
      if (region.point[static_cast<std::size_t>(i)]) continue;  // cannot hit points
      inside = zt(i) >= region.lb(i) && zt(i) <= region.ub(i);
    }
    if (inside) kept.push_back(z);
  }
  REQUIRE(static_cast<long>(kept.size()) == want);
  return sample_moments(kept);
}

}  // namespace

TEST_CASE("involution blocks") {
  SUBCASE("K=3, k=2 matches the definition") {
    const auto a = build_involution_block(2, 3);
    Eigen::MatrixXd expect(3, 3);
    expect << -1, 1, 0, 0, 1, 0, 0, 1, -1;
    CHECK((a - expect).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("K=2, k=1 matches the definition") {
    const auto a = build_involution_block(1, 2);
    Eigen::MatrixXd expect(2, 2);
    expect << 1, 0, 1, -1;
    CHECK((a - expect).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("A*A = I exactly for all k, K <= 20") {
    for (int K = 2; K <= 20; ++K)
      for (int k = 1; k <= K; ++k) {
        const auto a = build_involution_block(k, K);
        const Eigen::MatrixXd prod = a * a;
        CHECK((prod - Eigen::MatrixXd::Identity(K, K)).cwiseAbs().maxCoeff() == 0.0);
      }
  }
  SUBCASE("assembled involutions square to the identity") {
    Involution inv(9);
    inv.add_block(1, 3, 2);
    inv.add_block(5, 4, 0);
    const Eigen::MatrixXd a = inv.dense();
    CHECK((a * a - Eigen::MatrixXd::Identity(9, 9)).cwiseAbs().maxCoeff() == 0.0);
    // apply/conjugate agree with the dense form
    Eigen::VectorXd v(9);
    v << 1, -2, 3, 0.5, 4, -1, 2, 0, 7;
    CHECK((inv.apply(v) - a * v).cwiseAbs().maxCoeff() <= 1e-14);
    const Eigen::MatrixXd m = v * v.transpose() + Eigen::MatrixXd::Identity(9, 9);
    CHECK((inv.conjugate(m) - a * m * a.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("build_truncation") {
  SUBCASE("continuous observations give the identity involution and points") {
    VariableSchema schema({VariableSpec::continuous("x"), VariableSpec::continuous("y")});
    const auto map = build_latent_index_map(schema);
    Eigen::VectorXd obs(3);
    obs << 1, 2, 3;
    std::vector<Marginal> marg{OrderedMarginal::fit(obs, VarKind::Continuous),
                               OrderedMarginal::fit(obs, VarKind::Continuous)};
    Eigen::RowVectorXd row(2);
    row << 2.0, 3.0;
    const auto region = build_truncation(row, schema, marg, map);
    CHECK(region.dim() == 2);
    CHECK(region.involution.is_identity());
    CHECK(region.point[0]);
    CHECK(region.point[1]);
    CHECK(region.lb(0) == region.ub(0));
  }
  SUBCASE("observed categorical gives transformed half-lines") {
    const auto schema = cat_schema(3);
    const auto map = build_latent_index_map(schema);
    Eigen::VectorXd mu(3);
    mu << 0.0, 0.5, -0.2;
    std::vector<Marginal> marg{CategoricalMarginal{mu}};
    Eigen::RowVectorXd row(1);
    row << 2.0;  // label "2"
    const auto region = build_truncation(row, schema, marg, map);
    REQUIRE(region.dim() == 3);
    CHECK(region.lb(0) == doctest::Approx(-0.5));            // mu~_1 = mu_2 - mu_1 = 0.5
    CHECK(region.lb(1) == -kInf);                            // observed coordinate free
    CHECK(region.lb(2) == doctest::Approx(-0.7));            // mu~_3 = mu_2 - mu_3 = 0.7
    CHECK(region.ub.maxCoeff() == kInf);
    CHECK(region.involution.blocks().size() == 1);
  }
  SUBCASE("fully missing row gives an empty region") {
    VariableSchema schema({VariableSpec::continuous("x")});
    const auto map = build_latent_index_map(schema);
    Eigen::VectorXd obs(2);
    obs << 0, 1;
    std::vector<Marginal> marg{OrderedMarginal::fit(obs, VarKind::Continuous)};
    Eigen::RowVectorXd row(1);
    row << std::nan("");
    CHECK(build_truncation(row, schema, marg, map).dim() == 0);
  }
}

TEST_CASE("trunc_moments") {
  SUBCASE("half-line truncation of a standard normal") {
    TruncationRegion region;
    region.latent = {0};
    region.lb = Eigen::VectorXd::Constant(1, 0.0);
    region.ub = Eigen::VectorXd::Constant(1, kInf);
    region.point = {0};
    region.involution = Involution(1);
    const auto m = trunc_moments(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), region);
    CHECK(m.mean(0) == doctest::Approx(0.7978845608028654).epsilon(1e-9));
    CHECK(m.cov(0, 0) == doctest::Approx(0.36338022763241865).epsilon(1e-9));
  }
  SUBCASE("full space is returned unchanged") {
    std::mt19937_64 gen(3);
    const Eigen::MatrixXd cov = random_correlation(4, 0.5, gen);
    Eigen::VectorXd mean(4);
    mean << 0.3, -1, 2, 0;
    TruncationRegion region;
    region.latent = {0, 1, 2, 3};
    region.lb = Eigen::VectorXd::Constant(4, -kInf);
    region.ub = Eigen::VectorXd::Constant(4, kInf);
    region.point = {0, 0, 0, 0};
    region.involution = Involution(4);
    const auto m = trunc_moments(mean, cov, region);
    CHECK((m.mean - mean).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((m.cov - cov).cwiseAbs().maxCoeff() <= 1e-12);
  }
  SUBCASE("independent coordinates factor into univariate answers") {
    TruncationRegion region;
    region.latent = {0, 1};
    region.lb = Eigen::VectorXd(2);
    region.ub = Eigen::VectorXd(2);
    region.lb << 0.0, -1.0;
    region.ub << kInf, 0.5;
    region.point = {0, 0};
    region.involution = Involution(2);
    const auto m = trunc_moments(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), region);
    const auto u0 = truncated_normal_moments(0.0, kInf);
    const auto u1 = truncated_normal_moments(-1.0, 0.5);
    CHECK(m.mean(0) == doctest::Approx(u0.mean).epsilon(1e-10));
    CHECK(m.mean(1) == doctest::Approx(u1.mean).epsilon(1e-10));
    CHECK(m.cov(0, 0) == doctest::Approx(u0.var).epsilon(1e-10));
    CHECK(m.cov(1, 1) == doctest::Approx(u1.var).epsilon(1e-10));
    CHECK(std::abs(m.cov(0, 1)) <= 1e-12);
  }
  SUBCASE("point coordinates are clamped with zero variance") {
    std::mt19937_64 gen(9);
    const Eigen::MatrixXd cov = random_correlation(3, 1.0, gen);
    TruncationRegion region;
    region.latent = {0, 1, 2};
    region.lb = Eigen::VectorXd(3);
    region.ub = Eigen::VectorXd(3);
    region.lb << 0.8, -kInf, -0.3;
    region.ub << 0.8, kInf, kInf;
    region.point = {1, 0, 0};
    region.involution = Involution(3);
    const auto m = trunc_moments(Eigen::VectorXd::Zero(3), cov, region);
    CHECK(m.mean(0) == 0.8);
    CHECK(m.cov(0, 0) == 0.0);
    CHECK(m.cov(0, 1) == 0.0);
    // conditioning shifts the free coordinate toward rho * 0.8
    CHECK(m.mean(1) != 0.0);
  }
  SUBCASE("empty region raises the underflow error") {
    TruncationRegion region;
    region.latent = {0};
    region.lb = Eigen::VectorXd::Constant(1, 40.0);
    region.ub = Eigen::VectorXd::Constant(1, 41.0);
    region.point = {0};
    region.involution = Involution(1);
    CHECK_THROWS_WITH_AS(
        trunc_moments(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), region),
        doctest::Contains("underflow"), std::runtime_error);
  }
  SUBCASE("covariance is symmetric PSD with variances below the untruncated ones") {
    std::mt19937_64 gen(33);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int rep = 0; rep < 25; ++rep) {
      const Eigen::Index d = 1 + static_cast<Eigen::Index>(gen() % 5);
      const Eigen::MatrixXd cov = random_correlation(d, 1.0, gen);
      TruncationRegion region;
      region.lb = Eigen::VectorXd(d);
      region.ub = Eigen::VectorXd(d);
      for (Eigen::Index i = 0; i < d; ++i) {
        region.latent.push_back(i);
        region.point.push_back(0);
        const double lo = -2.5 + 2.0 * ud(gen);
        region.lb(i) = (ud(gen) < 0.25) ? -kInf : lo;
        region.ub(i) = (ud(gen) < 0.25) ? kInf : lo + 1.0 + 2.0 * ud(gen);
      }
      region.involution = Involution(d);
      const auto m = trunc_moments(Eigen::VectorXd::Zero(d), cov, region);
      CHECK((m.cov - m.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.cov);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
      for (Eigen::Index i = 0; i < d; ++i) CHECK(m.cov(i, i) <= cov(i, i) + 1e-10);
    }
  }
}

TEST_CASE("trunc_moments agrees with rejection oracles") {
  SUBCASE("random boxes, correlated Gaussians") {
    std::mt19937_64 gen(77);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    int hard = 0;
    for (int rep = 0; rep < 12; ++rep) {
      const Eigen::Index d = 2 + static_cast<Eigen::Index>(gen() % 4);
      const Eigen::MatrixXd cov = random_correlation(d, 2.0, gen);
      TruncationRegion region;
      region.lb = Eigen::VectorXd(d);
      region.ub = Eigen::VectorXd(d);
      for (Eigen::Index i = 0; i < d; ++i) {
        region.latent.push_back(i);
        region.point.push_back(0);
        const double lo = -1.5 + 1.5 * ud(gen);
        const bool open_low = ud(gen) < 0.3;
        const bool open_high = ud(gen) < 0.3;
        region.lb(i) = open_low ? -kInf : lo;
        region.ub(i) = open_high ? kInf : lo + 1.5 + 1.5 * ud(gen);
        if (open_low && open_high) region.lb(i) = -kInf;
      }
      region.involution = Involution(d);
      const auto approx = trunc_moments(Eigen::VectorXd::Zero(d), cov, region);
      const auto oracle = rejection_box_oracle(Eigen::VectorXd::Zero(d), cov, region, 4000,
                                               900 + rep);
      for (Eigen::Index i = 0; i < d; ++i) {
        const double tol_mean = 3.0 * oracle.mean_se(i) + 0.02;
        if (std::abs(approx.mean(i) - oracle.mean(i)) > tol_mean) ++hard;
        const double tol_var = 3.0 * oracle.var_se(i) + 0.05;
        if (std::abs(approx.cov(i, i) - oracle.cov(i, i)) > tol_var) ++hard;
      }
    }
    CHECK(hard == 0);
  }
  SUBCASE("categorical argmax regions against conditioned rejection sampling") {
    std::mt19937_64 gen(13);
    std::normal_distribution<double> nd;
    for (int rep = 0; rep < 6; ++rep) {
      const int K = 2 + static_cast<int>(gen() % 5);
      Eigen::VectorXd mu(K);
      mu(0) = 0;
      for (int k = 1; k < K; ++k) mu(k) = nd(gen);
      const int label = 1 + static_cast<int>(gen() % K);

      const auto schema = cat_schema(K);
      const auto map = build_latent_index_map(schema);
      std::vector<Marginal> marg{CategoricalMarginal{mu}};
      Eigen::RowVectorXd row(1);
      row << static_cast<double>(label);
      const auto region = build_truncation(row, schema, marg, map);
      const auto approx =
          trunc_moments(Eigen::VectorXd::Zero(K), Eigen::MatrixXd::Identity(K, K), region);

      // Oracle: z ~ N(0, I_K) conditioned on argmax(z + mu) = label.
      std::vector<Eigen::VectorXd> kept;
      while (static_cast<long>(kept.size()) < 4000) {
        Eigen::VectorXd z(K);
        for (int k = 0; k < K; ++k) z(k) = nd(gen);
        int best = 0;
        for (int k = 1; k < K; ++k)
          if (z(k) + mu(k) > z(best) + mu(best)) best = k;
        if (best == label - 1) kept.push_back(z);
      }
      const auto oracle = sample_moments(kept);
      for (int i = 0; i < K; ++i) {
        CHECK(std::abs(approx.mean(i) - oracle.mean(i)) <= 3.0 * oracle.mean_se(i) + 0.03);
        CHECK(std::abs(approx.cov(i, i) - oracle.cov(i, i)) <= 3.0 * oracle.var_se(i) + 0.06);
      }
    }
  }
}

TEST_CASE("trunc_sample") {
  SUBCASE("univariate half-line sampling matches the closed form") {
    TruncationRegion region;
    region.latent = {0};
    region.lb = Eigen::VectorXd::Constant(1, 0.0);
    region.ub = Eigen::VectorXd::Constant(1, kInf);
    region.point = {0};
    region.involution = Involution(1);
    const auto s =
        trunc_sample(Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1), region, 100000, 5);
    CHECK(s.minCoeff() >= 0.0);
    CHECK(s.col(0).mean() == doctest::Approx(0.7978845608028654).epsilon(0.015));
  }
  SUBCASE("point-only regions return the point") {
    TruncationRegion region;
    region.latent = {0, 1};
    region.lb = Eigen::VectorXd(2);
    region.ub = Eigen::VectorXd(2);
    region.lb << 0.25, -1.5;
    region.ub = region.lb;
    region.point = {1, 1};
    region.involution = Involution(2);
    std::mt19937_64 gen(2);
    const auto s = trunc_sample(Eigen::VectorXd::Zero(2), random_correlation(2, 1.0, gen),
                                region, 7, 11);
    for (int i = 0; i < 7; ++i) {
      CHECK(s(i, 0) == 0.25);
      CHECK(s(i, 1) == -1.5);
    }
  }
  SUBCASE("categorical region samples reproduce the observed label") {
    Eigen::VectorXd mu(4);
    mu << 0, 0.7, -0.5, 0.2;
    const auto schema = cat_schema(4);
    const auto map = build_latent_index_map(schema);
    std::vector<Marginal> marg{CategoricalMarginal{mu}};
    Eigen::RowVectorXd row(1);
    row << 3.0;
    const auto region = build_truncation(row, schema, marg, map);
    const auto s =
        trunc_sample(Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Identity(4, 4), region, 500, 23);
    for (int i = 0; i < s.rows(); ++i) {
      int best = 0;
      for (int k = 1; k < 4; ++k)
        if (s(i, k) + mu(k) > s(i, best) + mu(best)) best = k;
      CHECK(best == 2);
    }
  }
  SUBCASE("sampler moments agree with trunc_moments on random 5-D instances") {
    std::mt19937_64 gen(55);
    std::uniform_real_distribution<double> ud(0.0, 1.0);
    for (int rep = 0; rep < 4; ++rep) {
      const Eigen::Index d = 5;
      const Eigen::MatrixXd cov = random_correlation(d, 2.0, gen);
      TruncationRegion region;
      region.lb = Eigen::VectorXd(d);
      region.ub = Eigen::VectorXd(d);
      for (Eigen::Index i = 0; i < d; ++i) {
        region.latent.push_back(i);
        region.point.push_back(0);
        const double lo = -1.5 + 1.5 * ud(gen);
        region.lb(i) = (ud(gen) < 0.3) ? -kInf : lo;
        region.ub(i) = (ud(gen) < 0.3) ? kInf : lo + 1.5 + 2.0 * ud(gen);
      }
      region.involution = Involution(d);
      const auto m = trunc_moments(Eigen::VectorXd::Zero(d), cov, region);
      const auto s = trunc_sample(Eigen::VectorXd::Zero(d), cov, region, 20000, 800 + rep);
      for (Eigen::Index i = 0; i < d; ++i) {
        CHECK(s.col(i).minCoeff() >= region.lb(i));
        CHECK(s.col(i).maxCoeff() <= region.ub(i));
        CHECK(std::abs(s.col(i).mean() - m.mean(i)) <= 0.1);
      }
    }
  }
}
