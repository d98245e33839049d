#include <doctest.h>

#include <cmath>
#include <random>

#include "egc/bench.hpp"
#include "egc/em.hpp"
#include "egc/impute.hpp"
#include "egc/marginals.hpp"
#include "test_support.hpp"

using namespace egc;

namespace {

CopulaModel model_from(const VariableSchema& schema, std::vector<Marginal> marginals,
                       Eigen::MatrixXd sigma) {
  CopulaModel m;
  m.schema = schema;
  m.index_map = build_latent_index_map(schema);
  m.marginals = std::move(marginals);
  m.sigma = std::move(sigma);
  return m;
}

}  // namespace

TEST_CASE("single_impute") {
  VariableSchema schema({VariableSpec::continuous("x"), VariableSpec::ordinal("o", 3),
                         VariableSpec::categorical("c", labels_1_to(3))});
  Eigen::VectorXd xs(7);
  xs << 3, 1, 4, 1, 5, 9, 2;
  Eigen::VectorXd os(6);
  os << 1, 1, 2, 2, 3, 3;
  Eigen::VectorXd mu(3);
  mu << 0, 0.9, -0.3;
  std::vector<Marginal> marg{OrderedMarginal::fit(xs, VarKind::Continuous),
                             OrderedMarginal::fit(os, VarKind::Ordinal, 3),
                             CategoricalMarginal{mu}};
  const auto map = build_latent_index_map(schema);
  auto model = model_from(schema, marg, Eigen::MatrixXd::Identity(map.dim, map.dim));

  SUBCASE("fully observed rows pass through unchanged") {
    Eigen::MatrixXd values(1, 3);
    values << 4.0, 2.0, 3.0;
    const auto data = make_dataset(schema, values);
    const auto out = single_impute(data, model);
    CHECK(out.values(0, 0) == 4.0);
    CHECK(out.values(0, 1) == 2.0);
    CHECK(out.values(0, 2) == 3.0);
  }
  SUBCASE("fully missing rows get the unconditional answers") {
    Eigen::MatrixXd values(1, 3);
    values << std::nan(""), std::nan(""), std::nan("");
    const auto data = MixedDataset{schema, values};
    const auto out = single_impute(data, model);
    const auto& mx = std::get<OrderedMarginal>(marg[0]);
    const auto& mo = std::get<OrderedMarginal>(marg[1]);
    CHECK(out.values(0, 0) == mx.forward(0.0));  // empirical median
    CHECK(out.values(0, 1) == mo.forward(0.0));
    CHECK(out.values(0, 2) == 2.0);  // argmax of mu
  }
  SUBCASE("schema mismatch is rejected") {
    VariableSchema other({VariableSpec::continuous("x")});
    const MixedDataset data{other, Eigen::MatrixXd(1, 1)};
    CHECK_THROWS(single_impute(data, model));
  }
  SUBCASE("imputed values respect the column domains") {
    const auto syn = generate_synthetic_mixed(150, 2, 2, 1, 4, 3);
    const auto masked = mask(syn.dataset, {Mechanism::MCAR, 0.35, 5});
    const auto out = single_impute(masked.masked, syn.model);
    out.validate();
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < out.cols(); ++j) CHECK_FALSE(out.missing(i, j));
    // Continuous imputations stay inside the observed range.
    for (const auto& [i, j] : masked.cells) {
      if (syn.dataset.schema.var(j).kind == VarKind::Continuous) {
        double lo = 1e300, hi = -1e300;
        for (Eigen::Index r = 0; r < masked.masked.rows(); ++r) {
          if (masked.masked.missing(r, j)) continue;
          lo = std::min(lo, masked.masked.values(r, j));
          hi = std::max(hi, masked.masked.values(r, j));
        }
        CHECK(out.values(i, j) >= lo);
        CHECK(out.values(i, j) <= hi);
      }
    }
  }
}

TEST_CASE("multiple_impute") {
  SUBCASE("no missing cells reproduces the input for every draw") {
    VariableSchema schema({VariableSpec::continuous("x")});
    Eigen::MatrixXd values(3, 1);
    values << 1, 2, 3;
    const auto data = make_dataset(schema, values);
    auto model = model_from(schema, {OrderedMarginal::fit(values.col(0), VarKind::Continuous)},
                            Eigen::MatrixXd::Identity(1, 1));
    const auto mi = multiple_impute(data, model, 3, 9);
    CHECK(mi.cells.empty());
    for (const auto& c : mi.completions)
      CHECK((c.values - values).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("independent Sigma draws follow the categorical marginal") {
    VariableSchema schema({VariableSpec::categorical("c", labels_1_to(3)),
                           VariableSpec::continuous("x")});
    Eigen::VectorXd mu(3);
    mu << 0, 0.6, -0.4;
    Eigen::VectorXd xs(5);
    xs << -1, 0, 1, 2, 3;
    const auto map = build_latent_index_map(schema);
    auto model = model_from(schema,
                            {CategoricalMarginal{mu},
                             OrderedMarginal::fit(xs, VarKind::Continuous)},
                            Eigen::MatrixXd::Identity(map.dim, map.dim));
    Eigen::MatrixXd values(1, 2);
    values << std::nan(""), 1.0;
    const auto data = MixedDataset{schema, values};
    const auto mi = multiple_impute(data, model, 10000, 31);
    Eigen::VectorXd freq = Eigen::VectorXd::Zero(3);
    for (const auto& c : mi.completions) freq(static_cast<Eigen::Index>(c.values(0, 0)) - 1) += 1.0;
    freq /= 10000.0;
    MarginalFitConfig cfg;
    cfg.mc_samples = 200000;
    cfg.seed = 5;
    const auto expect = argmax_prob(mu, cfg);
    CHECK((freq - expect).cwiseAbs().maxCoeff() <= 0.02);
  }
  SUBCASE("deterministic given the seed") {
    const auto syn = generate_synthetic_mixed(40, 1, 1, 1, 3, 15);
    const auto masked = mask(syn.dataset, {Mechanism::MCAR, 0.3, 2});
    const auto a = multiple_impute(masked.masked, syn.model, 4, 77);
    const auto b = multiple_impute(masked.masked, syn.model, 4, 77);
    for (std::size_t s = 0; s < 4; ++s) {
      const auto& va = a.completions[s].values;
      const auto& vb = b.completions[s].values;
      for (Eigen::Index i = 0; i < va.rows(); ++i)
        for (Eigen::Index j = 0; j < va.cols(); ++j)
          CHECK(((std::isnan(va(i, j)) && std::isnan(vb(i, j))) || va(i, j) == vb(i, j)));
    }
  }
  SUBCASE("observed cells are identical across completions") {
    const auto syn = generate_synthetic_mixed(30, 1, 1, 1, 3, 25);
    const auto masked = mask(syn.dataset, {Mechanism::MCAR, 0.4, 4});
    const auto mi = multiple_impute(masked.masked, syn.model, 5, 3);
    for (const auto& c : mi.completions)
      for (Eigen::Index i = 0; i < c.rows(); ++i)
        for (Eigen::Index j = 0; j < c.cols(); ++j)
          if (!masked.masked.missing(i, j)) CHECK(c.values(i, j) == masked.masked.values(i, j));
  }
  SUBCASE("latent means of the sampling pipeline match the conditional mean") {
    // One observed ordinal, one missing continuous; the mean of the Alg-1
    // latent draws must converge to the single-imputation latent mean.
    VariableSchema schema({VariableSpec::ordinal("o", 3), VariableSpec::continuous("x")});
    Eigen::VectorXd os(6);
    os << 1, 1, 2, 2, 3, 3;
    Eigen::VectorXd xs(5);
    xs << 0, 1, 2, 3, 4;
    Eigen::MatrixXd sigma(2, 2);
    sigma << 1, 0.7, 0.7, 1;
    auto model = model_from(schema,
                            {OrderedMarginal::fit(os, VarKind::Ordinal, 3),
                             OrderedMarginal::fit(xs, VarKind::Continuous)},
                            sigma);
    Eigen::RowVectorXd row(2);
    row << 2.0, std::nan("");
    const auto region = build_truncation(row, schema, model.marginals, model.index_map);
    const Eigen::MatrixXd sigma_oo = model.sigma(region.latent, region.latent);
    const int m = 20000;
    const auto z_obs = trunc_sample(Eigen::VectorXd::Zero(1), sigma_oo, region, m, 41);
    const auto moments = trunc_moments(Eigen::VectorXd::Zero(1), sigma_oo, region);
    const double emp_mean = 0.7 * z_obs.col(0).mean();
    const double cond_mean = 0.7 * moments.mean(0);
    const double se = 0.7 * std::sqrt(z_obs.col(0).squaredNorm() / m) / std::sqrt(m);
    CHECK(std::abs(emp_mean - cond_mean) <= 3.0 * se + 0.01);
  }
}

TEST_CASE("summarize_uncertainty") {
  VariableSchema schema({VariableSpec::categorical("c", labels_1_to(3)),
                         VariableSpec::continuous("x")});
  Eigen::MatrixXd values(2, 2);
  values << std::nan(""), 0.5, 2.0, std::nan("");
  MultipleImputation mi;
  mi.cells = {{0, 0}, {1, 1}};
  for (int s = 0; s < 4; ++s) {
    Eigen::MatrixXd v = values;
    v(0, 0) = 2.0;                       // all draws agree on category 2
    v(1, 1) = 1.0 + 0.5 * s;             // 1.0 1.5 2.0 2.5
    mi.completions.push_back(MixedDataset{schema, v});
  }

  SUBCASE("unanimous categorical draws give a unit mass vector") {
    const auto summary = summarize_uncertainty(mi, 0.1);
    REQUIRE(summary.categorical.size() == 1);
    CHECK(summary.categorical[0].probs(1) == 1.0);
    CHECK(summary.categorical[0].probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("alpha = 1 degenerates to the median draw") {
    const auto summary = summarize_uncertainty(mi, 1.0);
    REQUIRE(summary.ordered.size() == 1);
    CHECK(summary.ordered[0].lo == summary.ordered[0].hi);
    CHECK(summary.ordered[0].lo == doctest::Approx(1.75));
  }
  SUBCASE("interval endpoints are ordered quantiles") {
    const auto summary = summarize_uncertainty(mi, 0.5);
    CHECK(summary.ordered[0].lo < summary.ordered[0].hi);
    CHECK(summary.ordered[0].lo >= 1.0);
    CHECK(summary.ordered[0].hi <= 2.5);
  }
}

TEST_CASE("online_impute") {
  const auto syn = generate_synthetic_mixed(200, 2, 1, 1, 3, 51);
  FitConfig cfg;
  cfg.max_iterations = 3;
  auto model = fit(syn.dataset, cfg);

  SUBCASE("first batch is imputed with the prior model") {
    const auto batch = mask(generate_synthetic_mixed(60, 2, 1, 1, 3, 52).dataset,
                            {Mechanism::MCAR, 0.3, 6});
    auto st = make_online_state(model);
    const auto expect = single_impute(batch.masked, model);
    const auto out = online_impute({batch.masked}, st,
                                   [](int) { return 0.5; }, 100, cfg.marginal);
    REQUIRE(out.size() == 1);
    CHECK((out[0].values - expect.values).cwiseAbs().maxCoeff() == 0.0);
    CHECK(st.updates == 1);
  }
  SUBCASE("empty batch produces no rows and keeps the model") {
    auto st = make_online_state(model);
    const MixedDataset empty{model.schema, Eigen::MatrixXd(0, model.schema.size())};
    const auto out = online_impute({empty}, st, [](int) { return 0.5; }, 100, cfg.marginal);
    CHECK(out[0].rows() == 0);
    CHECK((st.model.sigma - model.sigma).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("label permutation leaves imputation decisions identical") {
  // Permute the categories of a categorical variable (and mu, Sigma rows and
  // columns accordingly); the imputed categories must map through the same
  // permutation.
  const int K = 3;
  VariableSchema schema({VariableSpec::categorical("c", labels_1_to(K)),
                         VariableSpec::continuous("x")});
  std::mt19937_64 gen(10);
  Eigen::MatrixXd sigma = random_correlation(K + 1, 2.0, gen);
  sigma.topLeftCorner(K, K) = Eigen::MatrixXd::Identity(K, K);
  // keep it a valid correlation via the library projection path
  VariableSchema perm_schema({VariableSpec::categorical("c", {"2", "3", "1"}),
                              VariableSpec::continuous("x")});
  Eigen::VectorXd mu(K);
  mu << 0, 0.8, -0.5;
  Eigen::VectorXd xs(9);
  xs << 1, 2, 3, 4, 5, 6, 7, 8, 9;
  const auto xmarg = OrderedMarginal::fit(xs, VarKind::Continuous);
  auto model = model_from(schema, {CategoricalMarginal{mu}, xmarg}, sigma);

  // permutation pi: new index i holds old category perm[i]
  const std::array<int, 3> perm = {1, 2, 0};
  Eigen::VectorXd mu_p(K);
  Eigen::MatrixXd sigma_p = sigma;
  for (int i = 0; i < K; ++i) mu_p(i) = mu(perm[i]);
  mu_p.array() -= mu_p(0);
  for (int i = 0; i < K; ++i)
    for (int j = 0; j < K; ++j) sigma_p(i, j) = sigma(perm[i], perm[j]);
  for (int i = 0; i < K; ++i) sigma_p(i, K) = sigma(perm[i], K);
  for (int j = 0; j < K; ++j) sigma_p(K, j) = sigma(K, perm[j]);
  auto model_p = model_from(schema, {CategoricalMarginal{mu_p}, xmarg}, sigma_p);

  Eigen::MatrixXd values(20, 2);
  for (int i = 0; i < 20; ++i) {
    values(i, 0) = std::nan("");
    values(i, 1) = 1.0 + (i % 9);
  }
  const MixedDataset data{schema, values};
  const auto base = single_impute(data, model);
  const auto permuted = single_impute(data, model_p);
  for (int i = 0; i < 20; ++i) {
    const int cat_p = static_cast<int>(permuted.values(i, 0)) - 1;
    CHECK(static_cast<int>(base.values(i, 0)) == perm[static_cast<std::size_t>(cat_p)] + 1);
  }
}
