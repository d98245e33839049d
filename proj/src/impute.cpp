#include "egc/impute.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "egc/rng.hpp"
#include "egc/truncnorm.hpp"

namespace egc {

namespace {

void check_schema(const MixedDataset& data, const CopulaModel& model) {
  if (data.schema.hash() != model.schema.hash())
    throw std::invalid_argument("dataset schema does not match the model schema");
}

int argmax_lowest_tie(const Eigen::VectorXd& v) {
  int best = 0;
  for (int k = 1; k < v.size(); ++k)
    if (v(k) > v(best)) best = k;
  return best;
}

double map_latent_to_value(const CopulaModel& model, Eigen::Index j,
                           const Eigen::VectorXd& z_span) {
  const auto& v = model.schema.var(j);
  if (v.ordered()) return model.ordered_marginal(j).forward(z_span(0));
  const auto& cat = model.categorical_marginal(j);
  return 1.0 + argmax_lowest_tie(z_span + cat.mu);
}

// Empirical quantile with the same interpolation the marginals use.
double sample_quantile(std::vector<double> sorted, double u) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = static_cast<double>(n - 1) * u;
  std::size_t i = static_cast<std::size_t>(h);
  if (i > n - 2) i = n - 2;
  const double frac = h - static_cast<double>(i);
  return sorted[i] + frac * (sorted[i + 1] - sorted[i]);
}

}  // namespace

MixedDataset single_impute(const MixedDataset& data, const CopulaModel& model) {
  check_schema(data, model);
  MixedDataset out = data;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const auto mis = data.missing_vars(i);
    if (mis.empty()) continue;
    const auto region =
        build_truncation(data.values.row(i), model.schema, model.marginals, model.index_map);
    const Eigen::Index d = model.latent_dim();
    Eigen::VectorXd zhat = Eigen::VectorXd::Zero(d);
    if (region.dim() > 0) {
      const auto& obs = region.latent;
      const Eigen::MatrixXd sigma_oo = model.sigma(obs, obs);
      TruncatedGaussianMoments moments;
      try {
        moments = trunc_moments(Eigen::VectorXd::Zero(region.dim()), sigma_oo, region);
      } catch (const std::exception& e) {
        throw std::runtime_error("row " + std::to_string(i) + ": " + e.what());
      }
      std::vector<Eigen::Index> mis_latent;
      for (const auto j : mis) {
        const auto& span = model.index_map.span(j);
        for (Eigen::Index l = span.begin; l < span.end(); ++l) mis_latent.push_back(l);
      }
      const Eigen::MatrixXd sigma_om = model.sigma(obs, mis_latent);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma_oo);
      if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("row " + std::to_string(i) + ": singular Sigma_OO");
      const Eigen::VectorXd z_mis = ldlt.solve(sigma_om).transpose() * moments.mean;
      for (std::size_t r = 0; r < mis_latent.size(); ++r)
        zhat(mis_latent[r]) = z_mis(static_cast<Eigen::Index>(r));
    }
    for (const auto j : mis) {
      const auto& span = model.index_map.span(j);
      out.values(i, j) = map_latent_to_value(model, j, zhat.segment(span.begin, span.size));
    }
  }
  return out;
}

MultipleImputation multiple_impute(const MixedDataset& data, const CopulaModel& model, int m,
                                   std::uint64_t seed) {
  check_schema(data, model);
  if (m < 1) throw std::invalid_argument("multiple_impute: m must be >= 1");

  MultipleImputation out;
  out.seed = seed;
  out.completions.assign(static_cast<std::size_t>(m), data);
  for (Eigen::Index i = 0; i < data.rows(); ++i)
    for (Eigen::Index j = 0; j < data.cols(); ++j)
      if (data.missing(i, j)) out.cells.emplace_back(i, j);

  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const auto mis = data.missing_vars(i);
    if (mis.empty()) continue;
    const auto region =
        build_truncation(data.values.row(i), model.schema, model.marginals, model.index_map);
    const auto& obs = region.latent;

    std::vector<Eigen::Index> mis_latent;
    for (const auto j : mis) {
      const auto& span = model.index_map.span(j);
      for (Eigen::Index l = span.begin; l < span.end(); ++l) mis_latent.push_back(l);
    }
    const Eigen::Index nm = static_cast<Eigen::Index>(mis_latent.size());

    Eigen::MatrixXd z_obs;  // m x |O|
    Eigen::MatrixXd gain;   // |O| x |M| = Sigma_OO^{-1} Sigma_OM
    Eigen::MatrixXd cond_cov(nm, nm);
    if (!obs.empty()) {
      const Eigen::MatrixXd sigma_oo = model.sigma(obs, obs);
      try {
        z_obs = trunc_sample(Eigen::VectorXd::Zero(region.dim()), sigma_oo, region, m,
                             Rng::derive(seed, 2 * static_cast<std::uint64_t>(i)));
      } catch (const std::exception& e) {
        throw std::runtime_error("row " + std::to_string(i) + ": " + e.what());
      }
      const Eigen::MatrixXd sigma_om = model.sigma(obs, mis_latent);
      Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma_oo);
      if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("row " + std::to_string(i) + ": singular Sigma_OO");
      gain = ldlt.solve(sigma_om);
      cond_cov = model.sigma(mis_latent, mis_latent) - sigma_om.transpose() * gain;
    } else {
      cond_cov = model.sigma(mis_latent, mis_latent);
    }

    // Symmetrize and floor before the square root.
    cond_cov = 0.5 * (cond_cov + cond_cov.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cond_cov);
    const Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(1e-10);
    const Eigen::MatrixXd sqrt_cov =
        eig.eigenvectors() * vals.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();

    Rng rng(Rng::derive(seed, 2 * static_cast<std::uint64_t>(i) + 1));
    Eigen::VectorXd xi(nm);
    for (int s = 0; s < m; ++s) {
      Eigen::VectorXd mean_m = Eigen::VectorXd::Zero(nm);
      if (!obs.empty()) mean_m = gain.transpose() * z_obs.row(s).transpose();
      for (Eigen::Index r = 0; r < nm; ++r) xi(r) = rng.normal();
      const Eigen::VectorXd z_mis = mean_m + sqrt_cov * xi;
      Eigen::VectorXd z_full = Eigen::VectorXd::Zero(model.latent_dim());
      for (std::size_t r = 0; r < mis_latent.size(); ++r)
        z_full(mis_latent[r]) = z_mis(static_cast<Eigen::Index>(r));
      auto& completion = out.completions[static_cast<std::size_t>(s)];
      for (const auto j : mis) {
        const auto& span = model.index_map.span(j);
        completion.values(i, j) =
            map_latent_to_value(model, j, z_full.segment(span.begin, span.size));
      }
    }
  }
  return out;
}

UncertaintySummary summarize_uncertainty(const MultipleImputation& mi, double alpha) {
  if (mi.completions.empty()) throw std::invalid_argument("summarize_uncertainty: no completions");
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw std::invalid_argument("summarize_uncertainty: alpha must lie in (0, 1]");
  const auto& schema = mi.completions.front().schema;
  const std::size_t m = mi.completions.size();

  UncertaintySummary out;
  for (const auto& [row, col] : mi.cells) {
    const auto& v = schema.var(col);
    if (v.ordered()) {
      std::vector<double> vals;
      vals.reserve(m);
      for (const auto& c : mi.completions) vals.push_back(c.values(row, col));
      std::sort(vals.begin(), vals.end());
      const double lo = sample_quantile(vals, alpha / 2.0);
      const double hi = sample_quantile(vals, 1.0 - alpha / 2.0);
      out.ordered.push_back({row, col, lo, hi});
    } else {
      Eigen::VectorXd probs = Eigen::VectorXd::Zero(v.category_count());
      for (const auto& c : mi.completions)
        probs(static_cast<Eigen::Index>(c.values(row, col)) - 1) += 1.0;
      probs /= static_cast<double>(m);
      out.categorical.push_back({row, col, probs});
    }
  }
  return out;
}

std::vector<MixedDataset> online_impute(const std::vector<MixedDataset>& batches,
                                        OnlineState& state,
                                        const std::function<double(int)>& gamma_schedule,
                                        int window, const MarginalFitConfig& marginal_cfg,
                                        bool update_marginals) {
  std::vector<MixedDataset> out;
  out.reserve(batches.size());
  int t = 0;
  for (const auto& batch : batches) {
    ++t;
    out.push_back(single_impute(batch, state.model));
    if (batch.rows() > 0)
      online_update(state, batch, gamma_schedule(t), window, marginal_cfg, update_marginals);
  }
  return out;
}

}  // namespace egc
