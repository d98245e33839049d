#include "egc/em.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "egc/normal.hpp"
#include "egc/parallel.hpp"
#include "egc/rng.hpp"

namespace egc {

namespace {

constexpr double kEigFloor = 1e-6;

using IndexVec = std::vector<Eigen::Index>;

IndexVec missing_latent_dims(const Eigen::RowVectorXd& row, const VariableSchema& schema,
                             const LatentIndexMap& map) {
  IndexVec mis;
  for (Eigen::Index j = 0; j < schema.size(); ++j) {
    if (!std::isnan(row(j))) continue;
    const auto& span = map.span(j);
    for (Eigen::Index l = span.begin; l < span.end(); ++l) mis.push_back(l);
  }
  return mis;
}

Eigen::MatrixXd floor_eigenvalues(const Eigen::MatrixXd& s, double floor, bool* floored) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s);
  if (eig.eigenvalues().minCoeff() >= floor) {
    if (floored) *floored = false;
    return s;
  }
  if (floored) *floored = true;
  Eigen::VectorXd vals = eig.eigenvalues().cwiseMax(floor);
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

Eigen::MatrixXd project_correlation(const Eigen::MatrixXd& second_moment,
                                    const LatentIndexMap& map) {
  bool floored = false;
  Eigen::MatrixXd s = floor_eigenvalues(second_moment, kEigFloor, &floored);
  if (floored)
    std::cerr << "warning: averaged second moment was not PSD; eigenvalues floored at "
              << kEigFloor << "\n";
  return p_cat(p_cor(s), map);
}

struct RowWork {
  TruncationRegion region;
  IndexVec mis;
};

std::vector<RowWork> precompute_rows(const MixedDataset& data, const CopulaModel& model) {
  std::vector<RowWork> rows(static_cast<std::size_t>(data.rows()));
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    rows[static_cast<std::size_t>(i)].region =
        build_truncation(data.values.row(i), model.schema, model.marginals, model.index_map);
    rows[static_cast<std::size_t>(i)].mis =
        missing_latent_dims(data.values.row(i), model.schema, model.index_map);
  }
  return rows;
}

// E[z z^T | x] for one precomputed row, accumulated into sum.
void accumulate_row_moment(const RowWork& work, const CopulaModel& model,
                           Eigen::MatrixXd& sum) {
  const Eigen::Index d = model.latent_dim();
  const auto& obs = work.region.latent;
  const auto& mis = work.mis;
  if (obs.empty()) {
    sum += model.sigma;
    return;
  }

  const Eigen::MatrixXd sigma_oo = model.sigma(obs, obs);
  const auto moments = trunc_moments(Eigen::VectorXd::Zero(work.region.dim()), sigma_oo,
                                     work.region);
  Eigen::MatrixXd ezz_oo = moments.cov + moments.mean * moments.mean.transpose();

  Eigen::MatrixXd full(d, d);
  full.setZero();
  for (std::size_t r = 0; r < obs.size(); ++r)
    for (std::size_t c = 0; c < obs.size(); ++c)
      full(obs[r], obs[c]) = ezz_oo(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));

  if (!mis.empty()) {
    const Eigen::MatrixXd sigma_om = model.sigma(obs, mis);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma_oo);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error(
          "Sigma_OO is singular (conditioning hint: correlated or duplicated columns)");
    const Eigen::MatrixXd j = ldlt.solve(sigma_om);  // Sigma_OO^{-1} Sigma_OM
    const Eigen::MatrixXd ezz_om = ezz_oo * j;
    const Eigen::MatrixXd ezz_mm = model.sigma(mis, mis) - sigma_om.transpose() * j +
                                   j.transpose() * ezz_oo * j;
    for (std::size_t r = 0; r < obs.size(); ++r)
      for (std::size_t c = 0; c < mis.size(); ++c) {
        const double v = ezz_om(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        full(obs[r], mis[c]) = v;
        full(mis[c], obs[r]) = v;
      }
    for (std::size_t r = 0; r < mis.size(); ++r)
      for (std::size_t c = 0; c < mis.size(); ++c)
        full(mis[r], mis[c]) = ezz_mm(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  }
  sum += 0.5 * (full + full.transpose());
}

Eigen::MatrixXd average_second_moment(const std::vector<RowWork>& rows,
                                      const std::vector<Eigen::Index>& subset,
                                      const CopulaModel& model, int threads) {
  const Eigen::Index d = model.latent_dim();
  const std::size_t n = subset.size();
  constexpr std::size_t kChunk = 64;
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<Eigen::MatrixXd> partial(chunks);
  parallel_for(
      chunks,
      [&](std::size_t c) {
        Eigen::MatrixXd local = Eigen::MatrixXd::Zero(d, d);
        const std::size_t lo = c * kChunk;
        const std::size_t hi = std::min(lo + kChunk, n);
        for (std::size_t i = lo; i < hi; ++i) {
          try {
            accumulate_row_moment(rows[static_cast<std::size_t>(subset[i])], model, local);
          } catch (const std::exception& e) {
            throw std::runtime_error("row " + std::to_string(subset[i]) + ": " + e.what());
          }
        }
        partial[c] = std::move(local);
      },
      threads);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d);
  for (const auto& m : partial) sum += m;
  return sum / static_cast<double>(n);
}

std::vector<Eigen::Index> all_rows(Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  return idx;
}

void fit_marginals(const MixedDataset& data, const MarginalFitConfig& mcfg,
                   std::vector<Marginal>& out) {
  const auto& schema = data.schema;
  out.clear();
  out.reserve(static_cast<std::size_t>(schema.size()));
  for (Eigen::Index j = 0; j < schema.size(); ++j) {
    const auto& v = schema.var(j);
    std::vector<double> vals;
    for (Eigen::Index i = 0; i < data.rows(); ++i)
      if (!data.missing(i, j)) vals.push_back(data.values(i, j));
    if (vals.empty())
      throw std::runtime_error("variable '" + v.name + "' has no observed values");
    Eigen::Map<Eigen::VectorXd> obs(vals.data(), static_cast<Eigen::Index>(vals.size()));
    if (v.ordered()) {
      out.emplace_back(fit_ordered_marginal(obs, v.kind, v.level_count));
    } else {
      Eigen::VectorXd freqs = Eigen::VectorXd::Zero(v.category_count());
      for (double x : vals) freqs(static_cast<Eigen::Index>(x) - 1) += 1.0;
      freqs /= static_cast<double>(vals.size());
      MarginalFitConfig cfg = mcfg;
      cfg.seed = Rng::derive(mcfg.seed, static_cast<std::uint64_t>(j));
      try {
        out.emplace_back(estimate_categorical_mu(freqs, cfg));
      } catch (const std::exception& e) {
        throw std::runtime_error("variable '" + v.name + "': " + e.what());
      }
    }
  }
}

}  // namespace

EStepResult e_step_row(const Eigen::RowVectorXd& row, const CopulaModel& model) {
  const Eigen::Index d = model.latent_dim();
  EStepResult out;
  out.mean = Eigen::VectorXd::Zero(d);

  RowWork work;
  work.region = build_truncation(row, model.schema, model.marginals, model.index_map);
  work.mis = missing_latent_dims(row, model.schema, model.index_map);
  if (work.region.latent.empty()) {
    out.second_moment = model.sigma;
    return out;
  }

  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d);
  accumulate_row_moment(work, model, sum);
  out.second_moment = std::move(sum);

  const auto& obs = work.region.latent;
  const Eigen::MatrixXd sigma_oo = model.sigma(obs, obs);
  const auto moments = trunc_moments(Eigen::VectorXd::Zero(work.region.dim()), sigma_oo,
                                     work.region);
  for (std::size_t r = 0; r < obs.size(); ++r)
    out.mean(obs[r]) = moments.mean(static_cast<Eigen::Index>(r));
  if (!work.mis.empty()) {
    const Eigen::MatrixXd sigma_om = model.sigma(obs, work.mis);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sigma_oo);
    const Eigen::VectorXd mean_m = ldlt.solve(sigma_om).transpose() * moments.mean;
    for (std::size_t r = 0; r < work.mis.size(); ++r)
      out.mean(work.mis[r]) = mean_m(static_cast<Eigen::Index>(r));
  }
  return out;
}

Eigen::MatrixXd em_iteration(const MixedDataset& data, const CopulaModel& model, int threads) {
  if (data.rows() < 1) throw std::invalid_argument("em_iteration: empty dataset");
  const auto rows = precompute_rows(data, model);
  const Eigen::MatrixXd avg = average_second_moment(rows, all_rows(data.rows()), model, threads);
  return project_correlation(avg, model.index_map);
}

Eigen::MatrixXd p_cor(const Eigen::MatrixXd& s) {
  const Eigen::Index d = s.rows();
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(s(i, i) > 0.0))
      throw std::invalid_argument("p_cor: nonpositive diagonal entry at " + std::to_string(i));
  Eigen::VectorXd inv_sd = s.diagonal().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd out = inv_sd.asDiagonal() * s * inv_sd.asDiagonal();
  out = 0.5 * (out + out.transpose());
  out.diagonal().setOnes();
  return out;
}

Eigen::MatrixXd p_cat(const Eigen::MatrixXd& s, const LatentIndexMap& index_map) {
  Eigen::MatrixXd out = s;
  for (const auto& span : index_map.spans) {
    if (span.size < 2) continue;
    Eigen::MatrixXd block = out.block(span.begin, span.begin, span.size, span.size);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(block);
    Eigen::VectorXd vals = eig.eigenvalues();
    if (vals.minCoeff() < kEigFloor) {
      std::cerr << "warning: non-SPD categorical block; eigenvalues floored at " << kEigFloor
                << "\n";
      vals = vals.cwiseMax(kEigFloor);
    }
    const Eigen::MatrixXd inv_sqrt = eig.eigenvectors() *
                                     vals.cwiseSqrt().cwiseInverse().asDiagonal() *
                                     eig.eigenvectors().transpose();
    out.middleRows(span.begin, span.size) = inv_sqrt * out.middleRows(span.begin, span.size);
    out.middleCols(span.begin, span.size) = out.middleCols(span.begin, span.size) * inv_sqrt;
    out.block(span.begin, span.begin, span.size, span.size) =
        Eigen::MatrixXd::Identity(span.size, span.size);
  }
  out = 0.5 * (out + out.transpose());
  out.diagonal().setOnes();
  return out;
}

LoglikEstimate observed_loglik_mc(const MixedDataset& data, const CopulaModel& model,
                                  int samples, std::uint64_t seed) {
  if (data.rows() == 0) return {0.0, 0.0};
  if (samples < 1) throw std::invalid_argument("observed_loglik_mc: samples must be >= 1");
  constexpr double kLog2Pi = 1.8378770664093454836;
  constexpr double kFloorProb = 1e-12;

  double total = 0.0;
  double var_sum = 0.0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    const auto region =
        build_truncation(data.values.row(i), model.schema, model.marginals, model.index_map);
    if (region.dim() == 0) continue;
    const Eigen::MatrixXd cov = model.sigma(region.latent, region.latent);
    const Eigen::MatrixXd cov_t = region.involution.conjugate(cov);

    IndexVec pts, ivs;
    for (Eigen::Index c = 0; c < region.dim(); ++c)
      (region.point[static_cast<std::size_t>(c)] ? pts : ivs).push_back(c);

    double logp = 0.0;
    Eigen::VectorXd mean_f = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(ivs.size()));
    Eigen::MatrixXd cov_f = cov_t(ivs, ivs);
    if (!pts.empty()) {
      const Eigen::MatrixXd cpp = cov_t(pts, pts);
      Eigen::VectorXd a(static_cast<Eigen::Index>(pts.size()));
      for (std::size_t r = 0; r < pts.size(); ++r) a(static_cast<Eigen::Index>(r)) = region.lb(pts[r]);
      Eigen::LLT<Eigen::MatrixXd> llt(cpp);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("observed_loglik_mc: singular point covariance at row " +
                                 std::to_string(i));
      double logdet = 0.0;
      for (Eigen::Index r = 0; r < cpp.rows(); ++r)
        logdet += 2.0 * std::log(llt.matrixL()(r, r));
      const double quad = a.dot(llt.solve(a));
      logp += -0.5 * (static_cast<double>(pts.size()) * kLog2Pi + logdet + quad);
      if (!ivs.empty()) {
        const Eigen::MatrixXd cfp = cov_t(ivs, pts);
        mean_f = cfp * llt.solve(a);
        cov_f -= cfp * llt.solve(cfp.transpose());
        cov_f = 0.5 * (cov_f + cov_f.transpose());
      }
    }
    if (!ivs.empty()) {
      Eigen::MatrixXd jittered = cov_f;
      jittered.diagonal().array() += 1e-12;
      Eigen::LLT<Eigen::MatrixXd> llt(jittered);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("observed_loglik_mc: singular interval covariance at row " +
                                 std::to_string(i));
      const Eigen::MatrixXd l = llt.matrixL();
      Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
      Eigen::VectorXd xi(static_cast<Eigen::Index>(ivs.size()));
      long count = 0;
      for (int s = 0; s < samples; ++s) {
        for (Eigen::Index r = 0; r < xi.size(); ++r) xi(r) = rng.normal();
        const Eigen::VectorXd y = mean_f + l * xi;
        bool inside = true;
        for (std::size_t r = 0; r < ivs.size() && inside; ++r) {
          const double v = y(static_cast<Eigen::Index>(r));
          inside = v >= region.lb(ivs[r]) && v <= region.ub(ivs[r]);
        }
        if (inside) ++count;
      }
      const double frac = static_cast<double>(count) / static_cast<double>(samples);
      const double p = std::max(frac, kFloorProb);
      logp += std::log(p);
      const double se_frac = std::sqrt(std::max(frac * (1.0 - frac), 0.0) /
                                       static_cast<double>(samples));
      const double se_log = se_frac / p;
      var_sum += se_log * se_log;
    }
    total += logp;
  }
  const double n = static_cast<double>(data.rows());
  return {total / n, std::sqrt(var_sum) / n};
}

CopulaModel fit(const MixedDataset& data, const FitConfig& config, FitReport* report) {
  using clock = std::chrono::steady_clock;
  if (data.rows() < 1) throw std::invalid_argument("fit: dataset has no rows");
  data.validate();

  CopulaModel model;
  model.schema = data.schema;
  model.index_map = build_latent_index_map(data.schema);
  const Eigen::Index d = model.index_map.dim;

  int max_k = 0;
  for (Eigen::Index j = 0; j < data.schema.size(); ++j)
    if (!data.schema.var(j).ordered())
      max_k = std::max(max_k, data.schema.var(j).category_count());
  if (config.rank > 0) {
    if (max_k > 0 && config.rank < max_k)
      throw std::invalid_argument("rank must be >= " + std::to_string(max_k) +
                                  " (largest number of categories)");
    if (config.rank > d)
      throw std::invalid_argument("rank must be <= latent dimension " + std::to_string(d));
  }

  FitReport local_report;
  FitReport& rep = report ? *report : local_report;

  const auto t0 = clock::now();
  fit_marginals(data, config.marginal, model.marginals);
  const auto t1 = clock::now();
  rep.marginal_seconds = std::chrono::duration<double>(t1 - t0).count();

  if (config.rank > 0) {
    LowRankParams lr;
    lr.sigma2 = 0.5;
    Rng rng(Rng::derive(config.seed, 4242));
    lr.w.resize(d, config.rank);
    for (Eigen::Index r = 0; r < d; ++r)
      for (Eigen::Index c = 0; c < config.rank; ++c) lr.w(r, c) = rng.normal();
    for (Eigen::Index r = 0; r < d; ++r)
      lr.w.row(r) *= std::sqrt((1.0 - lr.sigma2)) / lr.w.row(r).norm();
    lr.w = correct_w(lr.w, lr.sigma2, model.index_map);
    model.low_rank = lr;
    model.sigma = lr.implied_sigma();
  } else {
    model.sigma = config.sigma_init ? *config.sigma_init : Eigen::MatrixXd::Identity(d, d);
    if (model.sigma.rows() != d || model.sigma.cols() != d)
      throw std::invalid_argument("sigma_init has wrong dimension");
  }

  const auto rows = precompute_rows(data, model);
  const auto idx = all_rows(data.rows());
  Rng batch_rng(Rng::derive(config.seed, 7001));

  for (int it = 1; it <= config.max_iterations; ++it) {
    Eigen::MatrixXd prev = model.sigma;
    if (config.rank > 0) {
      const LowRankParams lr = lowrank_em_iteration(data, model, config.threads);
      model.low_rank = lr;
      model.sigma = lr.implied_sigma();
    } else if (config.minibatch > 0) {
      const Eigen::Index nb =
          std::min<Eigen::Index>(config.minibatch, data.rows());
      std::vector<Eigen::Index> batch(idx);
      for (Eigen::Index i = 0; i < nb; ++i) {
        const Eigen::Index j =
            i + static_cast<Eigen::Index>(batch_rng.integer(static_cast<std::uint64_t>(data.rows() - i)));
        std::swap(batch[static_cast<std::size_t>(i)], batch[static_cast<std::size_t>(j)]);
      }
      batch.resize(static_cast<std::size_t>(nb));
      const Eigen::MatrixXd avg = average_second_moment(rows, batch, model, config.threads);
      const Eigen::MatrixXd sigma_hat = project_correlation(avg, model.index_map);
      const double gamma = config.gamma_c / (static_cast<double>(it) + config.gamma_c);
      model.sigma = p_cat(p_cor(gamma * sigma_hat + (1.0 - gamma) * model.sigma), model.index_map);
    } else {
      const Eigen::MatrixXd avg = average_second_moment(rows, idx, model, config.threads);
      model.sigma = project_correlation(avg, model.index_map);
    }

    const double change = (model.sigma - prev).norm() / std::max(prev.norm(), 1e-12);
    rep.frob_changes.push_back(change);
    rep.iterations = it;

    if (config.loglik_samples > 0) {
      const auto ll = observed_loglik_mc(data, model, config.loglik_samples,
                                         Rng::derive(config.seed, 31));
      rep.logliks.push_back(ll.value);
      rep.final_loglik = ll.value;
      rep.final_loglik_stderr = ll.stderr_;
      if (config.log)
        (*config.log) << "iter " << it << " frob_change " << change << " loglik " << ll.value
                      << " (se " << ll.stderr_ << ")\n";
    } else if (config.log) {
      (*config.log) << "iter " << it << " frob_change " << change << "\n";
    }

    if (change < config.tol) break;
  }
  rep.em_seconds = std::chrono::duration<double>(clock::now() - t1).count();
  return model;
}

LowRankParams lowrank_em_iteration(const MixedDataset& data, const CopulaModel& model,
                                   int threads) {
  if (!model.low_rank) throw std::invalid_argument("lowrank_em_iteration: model has no W");
  const Eigen::Index d = model.latent_dim();
  const Eigen::MatrixXd& w = model.low_rank->w;
  const double sigma2 = model.low_rank->sigma2;
  const Eigen::Index r = w.cols();

  const auto rows = precompute_rows(data, model);

  // Per-dimension normal equations, accumulated in deterministic chunk order.
  constexpr std::size_t kChunk = 64;
  const std::size_t n = static_cast<std::size_t>(data.rows());
  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  struct Accum {
    std::vector<Eigen::MatrixXd> a;  // d of r x r
    Eigen::MatrixXd b;               // d x r
    double trace_s = 0.0;
    double nobs = 0.0;
  };
  std::vector<Accum> partial(chunks);

  parallel_for(
      chunks,
      [&](std::size_t c) {
        Accum acc;
        acc.a.assign(static_cast<std::size_t>(d), Eigen::MatrixXd::Zero(r, r));
        acc.b = Eigen::MatrixXd::Zero(d, r);
        const std::size_t lo = c * kChunk;
        const std::size_t hi = std::min(lo + kChunk, n);
        for (std::size_t i = lo; i < hi; ++i) {
          const auto& work = rows[i];
          const auto& obs = work.region.latent;
          if (obs.empty()) continue;
          const Eigen::MatrixXd sigma_oo = model.sigma(obs, obs);
          const auto moments = trunc_moments(
              Eigen::VectorXd::Zero(work.region.dim()), sigma_oo, work.region);
          const Eigen::MatrixXd s_i =
              moments.cov + moments.mean * moments.mean.transpose();
          Eigen::MatrixXd w_o(static_cast<Eigen::Index>(obs.size()), r);
          for (std::size_t o = 0; o < obs.size(); ++o)
            w_o.row(static_cast<Eigen::Index>(o)) = w.row(obs[o]);
          Eigen::MatrixXd g = sigma2 * Eigen::MatrixXd::Identity(r, r) +
                              w_o.transpose() * w_o;
          const Eigen::MatrixXd g_inv = g.ldlt().solve(Eigen::MatrixXd::Identity(r, r));
          const Eigen::MatrixXd swg = s_i * w_o * g_inv;                 // |O| x r
          const Eigen::MatrixXd ett = sigma2 * g_inv +
                                      g_inv * w_o.transpose() * swg;     // r x r
          for (std::size_t o = 0; o < obs.size(); ++o) {
            acc.a[static_cast<std::size_t>(obs[o])] += ett;
            acc.b.row(obs[o]) += swg.row(static_cast<Eigen::Index>(o));
          }
          acc.trace_s += s_i.trace();
          acc.nobs += static_cast<double>(obs.size());
        }
        partial[c] = std::move(acc);
      },
      threads);

  Accum total;
  total.a.assign(static_cast<std::size_t>(d), Eigen::MatrixXd::Zero(r, r));
  total.b = Eigen::MatrixXd::Zero(d, r);
  for (const auto& acc : partial) {
    if (acc.a.empty()) continue;
    for (std::size_t l = 0; l < static_cast<std::size_t>(d); ++l) total.a[l] += acc.a[l];
    total.b += acc.b;
    total.trace_s += acc.trace_s;
    total.nobs += acc.nobs;
  }

  Eigen::MatrixXd w_new(d, r);
  for (Eigen::Index l = 0; l < d; ++l) {
    const Eigen::MatrixXd& a = total.a[static_cast<std::size_t>(l)];
    if (a.norm() < 1e-12) {
      w_new.row(l) = w.row(l);
      continue;
    }
    w_new.row(l) = a.ldlt().solve(total.b.row(l).transpose()).transpose();
  }

  double fit_term = 0.0;
  for (Eigen::Index l = 0; l < d; ++l) {
    fit_term += -2.0 * w_new.row(l).dot(total.b.row(l)) +
                w_new.row(l) * total.a[static_cast<std::size_t>(l)] * w_new.row(l).transpose();
  }
  double sigma2_new = (total.trace_s + fit_term) / total.nobs;
  sigma2_new = std::min(std::max(sigma2_new, 1e-6), 1.0 - 1e-6);

  // Unit-diagonal scaling, then the categorical block correction.
  for (Eigen::Index l = 0; l < d; ++l) {
    const double norm = w_new.row(l).norm();
    if (norm < 1e-12)
      throw std::runtime_error("lowrank_em_iteration: zero loading row " + std::to_string(l));
    w_new.row(l) *= std::sqrt(1.0 - sigma2_new) / norm;
  }
  w_new = correct_w(w_new, sigma2_new, model.index_map);
  return {w_new, sigma2_new};
}

Eigen::MatrixXd correct_w(const Eigen::MatrixXd& w, double sigma2,
                          const LatentIndexMap& index_map) {
  if (!(sigma2 > 0.0 && sigma2 < 1.0))
    throw std::invalid_argument("correct_w: sigma2 must lie in (0,1)");
  Eigen::MatrixXd out = w;
  for (const auto& span : index_map.spans) {
    if (span.size < 2) continue;
    if (w.cols() < span.size)
      throw std::invalid_argument("correct_w: rank below the largest number of categories");
    const Eigen::MatrixXd block = w.middleRows(span.begin, span.size);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(block, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd sv = svd.singularValues();
    if (sv(sv.size() - 1) < 1e-12 * sv(0))
      throw std::runtime_error("correct_w: rank-deficient categorical block");
    out.middleRows(span.begin, span.size) =
        std::sqrt(1.0 - sigma2) * svd.matrixU() * svd.matrixV().transpose();
  }
  return out;
}

OnlineState make_online_state(CopulaModel model, int window) {
  OnlineState st;
  st.windows.assign(static_cast<std::size_t>(model.schema.size()), {});
  st.model = std::move(model);
  (void)window;
  return st;
}

void online_update(OnlineState& state, const MixedDataset& batch, double gamma, int window,
                   const MarginalFitConfig& marginal_cfg, bool update_marginals) {
  if (!(gamma > 0.0 && gamma <= 1.0))
    throw std::invalid_argument("online_update: gamma must lie in (0, 1]");
  if (window < 1) throw std::invalid_argument("online_update: window must be >= 1");
  if (batch.schema.hash() != state.model.schema.hash())
    throw std::invalid_argument("online_update: batch schema differs from the model schema");
  batch.validate();
  if (batch.rows() == 0) return;

  CopulaModel& model = state.model;
  if (update_marginals) {
    for (Eigen::Index j = 0; j < model.schema.size(); ++j) {
      auto& win = state.windows[static_cast<std::size_t>(j)];
      for (Eigen::Index i = 0; i < batch.rows(); ++i)
        if (!batch.missing(i, j)) win.push_back(batch.values(i, j));
      if (win.size() > static_cast<std::size_t>(window))
        win.erase(win.begin(), win.end() - window);
      if (win.empty()) continue;
      Eigen::Map<const Eigen::VectorXd> obs(win.data(), static_cast<Eigen::Index>(win.size()));
      const auto& v = model.schema.var(j);
      if (v.ordered()) {
        model.marginals[static_cast<std::size_t>(j)] =
            fit_ordered_marginal(obs, v.kind, v.level_count);
      } else {
        Eigen::VectorXd freqs = Eigen::VectorXd::Zero(v.category_count());
        for (double x : win) freqs(static_cast<Eigen::Index>(x) - 1) += 1.0;
        if ((freqs.array() == 0.0).any()) {
          std::cerr << "warning: window for '" << v.name
                    << "' misses a category; keeping previous mu\n";
          continue;
        }
        freqs /= static_cast<double>(win.size());
        MarginalFitConfig cfg = marginal_cfg;
        cfg.seed = Rng::derive(marginal_cfg.seed, static_cast<std::uint64_t>(j));
        const Eigen::VectorXd warm =
            std::get<CategoricalMarginal>(model.marginals[static_cast<std::size_t>(j)]).mu;
        model.marginals[static_cast<std::size_t>(j)] =
            estimate_categorical_mu(freqs, cfg, warm);
      }
    }
  }

  const Eigen::MatrixXd sigma_hat = em_iteration(batch, model);
  model.sigma =
      p_cat(p_cor(gamma * sigma_hat + (1.0 - gamma) * model.sigma), model.index_map);
  ++state.updates;
}

}  // namespace egc
