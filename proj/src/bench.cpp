#include "egc/bench.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "egc/em.hpp"
#include "egc/marginals.hpp"
#include "egc/normal.hpp"
#include "egc/rng.hpp"

namespace egc {

Mechanism mechanism_from_string(const std::string& s) {
  if (s == "mcar" || s == "MCAR") return Mechanism::MCAR;
  if (s == "mar" || s == "MAR") return Mechanism::MAR;
  if (s == "mnar" || s == "MNAR") return Mechanism::MNAR;
  throw std::invalid_argument("unknown masking mechanism '" + s + "'");
}

std::string mechanism_to_string(Mechanism m) {
  switch (m) {
    case Mechanism::MCAR: return "mcar";
    case Mechanism::MAR: return "mar";
    case Mechanism::MNAR: return "mnar";
  }
  return "?";
}

namespace {

double lower_median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

// Interpolated empirical quantile (matches the marginal transform).
double quantile(std::vector<double> sorted, double u) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = static_cast<double>(n - 1) * u;
  std::size_t i = static_cast<std::size_t>(h);
  if (i > n - 2) i = n - 2;
  return sorted[i] + (h - static_cast<double>(i)) * (sorted[i + 1] - sorted[i]);
}

}  // namespace

SyntheticData generate_synthetic_mixed(Eigen::Index n, int p_cont, int p_ord, int p_cat, int K,
                                       std::uint64_t seed, const GeneratorParams& params) {
  if (n < 1) throw std::invalid_argument("generate_synthetic: n must be >= 1");
  if (p_cont < 0 || p_ord < 0 || p_cat < 0 || (p_cat > 0 && K < 2))
    throw std::invalid_argument("generate_synthetic: invalid shape");

  std::vector<VariableSpec> vars;
  for (int j = 0; j < p_cont; ++j) vars.push_back(VariableSpec::continuous("cont" + std::to_string(j + 1)));
  for (int j = 0; j < p_ord; ++j) vars.push_back(VariableSpec::ordinal("ord" + std::to_string(j + 1), 5));
  for (int j = 0; j < p_cat; ++j) {
    std::vector<std::string> labels;
    for (int k = 1; k <= K; ++k) labels.push_back(std::to_string(k));
    vars.push_back(VariableSpec::categorical("cat" + std::to_string(j + 1), std::move(labels)));
  }
  VariableSchema schema(std::move(vars));
  const LatentIndexMap map = build_latent_index_map(schema);
  const Eigen::Index d = map.dim;

  Rng rng(seed);
  // Correlation: P_cat(P_cor(G G^T + ridge * d * I)).
  const Eigen::Index dof = params.wishart_dof > 0 ? params.wishart_dof : d;
  Eigen::MatrixXd g(d, dof);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < dof; ++j) g(i, j) = rng.normal();
  Eigen::MatrixXd s = g * g.transpose();
  s.diagonal().array() += params.ridge * static_cast<double>(d);
  Eigen::MatrixXd sigma = egc::p_cat(egc::p_cor(s), map);
  if (params.cat_shrink < 1.0) {
    // Schur product with a PSD pattern: cross entries that involve a
    // categorical coordinate shrink toward independence, within-variable
    // blocks and ordered-ordered entries stay.
    std::vector<int> group(static_cast<std::size_t>(d), 0);  // 0 = ordered, else span id
    for (Eigen::Index j = 0; j < schema.size(); ++j) {
      if (schema.var(j).ordered()) continue;
      const auto& span = map.span(j);
      for (Eigen::Index l = span.begin; l < span.end(); ++l)
        group[static_cast<std::size_t>(l)] = static_cast<int>(j) + 1;
    }
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) {
        const int ga = group[static_cast<std::size_t>(a)];
        const int gb = group[static_cast<std::size_t>(b)];
        const bool involves_cat = ga != 0 || gb != 0;
        const bool same_block = ga != 0 && ga == gb;
        if (involves_cat && !same_block) sigma(a, b) *= params.cat_shrink;
      }
  }

  SyntheticTruth truth;
  truth.sigma = sigma;
  truth.exp_scale = params.exp_scale;
  truth.cutoffs.resize(static_cast<std::size_t>(schema.size()));
  truth.mu.resize(static_cast<std::size_t>(schema.size()));
  for (Eigen::Index j = 0; j < schema.size(); ++j) {
    const auto& v = schema.var(j);
    if (v.kind == VarKind::Ordinal) {
      Eigen::VectorXd u(v.level_count - 1);
      for (Eigen::Index l = 0; l < u.size(); ++l)
        u(l) = params.cutoff_range.first +
               (params.cutoff_range.second - params.cutoff_range.first) * rng.uniform();
      std::sort(u.data(), u.data() + u.size());
      for (Eigen::Index l = 0; l < u.size(); ++l) u(l) = norm_quantile(u(l));
      truth.cutoffs[static_cast<std::size_t>(j)] = u;
    } else if (v.kind == VarKind::Categorical) {
      // Redraw mu until every category keeps workable mass, so finite
      // samples cannot strand a category below the rare-category policy.
      Eigen::VectorXd mu(v.category_count());
      MarginalFitConfig check;
      check.mc_samples = 4000;
      for (int attempt = 0; attempt < 200; ++attempt) {
        mu(0) = 0.0;
        for (Eigen::Index k = 1; k < mu.size(); ++k) mu(k) = rng.normal();
        check.seed = Rng::derive(seed, 9000 + static_cast<std::uint64_t>(j) * 200 +
                                           static_cast<std::uint64_t>(attempt));
        if (argmax_prob(mu, check).minCoeff() >= 0.03) break;
      }
      truth.mu[static_cast<std::size_t>(j)] = mu;
    }
  }

  // Latent draws through the marginal transforms.
  Eigen::LLT<Eigen::MatrixXd> llt(sigma + 1e-12 * Eigen::MatrixXd::Identity(d, d));
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("generate_synthetic: correlation factorization failed");
  const Eigen::MatrixXd chol = llt.matrixL();

  Eigen::MatrixXd values(n, schema.size());
  Eigen::VectorXd xi(d), z(d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index l = 0; l < d; ++l) xi(l) = rng.normal();
    z.noalias() = chol * xi;
    for (Eigen::Index j = 0; j < schema.size(); ++j) {
      const auto& v = schema.var(j);
      const auto& span = map.span(j);
      if (v.kind == VarKind::Continuous) {
        values(i, j) = -params.exp_scale * std::log(norm_ccdf(z(span.begin)));
      } else if (v.kind == VarKind::Ordinal) {
        const auto& cuts = truth.cutoffs[static_cast<std::size_t>(j)];
        int level = 1;
        for (Eigen::Index l = 0; l < cuts.size(); ++l)
          if (z(span.begin) > cuts(l)) ++level;
        values(i, j) = level;
      } else {
        const auto& mu = truth.mu[static_cast<std::size_t>(j)];
        int best = 0;
        for (int k = 1; k < span.size; ++k)
          if (z(span.begin + k) + mu(k) > z(span.begin + best) + mu(best)) best = k;
        values(i, j) = best + 1;
      }
    }
  }

  SyntheticData out;
  out.dataset = make_dataset(schema, std::move(values));
  out.truth = std::move(truth);

  // Ground-truth model: exact Sigma, mu and cutoffs; continuous marginals are
  // the empirical transforms of the complete columns.
  out.model.schema = schema;
  out.model.index_map = map;
  out.model.sigma = out.truth.sigma;
  for (Eigen::Index j = 0; j < schema.size(); ++j) {
    const auto& v = schema.var(j);
    if (v.kind == VarKind::Continuous) {
      out.model.marginals.emplace_back(
          OrderedMarginal::fit(out.dataset.values.col(j), VarKind::Continuous));
    } else if (v.kind == VarKind::Ordinal) {
      out.model.marginals.emplace_back(
          OrderedMarginal::from_cutoffs(out.truth.cutoffs[static_cast<std::size_t>(j)]));
    } else {
      out.model.marginals.emplace_back(
          CategoricalMarginal{out.truth.mu[static_cast<std::size_t>(j)]});
    }
  }
  return out;
}

SyntheticData generate_synthetic(Eigen::Index n, int p_cat, int K, std::uint64_t seed,
                                 const GeneratorParams& params) {
  return generate_synthetic_mixed(n, 5, 5, p_cat, K, seed, params);
}

MaskResult mask(const MixedDataset& data, const MaskSpec& spec) {
  const bool degenerate_mcar = spec.mechanism == Mechanism::MCAR && spec.alpha == 0.0;
  if (!degenerate_mcar && !(spec.alpha > 0.0 && spec.alpha < 1.0))
    throw std::invalid_argument("mask: alpha must lie in (0,1)");
  const Eigen::Index n = data.rows();
  const Eigen::Index p = data.cols();

  auto tercile_probs = [&](double base) {
    if (base + 0.10 > 1.0 || base - 0.10 < 0.0)
      throw std::invalid_argument("mask: tercile probability outside [0,1] for alpha " +
                                  std::to_string(spec.alpha));
    return std::array<double, 3>{base + 0.10, base, base - 0.10};
  };

  auto column_terciles = [&](Eigen::Index j) {
    std::vector<double> vals;
    for (Eigen::Index i = 0; i < n; ++i)
      if (!data.missing(i, j)) vals.push_back(data.values(i, j));
    std::sort(vals.begin(), vals.end());
    return std::pair<double, double>{quantile(vals, 1.0 / 3.0), quantile(vals, 2.0 / 3.0)};
  };

  MaskResult out;
  out.masked = data;
  Rng rng(spec.seed);

  if (spec.mechanism == Mechanism::MCAR) {
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < p; ++j)
        if (!data.missing(i, j) && rng.uniform() < spec.alpha) out.cells.emplace_back(i, j);
  } else if (spec.mechanism == Mechanism::MNAR) {
    const auto probs = tercile_probs(spec.alpha);
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto [q1, q2] = column_terciles(j);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (data.missing(i, j)) continue;
        const double v = data.values(i, j);
        const double pr = v < q1 ? probs[0] : (v > q2 ? probs[2] : probs[1]);
        if (rng.uniform() < pr) out.cells.emplace_back(i, j);
      }
    }
  } else {
    const auto probs = tercile_probs(1.5 * spec.alpha);
    // A third of the variables (at least one) stay fully observed.
    std::vector<Eigen::Index> order(static_cast<std::size_t>(p));
    std::iota(order.begin(), order.end(), 0);
    for (Eigen::Index i = 0; i < p; ++i) {
      const Eigen::Index j = i + static_cast<Eigen::Index>(rng.integer(static_cast<std::uint64_t>(p - i)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    const Eigen::Index keep = std::max<Eigen::Index>(1, p / 3);
    std::vector<Eigen::Index> anchors_pool(order.begin(), order.begin() + keep);
    std::vector<bool> maskable(static_cast<std::size_t>(p), true);
    for (Eigen::Index a : anchors_pool) maskable[static_cast<std::size_t>(a)] = false;
    out.mar_observed = anchors_pool;
    out.mar_anchors.assign(static_cast<std::size_t>(p), -1);

    for (Eigen::Index j = 0; j < p; ++j) {
      if (!maskable[static_cast<std::size_t>(j)]) continue;
      const Eigen::Index anchor =
          anchors_pool[static_cast<std::size_t>(rng.integer(anchors_pool.size()))];
      out.mar_anchors[static_cast<std::size_t>(j)] = anchor;
      const auto [q1, q2] = column_terciles(anchor);
      for (Eigen::Index i = 0; i < n; ++i) {
        if (data.missing(i, j) || data.missing(i, anchor)) continue;
        const double v = data.values(i, anchor);
        const double pr = v < q1 ? probs[0] : (v > q2 ? probs[2] : probs[1]);
        if (rng.uniform() < pr) out.cells.emplace_back(i, j);
      }
    }
  }

  for (const auto& [i, j] : out.cells) out.masked.values(i, j) = std::nan("");
  return out;
}

void save_mask(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& cells,
               const VariableSchema& schema, const std::string& path,
               const std::string& header_comment) {
  std::ofstream outf(path);
  if (!outf) throw std::runtime_error("cannot write mask file: " + path);
  if (!header_comment.empty()) outf << "# " << header_comment << '\n';
  outf << "row,col\n";
  for (const auto& [i, j] : cells) outf << i << ',' << schema.var(j).name << '\n';
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> load_mask(const std::string& path,
                                                             const VariableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mask file: " + path);
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "row,col") throw std::runtime_error("mask file: expected header 'row,col'");
      header = true;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw std::runtime_error("mask file: malformed line");
    const Eigen::Index row = std::stol(line.substr(0, comma));
    const std::string col = line.substr(comma + 1);
    const Eigen::Index j = schema.find(col);
    if (j < 0) throw std::runtime_error("mask file: unknown column '" + col + "'");
    cells.emplace_back(row, j);
  }
  return cells;
}

MixedDataset baseline_impute(const MixedDataset& data) {
  MixedDataset out = data;
  for (Eigen::Index j = 0; j < data.cols(); ++j) {
    const auto& v = data.schema.var(j);
    std::vector<double> vals;
    for (Eigen::Index i = 0; i < data.rows(); ++i)
      if (!data.missing(i, j)) vals.push_back(data.values(i, j));
    if (vals.empty())
      throw std::runtime_error("baseline_impute: column '" + v.name + "' is fully missing");
    double fill;
    if (v.kind == VarKind::Categorical) {
      std::vector<int> counts(static_cast<std::size_t>(v.category_count()), 0);
      for (double x : vals) ++counts[static_cast<std::size_t>(x) - 1];
      fill = 1.0 + static_cast<double>(std::distance(
                       counts.begin(), std::max_element(counts.begin(), counts.end())));
    } else {
      fill = lower_median(std::move(vals));
    }
    for (Eigen::Index i = 0; i < data.rows(); ++i)
      if (data.missing(i, j)) out.values(i, j) = fill;
  }
  return out;
}

Metrics evaluate(const MixedDataset& truth, const MixedDataset& imputed,
                 const std::vector<std::pair<Eigen::Index, Eigen::Index>>& masked_cells,
                 const MixedDataset* baseline_imputed) {
  if (truth.rows() != imputed.rows() || truth.cols() != imputed.cols())
    throw std::invalid_argument("evaluate: truth is " + std::to_string(truth.rows()) + "x" +
                                std::to_string(truth.cols()) + " but imputed is " +
                                std::to_string(imputed.rows()) + "x" +
                                std::to_string(imputed.cols()));
  if (masked_cells.empty()) throw std::invalid_argument("evaluate: empty mask");

  MixedDataset baseline_local{truth.schema, Eigen::MatrixXd()};
  const MixedDataset* baseline = baseline_imputed;
  if (!baseline) {
    MixedDataset masked = truth;
    for (const auto& [i, j] : masked_cells) masked.values(i, j) = std::nan("");
    baseline_local = baseline_impute(masked);
    baseline = &baseline_local;
  }
  if (baseline->rows() != truth.rows() || baseline->cols() != truth.cols())
    throw std::invalid_argument("evaluate: baseline shape mismatch");

  const Eigen::Index p = truth.cols();
  std::vector<double> err(static_cast<std::size_t>(p), 0.0), base(static_cast<std::size_t>(p), 0.0);
  std::vector<Eigen::Index> cells(static_cast<std::size_t>(p), 0);

  for (const auto& [i, j] : masked_cells) {
    if (std::isnan(imputed.values(i, j)))
      throw std::invalid_argument("evaluate: imputed dataset still missing at masked cell");
    const bool cat = truth.schema.var(j).kind == VarKind::Categorical;
    const double t = truth.values(i, j);
    const double e = cat ? (imputed.values(i, j) != t ? 1.0 : 0.0)
                         : std::abs(imputed.values(i, j) - t);
    const double b = cat ? (baseline->values(i, j) != t ? 1.0 : 0.0)
                         : std::abs(baseline->values(i, j) - t);
    err[static_cast<std::size_t>(j)] += e;
    base[static_cast<std::size_t>(j)] += b;
    ++cells[static_cast<std::size_t>(j)];
  }

  Metrics m;
  double me_num = 0, me_den = 0, cont_num = 0, cont_den = 0, ord_num = 0, ord_den = 0;
  double sme_sum = 0, smae_sum = 0;
  int sme_n = 0, smae_n = 0;
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto sj = static_cast<std::size_t>(j);
    if (cells[sj] == 0) continue;
    const auto& v = truth.schema.var(j);
    Metrics::PerVariable pv;
    pv.name = v.name;
    pv.kind = v.kind;
    pv.cells = cells[sj];
    pv.error = err[sj] / static_cast<double>(cells[sj]);
    pv.baseline_error = base[sj] / static_cast<double>(cells[sj]);
    m.per_variable.push_back(pv);
    switch (v.kind) {
      case VarKind::Categorical:
        me_num += err[sj];
        me_den += static_cast<double>(cells[sj]);
        break;
      case VarKind::Continuous:
        cont_num += err[sj];
        cont_den += static_cast<double>(cells[sj]);
        break;
      case VarKind::Ordinal:
        ord_num += err[sj];
        ord_den += static_cast<double>(cells[sj]);
        break;
    }
    if (pv.baseline_error > 0.0) {
      if (v.kind == VarKind::Categorical) {
        sme_sum += pv.error / pv.baseline_error;
        ++sme_n;
      } else {
        smae_sum += pv.error / pv.baseline_error;
        ++smae_n;
      }
    } else {
      std::cerr << "warning: baseline error is 0 for '" << v.name
                << "'; excluded from scaled metrics\n";
    }
  }
  m.me_cat = me_den > 0 ? me_num / me_den : 0.0;
  m.mae_cont = cont_den > 0 ? cont_num / cont_den : 0.0;
  m.mae_ord = ord_den > 0 ? ord_num / ord_den : 0.0;
  m.sme = sme_n > 0 ? sme_sum / sme_n : 0.0;
  m.smae = smae_n > 0 ? smae_sum / smae_n : 0.0;
  return m;
}

double cross_entropy(const std::vector<Eigen::VectorXd>& estimated,
                     const std::vector<Eigen::VectorXd>& true_conditionals) {
  if (estimated.size() != true_conditionals.size() || estimated.empty())
    throw std::invalid_argument("cross_entropy: size mismatch or empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) {
    const auto& p = estimated[i];
    const auto& q = true_conditionals[i];
    if (p.size() != q.size()) throw std::invalid_argument("cross_entropy: vector size mismatch");
    double ce = 0.0;
    for (Eigen::Index k = 0; k < p.size(); ++k)
      ce -= q(k) * std::log(std::max(p(k), 1e-12));
    total += ce;
  }
  return total / static_cast<double>(estimated.size());
}

Eigen::VectorXd true_categorical_conditional(const SyntheticData& data, Eigen::Index row,
                                             Eigen::Index cat_var, int mc_samples,
                                             std::uint64_t seed) {
  const auto& schema = data.dataset.schema;
  if (schema.var(cat_var).kind != VarKind::Categorical)
    throw std::invalid_argument("true_categorical_conditional: variable is not categorical");
  const auto& map = data.model.index_map;
  const auto& span = map.span(cat_var);

  // Latent points of this row's continuous coordinates under the true
  // exponential marginal: z = -Phi^{-1}(exp(-x/scale)).
  std::vector<Eigen::Index> cond_dims;
  std::vector<double> cond_vals;
  for (Eigen::Index j = 0; j < schema.size(); ++j) {
    if (schema.var(j).kind != VarKind::Continuous) continue;
    const double x = data.dataset.values(row, j);
    cond_dims.push_back(map.span(j).begin);
    cond_vals.push_back(-norm_quantile(std::exp(-x / data.truth.exp_scale)));
  }

  std::vector<Eigen::Index> block_dims;
  for (Eigen::Index l = span.begin; l < span.end(); ++l) block_dims.push_back(l);

  const Eigen::MatrixXd& sigma = data.truth.sigma;
  Eigen::VectorXd mean_b = Eigen::VectorXd::Zero(span.size);
  Eigen::MatrixXd cov_b = sigma(block_dims, block_dims);
  if (!cond_dims.empty()) {
    const Eigen::MatrixXd s_cc = sigma(cond_dims, cond_dims);
    const Eigen::MatrixXd s_bc = sigma(block_dims, cond_dims);
    const Eigen::VectorXd a = Eigen::Map<const Eigen::VectorXd>(
        cond_vals.data(), static_cast<Eigen::Index>(cond_vals.size()));
    Eigen::LDLT<Eigen::MatrixXd> ldlt(s_cc);
    mean_b = s_bc * ldlt.solve(a);
    cov_b -= s_bc * ldlt.solve(s_bc.transpose());
    cov_b = 0.5 * (cov_b + cov_b.transpose());
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov_b);
  const Eigen::MatrixXd sqrt_cov = eig.eigenvectors() *
                                   eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                                   eig.eigenvectors().transpose();
  const Eigen::VectorXd& mu = data.truth.mu[static_cast<std::size_t>(cat_var)];

  Rng rng(seed);
  Eigen::VectorXd counts = Eigen::VectorXd::Zero(span.size);
  Eigen::VectorXd xi(span.size);
  for (int s = 0; s < mc_samples; ++s) {
    for (Eigen::Index k = 0; k < span.size; ++k) xi(k) = rng.normal();
    const Eigen::VectorXd z = mean_b + sqrt_cov * xi + mu;
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < span.size; ++k)
      if (z(k) > z(best)) best = k;
    counts(best) += 1.0;
  }
  return counts / static_cast<double>(mc_samples);
}

std::vector<DiagnosticPair> marginal_fit_diagnostic(const CopulaModel& model,
                                                    const MixedDataset& data,
                                                    int mc_samples, std::uint64_t seed) {
  std::vector<DiagnosticPair> out;
  for (Eigen::Index j = 0; j < model.schema.size(); ++j) {
    const auto& v = model.schema.var(j);
    if (v.kind != VarKind::Categorical) continue;
    Eigen::VectorXd freqs = Eigen::VectorXd::Zero(v.category_count());
    double n = 0;
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
      if (data.missing(i, j)) continue;
      freqs(static_cast<Eigen::Index>(data.values(i, j)) - 1) += 1.0;
      n += 1.0;
    }
    if (n == 0) continue;
    freqs /= n;
    MarginalFitConfig cfg;
    cfg.mc_samples = mc_samples;
    cfg.seed = Rng::derive(seed, static_cast<std::uint64_t>(j));
    const Eigen::VectorXd est = argmax_prob(model.categorical_marginal(j).mu, cfg);
    for (int k = 0; k < v.category_count(); ++k)
      out.push_back({j, k + 1, freqs(k), est(k)});
  }
  return out;
}

}  // namespace egc
