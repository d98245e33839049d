#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "egc/schema.hpp"
#include "egc/truncnorm.hpp"

namespace egc {

// Low-rank factorization Sigma = W W^T + sigma2 I with unit diagonal.
struct LowRankParams {
  Eigen::MatrixXd w;   // d x r
  double sigma2 = 0.5;
  int rank() const { return static_cast<int>(w.cols()); }
  Eigen::MatrixXd implied_sigma() const;
};

// A fitted extended Gaussian copula: per-variable marginals plus the latent
// correlation, either dense or low-rank.
struct CopulaModel {
  VariableSchema schema;
  LatentIndexMap index_map;
  std::vector<Marginal> marginals;
  Eigen::MatrixXd sigma;  // d x d correlation
  std::optional<LowRankParams> low_rank;

  Eigen::Index latent_dim() const { return index_map.dim; }
  const OrderedMarginal& ordered_marginal(Eigen::Index j) const;
  const CategoricalMarginal& categorical_marginal(Eigen::Index j) const;

  // Checks the correlation invariants (unit diagonal, identity categorical
  // blocks, symmetry) up to tol; throws with a description if violated.
  void check_invariants(double tol = 1e-8) const;
};

// Versioned structured-text serialization: schema hash, marginal parameters
// at full precision, and the dense Sigma or (W, sigma2).
std::string format_model(const CopulaModel& model);
CopulaModel parse_model(const std::string& text, const VariableSchema& schema);

void save_model(const CopulaModel& model, const std::string& path);
CopulaModel load_model(const std::string& path, const VariableSchema& schema);

}  // namespace egc
