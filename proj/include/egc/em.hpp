#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "egc/dataset.hpp"
#include "egc/model.hpp"

namespace egc {

struct FitConfig {
  int max_iterations = 50;
  double tol = 1e-3;                   // relative Frobenius change of Sigma
  std::optional<Eigen::MatrixXd> sigma_init;  // default: identity
  int loglik_samples = 0;              // per-row MC samples; 0 disables monitoring
  std::uint64_t seed = 1;
  int rank = 0;                        // > 0 enables the low-rank parametrization
  int minibatch = 0;                   // > 0 enables minibatch EM
  double gamma_c = 5.0;                // minibatch learning rate gamma_t = c / (t + c)
  int threads = 0;                     // 0 = all cores
  MarginalFitConfig marginal;
  std::ostream* log = nullptr;         // per-iteration progress lines
};

struct FitReport {
  int iterations = 0;
  std::vector<double> frob_changes;
  std::vector<double> logliks;
  double final_loglik = 0.0;
  double final_loglik_stderr = 0.0;
  double marginal_seconds = 0.0;
  double em_seconds = 0.0;
};

// Expected latent second moment and mean for one row given the current model.
struct EStepResult {
  Eigen::MatrixXd second_moment;  // E[z z^T | x_O]
  Eigen::VectorXd mean;           // E[z | x_O]
};
EStepResult e_step_row(const Eigen::RowVectorXd& row, const CopulaModel& model);

// One EM update: average expected second moments, then project with
// p_cor and p_cat. Rows without observations contribute Sigma itself.
Eigen::MatrixXd em_iteration(const MixedDataset& data, const CopulaModel& model,
                             int threads = 0);

// Covariance -> correlation. Throws on a nonpositive diagonal entry.
Eigen::MatrixXd p_cor(const Eigen::MatrixXd& s);

// Rescales each categorical block to the identity (A Sigma A^T with block
// inverse square roots). Idempotent; floors non-SPD blocks with a warning.
Eigen::MatrixXd p_cat(const Eigen::MatrixXd& s, const LatentIndexMap& index_map);

// Full estimation: marginals, then the EM loop until convergence.
CopulaModel fit(const MixedDataset& data, const FitConfig& config, FitReport* report = nullptr);

struct LoglikEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
};

// MC estimate of the mean observed log-likelihood (Gaussian densities on
// point coordinates, interval probabilities elsewhere). The per-row sample
// sets are regenerated from the seed, so successive calls share randomness.
LoglikEstimate observed_loglik_mc(const MixedDataset& data, const CopulaModel& model,
                                  int samples, std::uint64_t seed = 99);

// One EM update of (W, sigma2) for Sigma = W W^T + sigma2 I, followed by the
// unit-diagonal row scaling and the categorical block correction.
LowRankParams lowrank_em_iteration(const MixedDataset& data, const CopulaModel& model,
                                   int threads = 0);

// Sets all singular values of each categorical block of W to sqrt(1-sigma2).
Eigen::MatrixXd correct_w(const Eigen::MatrixXd& w, double sigma2,
                          const LatentIndexMap& index_map);

// Streaming state: the model plus per-variable observation windows kept in
// arrival order for marginal refreshes.
struct OnlineState {
  CopulaModel model;
  std::vector<std::vector<double>> windows;
  int updates = 0;
};

OnlineState make_online_state(CopulaModel model, int window = 200);

// Incremental update on a new batch: optional windowed marginal refresh
// (warm-started mu), one EM step on the batch, then the gamma mix
// Sigma <- P_cat(P_cor(gamma * Sigma_hat + (1 - gamma) * Sigma)).
void online_update(OnlineState& state, const MixedDataset& batch, double gamma, int window,
                   const MarginalFitConfig& marginal_cfg, bool update_marginals = true);

}  // namespace egc
