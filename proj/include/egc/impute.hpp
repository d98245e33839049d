#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Core>

#include "egc/dataset.hpp"
#include "egc/em.hpp"
#include "egc/model.hpp"

namespace egc {

// Conditional-mean single imputation: latent means through the marginal
// transforms, argmax(z + mu) for categoricals. Observed cells pass through.
MixedDataset single_impute(const MixedDataset& data, const CopulaModel& model);

struct MultipleImputation {
  std::vector<MixedDataset> completions;                    // m completed datasets
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells; // originally missing cells
  std::uint64_t seed = 0;
};

// Draws m completions: observed latents from the truncated Gaussian, missing
// latents from the Gaussian conditional, mapped through the marginals.
// Deterministic given (seed, m).
MultipleImputation multiple_impute(const MixedDataset& data, const CopulaModel& model, int m,
                                   std::uint64_t seed);

struct UncertaintySummary {
  struct CategoricalCell {
    Eigen::Index row, col;
    Eigen::VectorXd probs;  // over K categories, sums to 1
  };
  struct OrderedCell {
    Eigen::Index row, col;
    double lo, hi;  // empirical (alpha/2, 1-alpha/2) quantiles
  };
  std::vector<CategoricalCell> categorical;
  std::vector<OrderedCell> ordered;
};

UncertaintySummary summarize_uncertainty(const MultipleImputation& mi, double alpha);

// Streaming imputation: each batch is imputed with the model as of the
// previous batches, then the model absorbs the batch.
std::vector<MixedDataset> online_impute(const std::vector<MixedDataset>& batches,
                                        OnlineState& state,
                                        const std::function<double(int)>& gamma_schedule,
                                        int window, const MarginalFitConfig& marginal_cfg,
                                        bool update_marginals = true);

}  // namespace egc
