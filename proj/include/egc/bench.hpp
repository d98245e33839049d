#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "egc/dataset.hpp"
#include "egc/model.hpp"

namespace egc {

enum class Mechanism { MCAR, MAR, MNAR };

Mechanism mechanism_from_string(const std::string& s);
std::string mechanism_to_string(Mechanism m);

struct MaskSpec {
  Mechanism mechanism = Mechanism::MCAR;
  double alpha = 0.3;
  std::uint64_t seed = 1;
};

// Generator knobs beyond the protocol arguments. The correlation is drawn as
// P_cat(P_cor(G G^T + ridge * d * I)) with G a d x wishart_dof standard
// normal matrix (0 = square), optionally Schur-shrinking the cross blocks
// that involve categorical coordinates; continuous marginals are Exponential
// with the given scale.
struct GeneratorParams {
  double exp_scale = 3.0;
  double ridge = 1e-3;
  int wishart_dof = 0;
  double cat_shrink = 1.0;
  std::pair<double, double> cutoff_range = {0.1, 0.9};
};

struct SyntheticTruth {
  Eigen::MatrixXd sigma;
  double exp_scale = 1.0;
  std::vector<Eigen::VectorXd> cutoffs;  // per variable; empty when not ordinal
  std::vector<Eigen::VectorXd> mu;       // per variable; empty when not categorical
};

struct SyntheticData {
  MixedDataset dataset;  // complete
  CopulaModel model;     // ground-truth parameters (empirical continuous marginals)
  SyntheticTruth truth;
};

// Mixed dataset drawn from the model itself: p_cont exponential continuous,
// p_ord five-level ordinals, p_cat categoricals with K categories.
SyntheticData generate_synthetic_mixed(Eigen::Index n, int p_cont, int p_ord, int p_cat, int K,
                                       std::uint64_t seed,
                                       const GeneratorParams& params = GeneratorParams());

// The standard protocol shape: 5 continuous, 5 ordinal, p_cat categorical.
SyntheticData generate_synthetic(Eigen::Index n, int p_cat, int K, std::uint64_t seed,
                                 const GeneratorParams& params = GeneratorParams());

struct MaskResult {
  MixedDataset masked;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> cells;  // (row, col) masked
  std::vector<Eigen::Index> mar_observed;  // MAR: never-masked variables
  std::vector<Eigen::Index> mar_anchors;   // MAR: anchor per column, -1 if unmasked
};

// Masks originally observed cells only. MCAR: iid Bernoulli(alpha). MNAR:
// self-masking with tercile probabilities alpha +/- 0.10. MAR: a third of the
// variables stay observed; the rest mask at 3*alpha/2 +/- 0.10 driven by a
// random observed anchor.
MaskResult mask(const MixedDataset& data, const MaskSpec& spec);

void save_mask(const std::vector<std::pair<Eigen::Index, Eigen::Index>>& cells,
               const VariableSchema& schema, const std::string& path,
               const std::string& header_comment = "");
std::vector<std::pair<Eigen::Index, Eigen::Index>> load_mask(const std::string& path,
                                                             const VariableSchema& schema);

// Column-wise mode (categorical, ties toward the lowest code) and lower
// median (ordered). Throws on a fully missing column.
MixedDataset baseline_impute(const MixedDataset& data);

struct Metrics {
  struct PerVariable {
    std::string name;
    VarKind kind;
    double error = 0.0;           // ME or MAE on this variable's masked cells
    double baseline_error = 0.0;
    Eigen::Index cells = 0;
  };
  std::vector<PerVariable> per_variable;
  double me_cat = 0.0;    // pooled over masked categorical cells
  double mae_cont = 0.0;  // pooled over masked continuous cells
  double mae_ord = 0.0;   // pooled over masked ordinal cells
  double sme = 0.0;       // mean categorical error ratio vs baseline
  double smae = 0.0;      // mean ordered error ratio vs baseline
};

Metrics evaluate(const MixedDataset& truth, const MixedDataset& imputed,
                 const std::vector<std::pair<Eigen::Index, Eigen::Index>>& masked_cells,
                 const MixedDataset* baseline_imputed = nullptr);

// Mean over cells of -sum_k q_k log p_k with probabilities clamped at 1e-12.
double cross_entropy(const std::vector<Eigen::VectorXd>& estimated,
                     const std::vector<Eigen::VectorXd>& true_conditionals);

// True conditional of a categorical cell given that row's continuous values
// (taken from the complete data), by exact Gaussian conditioning plus Monte
// Carlo over the categorical block.
Eigen::VectorXd true_categorical_conditional(const SyntheticData& data, Eigen::Index row,
                                             Eigen::Index cat_var, int mc_samples,
                                             std::uint64_t seed);

struct DiagnosticPair {
  Eigen::Index variable;
  int category;       // 1-based
  double true_prob;   // empirical observed frequency
  double est_prob;    // argmax_prob at the fitted mu, fresh samples
};

std::vector<DiagnosticPair> marginal_fit_diagnostic(const CopulaModel& model,
                                                    const MixedDataset& data,
                                                    int mc_samples = 10000,
                                                    std::uint64_t seed = 4711);

}  // namespace egc
