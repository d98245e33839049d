#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "egc/marginals.hpp"
#include "egc/schema.hpp"

namespace egc {

// Per-variable fitted marginal.
using Marginal = std::variant<OrderedMarginal, CategoricalMarginal>;

// Self-inverse block map diag(..., A_k, ..., I) that turns an argmax
// constraint into a box constraint. Blocks cover the categorical spans of a
// latent subspace; everything else is identity.
class Involution {
 public:
  struct Block {
    Eigen::Index offset;  // first coordinate of the block in the subspace
    int size;             // K
    int observed;         // observed label, 0-based
  };

  explicit Involution(Eigen::Index dim = 0) : dim_(dim) {}
  void add_block(Eigen::Index offset, int size, int observed);

  Eigen::Index dim() const { return dim_; }
  bool is_identity() const { return blocks_.empty(); }
  const std::vector<Block>& blocks() const { return blocks_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& v) const;        // A v
  Eigen::MatrixXd conjugate(const Eigen::MatrixXd& m) const;    // A M A^T
  Eigen::MatrixXd dense() const;

 private:
  Eigen::Index dim_;
  std::vector<Block> blocks_;
};

// A_k = -I_K + sum_i E_{ik} + E_{kk} for the observed label k (1-based).
// Applying it maps {argmax(z + mu) = k} onto a product of half-lines.
Eigen::MatrixXd build_involution_block(int k, int K);

// Box truncation of the observed latent coordinates, stated in the involuted
// frame. Continuous observations appear as point coordinates (lb == ub).
struct TruncationRegion {
  std::vector<Eigen::Index> latent;  // observed latent dims, ascending
  Eigen::VectorXd lb, ub;            // bounds in the involuted frame
  std::vector<char> point;           // point-mask per coordinate
  Involution involution;

  Eigen::Index dim() const { return static_cast<Eigen::Index>(latent.size()); }
};

// Region for one data row: ordered coordinates get their latent pre-image
// intervals, each observed categorical block the half-lines z_j > -mu~_j.
TruncationRegion build_truncation(const Eigen::RowVectorXd& row, const VariableSchema& schema,
                                  const std::vector<Marginal>& marginals,
                                  const LatentIndexMap& index_map);

struct TruncatedGaussianMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Approximate mean and covariance of N(mean, cov) restricted to the region,
// reported in the original frame. Point coordinates are conditioned on
// exactly; interval coordinates use an iterative coordinatewise scheme with
// the truncated variances substituted into the conditional covariance.
TruncatedGaussianMoments trunc_moments(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                       const TruncationRegion& region);

// Gibbs samples from N(mean, cov) restricted to the region, one row per
// sample, in the original frame. Deterministic given the seed.
Eigen::MatrixXd trunc_sample(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                             const TruncationRegion& region, int count, std::uint64_t seed);

}  // namespace egc
