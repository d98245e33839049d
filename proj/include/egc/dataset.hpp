#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "egc/schema.hpp"

namespace egc {

// n x p mixed data grid. Cells are stored as doubles: continuous values as-is,
// ordinal levels 1..L and categorical codes 1..K as exact integers, missing as
// NaN. Immutable by convention once built.
struct MixedDataset {
  VariableSchema schema;
  Eigen::MatrixXd values;  // n x p, NaN = missing

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  bool missing(Eigen::Index i, Eigen::Index j) const { return std::isnan(values(i, j)); }

  // Observed variable indices of one row, in schema order.
  std::vector<Eigen::Index> observed(Eigen::Index i) const;
  std::vector<Eigen::Index> missing_vars(Eigen::Index i) const;

  // Throws if any present cell violates its column domain.
  void validate() const;
};

MixedDataset make_dataset(VariableSchema schema, Eigen::MatrixXd values);

// CSV with a header row naming the columns in schema order. Leading lines
// starting with '#' are skipped. Categorical cells hold labels; ordinal cells
// integer levels; missing cells the sentinel (empty string by default).
MixedDataset load_dataset(const std::string& csv_path, const VariableSchema& schema,
                          const std::string& missing_sentinel = "");
MixedDataset parse_dataset_csv(const std::string& text, const VariableSchema& schema,
                               const std::string& missing_sentinel = "");

std::string format_dataset_csv(const MixedDataset& data,
                               const std::string& missing_sentinel = "");
void save_dataset(const MixedDataset& data, const std::string& csv_path,
                  const std::string& missing_sentinel = "",
                  const std::string& header_comment = "");

// Full-precision decimal formatting that round-trips doubles exactly.
std::string format_double(double v);

}  // namespace egc
