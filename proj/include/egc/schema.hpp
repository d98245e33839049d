#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace egc {

enum class VarKind { Continuous, Ordinal, Categorical };

// One column of a mixed dataset. Ordinal variables take integer levels
// 1..level_count; categorical variables take one of category_count unordered
// labels, coded 1..K in schema label order.
struct VariableSpec {
  std::string name;
  VarKind kind = VarKind::Continuous;
  int level_count = 0;                 // ordinal
  std::vector<std::string> labels;     // categorical; size() == K

  int category_count() const { return static_cast<int>(labels.size()); }
  bool ordered() const { return kind != VarKind::Categorical; }

  static VariableSpec continuous(std::string name);
  static VariableSpec ordinal(std::string name, int levels);
  static VariableSpec categorical(std::string name, std::vector<std::string> labels);
};

class VariableSchema {
 public:
  VariableSchema() = default;
  explicit VariableSchema(std::vector<VariableSpec> variables);

  const std::vector<VariableSpec>& variables() const { return variables_; }
  const VariableSpec& var(Eigen::Index j) const { return variables_[static_cast<std::size_t>(j)]; }
  Eigen::Index size() const { return static_cast<Eigen::Index>(variables_.size()); }
  Eigen::Index ordered_count() const { return p_ord_; }
  Eigen::Index categorical_count() const { return p_cat_; }

  // Index of the named variable, or -1.
  Eigen::Index find(const std::string& name) const;

  // Canonical sidecar text, one `name kind [params]` line per variable.
  std::string to_text() const;
  static VariableSchema from_text(const std::string& text);

  // FNV-1a 64 over the canonical text; pins models to their schema.
  std::uint64_t hash() const;

 private:
  std::vector<VariableSpec> variables_;
  Eigen::Index p_ord_ = 0;
  Eigen::Index p_cat_ = 0;
};

VariableSchema load_schema(const std::string& path);
void save_schema(const VariableSchema& schema, const std::string& path);

// Contiguous latent spans per variable: one dimension per ordered variable,
// K_j dimensions per categorical. Spans partition {0..dim-1} in schema order.
struct LatentIndexMap {
  struct Span {
    Eigen::Index begin = 0;
    Eigen::Index size = 0;
    Eigen::Index end() const { return begin + size; }
  };
  std::vector<Span> spans;
  Eigen::Index dim = 0;

  const Span& span(Eigen::Index variable) const { return spans[static_cast<std::size_t>(variable)]; }
};

LatentIndexMap build_latent_index_map(const VariableSchema& schema);

}  // namespace egc
