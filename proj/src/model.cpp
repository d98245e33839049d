#include "egc/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "egc/dataset.hpp"

namespace egc {

Eigen::MatrixXd LowRankParams::implied_sigma() const {
  Eigen::MatrixXd s = w * w.transpose();
  s.diagonal().array() += sigma2;
  return s;
}

const OrderedMarginal& CopulaModel::ordered_marginal(Eigen::Index j) const {
  return std::get<OrderedMarginal>(marginals[static_cast<std::size_t>(j)]);
}

const CategoricalMarginal& CopulaModel::categorical_marginal(Eigen::Index j) const {
  return std::get<CategoricalMarginal>(marginals[static_cast<std::size_t>(j)]);
}

void CopulaModel::check_invariants(double tol) const {
  const Eigen::Index d = latent_dim();
  if (sigma.rows() != d || sigma.cols() != d)
    throw std::runtime_error("model: Sigma dimension mismatch");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > tol)
    throw std::runtime_error("model: Sigma not symmetric");
  for (Eigen::Index i = 0; i < d; ++i)
    if (std::abs(sigma(i, i) - 1.0) > tol)
      throw std::runtime_error("model: Sigma diagonal not 1");
  for (Eigen::Index j = 0; j < schema.size(); ++j) {
    if (schema.var(j).ordered()) continue;
    const auto& span = index_map.span(j);
    const Eigen::MatrixXd block = sigma.block(span.begin, span.begin, span.size, span.size);
    if ((block - Eigen::MatrixXd::Identity(span.size, span.size)).cwiseAbs().maxCoeff() > tol)
      throw std::runtime_error("model: categorical block of '" + schema.var(j).name +
                               "' is not the identity");
  }
}

namespace {

void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (i) os << ' ';
    os << format_double(v(i));
  }
  os << '\n';
}

Eigen::VectorXd read_vector(std::istream& is, Eigen::Index n, const char* what) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(is >> v(i))) throw std::runtime_error(std::string("model: truncated ") + what);
  return v;
}

}  // namespace

std::string format_model(const CopulaModel& model) {
  std::ostringstream os;
  os << "egc-model v1\n";
  os << "schema_hash " << model.schema.hash() << '\n';
  os << "variables " << model.schema.size() << '\n';
  for (Eigen::Index j = 0; j < model.schema.size(); ++j) {
    const auto& v = model.schema.var(j);
    switch (v.kind) {
      case VarKind::Continuous: {
        const auto& m = model.ordered_marginal(j);
        os << "var " << v.name << " continuous sample " << m.sorted_values().size() << '\n';
        write_vector(os, m.sorted_values());
        break;
      }
      case VarKind::Ordinal: {
        const auto& m = model.ordered_marginal(j);
        if (m.has_counts()) {
          os << "var " << v.name << " ordinal counts " << m.level_counts().size() << '\n';
          write_vector(os, m.level_counts());
        } else {
          os << "var " << v.name << " ordinal cutoffs " << m.cutoffs().size() << '\n';
          write_vector(os, m.cutoffs());
        }
        break;
      }
      case VarKind::Categorical: {
        const auto& m = model.categorical_marginal(j);
        os << "var " << v.name << " categorical mu " << m.mu.size() << '\n';
        write_vector(os, m.mu);
        break;
      }
    }
  }
  if (model.low_rank) {
    os << "sigma lowrank " << model.latent_dim() << ' ' << model.low_rank->rank() << ' '
       << format_double(model.low_rank->sigma2) << '\n';
    for (Eigen::Index i = 0; i < model.low_rank->w.rows(); ++i)
      write_vector(os, model.low_rank->w.row(i).transpose());
  } else {
    os << "sigma dense " << model.latent_dim() << '\n';
    for (Eigen::Index i = 0; i < model.sigma.rows(); ++i)
      write_vector(os, model.sigma.row(i).transpose());
  }
  os << "end\n";
  return os.str();
}

CopulaModel parse_model(const std::string& text, const VariableSchema& schema) {
  std::istringstream is(text);
  std::string tok;
  is >> tok;
  if (tok != "egc-model") throw std::runtime_error("model: not an egc model file");
  is >> tok;
  if (tok != "v1") throw std::runtime_error("model: unsupported version '" + tok + "'");
  is >> tok;
  std::uint64_t hash = 0;
  if (tok != "schema_hash" || !(is >> hash)) throw std::runtime_error("model: missing schema_hash");
  if (hash != schema.hash())
    throw std::runtime_error("model: schema hash mismatch (model was fitted to a different schema)");

  CopulaModel model;
  model.schema = schema;
  model.index_map = build_latent_index_map(schema);

  Eigen::Index nvars = 0;
  is >> tok >> nvars;
  if (tok != "variables" || nvars != schema.size())
    throw std::runtime_error("model: variable count mismatch");

  for (Eigen::Index j = 0; j < nvars; ++j) {
    std::string name, kind, repr;
    Eigen::Index n = 0;
    if (!(is >> tok >> name >> kind >> repr >> n) || tok != "var")
      throw std::runtime_error("model: malformed variable block");
    if (name != schema.var(j).name)
      throw std::runtime_error("model: variable order mismatch at '" + name + "'");
    if (kind == "continuous" && repr == "sample") {
      Eigen::VectorXd sample = read_vector(is, n, "continuous sample");
      model.marginals.emplace_back(OrderedMarginal::fit(sample, VarKind::Continuous));
    } else if (kind == "ordinal" && repr == "counts") {
      Eigen::VectorXd counts = read_vector(is, n, "ordinal counts");
      std::vector<double> expanded;
      for (Eigen::Index l = 0; l < counts.size(); ++l)
        for (long c = 0; c < static_cast<long>(counts(l)); ++c)
          expanded.push_back(static_cast<double>(l + 1));
      Eigen::VectorXd obs = Eigen::Map<Eigen::VectorXd>(expanded.data(),
                                                        static_cast<Eigen::Index>(expanded.size()));
      model.marginals.emplace_back(
          OrderedMarginal::fit(obs, VarKind::Ordinal, static_cast<int>(counts.size())));
    } else if (kind == "ordinal" && repr == "cutoffs") {
      Eigen::VectorXd cutoffs = read_vector(is, n, "ordinal cutoffs");
      model.marginals.emplace_back(OrderedMarginal::from_cutoffs(cutoffs));
    } else if (kind == "categorical" && repr == "mu") {
      Eigen::VectorXd mu = read_vector(is, n, "categorical mu");
      model.marginals.emplace_back(CategoricalMarginal{mu});
    } else {
      throw std::runtime_error("model: unknown marginal representation '" + kind + " " + repr + "'");
    }
  }

  std::string form;
  is >> tok >> form;
  if (tok != "sigma") throw std::runtime_error("model: missing sigma block");
  if (form == "dense") {
    Eigen::Index d = 0;
    if (!(is >> d) || d != model.index_map.dim)
      throw std::runtime_error("model: sigma dimension mismatch");
    model.sigma.resize(d, d);
    for (Eigen::Index i = 0; i < d; ++i)
      model.sigma.row(i) = read_vector(is, d, "sigma row").transpose();
  } else if (form == "lowrank") {
    Eigen::Index d = 0, r = 0;
    double sigma2 = 0.0;
    if (!(is >> d >> r >> sigma2) || d != model.index_map.dim)
      throw std::runtime_error("model: sigma dimension mismatch");
    LowRankParams lr;
    lr.sigma2 = sigma2;
    lr.w.resize(d, r);
    for (Eigen::Index i = 0; i < d; ++i)
      lr.w.row(i) = read_vector(is, r, "W row").transpose();
    model.low_rank = lr;
    model.sigma = lr.implied_sigma();
  } else {
    throw std::runtime_error("model: unknown sigma form '" + form + "'");
  }
  is >> tok;
  if (tok != "end") throw std::runtime_error("model: missing end marker");
  return model;
}

void save_model(const CopulaModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write model file: " + path);
  out << format_model(model);
}

CopulaModel load_model(const std::string& path, const VariableSchema& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model(ss.str(), schema);
}

}  // namespace egc
