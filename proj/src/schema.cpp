#include "egc/schema.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace egc {

namespace {

void validate_spec(const VariableSpec& v) {
  if (v.name.empty()) throw std::invalid_argument("schema: empty variable name");
  for (char c : v.name)
    if (c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '"')
      throw std::invalid_argument("schema: variable name '" + v.name + "' contains separator characters");
  switch (v.kind) {
    case VarKind::Continuous:
      break;
    case VarKind::Ordinal:
      if (v.level_count < 2)
        throw std::invalid_argument("schema: ordinal '" + v.name + "' needs at least 2 levels");
      break;
    case VarKind::Categorical: {
      if (v.labels.size() < 2)
        throw std::invalid_argument("schema: categorical '" + v.name + "' needs at least 2 labels");
      std::set<std::string> seen;
      for (const auto& l : v.labels) {
        if (l.empty()) throw std::invalid_argument("schema: categorical '" + v.name + "' has an empty label");
        for (char c : l)
          if (c == ',' || c == ' ' || c == '\t' || c == '\n' || c == '"')
            throw std::invalid_argument("schema: label '" + l + "' of '" + v.name + "' contains separator characters");
        if (!seen.insert(l).second)
          throw std::invalid_argument("schema: duplicate label '" + l + "' in '" + v.name + "'");
      }
      break;
    }
  }
}

}  // namespace

VariableSpec VariableSpec::continuous(std::string name) {
  VariableSpec v;
  v.name = std::move(name);
  v.kind = VarKind::Continuous;
  return v;
}

VariableSpec VariableSpec::ordinal(std::string name, int levels) {
  VariableSpec v;
  v.name = std::move(name);
  v.kind = VarKind::Ordinal;
  v.level_count = levels;
  return v;
}

VariableSpec VariableSpec::categorical(std::string name, std::vector<std::string> labels) {
  VariableSpec v;
  v.name = std::move(name);
  v.kind = VarKind::Categorical;
  v.labels = std::move(labels);
  return v;
}

VariableSchema::VariableSchema(std::vector<VariableSpec> variables)
    : variables_(std::move(variables)) {
  std::set<std::string> names;
  for (const auto& v : variables_) {
    validate_spec(v);
    if (!names.insert(v.name).second)
      throw std::invalid_argument("schema: duplicate variable name '" + v.name + "'");
    if (v.ordered())
      ++p_ord_;
    else
      ++p_cat_;
  }
}

Eigen::Index VariableSchema::find(const std::string& name) const {
  for (Eigen::Index j = 0; j < size(); ++j)
    if (variables_[static_cast<std::size_t>(j)].name == name) return j;
  return -1;
}

std::string VariableSchema::to_text() const {
  std::ostringstream os;
  for (const auto& v : variables_) {
    os << v.name << ' ';
    switch (v.kind) {
      case VarKind::Continuous:
        os << "continuous";
        break;
      case VarKind::Ordinal:
        os << "ordinal " << v.level_count;
        break;
      case VarKind::Categorical: {
        os << "categorical ";
        for (std::size_t i = 0; i < v.labels.size(); ++i) {
          if (i) os << ',';
          os << v.labels[i];
        }
        break;
      }
    }
    os << '\n';
  }
  return os.str();
}

VariableSchema VariableSchema::from_text(const std::string& text) {
  std::vector<VariableSpec> vars;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string name, kind;
    if (!(ls >> name >> kind))
      throw std::invalid_argument("schema line " + std::to_string(lineno) + ": expected 'name kind [params]'");
    if (kind == "continuous") {
      vars.push_back(VariableSpec::continuous(name));
    } else if (kind == "ordinal") {
      int levels = 0;
      if (!(ls >> levels))
        throw std::invalid_argument("schema line " + std::to_string(lineno) + ": ordinal needs a level count");
      vars.push_back(VariableSpec::ordinal(name, levels));
    } else if (kind == "categorical") {
      std::string labels;
      if (!(ls >> labels))
        throw std::invalid_argument("schema line " + std::to_string(lineno) + ": categorical needs labels");
      std::vector<std::string> split;
      std::string cur;
      for (char c : labels) {
        if (c == ',') {
          split.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(c);
        }
      }
      split.push_back(cur);
      vars.push_back(VariableSpec::categorical(name, std::move(split)));
    } else {
      throw std::invalid_argument("schema line " + std::to_string(lineno) + ": unknown kind '" + kind + "'");
    }
    std::string extra;
    if (ls >> extra)
      throw std::invalid_argument("schema line " + std::to_string(lineno) + ": trailing tokens");
  }
  return VariableSchema(std::move(vars));
}

std::uint64_t VariableSchema::hash() const {
  const std::string text = to_text();
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

VariableSchema load_schema(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open schema file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return VariableSchema::from_text(ss.str());
}

void save_schema(const VariableSchema& schema, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write schema file: " + path);
  out << schema.to_text();
}

LatentIndexMap build_latent_index_map(const VariableSchema& schema) {
  LatentIndexMap map;
  map.spans.reserve(static_cast<std::size_t>(schema.size()));
  Eigen::Index at = 0;
  for (Eigen::Index j = 0; j < schema.size(); ++j) {
    const auto& v = schema.var(j);
    const Eigen::Index width = v.ordered() ? 1 : v.category_count();
    map.spans.push_back({at, width});
    at += width;
  }
  map.dim = at;
  return map;
}

}  // namespace egc
