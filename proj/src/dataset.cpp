#include "egc/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace egc {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

[[noreturn]] void cell_error(Eigen::Index row, const std::string& col, const std::string& what) {
  throw std::runtime_error("row " + std::to_string(row) + ", column '" + col + "': " + what);
}

double parse_cell(const std::string& token, const VariableSpec& v, Eigen::Index row) {
  switch (v.kind) {
    case VarKind::Continuous: {
      std::size_t pos = 0;
      double x = 0.0;
      try {
        x = std::stod(token, &pos);
      } catch (const std::exception&) {
        cell_error(row, v.name, "non-numeric continuous value '" + token + "'");
      }
      if (pos != token.size())
        cell_error(row, v.name, "non-numeric continuous value '" + token + "'");
      if (std::isnan(x)) cell_error(row, v.name, "NaN is not a valid value");
      return x;
    }
    case VarKind::Ordinal: {
      std::size_t pos = 0;
      long lvl = 0;
      try {
        lvl = std::stol(token, &pos);
      } catch (const std::exception&) {
        cell_error(row, v.name, "ordinal value '" + token + "' is not an integer");
      }
      if (pos != token.size())
        cell_error(row, v.name, "ordinal value '" + token + "' is not an integer");
      if (lvl < 1 || lvl > v.level_count)
        cell_error(row, v.name, "ordinal value " + token + " out of range [1, " +
                                     std::to_string(v.level_count) + "]");
      return static_cast<double>(lvl);
    }
    case VarKind::Categorical: {
      for (std::size_t k = 0; k < v.labels.size(); ++k)
        if (v.labels[k] == token) return static_cast<double>(k + 1);
      cell_error(row, v.name, "unknown label '" + token + "'");
    }
  }
  cell_error(row, v.name, "unreachable");
}

}  // namespace

std::vector<Eigen::Index> MixedDataset::observed(Eigen::Index i) const {
  std::vector<Eigen::Index> out;
  for (Eigen::Index j = 0; j < cols(); ++j)
    if (!missing(i, j)) out.push_back(j);
  return out;
}

std::vector<Eigen::Index> MixedDataset::missing_vars(Eigen::Index i) const {
  std::vector<Eigen::Index> out;
  for (Eigen::Index j = 0; j < cols(); ++j)
    if (missing(i, j)) out.push_back(j);
  return out;
}

void MixedDataset::validate() const {
  if (values.cols() != schema.size())
    throw std::runtime_error("dataset has " + std::to_string(values.cols()) +
                             " columns, schema declares " + std::to_string(schema.size()));
  for (Eigen::Index j = 0; j < cols(); ++j) {
    const auto& v = schema.var(j);
    for (Eigen::Index i = 0; i < rows(); ++i) {
      const double x = values(i, j);
      if (std::isnan(x)) continue;
      if (v.kind == VarKind::Continuous) continue;
      const int top = v.kind == VarKind::Ordinal ? v.level_count : v.category_count();
      if (x != std::floor(x) || x < 1.0 || x > static_cast<double>(top))
        cell_error(i, v.name, "value " + std::to_string(x) + " outside domain");
    }
  }
}

MixedDataset make_dataset(VariableSchema schema, Eigen::MatrixXd values) {
  MixedDataset d{std::move(schema), std::move(values)};
  d.validate();
  return d;
}

MixedDataset parse_dataset_csv(const std::string& text, const VariableSchema& schema,
                               const std::string& missing_sentinel) {
  std::istringstream is(text);
  std::string line;
  // Skip comment lines, then read the header.
  bool have_header = false;
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  Eigen::Index rowno = 0;
  while (std::getline(is, line)) {
    if (!line.empty() && line[0] == '#') continue;
    if (!have_header) {
      header = split_csv_line(line);
      if (static_cast<Eigen::Index>(header.size()) != schema.size())
        throw std::runtime_error("CSV header has " + std::to_string(header.size()) +
                                 " columns, schema declares " + std::to_string(schema.size()));
      for (Eigen::Index j = 0; j < schema.size(); ++j)
        if (header[static_cast<std::size_t>(j)] != schema.var(j).name)
          throw std::runtime_error("CSV column " + std::to_string(j) + " is '" +
                                   header[static_cast<std::size_t>(j)] + "', schema expects '" +
                                   schema.var(j).name + "'");
      have_header = true;
      continue;
    }
    if (line.empty()) continue;
    const auto tokens = split_csv_line(line);
    if (static_cast<Eigen::Index>(tokens.size()) != schema.size())
      throw std::runtime_error("row " + std::to_string(rowno) + ": expected " +
                               std::to_string(schema.size()) + " cells, got " +
                               std::to_string(tokens.size()));
    std::vector<double> row(static_cast<std::size_t>(schema.size()));
    for (Eigen::Index j = 0; j < schema.size(); ++j) {
      const auto& tok = tokens[static_cast<std::size_t>(j)];
      row[static_cast<std::size_t>(j)] =
          (tok == missing_sentinel) ? std::nan("") : parse_cell(tok, schema.var(j), rowno);
    }
    rows.push_back(std::move(row));
    ++rowno;
  }
  if (!have_header) throw std::runtime_error("CSV is empty (no header row)");

  Eigen::MatrixXd values(static_cast<Eigen::Index>(rows.size()), schema.size());
  for (Eigen::Index i = 0; i < values.rows(); ++i)
    for (Eigen::Index j = 0; j < values.cols(); ++j)
      values(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
  return MixedDataset{schema, std::move(values)};
}

MixedDataset load_dataset(const std::string& csv_path, const VariableSchema& schema,
                          const std::string& missing_sentinel) {
  std::ifstream in(csv_path);
  if (!in) throw std::runtime_error("cannot open data file: " + csv_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_dataset_csv(ss.str(), schema, missing_sentinel);
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string format_dataset_csv(const MixedDataset& data, const std::string& missing_sentinel) {
  std::ostringstream os;
  for (Eigen::Index j = 0; j < data.schema.size(); ++j) {
    if (j) os << ',';
    os << data.schema.var(j).name;
  }
  os << '\n';
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.cols(); ++j) {
      if (j) os << ',';
      const double x = data.values(i, j);
      if (std::isnan(x)) {
        os << missing_sentinel;
        continue;
      }
      const auto& v = data.schema.var(j);
      switch (v.kind) {
        case VarKind::Continuous:
          os << format_double(x);
          break;
        case VarKind::Ordinal:
          os << static_cast<long>(x);
          break;
        case VarKind::Categorical:
          os << v.labels[static_cast<std::size_t>(x) - 1];
          break;
      }
    }
    os << '\n';
  }
  return os.str();
}

void save_dataset(const MixedDataset& data, const std::string& csv_path,
                  const std::string& missing_sentinel, const std::string& header_comment) {
  std::ofstream out(csv_path);
  if (!out) throw std::runtime_error("cannot write data file: " + csv_path);
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << format_dataset_csv(data, missing_sentinel);
}

}  // namespace egc
