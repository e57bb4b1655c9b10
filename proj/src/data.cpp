#include "lvae/data.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace lvae {

int CovariateSchema::index_of(const std::string& name) const {
  for (int i = 0; i < size(); ++i)
    if (entries[i].name == name) return i;
  return -1;
}

void CovariateSchema::validate() const {
  if (entries.empty()) throw std::invalid_argument("schema: no covariates");
  std::set<std::string> seen;
  for (const auto& e : entries) {
    if (e.name.empty()) throw std::invalid_argument("schema: empty covariate name");
    if (!seen.insert(e.name).second)
      throw std::invalid_argument("schema: duplicate covariate name '" + e.name + "'");
  }
  if (id_index < 0 || id_index >= size())
    throw std::invalid_argument("schema: id column out of range");
  if (entries[id_index].kind != CovariateKind::Categorical)
    throw std::invalid_argument("schema: id column must be categorical");
}

static void check_cell(const CovariateSchema& schema, int col, double v) {
  if (is_missing(v)) return;
  const auto kind = schema.entries[col].kind;
  if (kind == CovariateKind::Continuous) {
    if (!std::isfinite(v))
      throw std::invalid_argument("covariates: non-finite value in column '" + schema.entries[col].name + "'");
    return;
  }
  if (v != std::floor(v))
    throw std::invalid_argument("covariates: non-integer code in column '" + schema.entries[col].name + "'");
  if (kind == CovariateKind::Binary && v != 0.0 && v != 1.0)
    throw std::invalid_argument("covariates: binary column '" + schema.entries[col].name + "' must be 0/1");
}

CovariateMatrix CovariateMatrix::build(CovariateSchema schema, Eigen::MatrixXd values) {
  schema.validate();
  if (values.cols() != schema.size())
    throw std::invalid_argument("covariates: column count does not match schema");
  CovariateMatrix x;
  x.schema = std::move(schema);
  x.values = std::move(values);

  const int n = x.rows();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < x.cols(); ++j) check_cell(x.schema, j, x.values(i, j));

  const int idc = x.schema.id_index;
  std::set<double> closed;
  for (int i = 0; i < n; ++i) {
    double id = x.values(i, idc);
    if (is_missing(id)) throw std::invalid_argument("covariates: missing instance id in row " + std::to_string(i));
    if (!x.blocks.empty() && x.blocks.back().id == id) {
      x.blocks.back().size += 1;
      continue;
    }
    if (closed.count(id))
      throw std::invalid_argument("covariates: rows of one instance must be contiguous (id repeats)");
    if (!x.blocks.empty()) closed.insert(x.blocks.back().id);
    x.blocks.push_back({id, i, 1});
  }
  return x;
}

CovariateMatrix CovariateMatrix::select_rows(const std::vector<int>& idx) const {
  Eigen::MatrixXd v(static_cast<int>(idx.size()), cols());
  for (int i = 0; i < static_cast<int>(idx.size()); ++i) {
    if (idx[i] < 0 || idx[i] >= rows()) throw std::out_of_range("select_rows: index out of range");
    v.row(i) = values.row(idx[i]);
  }
  return build(schema, std::move(v));
}

CovariateMatrix CovariateMatrix::select_instances(const std::vector<int>& block_idx) const {
  std::vector<int> rows_idx;
  for (int b : block_idx) {
    if (b < 0 || b >= instances()) throw std::out_of_range("select_instances: block index out of range");
    for (int i = 0; i < blocks[b].size; ++i) rows_idx.push_back(blocks[b].start + i);
  }
  return select_rows(rows_idx);
}

int ObservationMatrix::observed_count() const {
  int c = 0;
  for (int i = 0; i < rows(); ++i)
    for (int j = 0; j < dims(); ++j)
      if (!is_missing(values(i, j))) ++c;
  return c;
}

// ---- CSV -------------------------------------------------------------------

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

static std::vector<std::string> split_csv_line(const std::string& line) {
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

static double parse_cell(const std::string& s, const std::string& where) {
  if (s.empty()) return missing_value();
  size_t pos = 0;
  double v;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw std::invalid_argument(where + ": cannot parse '" + s + "'");
  }
  if (pos != s.size()) throw std::invalid_argument(where + ": trailing characters in '" + s + "'");
  return v;
}

void write_covariate_csv(const std::string& path, const CovariateMatrix& x) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (int j = 0; j < x.cols(); ++j) f << (j ? "," : "") << x.schema.entries[j].name;
  f << "\n";
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      if (j) f << ",";
      if (!is_missing(x.values(i, j))) f << format_double(x.values(i, j));
    }
    f << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

static CovariateMatrix read_covariates_impl(const std::string& path, const CovariateSchema* fixed,
                                            const CovariateSchema* hint) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error(path + ": empty file");
  auto header = split_csv_line(line);

  CovariateSchema schema;
  if (fixed != nullptr) {
    if (static_cast<int>(header.size()) != fixed->size())
      throw std::invalid_argument(path + ": header does not match expected schema");
    for (int j = 0; j < fixed->size(); ++j)
      if (header[j] != fixed->entries[j].name)
        throw std::invalid_argument(path + ": unexpected column '" + header[j] + "'");
    schema = *fixed;
  } else {
    for (const auto& name : header) {
      CovariateKind kind = CovariateKind::Continuous;
      int hi = hint->index_of(name);
      if (hi >= 0) kind = hint->entries[hi].kind;
      schema.entries.push_back({name, kind});
      if (hint->id_index >= 0 && name == hint->entries[hint->id_index].name)
        schema.id_index = static_cast<int>(schema.entries.size()) - 1;
    }
  }

  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    if (static_cast<int>(cells.size()) != schema.size())
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": wrong field count");
    std::vector<double> row(cells.size());
    for (size_t j = 0; j < cells.size(); ++j)
      row[j] = parse_cell(cells[j], path + ":" + std::to_string(lineno));
    rows.push_back(std::move(row));
  }
  Eigen::MatrixXd v(static_cast<int>(rows.size()), schema.size());
  for (int i = 0; i < v.rows(); ++i)
    for (int j = 0; j < v.cols(); ++j) v(i, j) = rows[i][j];
  return CovariateMatrix::build(schema, std::move(v));
}

CovariateMatrix read_covariate_csv(const std::string& path, const CovariateSchema& schema) {
  return read_covariates_impl(path, &schema, nullptr);
}

CovariateMatrix read_covariate_csv_infer(const std::string& path, const CovariateSchema& hint) {
  return read_covariates_impl(path, nullptr, &hint);
}

void write_observation_csv(const std::string& path, const Eigen::MatrixXd& y) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (int i = 0; i < y.rows(); ++i) {
    for (int j = 0; j < y.cols(); ++j) {
      if (j) f << ",";
      if (!is_missing(y(i, j))) f << format_double(y(i, j));
    }
    f << "\n";
  }
  if (!f) throw std::runtime_error("write failed: " + path);
}

Eigen::MatrixXd read_observation_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string line;
  std::vector<std::vector<double>> rows;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    std::vector<double> row(cells.size());
    for (size_t j = 0; j < cells.size(); ++j)
      row[j] = parse_cell(cells[j], path + ":" + std::to_string(lineno));
    if (!rows.empty() && rows.back().size() != row.size())
      throw std::invalid_argument(path + ": ragged rows");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(path + ": empty file");
  Eigen::MatrixXd y(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
  for (int i = 0; i < y.rows(); ++i)
    for (int j = 0; j < y.cols(); ++j) y(i, j) = rows[i][j];
  return y;
}

Dataset read_dataset_dir(const std::string& dir, const CovariateSchema& hint) {
  namespace fs = std::filesystem;
  Dataset d{read_covariate_csv_infer((fs::path(dir) / "X.csv").string(), hint), {}, {}};
  const auto ypath = fs::path(dir) / "Y.csv";
  if (fs::exists(ypath)) {
    d.y = read_observation_csv(ypath.string());
    if (d.y->rows() != d.x.rows()) throw std::invalid_argument(dir + ": Y.csv row count differs from X.csv");
  }
  const auto tpath = fs::path(dir) / "Y_truth.csv";
  if (fs::exists(tpath)) {
    d.y_truth = read_observation_csv(tpath.string());
    if (d.y_truth->rows() != d.x.rows())
      throw std::invalid_argument(dir + ": Y_truth.csv row count differs from X.csv");
  }
  return d;
}

}  // namespace lvae
