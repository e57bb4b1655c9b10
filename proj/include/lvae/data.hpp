#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace lvae {

// Auxiliary covariates. Values are stored as doubles; a missing cell is NaN.
// Categorical and binary covariates hold integer codes (binary: 0/1).

enum class CovariateKind { Continuous, Categorical, Binary };

struct CovariateSchema {
  struct Entry {
    std::string name;
    CovariateKind kind;
  };
  std::vector<Entry> entries;
  int id_index = -1;  // instance identifier column, must be Categorical

  int size() const { return static_cast<int>(entries.size()); }
  int index_of(const std::string& name) const;  // -1 when absent
  void validate() const;
};

inline bool is_missing(double v) { return std::isnan(v); }
inline double missing_value() { return std::numeric_limits<double>::quiet_NaN(); }

// N x Q covariate rows grouped into contiguous instance blocks by the id column.
struct CovariateMatrix {
  CovariateSchema schema;
  Eigen::MatrixXd values;  // N x Q, NaN = missing

  struct Block {
    double id;
    int start;
    int size;
  };
  std::vector<Block> blocks;

  int rows() const { return static_cast<int>(values.rows()); }
  int cols() const { return static_cast<int>(values.cols()); }
  int instances() const { return static_cast<int>(blocks.size()); }

  // Validates kinds, id presence per row, and derives blocks. Rows of one
  // instance must be contiguous; ids must not repeat across separated runs.
  static CovariateMatrix build(CovariateSchema schema, Eigen::MatrixXd values);

  CovariateMatrix select_rows(const std::vector<int>& idx) const;
  CovariateMatrix select_instances(const std::vector<int>& block_idx) const;
};

// Observations with missingness. NaN marks an unobserved entry.
struct ObservationMatrix {
  Eigen::MatrixXd values;  // N x D, NaN = missing
  int rows() const { return static_cast<int>(values.rows()); }
  int dims() const { return static_cast<int>(values.cols()); }
  int observed_count() const;
};

// ---- CSV files -------------------------------------------------------------
// X.csv: header line naming the covariates; empty field = missing.
// Y.csv / Y_truth.csv: headerless numeric grid, empty field = missing.
// Floats are written with 9 significant digits.

void write_covariate_csv(const std::string& path, const CovariateMatrix& x);
CovariateMatrix read_covariate_csv(const std::string& path, const CovariateSchema& schema);
// Schema recovered from the header: kinds resolved by name against `hint`;
// names absent from the hint default to Continuous.
CovariateMatrix read_covariate_csv_infer(const std::string& path, const CovariateSchema& hint);

void write_observation_csv(const std::string& path, const Eigen::MatrixXd& y);
Eigen::MatrixXd read_observation_csv(const std::string& path);

std::string format_double(double v);  // 9 significant digits

// A data split directory: X.csv plus optional Y.csv and Y_truth.csv.
struct Dataset {
  CovariateMatrix x;
  std::optional<Eigen::MatrixXd> y;
  std::optional<Eigen::MatrixXd> y_truth;
};

Dataset read_dataset_dir(const std::string& dir, const CovariateSchema& hint);

}  // namespace lvae
