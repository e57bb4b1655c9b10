#pragma once

#include "lvae/common.hpp"
#include "lvae/data.hpp"

namespace lvae {

// Mean squared error over scored positions with a per-instance breakdown.
struct MetricSummary {
  double mse = 0.0;          // over all scored entries
  double mean_of_instance = 0.0;
  double stderr_of_instance = 0.0;
  long scored = 0;
  int instances = 0;
};

// Imputation: positions missing in y_masked but present in truth.
MetricSummary mse_imputation(const MatrixXd& pred, const MatrixXd& y_masked, const MatrixXd& truth,
                             const CovariateMatrix& x);

// Future prediction: every position present in truth.
MetricSummary mse_future(const MatrixXd& pred, const MatrixXd& truth, const CovariateMatrix& x);

// Baselines.
MatrixXd column_mean_impute(const MatrixXd& y_masked);
// Last observation per instance and column carried forward onto query rows.
MatrixXd locf_predict(const CovariateMatrix& x_train, const MatrixXd& y_train,
                      const CovariateMatrix& x_query);

}  // namespace lvae
