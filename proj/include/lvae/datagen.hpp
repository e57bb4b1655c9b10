#pragma once

#include <string>

#include "lvae/kernels.hpp"
#include "lvae/nnet.hpp"

namespace lvae {

// Synthetic longitudinal benchmark: latent trajectories drawn jointly from an
// additive GP over id/age/sex/disease covariates, pushed through a fixed
// random nonlinear map to observations, standardized, then masked.
//
// Covariates: id (categorical), age (continuous), sex (categorical 0/1),
// diseasePresence (binary, per row: 1 from onset onward), diseaseAge
// (continuous, age minus onset where present), location (binary distractor).
//
// Splits written under the output directory:
//   train/  X.csv Y.csv Y_truth.csv   (Y masked at rate missing_frac)
//   val/    X.csv Y.csv Y_truth.csv
//   test/   X.csv Y.csv Y_truth.csv   (Y fully missing: future rows to score)
// Prediction instances contribute their first predict_observed rows to the
// train split and the remainder to test/.

struct GenConfig {
  int instances = 60;         // total, including val and prediction instances
  int val_instances = 12;
  int predict_instances = 10;
  int timepoints = 20;
  int predict_observed = 5;   // leading rows of prediction instances kept in train
  int obs_dim = 32;
  int latent_dim = 4;         // true generator dimensionality
  double disease_frac = 0.5;
  double missing_frac = 0.25;
  double noise_sd = 0.2;      // observation noise before standardization
  double disease_scale = 1.5; // output variance of the disease kernel term
  std::uint64_t seed = 0;
};

struct GeneratedData {
  CovariateSchema schema;
  CovariateMatrix x_train, x_val, x_test;
  MatrixXd y_train, y_val, y_test;          // masked (test: all missing)
  MatrixXd y_train_truth, y_val_truth, y_test_truth;
};

GeneratedData generate_benchmark(const GenConfig& cfg);
void write_benchmark(const std::string& dir, const GeneratedData& data);

CovariateSchema benchmark_schema();

}  // namespace lvae
