#pragma once

#include "lvae/kl_bounds.hpp"
#include "lvae/nnet.hpp"

namespace lvae {

// Latent-space GP predictive for one latent dimension at query rows, given the
// aggregated encoder statistics of the training rows.

struct LatentPredictive {
  VectorXd mean;
  VectorXd var;
};

// Dense path: O(N^3). Query rows may reference training instances by id (the
// instance term then couples them) or carry new ids.
LatentPredictive predict_latent_exact(const AdditivePrior& prior, int l, const CovariateMatrix& x,
                                      const VectorXd& mu, const VectorXd& w,
                                      const CovariateMatrix& x_query);

// Inducing-point path: mean from the block-and-low-rank factorization, never
// forming an N x N matrix; variance from the variational form evaluated at the
// optimal inducing posterior for (mu, w).
LatentPredictive predict_latent_sparse(const AdditivePrior& prior, int l, const CovariateMatrix& x,
                                       const VectorXd& mu, const VectorXd& w,
                                       const CovariateMatrix& s, const CovariateMatrix& x_query);

// Same equations with an explicitly trained inducing posterior N(m, H).
LatentPredictive predict_latent_variational(const AdditivePrior& prior, int l,
                                            const CovariateMatrix& x, const VectorXd& mu,
                                            const VectorXd& w, const CovariateMatrix& s,
                                            const VectorXd& m, const MatrixXd& h,
                                            const CovariateMatrix& x_query);

// Observation-space predictive: Monte Carlo through the decoder. Draws
// mc_samples latent samples per row from the per-dimension normals, decodes,
// and reports per-dimension means and total variances (decoder noise plus
// sample spread). mc_samples = 0 decodes the latent mean deterministically.
struct ObservationPredictive {
  MatrixXd mean;  // N' x D
  MatrixXd var;   // N' x D
};

ObservationPredictive predict_observation(const Decoder& dec, const MatrixXd& z_mean,
                                          const MatrixXd& z_var, int mc_samples, Rng& rng);

}  // namespace lvae
