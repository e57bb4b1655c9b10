#pragma once

#include "lvae/chol.hpp"
#include "lvae/common.hpp"
#include "lvae/kernels.hpp"

namespace lvae {

// KL terms between the aggregated encoder posterior N(mu, diag(w)) and the
// additive-GP prior of one latent dimension, plus sparse upper bounds.
//
// Conventions: mu and w are length N in row order of x; w > 0. All bounds
// return nats. Gradients are with respect to mu, w, the kernel parameters of
// the queried latent dimension (term-major order), and optionally the
// continuous covariate entries of the inducing rows.

struct BoundGrad {
  VectorXd d_mu;
  VectorXd d_w;
  VectorXd d_params;     // per-dim kernel parameters
  MatrixXd d_inducing;   // M x Q, zero where not trainable; empty if no inducing
};

// KL(N(mu, diag(w)) || N(0, sigma)) with sigma prebuilt (noise included).
double kl_exact(const VectorXd& mu, const VectorXd& w, const MatrixXd& sigma);

// Same, assembling sigma from the prior; optional analytic gradients.
double kl_exact(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                const CovariateMatrix& x, BoundGrad* grad = nullptr);

// Titsias-form upper bound with inducing rows in the full covariate space
// (instance ids kept): KL against the Nystrom-plus-noise Gaussian plus the
// trace correction scaled by the noise variance.
double bound_D1(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                const CovariateMatrix& x, const CovariateMatrix& s_full);

// Structured bound: Nystrom applied to the shared (non-instance) part only,
// instance blocks kept exact. Dense reference evaluation, O(N^3).
double bound_D2_dense(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                      const CovariateMatrix& x, const CovariateMatrix& s);

// Same value through block algebra: O(sum np^3 + N M^2 + M^3) time, no N x N
// matrix is ever formed. Optional gradients.
double bound_D2(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                const CovariateMatrix& x, const CovariateMatrix& s, BoundGrad* grad = nullptr);

}  // namespace lvae
