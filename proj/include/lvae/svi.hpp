#pragma once

#include "lvae/kl_bounds.hpp"

namespace lvae {

// Stochastic variational treatment of the structured bound: a free Gaussian
// N(m, H) over the inducing outputs of the shared kernel part, one per latent
// dimension. The bound decomposes over instances, so a mini-batch of whole
// instances scaled by (total instances / batch instances) estimates the
// full-batch value without bias; the inducing-posterior KL and the constant
// -N/2 enter once, unscaled.

// Uncollapsed bound over the given rows (which must be all P instances).
// Optional outputs: gradients for the Adam parameter set (mu, w, kernel
// params, inducing locations) and for the variational pair (m, H).
double svi_D4_full(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                   const CovariateMatrix& x, const CovariateMatrix& s, const VectorXd& m,
                   const MatrixXd& h, BoundGrad* grad = nullptr, VectorXd* d_m = nullptr,
                   MatrixXd* d_h = nullptr);

// Mini-batch estimate: x_batch holds whole instances; total_instances and
// total_rows describe the full training set the estimate stands in for.
double svi_D4_minibatch(const VectorXd& mu_batch, const VectorXd& w_batch,
                        const AdditivePrior& prior, int l, const CovariateMatrix& x_batch,
                        const CovariateMatrix& s, const VectorXd& m, const MatrixXd& h,
                        int total_instances, long total_rows, BoundGrad* grad = nullptr,
                        VectorXd* d_m = nullptr, MatrixXd* d_h = nullptr);

// One natural-gradient update at step length `step` (must be positive):
//   H <- (H^-1 + 2 step dH)^-1
//   m <- H_new (H^-1 m - step (dm - 2 dH m))
// If the updated precision is not positive definite the step is halved, up to
// 30 times, before erroring. H is re-symmetrized after the update.
void natural_gradient_step(VectorXd& m, MatrixXd& h, const VectorXd& d_m, const MatrixXd& d_h,
                           double step);

// ---- total KL across latent dimensions ------------------------------------

enum class BoundKind { Exact, D1, D2Dense, D2, D4 };

struct KlRequest {
  BoundKind kind = BoundKind::Exact;
};

// Sums the same bound over all latent dimensions; per-dimension requests with
// differing kinds are rejected. mu_all / w_all are N x L. For D1/D2/D4 the
// inducing rows are required; for D4 also the variational pairs (one per
// dimension).
double kl_total(const std::vector<KlRequest>& requests, const MatrixXd& mu_all,
                const MatrixXd& w_all, const AdditivePrior& prior, const CovariateMatrix& x,
                const CovariateMatrix* s = nullptr, const std::vector<VectorXd>* m = nullptr,
                const std::vector<MatrixXd>* h = nullptr);

}  // namespace lvae
