#pragma once

#include "lvae/svi.hpp"

namespace lvae {

// Seeded random problem instances for the bound-ordering checks: a handful of
// instances with distinct time grids, generic full-rank shared kernels, random
// encoder statistics, and an inducing subset of the training rows.

struct BoundInstance {
  CovariateSchema schema;
  CovariateMatrix x;
  AdditivePrior prior;      // latent_dim 1
  VectorXd mu, w;
  std::vector<int> s_rows;  // inducing subset indices into x
  CovariateMatrix s_a;      // same rows, id column blanked (shared-kernel space)
  CovariateMatrix s_full;   // same rows as-is (full-kernel space)
};

// n_cap bounds the total rows; m_cap the inducing count (both >= 1).
// len_lo/len_hi bound the se lengthscales as a fraction of the time range;
// small fractions keep the shared Gram well conditioned (needed when the
// inducing set spans all of x, where the low-rank factor must be inverted at
// numerical full rank).
BoundInstance random_bound_instance(std::uint64_t seed, int max_instances = 6, int n_cap = 60,
                                    int m_cap = 10, double len_lo = 0.35, double len_hi = 0.9);

// Exactly `instances` instances (mini-batch estimator tests need a fixed P).
BoundInstance random_bound_instance_fixed_p(std::uint64_t seed, int instances, int m_cap = 8);

struct BoundRecord {
  std::uint64_t seed = 0;
  int n = 0, p = 0, m = 0;
  double kl_exact = 0.0;
  double d1 = 0.0;
  double d2_dense = 0.0;
  double d2_efficient = 0.0;
  double d4_at_optimum = 0.0;
  double slack_d1_vs_exact = 0.0;  // d1 - kl_exact
  double slack_d1_vs_d2 = 0.0;     // d1 - d2
  double slack_d2_vs_exact = 0.0;  // d2 - kl_exact
};

// Evaluates every bound on one seeded instance; the uncollapsed bound is taken
// at its optimal inducing posterior (one full-batch unit natural-gradient step).
BoundRecord evaluate_bounds(const BoundInstance& inst, std::uint64_t seed);

std::string bound_record_json(const BoundRecord& rec);

// Optimal inducing posterior for the given instance (unit-step fixed point).
void d4_fixed_point(const BoundInstance& inst, VectorXd& m, MatrixXd& h);

// Copy of the given rows with fresh unique ids, so no id-reading kernel term
// couples them to anything: the shared-kernel space the inducing rows live in.
CovariateMatrix shared_space_copy(const CovariateMatrix& x, double id_base = 1000.0);

}  // namespace lvae
