#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "lvae/data.hpp"

namespace lvae {

// Additive covariance structure over auxiliary covariates. Elementary pieces:
//   se(c):  s2 * exp(-(x-x')^2 / (2 l^2)) on a continuous covariate
//   ca(c):  1 if codes equal else 0
//   bi(c):  1 if both codes are 1 else 0
// plus products of those (at most one se factor per product). The scale s2 is
// carried once per additive term; factors inside a product are unit scale.
// A term evaluates to exactly 0 whenever any covariate it reads is missing in
// either row.

enum class TermKind { SE, CAT, BIN, Product };

struct KernelTerm {
  TermKind kind = TermKind::SE;
  int column = -1;                  // SE/CAT/BIN: covariate column read
  std::vector<KernelTerm> factors;  // Product only; factors have unit scale
  double log_scale = 0.0;           // log s2, meaningful on top-level terms
  double log_length = 0.0;          // SE only

  // trainable parameters of a top-level term: [log_scale] + log_length per se
  // factor, in factor order
  int param_count() const;
  void get_params(double* out) const;
  void set_params(const double* in);
  bool reads_column(int c) const;
  bool has_se() const;
};

struct TermGrad {
  Eigen::VectorXd d;  // aligned with KernelTerm::param_count ordering
};

// Per-latent-dimension additive prior. Term structure is shared across latent
// dimensions; parameters are per dimension. The instance term is the product
// holding the ca factor on the id column (index -1 when absent, in which case
// the residual part is pure noise).
struct AdditivePrior {
  CovariateSchema schema;
  int latent_dim = 0;
  std::vector<std::vector<KernelTerm>> terms;  // [latent_dim][R]
  int instance_term = -1;
  double noise_var = 1.0;  // sigma_z^2, fixed

  int term_count() const { return terms.empty() ? 0 : static_cast<int>(terms[0].size()); }
  int params_per_dim() const;
  void get_params(Eigen::VectorXd& out) const;  // dims major, terms minor
  void set_params(const Eigen::VectorXd& in);
  void validate() const;
};

// descriptor syntax: terms joined by '+', each 'se(c)', 'ca(c)', 'bi(c)' or a
// product like 'ca_x_se(c1,c2)' / 'bi_x_se(c1,c2)' / 'ca_x_ca(c1,c2)' ...
AdditivePrior parse_prior(const std::string& descriptor, const CovariateSchema& schema, int latent_dim);
std::string describe_prior(const AdditivePrior& prior);

// se lengthscales init to half the empirical range of their covariate in x
// (fallback 1 when the column has < 2 present values); scales init to 1.
void initialize_lengthscales(AdditivePrior& prior, const CovariateMatrix& x);

// ---- gram computations -----------------------------------------------------

double eval_term(const KernelTerm& term, const Eigen::RowVectorXd& xa, const Eigen::RowVectorXd& xb);

// |A| x |B| gram of one term. Guarded against accidental huge allocations.
Eigen::MatrixXd gram(const KernelTerm& term, const CovariateMatrix& a, const CovariateMatrix& b);
Eigen::MatrixXd gram(const KernelTerm& term, const CovariateMatrix& a);  // symmetric

// sum of all terms of dimension l plus noise_var * I (N x N)
Eigen::MatrixXd assemble_sigma(const AdditivePrior& prior, int l, const CovariateMatrix& x);

// Structural split Sigma = K_A + blockdiag(Sigma_hat_p):
//   K_A        = all terms except the instance term
//   Sigma_hat_p = instance-term block of instance p + noise_var * I
struct SplitStructure {
  Eigen::MatrixXd k_a;                        // N x N
  std::vector<Eigen::MatrixXd> sigma_hat;     // per instance block
};
SplitStructure split_structure(const AdditivePrior& prior, int l, const CovariateMatrix& x);

// Per-instance-block pieces only; never materializes anything N x N.
struct BlockStructure {
  std::vector<Eigen::MatrixXd> sigma_hat;  // np x np
  std::vector<Eigen::MatrixXd> k_a_diag;   // np x np, non-instance terms
};
BlockStructure block_structure(const AdditivePrior& prior, int l, const CovariateMatrix& x);

// Sum of non-instance terms between rows of a and b (used for K_A against
// inducing rows and for cross-instance prediction kernels).
Eigen::MatrixXd gram_a(const AdditivePrior& prior, int l, const CovariateMatrix& a, const CovariateMatrix& b);
// Instance term only.
Eigen::MatrixXd gram_r(const AdditivePrior& prior, int l, const CovariateMatrix& a, const CovariateMatrix& b);

// ---- gradients -------------------------------------------------------------

// Accumulates bar(i,j) * d k(a_i, b_j) / d (params of term) into `grad`, and
// optionally d/d continuous covariate values of the a/b rows into row-gradient
// matrices shaped like the covariate values. For symmetric grams pass the same
// accumulator for both sides. Masked (missing-covariate) pairs contribute 0.
void gram_backward(const KernelTerm& term, const CovariateMatrix& a, const CovariateMatrix& b,
                   const Eigen::MatrixXd& bar, TermGrad& grad,
                   Eigen::MatrixXd* d_a_values = nullptr, Eigen::MatrixXd* d_b_values = nullptr);

// Gradient container for one latent dimension's kernel parameters plus
// inducing-location gradients (zero rows/cols where not applicable).
struct PriorGrad {
  std::vector<Eigen::VectorXd> d_terms;  // [dim][params], dims not touched stay empty
  Eigen::MatrixXd d_inducing;            // M x Q or empty
  void ensure(const AdditivePrior& prior, int inducing_rows, int cols);
  Eigen::VectorXd flat(const AdditivePrior& prior) const;  // matches get_params order
};

}  // namespace lvae
