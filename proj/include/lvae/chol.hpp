#pragma once

#include <Eigen/Dense>

namespace lvae {

// Cholesky of a symmetric positive definite matrix with a retry ladder:
// on failure add 1e-8 * mean(diag) to the diagonal, escalating tenfold up to
// 1e-4 * mean(diag) before giving up with an exception.
class SpdChol {
 public:
  explicit SpdChol(const Eigen::MatrixXd& a);

  Eigen::MatrixXd matrix_l() const { return llt_.matrixL(); }
  double log_det() const;                     // log |A + jitter I|
  double jitter() const { return jitter_; }   // 0 when no retry was needed

  template <typename Derived>
  auto solve(const Eigen::MatrixBase<Derived>& b) const {
    return llt_.solve(b);
  }
  Eigen::MatrixXd inverse() const;

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  double jitter_ = 0.0;
};

// x' A^{-1} x for SPD A given its factor.
double quad_form(const SpdChol& chol, const Eigen::VectorXd& x);

}  // namespace lvae
