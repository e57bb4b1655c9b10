#include "lvae/chol.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <string>
#include <thread>

#include "lvae/common.hpp"

namespace lvae {

SpdChol::SpdChol(const Eigen::MatrixXd& a) {
  if (a.rows() != a.cols()) throw std::invalid_argument("SpdChol: matrix not square");
  const int n = static_cast<int>(a.rows());
  if (n == 0) throw std::invalid_argument("SpdChol: empty matrix");
  llt_.compute(a);
  if (llt_.info() == Eigen::Success && a.diagonal().minCoeff() > 0.0) return;

  const double scale = a.diagonal().mean();
  for (double rel = 1e-8; rel <= 1e-4 * 1.000001; rel *= 10.0) {
    jitter_ = rel * scale;
    Eigen::MatrixXd aj = a;
    aj.diagonal().array() += jitter_;
    llt_.compute(aj);
    if (llt_.info() == Eigen::Success) return;
  }
  throw std::runtime_error("SpdChol: matrix not positive definite after jitter up to 1e-4 * mean diagonal");
}

double SpdChol::log_det() const {
  const Eigen::MatrixXd& l = llt_.matrixLLT();
  double s = 0.0;
  for (int i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

Eigen::MatrixXd SpdChol::inverse() const {
  return llt_.solve(Eigen::MatrixXd::Identity(llt_.rows(), llt_.rows()));
}

double quad_form(const SpdChol& chol, const Eigen::VectorXd& x) {
  return x.dot(chol.solve(x));
}

int thread_count() {
  const char* env = std::getenv("LVAE_THREADS");
  if (env != nullptr) {
    try {
      int n = std::stoi(env);
      if (n < 0) throw std::runtime_error("LVAE_THREADS must be >= 0");
      if (n > 0) return n;
    } catch (const std::invalid_argument&) {
      throw std::runtime_error("LVAE_THREADS is not an integer");
    }
  }
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace lvae
