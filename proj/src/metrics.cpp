#include "lvae/metrics.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace lvae {

namespace {

// squared-error accumulation over scored positions, grouped by instance block
MetricSummary summarize(const MatrixXd& pred, const MatrixXd& truth, const CovariateMatrix& x,
                        const std::function<bool(long, long)>& scored) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols() || pred.rows() != x.rows())
    throw std::invalid_argument("metrics: shape mismatch");
  MetricSummary out;
  double total = 0.0;
  std::vector<double> per_instance;
  for (const auto& blk : x.blocks) {
    double s = 0.0;
    long c = 0;
    for (int r = blk.start; r < blk.start + blk.size; ++r)
      for (long d = 0; d < pred.cols(); ++d) {
        if (!scored(r, d)) continue;
        if (std::isnan(pred(r, d)))
          throw std::invalid_argument("metrics: prediction missing at a scored position");
        const double e = pred(r, d) - truth(r, d);
        s += e * e;
        ++c;
      }
    if (c > 0) {
      per_instance.push_back(s / c);
      total += s;
      out.scored += c;
    }
  }
  out.instances = static_cast<int>(per_instance.size());
  if (out.scored > 0) out.mse = total / out.scored;
  if (!per_instance.empty()) {
    double m = 0.0;
    for (double v : per_instance) m += v;
    m /= per_instance.size();
    out.mean_of_instance = m;
    if (per_instance.size() > 1) {
      double v = 0.0;
      for (double q : per_instance) v += (q - m) * (q - m);
      v /= (per_instance.size() - 1);
      out.stderr_of_instance = std::sqrt(v / per_instance.size());
    }
  }
  return out;
}

}  // namespace

MetricSummary mse_imputation(const MatrixXd& pred, const MatrixXd& y_masked, const MatrixXd& truth,
                             const CovariateMatrix& x) {
  return summarize(pred, truth, x, [&](long r, long d) {
    return std::isnan(y_masked(r, d)) && !std::isnan(truth(r, d));
  });
}

MetricSummary mse_future(const MatrixXd& pred, const MatrixXd& truth, const CovariateMatrix& x) {
  return summarize(pred, truth, x, [&](long r, long d) { return !std::isnan(truth(r, d)); });
}

MatrixXd column_mean_impute(const MatrixXd& y_masked) {
  MatrixXd out = y_masked;
  for (long d = 0; d < y_masked.cols(); ++d) {
    double s = 0.0;
    long c = 0;
    for (long r = 0; r < y_masked.rows(); ++r)
      if (!std::isnan(y_masked(r, d))) {
        s += y_masked(r, d);
        ++c;
      }
    const double fill = c > 0 ? s / c : 0.0;
    for (long r = 0; r < y_masked.rows(); ++r)
      if (std::isnan(out(r, d))) out(r, d) = fill;
  }
  return out;
}

MatrixXd locf_predict(const CovariateMatrix& x_train, const MatrixXd& y_train,
                      const CovariateMatrix& x_query) {
  if (y_train.rows() != x_train.rows())
    throw std::invalid_argument("locf_predict: training shape mismatch");
  const long d_dim = y_train.cols();

  // per (instance, column): value at the last training row with the column
  // present; global column mean backs up instances with no observation
  VectorXd col_mean = VectorXd::Zero(d_dim);
  for (long d = 0; d < d_dim; ++d) {
    double s = 0.0;
    long c = 0;
    for (long r = 0; r < y_train.rows(); ++r)
      if (!std::isnan(y_train(r, d))) {
        s += y_train(r, d);
        ++c;
      }
    col_mean(d) = c > 0 ? s / c : 0.0;
  }
  std::map<double, VectorXd> last_by_id;
  for (const auto& blk : x_train.blocks) {
    VectorXd last = VectorXd::Constant(d_dim, std::numeric_limits<double>::quiet_NaN());
    for (int r = blk.start; r < blk.start + blk.size; ++r)
      for (long d = 0; d < d_dim; ++d)
        if (!std::isnan(y_train(r, d))) last(d) = y_train(r, d);
    last_by_id[blk.id] = std::move(last);
  }

  MatrixXd out(x_query.rows(), d_dim);
  for (const auto& blk : x_query.blocks) {
    const auto hit = last_by_id.find(blk.id);
    for (int r = blk.start; r < blk.start + blk.size; ++r)
      for (long d = 0; d < d_dim; ++d) {
        double v = hit != last_by_id.end() ? hit->second(d) : col_mean(d);
        if (std::isnan(v)) v = col_mean(d);
        out(r, d) = v;
      }
  }
  return out;
}

}  // namespace lvae
