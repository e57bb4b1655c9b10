#include "lvae/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace lvae {

EventBins fit_bins(const VectorXd& onsets, int bins) {
  if (onsets.size() == 0) throw std::invalid_argument("fit_bins: no onsets");
  if (bins < 1) throw std::invalid_argument("fit_bins: need at least one bin");
  for (long i = 0; i < onsets.size(); ++i)
    if (!(onsets(i) > 0.0)) throw std::invalid_argument("fit_bins: onsets must be positive");

  const double lo = std::log(onsets.minCoeff());
  const double hi = std::log(onsets.maxCoeff());
  const double width = (hi - lo) / bins;

  VectorXd sums = VectorXd::Zero(bins), counts = VectorXd::Zero(bins);
  for (long i = 0; i < onsets.size(); ++i) {
    int b = width > 0.0 ? static_cast<int>((std::log(onsets(i)) - lo) / width) : 0;
    b = std::clamp(b, 0, bins - 1);
    sums(b) += onsets(i);
    counts(b) += 1.0;
  }
  int kept = 0;
  for (int b = 0; b < bins; ++b)
    if (counts(b) > 0) ++kept;
  EventBins out;
  out.centers.resize(kept);
  VectorXd kept_counts(kept);
  int at = 0;
  for (int b = 0; b < bins; ++b)
    if (counts(b) > 0) {
      out.centers(at) = sums(b) / counts(b);
      kept_counts(at) = counts(b);
      ++at;
    }
  out.weights = bin_weights(kept_counts);
  return out;
}

VectorXd bin_weights(const VectorXd& counts) {
  const double total = counts.sum();
  if (!(total > 0.0)) throw std::invalid_argument("bin_weights: empty counts");
  return counts / total;
}

CovariateMatrix apply_hypothesis(const CovariateMatrix& x_subject, const ClassifierConfig& cc,
                                 double onset) {
  const int ev = x_subject.schema.index_of(cc.event_covariate);
  if (ev < 0) throw std::invalid_argument("apply_hypothesis: no covariate " + cc.event_covariate);
  const int tv = cc.event_time_covariate.empty()
                     ? -1
                     : x_subject.schema.index_of(cc.event_time_covariate);
  if (!cc.event_time_covariate.empty() && tv < 0)
    throw std::invalid_argument("apply_hypothesis: no covariate " + cc.event_time_covariate);
  const int av = x_subject.schema.index_of(cc.age_covariate);
  if (cc.fill == EventFill::AgeMinusEvent && av < 0)
    throw std::invalid_argument("apply_hypothesis: no covariate " + cc.age_covariate);

  MatrixXd vals = x_subject.values;
  for (long r = 0; r < vals.rows(); ++r) {
    if (onset < 0.0) {
      vals(r, ev) = 0.0;
      if (tv >= 0) vals(r, tv) = missing_value();
    } else if (cc.fill == EventFill::Constant) {
      vals(r, ev) = 1.0;
      if (tv >= 0) vals(r, tv) = onset;
    } else {
      const double age = vals(r, av);
      if (!std::isnan(age) && age >= onset) {
        vals(r, ev) = 1.0;
        if (tv >= 0) vals(r, tv) = age - onset;
      } else {
        vals(r, ev) = 0.0;
        if (tv >= 0) vals(r, tv) = missing_value();
      }
    }
  }
  return CovariateMatrix::build(x_subject.schema, vals);
}

double hypothesis_elbo(const LvaeModel& model, const CovariateMatrix& x_subject,
                       const MatrixXd& y_subject) {
  if (y_subject.rows() != x_subject.rows())
    throw std::invalid_argument("hypothesis_elbo: shape mismatch");
  MatrixXd mean, var;
  encode_stats(model, y_subject, mean, var);
  const MatrixXd decoded = mlp_forward(model.dec.net, mean);
  const double recon = recon_loglik(y_subject, decoded, model.dec.log_obs_var);
  double kl = 0.0;
  for (int l = 0; l < model.latent_dim; ++l)
    kl += kl_exact(mean.col(l), var.col(l), model.prior, l, x_subject);
  return recon - kl;
}

VectorXd training_onsets(const CovariateMatrix& x, const ClassifierConfig& cc) {
  const int tv = x.schema.index_of(cc.event_time_covariate);
  const int av = x.schema.index_of(cc.age_covariate);
  if (tv < 0 || av < 0)
    throw std::invalid_argument("training_onsets: need age and event time covariates");
  std::vector<double> onsets;
  for (const auto& blk : x.blocks) {
    double sum = 0.0;
    int count = 0;
    for (int r = blk.start; r < blk.start + blk.size; ++r) {
      const double t = x.values(r, tv), age = x.values(r, av);
      if (std::isnan(t) || std::isnan(age)) continue;
      sum += age - t;
      ++count;
    }
    if (count > 0) onsets.push_back(sum / count);
  }
  return Eigen::Map<VectorXd>(onsets.data(), onsets.size());
}

double predict_outcome_prob(const LvaeModel& model, const ClassifierConfig& cc,
                            const EventBins& bins, const CovariateMatrix& x_subject,
                            const MatrixXd& y_subject) {
  const double l0 = hypothesis_elbo(model, apply_hypothesis(x_subject, cc, -1.0), y_subject);
  double l1 = 0.0;
  for (long b = 0; b < bins.centers.size(); ++b)
    l1 += bins.weights(b) *
          hypothesis_elbo(model, apply_hypothesis(x_subject, cc, bins.centers(b)), y_subject);
  // exp(l1) / (exp(l0) + exp(l1)), computed as a stable sigmoid
  const double d = l1 - l0;
  if (d >= 0.0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

double auroc(const VectorXd& scores, const std::vector<int>& labels) {
  const long n = scores.size();
  if (static_cast<long>(labels.size()) != n) throw std::invalid_argument("auroc: size mismatch");
  long n1 = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw std::invalid_argument("auroc: labels must be 0/1");
    n1 += l;
  }
  const long n0 = n - n1;
  if (n0 == 0 || n1 == 0) throw std::invalid_argument("auroc: need both classes");

  // average ranks with tie handling
  std::vector<long> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](long a, long b) { return scores(a) < scores(b); });
  std::vector<double> rank(n);
  long i = 0;
  while (i < n) {
    long j = i;
    while (j + 1 < n && scores(idx[j + 1]) == scores(idx[i])) ++j;
    const double avg = 0.5 * (i + j) + 1.0;
    for (long k = i; k <= j; ++k) rank[idx[k]] = avg;
    i = j + 1;
  }
  double rank_sum_pos = 0.0;
  for (long k = 0; k < n; ++k)
    if (labels[k] == 1) rank_sum_pos += rank[k];
  return (rank_sum_pos - 0.5 * n1 * (n1 + 1)) / (static_cast<double>(n0) * n1);
}

double auroc_permutation_pvalue(const VectorXd& scores, const std::vector<int>& labels,
                                int permutations, Rng& rng) {
  if (permutations < 1) throw std::invalid_argument("auroc_permutation_pvalue: need permutations");
  const double observed = auroc(scores, labels);
  std::vector<int> shuffled = labels;
  int hits = 0;
  for (int b = 0; b < permutations; ++b) {
    for (size_t i = shuffled.size(); i > 1; --i)
      std::swap(shuffled[i - 1], shuffled[rng.index(static_cast<int>(i))]);
    if (auroc(scores, shuffled) >= observed) ++hits;
  }
  return (1.0 + hits) / (permutations + 1.0);
}

}  // namespace lvae
