#pragma once

#include "lvae/trainer.hpp"

namespace lvae {

// Generative two-hypothesis classifier for a binary event covariate: compares
// the per-subject objective under "event = 0" against a bin-weighted average
// of "event = 1 with onset t_i" hypotheses, with the onset bins fitted to the
// training distribution.

struct EventBins {
  VectorXd centers;  // average onset per bin
  VectorXd weights;  // bin proportions, sum to 1
};

// Onset values are binned on a logarithmic scale into `bins` bins (values
// must be positive); empty bins are dropped.
EventBins fit_bins(const VectorXd& onsets, int bins = 6);
VectorXd bin_weights(const VectorXd& counts);  // counts -> proportions

// How the event-time covariate is filled under an "event at onset t" hypothesis.
//   Constant:       event time = t on every row, presence = 1 on every row
//   AgeMinusEvent:  rows with age >= t get presence = 1 and time = age - t,
//                   earlier rows presence = 0 and time missing
enum class EventFill { Constant, AgeMinusEvent };

struct ClassifierConfig {
  std::string event_covariate = "diseasePresence";
  std::string event_time_covariate = "diseaseAge";  // empty = none
  std::string age_covariate = "age";
  EventFill fill = EventFill::AgeMinusEvent;
  int bins = 6;
};

// Subject covariates rewritten under a hypothesis; onset < 0 means "no event".
CovariateMatrix apply_hypothesis(const CovariateMatrix& x_subject, const ClassifierConfig& cc,
                                 double onset);

// Full per-subject objective (reconstruction at the latent mean minus the
// exact KL term) under the given covariates.
double hypothesis_elbo(const LvaeModel& model, const CovariateMatrix& x_subject,
                       const MatrixXd& y_subject);

// Onset times observed in training data (age minus event time over rows where
// the event time is present), one value per affected instance.
VectorXd training_onsets(const CovariateMatrix& x, const ClassifierConfig& cc);

// P(event = 1) for one subject.
double predict_outcome_prob(const LvaeModel& model, const ClassifierConfig& cc,
                            const EventBins& bins, const CovariateMatrix& x_subject,
                            const MatrixXd& y_subject);

// Rank-based AUROC with tie handling; labels are 0/1.
double auroc(const VectorXd& scores, const std::vector<int>& labels);

// Permutation p-value for the observed AUROC under label shuffles (one-sided,
// add-one smoothed).
double auroc_permutation_pvalue(const VectorXd& scores, const std::vector<int>& labels,
                                int permutations, Rng& rng);

}  // namespace lvae
