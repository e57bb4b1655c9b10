#pragma once

#include <functional>
#include <optional>
#include <string>

#include "lvae/nnet.hpp"
#include "lvae/predictive.hpp"
#include "lvae/svi.hpp"

namespace lvae {

// Training objective: negative ELBO with the chosen KL term. The exact and
// structured-sparse bounds need all training rows at once, so those run full
// batch; the uncollapsed bound trains on mini-batches of whole instances with
// interleaved natural-gradient updates of the inducing posteriors.

struct TrainConfig {
  std::string prior;                       // descriptor, required for GP phases
  int latent_dim = 6;
  std::vector<int> enc_hidden{32, 16};
  std::vector<int> dec_hidden{16, 32};
  BoundKind bound = BoundKind::D4;         // Exact | D2 | D4
  int inducing_count = 16;
  int epochs = 300;
  int pretrain_epochs = 200;
  int batch_instances = 8;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double gp_lr_scale = 0.1;                // kernel params and inducing locations
  double nat_grad_step = 0.3;
  int early_stop_patience = 0;             // 0 = run to the epoch cap
  int dense_cap = 2000;
  int mc_samples = 25;                     // observation predictive
  double sigma_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct LvaeModel {
  CovariateSchema schema;
  AdditivePrior prior;
  Encoder enc;
  Decoder dec;
  CovariateMatrix inducing;        // zero rows when the bound needs none
  std::vector<VectorXd> ind_mean;  // per latent dim, inducing posterior mean
  std::vector<MatrixXd> ind_cov;   // per latent dim, inducing posterior covariance
  int latent_dim = 0;

  bool has_inducing() const { return inducing.rows() > 0; }
};

// Fresh model with seeded weight init; inducing rows are chosen by k-means
// style coverage of the covariate columns the shared kernel part reads.
LvaeModel init_model(const TrainConfig& cfg, const CovariateSchema& schema,
                     const CovariateMatrix& x_train, int obs_dim, Rng& rng);

// checkpoint round-trip (JSON, versioned)
void save_checkpoint(const std::string& path, const LvaeModel& model);
LvaeModel load_checkpoint(const std::string& path);
std::string checkpoint_to_json(const LvaeModel& model);
LvaeModel checkpoint_from_json(const std::string& text);

// ---- optimizer -------------------------------------------------------------

enum class ParamGroup { Net, Gp, Inducing };

struct ParamRef {
  double* data;
  long size;
  ParamGroup group;
};

// Every trainable array of the model in a fixed order (networks, observation
// variances, kernel parameters, then present continuous inducing entries).
std::vector<ParamRef> trainable_params(LvaeModel& model);
long param_count(const std::vector<ParamRef>& refs);
VectorXd gather_params(const std::vector<ParamRef>& refs);
void scatter_params(const std::vector<ParamRef>& refs, const VectorXd& flat);

struct Adam {
  VectorXd m1, m2;
  long t = 0;
  void step(const TrainConfig& cfg, const std::vector<ParamRef>& refs, const VectorXd& grad);
};

// ---- objective -------------------------------------------------------------

struct ElboParts {
  double loss = 0.0;   // negative elbo estimate for the full data
  double recon = 0.0;  // log-likelihood part (scaled to full data)
  double kl = 0.0;     // bound part
};

// One objective evaluation on a batch of whole instances. For the mini-batch
// bound, recon and the per-instance KL terms are scaled by total/batch
// instances. `eps` is the reparameterization noise (rows x latent). When
// `grad_out` is given, analytic gradients for the Adam set are written in
// trainable_params order; d_m/d_h get the natural-gradient pair per dimension.
ElboParts elbo_batch(LvaeModel& model, const TrainConfig& cfg, const CovariateMatrix& x_batch,
                     const MatrixXd& y_batch, const MatrixXd& eps, int total_instances,
                     long total_rows, VectorXd* grad_out,
                     std::vector<VectorXd>* d_m = nullptr, std::vector<MatrixXd>* d_h = nullptr);

// Plain VAE objective (unit normal prior), used for pretraining and as the
// baseline model; same reparameterization convention.
ElboParts vae_batch(LvaeModel& model, const TrainConfig& cfg, const MatrixXd& y_batch,
                    const MatrixXd& eps, double scale, VectorXd* grad_out);

// ---- training loops --------------------------------------------------------

struct EpochRecord {
  int epoch = 0;
  std::string phase;  // "pretrain" | "train"
  double train_loss = 0.0, recon = 0.0, kl = 0.0;
  double val_loss = 0.0;
  bool is_best = false;
};

struct TrainResult {
  LvaeModel best;                  // best validation snapshot
  LvaeModel last;
  std::vector<EpochRecord> log;
  double best_val_loss = 0.0;
  int best_epoch = -1;
};

using LogSink = std::function<void(const EpochRecord&)>;

// Pretraining: standard VAE on the training observations.
TrainResult pretrain(LvaeModel model, const TrainConfig& cfg, const MatrixXd& y_train,
                     const MatrixXd& y_val, const LogSink& sink = nullptr);

// Full training starting from `model` (typically the pretrained snapshot).
TrainResult train(LvaeModel model, const TrainConfig& cfg, const CovariateMatrix& x_train,
                  const MatrixXd& y_train, const CovariateMatrix& x_val, const MatrixXd& y_val,
                  const LogSink& sink = nullptr);

// validation loss of the GP objective (full-batch bound on the given split)
ElboParts evaluate(LvaeModel& model, const TrainConfig& cfg, const CovariateMatrix& x,
                   const MatrixXd& y, const MatrixXd& eps);

// ---- model application -----------------------------------------------------

// aggregated encoder statistics (mean and variance per latent dim)
void encode_stats(const LvaeModel& model, const MatrixXd& y, MatrixXd& mean, MatrixXd& var);

// Missing entries replaced by decoding the latent GP predictive mean at the
// training covariates; observed entries pass through unchanged.
MatrixXd impute(const LvaeModel& model, const TrainConfig& cfg, const CovariateMatrix& x,
                const MatrixXd& y);

// Plain-VAE imputation (encode, decode, fill), no covariates involved.
MatrixXd impute_vae(const LvaeModel& model, const MatrixXd& y);

// Latent predictive at query rows given training data, per latent dimension;
// exact path when rows fit under dense_cap, sparse path otherwise.
void latent_predictive(const LvaeModel& model, const TrainConfig& cfg, const CovariateMatrix& x,
                       const MatrixXd& y, const CovariateMatrix& x_query, MatrixXd& z_mean,
                       MatrixXd& z_var);

}  // namespace lvae
