#pragma once

#include <string>
#include <vector>

#include "lvae/common.hpp"
#include "lvae/data.hpp"

namespace lvae {

// Small dense networks. Batch convention: rows are samples, so a layer maps
// (N x in) -> (N x out) via x W' + b'.

enum class Activation { Tanh, Identity };

struct DenseLayer {
  MatrixXd w;  // out x in
  VectorXd b;
  Activation act = Activation::Tanh;
};

struct Mlp {
  std::vector<DenseLayer> layers;
  int in_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.cols()); }
  int out_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().w.rows()); }
};

struct MlpCache {
  std::vector<MatrixXd> inputs;  // input to each layer
  MatrixXd out;
};

struct MlpGrad {
  std::vector<MatrixXd> d_w;
  std::vector<VectorXd> d_b;
};

// widths: in, hidden..., out; hidden layers use `hidden_act`, output layer identity
Mlp make_mlp(const std::vector<int>& widths, Rng& rng, Activation hidden_act = Activation::Tanh);

MatrixXd mlp_forward(const Mlp& net, const MatrixXd& x, MlpCache* cache = nullptr);
// d_out is N x out; returns N x in gradient and accumulates parameter grads
MatrixXd mlp_backward(const Mlp& net, const MlpCache& cache, const MatrixXd& d_out, MlpGrad& grad);
void zero_grad(const Mlp& net, MlpGrad& grad);

// Encoder: shared tanh trunk with linear mean and log-variance heads.
// Missing observation entries must be zero-filled by the caller.
struct Encoder {
  Mlp trunk;
  DenseLayer mean_head;    // latent x trunk_out
  DenseLayer logvar_head;  // latent x trunk_out
};

struct EncoderCache {
  MlpCache trunk;
  MatrixXd trunk_out;
  MatrixXd mean, logvar;
};

struct EncoderGrad {
  MlpGrad trunk;
  MatrixXd d_mean_w, d_logvar_w;
  VectorXd d_mean_b, d_logvar_b;
};

Encoder make_encoder(int obs_dim, const std::vector<int>& hidden, int latent_dim, Rng& rng);
// returns mean (N x L) and variance (N x L); variance = exp(logvar)
void encoder_forward(const Encoder& enc, const MatrixXd& y_filled, MatrixXd& mean, MatrixXd& var,
                     EncoderCache* cache = nullptr);
// d_mean / d_var are gradients w.r.t. mean and variance (not logvar)
void encoder_backward(const Encoder& enc, const EncoderCache& cache, const MatrixXd& d_mean,
                      const MatrixXd& d_var, EncoderGrad& grad);
void zero_grad(const Encoder& enc, EncoderGrad& grad);

// Decoder: tanh net to observation means plus one trainable log observation
// variance per dimension.
struct Decoder {
  Mlp net;
  VectorXd log_obs_var;  // D
};

Decoder make_decoder(int latent_dim, const std::vector<int>& hidden, int obs_dim, Rng& rng);

// Gaussian log likelihood summed over observed (non-NaN) entries of y.
// d_mean and d_log_obs_var are filled when non-null.
double recon_loglik(const MatrixXd& y, const MatrixXd& mean, const VectorXd& log_obs_var,
                    MatrixXd* d_mean = nullptr, VectorXd* d_log_obs_var = nullptr);

// Reparameterized draw: z = mean + max(sqrt(var), floor) * eps.
MatrixXd sample_latent(const MatrixXd& mean, const MatrixXd& var, const MatrixXd& eps,
                       double sigma_floor = 1e-6);
// gradient of z w.r.t. var for the same draw (zero below the floor)
MatrixXd sample_latent_dvar(const MatrixXd& var, const MatrixXd& eps, double sigma_floor = 1e-6);

// zero-fill for encoder input
MatrixXd fill_missing(const MatrixXd& y);

}  // namespace lvae
