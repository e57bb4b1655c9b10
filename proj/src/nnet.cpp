#include "lvae/nnet.hpp"

#include <cmath>
#include <stdexcept>

namespace lvae {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // log(2 pi) / 2

MatrixXd glorot(int out, int in, Rng& rng) {
  const double a = std::sqrt(6.0 / (in + out));
  MatrixXd w(out, in);
  for (int i = 0; i < out; ++i)
    for (int j = 0; j < in; ++j) w(i, j) = rng.uniform(-a, a);
  return w;
}

MatrixXd apply_act(Activation act, const MatrixXd& z) {
  if (act == Activation::Tanh) return z.array().tanh().matrix();
  return z;
}

// derivative through the activation given the activated output
MatrixXd act_backward(Activation act, const MatrixXd& out, const MatrixXd& d_out) {
  if (act == Activation::Tanh) return (d_out.array() * (1.0 - out.array().square())).matrix();
  return d_out;
}

}  // namespace

Mlp make_mlp(const std::vector<int>& widths, Rng& rng, Activation hidden_act) {
  if (widths.size() < 2) throw std::invalid_argument("make_mlp: need at least input and output widths");
  Mlp net;
  for (size_t i = 0; i + 1 < widths.size(); ++i) {
    DenseLayer layer;
    layer.w = glorot(widths[i + 1], widths[i], rng);
    layer.b = VectorXd::Zero(widths[i + 1]);
    layer.act = (i + 2 == widths.size()) ? Activation::Identity : hidden_act;
    net.layers.push_back(std::move(layer));
  }
  return net;
}

MatrixXd mlp_forward(const Mlp& net, const MatrixXd& x, MlpCache* cache) {
  if (x.cols() != net.in_dim()) throw std::invalid_argument("mlp_forward: input width mismatch");
  MatrixXd cur = x;
  if (cache != nullptr) cache->inputs.clear();
  for (const auto& layer : net.layers) {
    if (cache != nullptr) cache->inputs.push_back(cur);
    MatrixXd z = cur * layer.w.transpose();
    z.rowwise() += layer.b.transpose();
    cur = apply_act(layer.act, z);
  }
  if (cache != nullptr) cache->out = cur;
  return cur;
}

void zero_grad(const Mlp& net, MlpGrad& grad) {
  grad.d_w.resize(net.layers.size());
  grad.d_b.resize(net.layers.size());
  for (size_t i = 0; i < net.layers.size(); ++i) {
    grad.d_w[i] = MatrixXd::Zero(net.layers[i].w.rows(), net.layers[i].w.cols());
    grad.d_b[i] = VectorXd::Zero(net.layers[i].b.size());
  }
}

MatrixXd mlp_backward(const Mlp& net, const MlpCache& cache, const MatrixXd& d_out, MlpGrad& grad) {
  if (grad.d_w.size() != net.layers.size()) zero_grad(net, grad);
  MatrixXd d_cur = d_out;
  MatrixXd activated = cache.out;
  for (int i = static_cast<int>(net.layers.size()) - 1; i >= 0; --i) {
    const auto& layer = net.layers[i];
    const MatrixXd d_z = act_backward(layer.act, activated, d_cur);
    grad.d_w[i] += d_z.transpose() * cache.inputs[i];
    grad.d_b[i] += d_z.colwise().sum().transpose();
    d_cur = d_z * layer.w;
    if (i > 0) {
      // activated output of the previous layer is this layer's input
      activated = cache.inputs[i];
    }
  }
  return d_cur;
}

Encoder make_encoder(int obs_dim, const std::vector<int>& hidden, int latent_dim, Rng& rng) {
  if (hidden.empty()) throw std::invalid_argument("make_encoder: need at least one hidden layer");
  std::vector<int> widths{obs_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  Encoder enc;
  // trunk ends with an activated hidden layer
  enc.trunk = make_mlp(widths, rng);
  enc.trunk.layers.back().act = Activation::Tanh;
  enc.mean_head = {glorot(latent_dim, hidden.back(), rng), VectorXd::Zero(latent_dim),
                   Activation::Identity};
  enc.logvar_head = {glorot(latent_dim, hidden.back(), rng), VectorXd::Zero(latent_dim),
                     Activation::Identity};
  return enc;
}

void encoder_forward(const Encoder& enc, const MatrixXd& y_filled, MatrixXd& mean, MatrixXd& var,
                     EncoderCache* cache) {
  EncoderCache local;
  EncoderCache* c = cache != nullptr ? cache : &local;
  c->trunk_out = mlp_forward(enc.trunk, y_filled, &c->trunk);
  c->mean = c->trunk_out * enc.mean_head.w.transpose();
  c->mean.rowwise() += enc.mean_head.b.transpose();
  c->logvar = c->trunk_out * enc.logvar_head.w.transpose();
  c->logvar.rowwise() += enc.logvar_head.b.transpose();
  mean = c->mean;
  var = c->logvar.array().exp().matrix();
}

void zero_grad(const Encoder& enc, EncoderGrad& grad) {
  zero_grad(enc.trunk, grad.trunk);
  grad.d_mean_w = MatrixXd::Zero(enc.mean_head.w.rows(), enc.mean_head.w.cols());
  grad.d_logvar_w = MatrixXd::Zero(enc.logvar_head.w.rows(), enc.logvar_head.w.cols());
  grad.d_mean_b = VectorXd::Zero(enc.mean_head.b.size());
  grad.d_logvar_b = VectorXd::Zero(enc.logvar_head.b.size());
}

void encoder_backward(const Encoder& enc, const EncoderCache& cache, const MatrixXd& d_mean,
                      const MatrixXd& d_var, EncoderGrad& grad) {
  if (grad.d_mean_w.size() == 0) zero_grad(enc, grad);
  // var = exp(logvar)
  const MatrixXd d_logvar = (d_var.array() * cache.logvar.array().exp()).matrix();
  grad.d_mean_w += d_mean.transpose() * cache.trunk_out;
  grad.d_mean_b += d_mean.colwise().sum().transpose();
  grad.d_logvar_w += d_logvar.transpose() * cache.trunk_out;
  grad.d_logvar_b += d_logvar.colwise().sum().transpose();
  const MatrixXd d_trunk = d_mean * enc.mean_head.w + d_logvar * enc.logvar_head.w;
  mlp_backward(enc.trunk, cache.trunk, d_trunk, grad.trunk);
}

Decoder make_decoder(int latent_dim, const std::vector<int>& hidden, int obs_dim, Rng& rng) {
  std::vector<int> widths{latent_dim};
  widths.insert(widths.end(), hidden.begin(), hidden.end());
  widths.push_back(obs_dim);
  Decoder dec;
  dec.net = make_mlp(widths, rng);
  dec.log_obs_var = VectorXd::Zero(obs_dim);
  return dec;
}

double recon_loglik(const MatrixXd& y, const MatrixXd& mean, const VectorXd& log_obs_var,
                    MatrixXd* d_mean, VectorXd* d_log_obs_var) {
  if (y.rows() != mean.rows() || y.cols() != mean.cols())
    throw std::invalid_argument("recon_loglik: shape mismatch");
  if (log_obs_var.size() != y.cols())
    throw std::invalid_argument("recon_loglik: one observation variance per dimension expected");
  if (d_mean != nullptr) d_mean->setZero(y.rows(), y.cols());
  if (d_log_obs_var != nullptr) d_log_obs_var->setZero(y.cols());

  double ll = 0.0;
  for (int d = 0; d < y.cols(); ++d) {
    const double lv = log_obs_var(d);
    const double inv_var = std::exp(-lv);
    for (int i = 0; i < y.rows(); ++i) {
      const double yv = y(i, d);
      if (is_missing(yv)) continue;
      const double r = yv - mean(i, d);
      ll += -kHalfLog2Pi - 0.5 * lv - 0.5 * r * r * inv_var;
      if (d_mean != nullptr) (*d_mean)(i, d) = r * inv_var;
      if (d_log_obs_var != nullptr) (*d_log_obs_var)(d) += -0.5 + 0.5 * r * r * inv_var;
    }
  }
  return ll;
}

MatrixXd sample_latent(const MatrixXd& mean, const MatrixXd& var, const MatrixXd& eps,
                       double sigma_floor) {
  MatrixXd z = mean;
  for (int i = 0; i < z.rows(); ++i)
    for (int j = 0; j < z.cols(); ++j) {
      const double sd = std::max(std::sqrt(var(i, j)), sigma_floor);
      z(i, j) += sd * eps(i, j);
    }
  return z;
}

MatrixXd sample_latent_dvar(const MatrixXd& var, const MatrixXd& eps, double sigma_floor) {
  MatrixXd d(var.rows(), var.cols());
  for (int i = 0; i < var.rows(); ++i)
    for (int j = 0; j < var.cols(); ++j) {
      const double sd = std::sqrt(var(i, j));
      d(i, j) = sd > sigma_floor ? eps(i, j) / (2.0 * sd) : 0.0;
    }
  return d;
}

MatrixXd fill_missing(const MatrixXd& y) {
  MatrixXd out = y;
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j)
      if (is_missing(out(i, j))) out(i, j) = 0.0;
  return out;
}

}  // namespace lvae
