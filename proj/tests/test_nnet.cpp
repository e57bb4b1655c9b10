#include <cmath>
#include <limits>

#include "doctest.h"
#include "lvae/nnet.hpp"
#include "test_util.hpp"

using namespace lvae;
using lvae::test::fd_close;

namespace {
constexpr double kNan = std::numeric_limits<double>::quiet_NaN();
}

TEST_CASE("mlp forward matches a hand-built two-layer computation") {
  Mlp net;
  net.layers.resize(2);
  net.layers[0].w = (MatrixXd(2, 2) << 0.5, -0.25, 1.0, 0.75).finished();
  net.layers[0].b = (VectorXd(2) << 0.1, -0.2).finished();
  net.layers[0].act = Activation::Tanh;
  net.layers[1].w = (MatrixXd(1, 2) << 2.0, -1.0).finished();
  net.layers[1].b = (VectorXd(1) << 0.3).finished();
  net.layers[1].act = Activation::Identity;

  MatrixXd x(1, 2);
  x << 0.4, -0.6;
  const double h0 = std::tanh(0.5 * 0.4 + (-0.25) * (-0.6) + 0.1);
  const double h1 = std::tanh(1.0 * 0.4 + 0.75 * (-0.6) - 0.2);
  const double expect = 2.0 * h0 - 1.0 * h1 + 0.3;
  const MatrixXd out = mlp_forward(net, x);
  CHECK(out(0, 0) == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("mlp backward matches finite differences") {
  Rng rng(5);
  Mlp net = make_mlp({3, 4, 2}, rng);
  MatrixXd x = rng.normal_mat(5, 3);
  const MatrixXd d_out = rng.normal_mat(5, 2);

  auto scalar = [&](const Mlp& n, const MatrixXd& xin) {
    return mlp_forward(n, xin).cwiseProduct(d_out).sum();
  };

  MlpCache cache;
  mlp_forward(net, x, &cache);
  MlpGrad grad;
  zero_grad(net, grad);
  const MatrixXd d_x = mlp_backward(net, cache, d_out, grad);

  const double h = 1e-6;
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      MatrixXd xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      CHECK_MESSAGE(fd_close(d_x(i, j), (scalar(net, xp) - scalar(net, xm)) / (2 * h)),
                    "d_x at ", i, ",", j);
    }
  for (size_t l = 0; l < net.layers.size(); ++l) {
    for (int i = 0; i < net.layers[l].w.rows(); ++i)
      for (int j = 0; j < net.layers[l].w.cols(); ++j) {
        Mlp np = net, nm = net;
        np.layers[l].w(i, j) += h;
        nm.layers[l].w(i, j) -= h;
        CHECK_MESSAGE(fd_close(grad.d_w[l](i, j), (scalar(np, x) - scalar(nm, x)) / (2 * h)),
                      "layer ", l, " w ", i, ",", j);
      }
    for (int i = 0; i < net.layers[l].b.size(); ++i) {
      Mlp np = net, nm = net;
      np.layers[l].b(i) += h;
      nm.layers[l].b(i) -= h;
      CHECK_MESSAGE(fd_close(grad.d_b[l](i), (scalar(np, x) - scalar(nm, x)) / (2 * h)),
                    "layer ", l, " b ", i);
    }
  }
}

TEST_CASE("encoder heads and backward") {
  Rng rng(11);
  Encoder enc = make_encoder(4, {6}, 2, rng);
  REQUIRE(enc.trunk.layers.back().act == Activation::Tanh);
  MatrixXd y = rng.normal_mat(3, 4);

  MatrixXd mean, var;
  EncoderCache cache;
  encoder_forward(enc, y, mean, var, &cache);
  CHECK(mean.rows() == 3);
  CHECK(var.cols() == 2);
  CHECK((var.array() > 0.0).all());

  const MatrixXd d_mean = rng.normal_mat(3, 2);
  const MatrixXd d_var = rng.normal_mat(3, 2);
  auto scalar = [&](const Encoder& e) {
    MatrixXd mn, vr;
    encoder_forward(e, y, mn, vr);
    return mn.cwiseProduct(d_mean).sum() + vr.cwiseProduct(d_var).sum();
  };

  EncoderGrad grad;
  zero_grad(enc, grad);
  encoder_backward(enc, cache, d_mean, d_var, grad);

  const double h = 1e-6;
  auto check_block = [&](auto get_ref, const MatrixXd& g, const char* name) {
    for (int i = 0; i < g.rows(); ++i)
      for (int j = 0; j < g.cols(); ++j) {
        Encoder ep = enc, em = enc;
        get_ref(ep)(i, j) += h;
        get_ref(em)(i, j) -= h;
        CHECK_MESSAGE(fd_close(g(i, j), (scalar(ep) - scalar(em)) / (2 * h)), name, " ", i, ",", j);
      }
  };
  check_block([](Encoder& e) -> MatrixXd& { return e.mean_head.w; }, grad.d_mean_w, "mean w");
  check_block([](Encoder& e) -> MatrixXd& { return e.logvar_head.w; }, grad.d_logvar_w, "logvar w");
  check_block([](Encoder& e) -> MatrixXd& { return e.trunk.layers[0].w; }, grad.trunk.d_w[0],
              "trunk w0");
  for (int i = 0; i < grad.d_mean_b.size(); ++i) {
    Encoder ep = enc, em = enc;
    ep.mean_head.b(i) += h;
    em.mean_head.b(i) -= h;
    CHECK(fd_close(grad.d_mean_b(i), (scalar(ep) - scalar(em)) / (2 * h)));
  }
  for (int i = 0; i < grad.d_logvar_b.size(); ++i) {
    Encoder ep = enc, em = enc;
    ep.logvar_head.b(i) += h;
    em.logvar_head.b(i) -= h;
    CHECK(fd_close(grad.d_logvar_b(i), (scalar(ep) - scalar(em)) / (2 * h)));
  }
}

TEST_CASE("reconstruction likelihood") {
  SUBCASE("single standard-normal entry at its mean") {
    MatrixXd y(1, 1), mean(1, 1);
    y << 0.0;
    mean << 0.0;
    VectorXd lov = VectorXd::Zero(1);
    // -log sqrt(2 pi)
    CHECK(recon_loglik(y, mean, lov) == doctest::Approx(-0.9189385332046727).epsilon(1e-15));
  }
  SUBCASE("hand value with residual and variance") {
    MatrixXd y(1, 1), mean(1, 1);
    y << 1.5;
    mean << 0.5;
    VectorXd lov(1);
    lov << std::log(4.0);
    const double expect = -0.5 * std::log(2.0 * M_PI * 4.0) - 0.5 * 1.0 / 4.0;
    CHECK(recon_loglik(y, mean, lov) == doctest::Approx(expect).epsilon(1e-14));
  }
  SUBCASE("missing entries are skipped") {
    MatrixXd y(2, 2), mean = MatrixXd::Zero(2, 2);
    y << 0.0, kNan, kNan, 0.0;
    VectorXd lov = VectorXd::Zero(2);
    CHECK(recon_loglik(y, mean, lov) ==
          doctest::Approx(2.0 * -0.9189385332046727).epsilon(1e-14));
  }
  SUBCASE("gradients match finite differences") {
    Rng rng(3);
    MatrixXd y = rng.normal_mat(4, 3);
    y(1, 2) = kNan;
    y(3, 0) = kNan;
    MatrixXd mean = rng.normal_mat(4, 3);
    VectorXd lov = 0.3 * rng.normal_vec(3);

    MatrixXd d_mean;
    VectorXd d_lov;
    recon_loglik(y, mean, lov, &d_mean, &d_lov);
    CHECK(d_mean(1, 2) == 0.0);
    CHECK(d_mean(3, 0) == 0.0);

    const double h = 1e-6;
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 3; ++j) {
        MatrixXd mp = mean, mm = mean;
        mp(i, j) += h;
        mm(i, j) -= h;
        CHECK(fd_close(d_mean(i, j),
                       (recon_loglik(y, mp, lov) - recon_loglik(y, mm, lov)) / (2 * h)));
      }
    for (int j = 0; j < 3; ++j) {
      VectorXd lp = lov, lm = lov;
      lp(j) += h;
      lm(j) -= h;
      CHECK(fd_close(d_lov(j),
                     (recon_loglik(y, mean, lp) - recon_loglik(y, mean, lm)) / (2 * h)));
    }
  }
}

TEST_CASE("latent sampling") {
  MatrixXd mean(1, 2), var(1, 2), eps(1, 2);
  mean << 1.0, -2.0;
  var << 4.0, 1e-20;
  eps << 0.5, 3.0;

  const MatrixXd z = sample_latent(mean, var, eps);
  CHECK(z(0, 0) == doctest::Approx(1.0 + 2.0 * 0.5).epsilon(1e-15));
  // below the floor the scale clamps at 1e-6
  CHECK(z(0, 1) == doctest::Approx(-2.0 + 1e-6 * 3.0).epsilon(1e-12));

  const MatrixXd dv = sample_latent_dvar(var, eps);
  CHECK(dv(0, 0) == doctest::Approx(0.5 / (2.0 * 2.0)).epsilon(1e-14));
  CHECK(dv(0, 1) == 0.0);

  // chain rule against finite differences away from the floor
  const double h = 1e-7;
  MatrixXd vp = var, vm = var;
  vp(0, 0) += h;
  vm(0, 0) -= h;
  const double fd =
      (sample_latent(mean, vp, eps)(0, 0) - sample_latent(mean, vm, eps)(0, 0)) / (2 * h);
  CHECK(fd_close(dv(0, 0), fd));
}

TEST_CASE("zero-fill of missing observations") {
  MatrixXd y(2, 2);
  y << 1.0, kNan, kNan, -3.5;
  const MatrixXd f = fill_missing(y);
  CHECK(f(0, 0) == 1.0);
  CHECK(f(0, 1) == 0.0);
  CHECK(f(1, 0) == 0.0);
  CHECK(f(1, 1) == -3.5);
}

TEST_CASE("glorot initialisation ranges and shapes") {
  Rng rng(1);
  Mlp net = make_mlp({3, 8, 2}, rng);
  REQUIRE(net.layers.size() == 2);
  CHECK(net.in_dim() == 3);
  CHECK(net.out_dim() == 2);
  CHECK(net.layers[0].act == Activation::Tanh);
  CHECK(net.layers[1].act == Activation::Identity);
  const double lim0 = std::sqrt(6.0 / (3 + 8));
  CHECK(net.layers[0].w.cwiseAbs().maxCoeff() <= lim0);
  CHECK(net.layers[0].w.cwiseAbs().maxCoeff() > 0.0);
  CHECK(net.layers[0].b.isZero());

  Decoder dec = make_decoder(2, {5}, 4, rng);
  CHECK(dec.net.in_dim() == 2);
  CHECK(dec.net.out_dim() == 4);
  CHECK(dec.log_obs_var.size() == 4);
}
