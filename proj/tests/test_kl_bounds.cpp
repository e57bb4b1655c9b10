#include <cmath>

#include "doctest.h"
#include "lvae/kl_bounds.hpp"
#include "lvae/verify.hpp"
#include "test_util.hpp"

using namespace lvae;
using lvae::test::fd_close;

TEST_CASE("exact divergence against hand-computed values") {
  // KL(N(mu, w) || N(0, 1)) = (w + mu^2 - 1 - log w) / 2 per coordinate
  VectorXd mu1(1), w1(1);
  mu1 << 0.0;
  w1 << 1.0;
  MatrixXd eye1 = MatrixXd::Identity(1, 1);
  CHECK(kl_exact(mu1, w1, eye1) == doctest::Approx(0.0).epsilon(1e-14));

  mu1 << 1.0;
  CHECK(kl_exact(mu1, w1, eye1) == doctest::Approx(0.5).epsilon(1e-12));

  mu1 << 0.0;
  w1 << 0.5;
  // (0.5 - 1 + log 2) / 2
  CHECK(kl_exact(mu1, w1, eye1) == doctest::Approx(0.09657359027997264).epsilon(1e-12));

  VectorXd mu2(2), w2(2);
  mu2 << 1.0, 0.0;
  w2 << 1.0, 0.5;
  MatrixXd eye2 = MatrixXd::Identity(2, 2);
  CHECK(kl_exact(mu2, w2, eye2) ==
        doctest::Approx(0.5 + 0.09657359027997264).epsilon(1e-12));

  SUBCASE("correlated prior, scalar reference") {
    // sigma = [[2, 1], [1, 2]]: det 3, inverse [[2,-1],[-1,2]]/3
    MatrixXd sigma(2, 2);
    sigma << 2, 1, 1, 2;
    VectorXd mu(2), w(2);
    mu << 1.0, -1.0;
    w << 1.0, 1.0;
    // tr = 4/3, quad = (2+1+1+2)/3 = 2, logdet = log 3, logw = 0
    const double expect = 0.5 * (4.0 / 3.0 + 2.0 - 2.0 + std::log(3.0));
    CHECK(kl_exact(mu, w, sigma) == doctest::Approx(expect).epsilon(1e-12));
  }
  SUBCASE("invalid stats rejected") {
    VectorXd wbad(1);
    wbad << -1.0;
    VectorXd mu(1);
    mu << 0.0;
    CHECK_THROWS(kl_exact(mu, wbad, eye1));
    CHECK_THROWS(kl_exact(VectorXd::Zero(2), VectorXd::Ones(2), eye1));
  }
}

TEST_CASE("prior-assembled divergence matches the dense form") {
  auto inst = random_bound_instance(3);
  const MatrixXd sigma = assemble_sigma(inst.prior, 0, inst.x);
  CHECK(kl_exact(inst.mu, inst.w, inst.prior, 0, inst.x) ==
        doctest::Approx(kl_exact(inst.mu, inst.w, sigma)).epsilon(1e-12));
}

TEST_CASE("exact divergence gradients match finite differences") {
  auto inst = random_bound_instance(11, 3, 14, 6);
  BoundGrad g;
  const double f0 = kl_exact(inst.mu, inst.w, inst.prior, 0, inst.x, &g);
  CHECK(std::isfinite(f0));
  const double h = 1e-5;

  for (int i = 0; i < inst.mu.size(); ++i) {
    VectorXd mp = inst.mu, mm = inst.mu;
    mp(i) += h;
    mm(i) -= h;
    const double fd = (kl_exact(mp, inst.w, inst.prior, 0, inst.x) -
                       kl_exact(mm, inst.w, inst.prior, 0, inst.x)) /
                      (2 * h);
    CHECK_MESSAGE(fd_close(g.d_mu(i), fd), "d_mu ", i, ": ", g.d_mu(i), " vs ", fd);
  }
  for (int i = 0; i < inst.w.size(); ++i) {
    VectorXd wp = inst.w, wm = inst.w;
    wp(i) += h;
    wm(i) -= h;
    const double fd = (kl_exact(inst.mu, wp, inst.prior, 0, inst.x) -
                       kl_exact(inst.mu, wm, inst.prior, 0, inst.x)) /
                      (2 * h);
    CHECK_MESSAGE(fd_close(g.d_w(i), fd), "d_w ", i, ": ", g.d_w(i), " vs ", fd);
  }
  VectorXd params;
  inst.prior.get_params(params);
  for (int k = 0; k < params.size(); ++k) {
    AdditivePrior pp = inst.prior, pm = inst.prior;
    VectorXd vp = params, vm = params;
    vp(k) += h;
    vm(k) -= h;
    pp.set_params(vp);
    pm.set_params(vm);
    const double fd = (kl_exact(inst.mu, inst.w, pp, 0, inst.x) -
                       kl_exact(inst.mu, inst.w, pm, 0, inst.x)) /
                      (2 * h);
    CHECK_MESSAGE(fd_close(g.d_params(k), fd), "d_params ", k, ": ", g.d_params(k), " vs ", fd);
  }
}

TEST_CASE("bound ordering chain") {
  // exact <= structured bound <= induced bound, up to a small floating guard
  for (std::uint64_t seed = 1; seed <= 12; ++seed) {
    auto inst = random_bound_instance(seed);
    auto rec = evaluate_bounds(inst, seed);
    CHECK_MESSAGE(rec.slack_d2_vs_exact >= -1e-8, "seed ", seed, " d2 - exact = ",
                  rec.slack_d2_vs_exact);
    CHECK_MESSAGE(rec.slack_d1_vs_d2 >= -1e-8, "seed ", seed, " d1 - d2 = ", rec.slack_d1_vs_d2);
    CHECK_MESSAGE(rec.slack_d1_vs_exact >= -1e-8, "seed ", seed, " d1 - exact = ",
                  rec.slack_d1_vs_exact);
  }
}

TEST_CASE("dense and efficient structured bounds agree") {
  // moderate lengthscales keep the inducing gram away from numerical rank
  // deficiency, which would smear the comparison through K^-1
  for (std::uint64_t seed = 21; seed <= 32; ++seed) {
    auto inst = random_bound_instance(seed, 6, 60, 10, 0.08, 0.3);
    const double dense = bound_D2_dense(inst.mu, inst.w, inst.prior, 0, inst.x, inst.s_a);
    const double eff = bound_D2(inst.mu, inst.w, inst.prior, 0, inst.x, inst.s_a);
    CHECK_MESSAGE(lvae::test::close(dense, eff, 1e-10), "seed ", seed, ": ", dense, " vs ", eff);
  }
}

TEST_CASE("spanning inducing set collapses the structured bound") {
  for (std::uint64_t seed = 41; seed <= 48; ++seed) {
    // short lengthscales keep the spanning Gram solvable at full rank
    auto inst = random_bound_instance(seed, 4, 24, 6, 0.04, 0.1);
    auto s_all = shared_space_copy(inst.x);
    const double exact = kl_exact(inst.mu, inst.w, inst.prior, 0, inst.x);
    const double d2 = bound_D2(inst.mu, inst.w, inst.prior, 0, inst.x, s_all);
    CHECK_MESSAGE(std::abs(d2 - exact) < 1e-6, "seed ", seed, ": ", d2, " vs ", exact);
  }
}

TEST_CASE("induced bound collapses on the full-space spanning set") {
  for (std::uint64_t seed = 51; seed <= 54; ++seed) {
    auto inst = random_bound_instance(seed, 3, 16, 6, 0.04, 0.1);
    const double exact = kl_exact(inst.mu, inst.w, inst.prior, 0, inst.x);
    const double d1 = bound_D1(inst.mu, inst.w, inst.prior, 0, inst.x, inst.x);
    CHECK_MESSAGE(std::abs(d1 - exact) < 1e-5, "seed ", seed, ": ", d1, " vs ", exact);
  }
}

TEST_CASE("structured bound gradients match finite differences") {
  auto inst = random_bound_instance(7, 3, 12, 5);
  BoundGrad g;
  const double f0 = bound_D2(inst.mu, inst.w, inst.prior, 0, inst.x, inst.s_a, &g);
  CHECK(std::isfinite(f0));
  const double h = 1e-5;

  auto value = [&](const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior,
                   const CovariateMatrix& s) { return bound_D2(mu, w, prior, 0, inst.x, s); };

  for (int i = 0; i < inst.mu.size(); ++i) {
    VectorXd mp = inst.mu, mm = inst.mu;
    mp(i) += h;
    mm(i) -= h;
    const double fd =
        (value(mp, inst.w, inst.prior, inst.s_a) - value(mm, inst.w, inst.prior, inst.s_a)) /
        (2 * h);
    CHECK_MESSAGE(fd_close(g.d_mu(i), fd), "d_mu ", i, ": ", g.d_mu(i), " vs ", fd);
  }
  for (int i = 0; i < inst.w.size(); ++i) {
    VectorXd wp = inst.w, wm = inst.w;
    wp(i) += h;
    wm(i) -= h;
    const double fd =
        (value(inst.mu, wp, inst.prior, inst.s_a) - value(inst.mu, wm, inst.prior, inst.s_a)) /
        (2 * h);
    CHECK_MESSAGE(fd_close(g.d_w(i), fd), "d_w ", i, ": ", g.d_w(i), " vs ", fd);
  }
  VectorXd params;
  inst.prior.get_params(params);
  for (int k = 0; k < params.size(); ++k) {
    AdditivePrior pp = inst.prior, pm = inst.prior;
    VectorXd vp = params, vm = params;
    vp(k) += h;
    vm(k) -= h;
    pp.set_params(vp);
    pm.set_params(vm);
    const double fd =
        (value(inst.mu, inst.w, pp, inst.s_a) - value(inst.mu, inst.w, pm, inst.s_a)) / (2 * h);
    CHECK_MESSAGE(fd_close(g.d_params(k), fd), "d_params ", k, ": ", g.d_params(k), " vs ", fd);
  }
  // continuous inducing locations (the time column)
  REQUIRE(g.d_inducing.rows() == inst.s_a.rows());
  for (int j = 0; j < inst.s_a.rows(); ++j) {
    CovariateMatrix sp = inst.s_a, sm = inst.s_a;
    sp.values(j, 1) += h;
    sm.values(j, 1) -= h;
    const double fd =
        (value(inst.mu, inst.w, inst.prior, sp) - value(inst.mu, inst.w, inst.prior, sm)) /
        (2 * h);
    CHECK_MESSAGE(fd_close(g.d_inducing(j, 1), fd), "d_s ", j, ": ", g.d_inducing(j, 1), " vs ",
                  fd);
  }
}

TEST_CASE("machine-readable bound records") {
  auto inst = random_bound_instance(2);
  auto rec = evaluate_bounds(inst, 2);
  auto json = bound_record_json(rec);
  CHECK(json.find("\"seed\":2") != std::string::npos);
  CHECK(json.find("\"kl_exact\":") != std::string::npos);
  CHECK(json.find("\"d4_at_optimum\":") != std::string::npos);
  CHECK(rec.n == inst.x.rows());
  CHECK(rec.m == inst.s_a.rows());
}
