#include "lvae/kl_bounds.hpp"

#include <cmath>
#include <stdexcept>

namespace lvae {

namespace {

void check_stats(const VectorXd& mu, const VectorXd& w, int n) {
  if (mu.size() != n || w.size() != n)
    throw std::invalid_argument("bound: mu/w length does not match row count");
  for (int i = 0; i < n; ++i)
    if (!(w(i) > 0.0)) throw std::invalid_argument("bound: encoder variances must be positive");
}

std::vector<int> block_rows(const CovariateMatrix::Block& blk) {
  std::vector<int> idx(blk.size);
  for (int i = 0; i < blk.size; ++i) idx[i] = blk.start + i;
  return idx;
}

// full kernel (all terms) between row sets
MatrixXd gram_full(const AdditivePrior& prior, int l, const CovariateMatrix& a, const CovariateMatrix& b) {
  MatrixXd k = MatrixXd::Zero(a.rows(), b.rows());
  for (int r = 0; r < prior.term_count(); ++r) k += gram(prior.terms.at(l)[r], a, b);
  return k;
}

double eval_full_diag(const AdditivePrior& prior, int l, const CovariateMatrix& x, int i) {
  double v = 0.0;
  for (int r = 0; r < prior.term_count(); ++r)
    v += eval_term(prior.terms.at(l)[r], x.values.row(i), x.values.row(i));
  return v;
}

}  // namespace

double kl_exact(const VectorXd& mu, const VectorXd& w, const MatrixXd& sigma) {
  const int n = static_cast<int>(sigma.rows());
  check_stats(mu, w, n);
  SpdChol chol(sigma);
  const MatrixXd sigma_inv = chol.inverse();
  double tr_w = sigma_inv.diagonal().dot(w);
  double quad = mu.dot(chol.solve(mu));
  double log_w = w.array().log().sum();
  return 0.5 * (tr_w + quad - n + chol.log_det() - log_w);
}

double kl_exact(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                const CovariateMatrix& x, BoundGrad* grad) {
  const int n = x.rows();
  check_stats(mu, w, n);
  const MatrixXd sigma = assemble_sigma(prior, l, x);
  SpdChol chol(sigma);
  const MatrixXd sigma_inv = chol.inverse();
  const VectorXd alpha = chol.solve(mu);

  double value = 0.5 * (sigma_inv.diagonal().dot(w) + mu.dot(alpha) - n + chol.log_det() -
                        w.array().log().sum());
  if (grad == nullptr) return value;

  grad->d_mu = alpha;
  grad->d_w = 0.5 * (sigma_inv.diagonal().array() - w.array().inverse()).matrix();
  // d value / d sigma = (sigma^-1 - sigma^-1 (W + mu mu') sigma^-1) / 2
  MatrixXd g = sigma_inv;
  g -= sigma_inv * w.asDiagonal() * sigma_inv;
  g -= alpha * alpha.transpose();
  g *= 0.5;

  grad->d_params = VectorXd::Zero(prior.params_per_dim());
  int off = 0;
  for (int r = 0; r < prior.term_count(); ++r) {
    const auto& term = prior.terms.at(l)[r];
    TermGrad tg;
    gram_backward(term, x, x, g, tg);
    grad->d_params.segment(off, term.param_count()) = tg.d;
    off += term.param_count();
  }
  grad->d_inducing.resize(0, 0);
  return value;
}

double bound_D1(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                const CovariateMatrix& x, const CovariateMatrix& s_full) {
  const int n = x.rows();
  check_stats(mu, w, n);
  if (s_full.rows() == 0) throw std::invalid_argument("bound_D1: empty inducing set");

  const MatrixXd k_xs = gram_full(prior, l, x, s_full);
  const MatrixXd k_ss = gram_full(prior, l, s_full, s_full);
  SpdChol chol_ss(k_ss);
  const MatrixXd nystrom = k_xs * chol_ss.solve(k_xs.transpose());

  MatrixXd cov = nystrom;
  cov.diagonal().array() += prior.noise_var;
  double kl = kl_exact(mu, w, cov);

  double trace_gap = 0.0;
  for (int i = 0; i < n; ++i)
    trace_gap += eval_full_diag(prior, l, x, i) - nystrom(i, i);
  return kl + trace_gap / (2.0 * prior.noise_var);
}

double bound_D2_dense(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                      const CovariateMatrix& x, const CovariateMatrix& s) {
  const int n = x.rows();
  check_stats(mu, w, n);
  if (s.rows() == 0) throw std::invalid_argument("bound_D2_dense: empty inducing set");

  const MatrixXd c = gram_a(prior, l, x, s);
  const MatrixXd k_ss = gram_a(prior, l, s, s);
  SpdChol chol_ss(k_ss);
  MatrixXd cov = c * chol_ss.solve(c.transpose());  // Nystrom of the shared part

  double trace_corr = 0.0;
  for (size_t p = 0; p < x.blocks.size(); ++p) {
    const auto& blk = x.blocks[p];
    CovariateMatrix sub = x.select_rows(block_rows(blk));
    MatrixXd sigma_hat = gram_r(prior, l, sub, sub);
    sigma_hat.diagonal().array() += prior.noise_var;
    MatrixXd k_a_blk = gram_a(prior, l, sub, sub);
    const MatrixXd nys_blk = cov.block(blk.start, blk.start, blk.size, blk.size);
    cov.block(blk.start, blk.start, blk.size, blk.size) += sigma_hat;
    SpdChol chol_hat(sigma_hat);
    trace_corr += chol_hat.solve(MatrixXd(k_a_blk - nys_blk)).trace();
  }
  return kl_exact(mu, w, cov) + 0.5 * trace_corr;
}

// ---- efficient path --------------------------------------------------------

namespace {

struct BlockWork {
  SpdChol chol;              // of sigma_hat_p
  MatrixXd inv;              // sigma_hat_p^-1
  MatrixXd c;                // K_A block rows vs inducing (np x M)
  MatrixXd e;                // sigma_hat^-1 c
  MatrixXd y;                // c kss^-1
  VectorXd si_mu;            // sigma_hat^-1 mu_p
  MatrixXd k_a_diag;
  CovariateMatrix sub;
  BlockWork(const MatrixXd& sigma_hat, CovariateMatrix s) : chol(sigma_hat), sub(std::move(s)) {}
};

}  // namespace

double bound_D2(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                const CovariateMatrix& x, const CovariateMatrix& s, BoundGrad* grad) {
  const int n = x.rows();
  const int m = s.rows();
  check_stats(mu, w, n);
  if (m == 0) throw std::invalid_argument("bound_D2: empty inducing set");

  const MatrixXd k_ss = gram_a(prior, l, s, s);
  SpdChol chol_ss(k_ss);

  std::vector<BlockWork> blocks;
  blocks.reserve(x.blocks.size());
  MatrixXd v_sum = MatrixXd::Zero(m, m);
  MatrixXd g_w = MatrixXd::Zero(m, m);  // sum E' W E
  VectorXd c_vec = VectorXd::Zero(m);   // sum C' sigma_hat^-1 mu
  double tr_w_hat = 0.0, quad_hat = 0.0, logdet_hat = 0.0, trace_corr = 0.0;

  for (const auto& blk : x.blocks) {
    CovariateMatrix sub = x.select_rows(block_rows(blk));
    MatrixXd sigma_hat = gram_r(prior, l, sub, sub);
    sigma_hat.diagonal().array() += prior.noise_var;
    BlockWork bw(sigma_hat, std::move(sub));
    bw.inv = bw.chol.inverse();
    bw.c = gram_a(prior, l, bw.sub, s);
    bw.e = bw.chol.solve(bw.c);
    bw.y = chol_ss.solve(bw.c.transpose()).transpose();
    bw.k_a_diag = gram_a(prior, l, bw.sub, bw.sub);
    const VectorXd mu_p = mu.segment(blk.start, blk.size);
    const VectorXd w_p = w.segment(blk.start, blk.size);
    bw.si_mu = bw.chol.solve(mu_p);

    const MatrixXd f_p = bw.c.transpose() * bw.e;  // C' sigma_hat^-1 C
    v_sum += f_p;
    g_w += bw.e.transpose() * w_p.asDiagonal() * bw.e;
    c_vec += bw.c.transpose() * bw.si_mu;
    tr_w_hat += bw.inv.diagonal().dot(w_p);
    quad_hat += mu_p.dot(bw.si_mu);
    logdet_hat += bw.chol.log_det();
    trace_corr += (bw.inv.cwiseProduct(bw.k_a_diag)).sum() - chol_ss.solve(f_p).trace();
    blocks.push_back(std::move(bw));
  }

  MatrixXd v = k_ss + v_sum;
  SpdChol chol_v(v);
  const VectorXd vi_c = chol_v.solve(c_vec);

  const double t_trw = tr_w_hat - chol_v.solve(g_w).trace();
  const double t_quad = quad_hat - c_vec.dot(vi_c);
  const double t_logdet = logdet_hat - chol_ss.log_det() + chol_v.log_det();
  const double value =
      0.5 * (t_trw + t_quad - n + t_logdet - w.array().log().sum() + trace_corr);
  if (grad == nullptr) return value;

  // -- gradients --
  grad->d_mu = VectorXd::Zero(n);
  grad->d_w = VectorXd::Zero(n);
  grad->d_params = VectorXd::Zero(prior.params_per_dim());
  grad->d_inducing = MatrixXd::Zero(m, s.cols());

  // sigbar_inv applied to the stacked N x M matrix Y = C kss^-1, blockwise
  const int nb = static_cast<int>(blocks.size());
  std::vector<MatrixXd> siy(nb), sy(nb), swsy(nb);
  {
    MatrixXd ey = MatrixXd::Zero(m, m);  // E' Y
    for (int p = 0; p < nb; ++p) ey += blocks[p].e.transpose() * blocks[p].y;
    const MatrixXd vi_ey = chol_v.solve(ey);
    for (int p = 0; p < nb; ++p) {
      siy[p] = blocks[p].chol.solve(blocks[p].y);     // sigma_hat^-1 Y_p
      sy[p] = siy[p] - blocks[p].e * vi_ey;           // (sigbar^-1 Y)_p
    }
    MatrixXd ewsy = MatrixXd::Zero(m, m);  // E' W (sigbar^-1 Y)
    for (int p = 0; p < nb; ++p) {
      const auto& blk = x.blocks[p];
      const VectorXd w_p = w.segment(blk.start, blk.size);
      ewsy += blocks[p].e.transpose() * (w_p.asDiagonal() * sy[p]);
    }
    const MatrixXd vi_ewsy = chol_v.solve(ewsy);
    for (int p = 0; p < nb; ++p) {
      const auto& blk = x.blocks[p];
      const VectorXd w_p = w.segment(blk.start, blk.size);
      const MatrixXd wsy = w_p.asDiagonal() * sy[p];
      swsy[p] = blocks[p].chol.solve(wsy) - blocks[p].e * vi_ewsy;  // (sigbar^-1 W sigbar^-1 Y)_p
    }
  }

  // v = sigbar^-1 mu blockwise, and row vector v' Y
  std::vector<VectorXd> sbar_mu(nb);
  Eigen::RowVectorXd vty = Eigen::RowVectorXd::Zero(m);
  for (int p = 0; p < nb; ++p) {
    sbar_mu[p] = blocks[p].si_mu - blocks[p].e * vi_c;
    vty += sbar_mu[p].transpose() * blocks[p].y;
  }

  // weight matrices for the gram backward passes
  MatrixXd c_bar = MatrixXd::Zero(n, m);          // against K_A(x, s)
  MatrixXd kss_bar = MatrixXd::Zero(m, m);        // against K_A(s, s)
  MatrixXd f_sum = v_sum;                         // sum F_p (for the trace-corr kss grad)
  {
    // from the sigbar-dependent part: Gc = G Y, with G = d value / d sigbar
    for (int p = 0; p < nb; ++p) {
      const auto& blk = x.blocks[p];
      const MatrixXd gc_p = 0.5 * (sy[p] - swsy[p] - sbar_mu[p] * vty);
      c_bar.block(blk.start, 0, blk.size, m) += 2.0 * gc_p;
      kss_bar -= blocks[p].y.transpose() * gc_p;
      // trace-correction part of the C gradient
      c_bar.block(blk.start, 0, blk.size, m) -= siy[p];
    }
    // trace-correction part of the kss gradient: kss^-1 (sum F_p) kss^-1 / 2
    const MatrixXd x1 = chol_ss.solve(f_sum);
    kss_bar += 0.5 * chol_ss.solve(x1.transpose()).transpose();
  }

  // per-block pieces: d_mu, d_w, sigma_hat weights, K_A diag-block weights
  for (int p = 0; p < nb; ++p) {
    const auto& blk = x.blocks[p];
    const auto& bw = blocks[p];
    const VectorXd w_p = w.segment(blk.start, blk.size);

    grad->d_mu.segment(blk.start, blk.size) = sbar_mu[p];

    const MatrixXd q_p = chol_v.solve(bw.e.transpose());  // V^-1 E_p'
    const MatrixXd sbar_pp = bw.inv - bw.e * q_p;         // (sigbar^-1)_pp
    grad->d_w.segment(blk.start, blk.size) =
        0.5 * (sbar_pp.diagonal().array() - w_p.array().inverse()).matrix();

    // (sigbar^-1 W sigbar^-1)_pp
    const MatrixXd t1 = bw.inv * w_p.asDiagonal();
    const MatrixXd a1 = t1 * bw.inv;
    const MatrixXd a2 = (t1 * bw.e) * q_p;
    const MatrixXd a4 = q_p.transpose() * g_w * q_p;
    const MatrixXd swsbar_pp = a1 - a2 - a2.transpose() + a4;

    MatrixXd g_pp = 0.5 * (sbar_pp - swsbar_pp - sbar_mu[p] * sbar_mu[p].transpose());

    // trace-correction contributions
    const MatrixXd ktilde_pp = bw.k_a_diag - bw.y * bw.c.transpose();
    MatrixXd sig_hat_bar = g_pp - 0.5 * bw.inv * ktilde_pp * bw.inv;
    const MatrixXd ka_diag_bar = 0.5 * bw.inv;

    // instance-term parameters see the sigma_hat weight; shared terms see the
    // diag-block weight plus their share of c_bar / kss_bar below
    int off = 0;
    for (int r = 0; r < prior.term_count(); ++r) {
      const auto& term = prior.terms.at(l)[r];
      TermGrad tg;
      if (r == prior.instance_term) {
        gram_backward(term, bw.sub, bw.sub, sig_hat_bar, tg);
      } else {
        gram_backward(term, bw.sub, bw.sub, ka_diag_bar, tg);
      }
      grad->d_params.segment(off, term.param_count()) += tg.d;
      off += term.param_count();
    }
  }

  // cross and inducing grams of the shared terms
  int off = 0;
  for (int r = 0; r < prior.term_count(); ++r) {
    const auto& term = prior.terms.at(l)[r];
    if (r != prior.instance_term) {
      TermGrad tg;
      gram_backward(term, x, s, c_bar, tg, nullptr, &grad->d_inducing);
      TermGrad tg2;
      gram_backward(term, s, s, kss_bar, tg2, &grad->d_inducing, &grad->d_inducing);
      grad->d_params.segment(off, term.param_count()) += tg.d + tg2.d;
    }
    off += term.param_count();
  }
  return value;
}

}  // namespace lvae
