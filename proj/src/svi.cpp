#include "lvae/svi.hpp"

#include <cmath>
#include <stdexcept>

namespace lvae {

namespace {

std::vector<int> block_rows(const CovariateMatrix::Block& blk) {
  std::vector<int> idx(blk.size);
  for (int i = 0; i < blk.size; ++i) idx[i] = blk.start + i;
  return idx;
}

}  // namespace

double svi_D4_minibatch(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                        const CovariateMatrix& x, const CovariateMatrix& s, const VectorXd& m,
                        const MatrixXd& h, int total_instances, long total_rows, BoundGrad* grad,
                        VectorXd* d_m, MatrixXd* d_h) {
  const int n = x.rows();
  const int msz = s.rows();
  if (mu.size() != n || w.size() != n)
    throw std::invalid_argument("svi_D4: mu/w length does not match batch rows");
  for (int i = 0; i < n; ++i)
    if (!(w(i) > 0.0)) throw std::invalid_argument("svi_D4: encoder variances must be positive");
  if (msz == 0) throw std::invalid_argument("svi_D4: empty inducing set");
  if (m.size() != msz || h.rows() != msz || h.cols() != msz)
    throw std::invalid_argument("svi_D4: variational shape does not match inducing set");
  if (total_instances < x.instances() || total_rows < n)
    throw std::invalid_argument("svi_D4: totals smaller than the batch");

  const double scale = static_cast<double>(total_instances) / x.instances();

  const MatrixXd k_ss = gram_a(prior, l, s, s);
  SpdChol chol_ss(k_ss);
  const VectorXd kssi_m = chol_ss.solve(m);
  const MatrixXd kssi_h = chol_ss.solve(h);
  const MatrixXd hs = chol_ss.solve(kssi_h.transpose());  // kss^-1 H kss^-1
  SpdChol chol_h(h);

  double quad = 0.0, tr_w = 0.0, logdet_hat = 0.0, tr_corr = 0.0, tr_h = 0.0;
  MatrixXd f_sum = MatrixXd::Zero(msz, msz);
  VectorXd ctu_sum = VectorXd::Zero(msz);  // sum C_p' u_p

  struct BlockWork {
    SpdChol chol;
    MatrixXd inv, c, e, y;
    VectorXd u;  // sigma_hat^-1 (C kss^-1 m - mu_p)
    MatrixXd k_a_diag;
    CovariateMatrix sub;
    int start, size;
    BlockWork(const MatrixXd& sh, CovariateMatrix s_) : chol(sh), sub(std::move(s_)) {}
  };
  std::vector<BlockWork> blocks;
  blocks.reserve(x.blocks.size());

  for (const auto& blk : x.blocks) {
    CovariateMatrix sub = x.select_rows(block_rows(blk));
    MatrixXd sigma_hat = gram_r(prior, l, sub, sub);
    sigma_hat.diagonal().array() += prior.noise_var;
    BlockWork bw(sigma_hat, std::move(sub));
    bw.start = blk.start;
    bw.size = blk.size;
    bw.inv = bw.chol.inverse();
    bw.c = gram_a(prior, l, bw.sub, s);
    bw.e = bw.chol.solve(bw.c);
    bw.y = chol_ss.solve(bw.c.transpose()).transpose();
    bw.k_a_diag = gram_a(prior, l, bw.sub, bw.sub);

    const VectorXd mu_p = mu.segment(blk.start, blk.size);
    const VectorXd w_p = w.segment(blk.start, blk.size);
    const VectorXd r_p = bw.c * kssi_m - mu_p;
    bw.u = bw.chol.solve(r_p);

    const MatrixXd f_p = bw.c.transpose() * bw.e;
    quad += r_p.dot(bw.u);
    tr_w += bw.inv.diagonal().dot(w_p);
    logdet_hat += bw.chol.log_det();
    tr_corr += (bw.inv.cwiseProduct(bw.k_a_diag)).sum() - chol_ss.solve(f_p).trace();
    tr_h += (hs.cwiseProduct(f_p)).sum();
    f_sum += f_p;
    ctu_sum += bw.c.transpose() * bw.u;
    blocks.push_back(std::move(bw));
  }

  const double sum_log_w = w.array().log().sum();
  const double kl_u = 0.5 * (kssi_h.trace() + m.dot(kssi_m) - msz + chol_ss.log_det() -
                             chol_h.log_det());
  const double value = 0.5 * (scale * (quad + tr_w + logdet_hat + tr_corr + tr_h - sum_log_w) -
                              static_cast<double>(total_rows)) +
                       kl_u;

  if (d_m != nullptr) *d_m = scale * chol_ss.solve(ctu_sum) + kssi_m;
  if (d_h != nullptr) {
    const MatrixXd kfk = chol_ss.solve(chol_ss.solve(f_sum).transpose());
    *d_h = 0.5 * (scale * kfk + chol_ss.inverse() - chol_h.inverse());
  }
  if (grad == nullptr) return value;

  grad->d_mu = VectorXd::Zero(n);
  grad->d_w = VectorXd::Zero(n);
  grad->d_params = VectorXd::Zero(prior.params_per_dim());
  grad->d_inducing = MatrixXd::Zero(msz, s.cols());

  MatrixXd c_bar = MatrixXd::Zero(n, msz);
  MatrixXd kss_bar = MatrixXd::Zero(msz, msz);
  const VectorXd kim = kssi_m;  // kss^-1 m

  for (const auto& bw : blocks) {
    const VectorXd w_p = w.segment(bw.start, bw.size);

    grad->d_mu.segment(bw.start, bw.size) = -scale * bw.u;
    grad->d_w.segment(bw.start, bw.size) =
        0.5 * scale * (bw.inv.diagonal().array() - w_p.array().inverse()).matrix();

    // C_p gradient: quad + trace-correction + H-trace terms
    c_bar.block(bw.start, 0, bw.size, msz) +=
        scale * (bw.u * kim.transpose() - bw.chol.solve(bw.y) + bw.e * hs);

    // sigma_hat_p weight
    const MatrixXd ktilde_pp = bw.k_a_diag - bw.y * bw.c.transpose();
    const MatrixXd ehs = bw.e * hs;  // sigma_hat^-1 C Hs
    MatrixXd sig_bar = -0.5 * bw.u * bw.u.transpose();
    sig_bar -= 0.5 * bw.inv * w_p.asDiagonal() * bw.inv;
    sig_bar += 0.5 * bw.inv;
    sig_bar -= 0.5 * bw.inv * ktilde_pp * bw.inv;
    sig_bar -= 0.5 * ehs * bw.e.transpose();
    sig_bar *= scale;

    const MatrixXd ka_diag_bar = MatrixXd(0.5 * scale * bw.inv);

    int off = 0;
    for (int r = 0; r < prior.term_count(); ++r) {
      const auto& term = prior.terms.at(l)[r];
      TermGrad tg;
      if (r == prior.instance_term) {
        gram_backward(term, bw.sub, bw.sub, sig_bar, tg);
      } else {
        gram_backward(term, bw.sub, bw.sub, ka_diag_bar, tg);
      }
      grad->d_params.segment(off, term.param_count()) += tg.d;
      off += term.param_count();
    }
  }

  // kss gradient pieces
  {
    // quad: -(kss^-1 sum C_p' u_p)(kss^-1 m)'
    kss_bar -= scale * chol_ss.solve(ctu_sum) * kim.transpose();
    // trace correction: + kss^-1 f_sum kss^-1 / 2
    const MatrixXd x1 = chol_ss.solve(f_sum);
    kss_bar += 0.5 * scale * chol_ss.solve(x1.transpose()).transpose();
    // H-trace: -(Hs f_sum kss^-1 + kss^-1 f_sum Hs) / 2
    const MatrixXd fk = chol_ss.solve(f_sum.transpose()).transpose();  // f_sum kss^-1
    kss_bar -= 0.5 * scale * (hs * fk + fk.transpose() * hs);
    // inducing-posterior KL: (kss^-1 - kss^-1 H kss^-1 - kss^-1 m m' kss^-1) / 2
    kss_bar += 0.5 * (chol_ss.inverse() - hs - kim * kim.transpose());
  }

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

double svi_D4_full(const VectorXd& mu, const VectorXd& w, const AdditivePrior& prior, int l,
                   const CovariateMatrix& x, const CovariateMatrix& s, const VectorXd& m,
                   const MatrixXd& h, BoundGrad* grad, VectorXd* d_m, MatrixXd* d_h) {
  return svi_D4_minibatch(mu, w, prior, l, x, s, m, h, x.instances(), x.rows(), grad, d_m, d_h);
}

void natural_gradient_step(VectorXd& m, MatrixXd& h, const VectorXd& d_m, const MatrixXd& d_h,
                           double step) {
  if (!(step > 0.0)) throw std::invalid_argument("natural_gradient_step: step must be positive");
  const int msz = static_cast<int>(m.size());
  if (h.rows() != msz || h.cols() != msz || d_m.size() != msz || d_h.rows() != msz ||
      d_h.cols() != msz)
    throw std::invalid_argument("natural_gradient_step: shape mismatch");
  if (!d_m.allFinite() || !d_h.allFinite())
    throw std::runtime_error("natural_gradient_step: non-finite inducing gradient");

  // H approaches singular when a latent dimension's kernel scale collapses in
  // training; invert through an eigendecomposition with floored eigenvalues so
  // the precision-space update stays a combination of positive definite parts
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (h + h.transpose()));
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("natural_gradient_step: H eigendecomposition failed");
  const double lam_max = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double lam_floor = std::max(1e-12 * lam_max, 1e-15);
  const VectorXd lam = eig.eigenvalues().cwiseMax(lam_floor);
  const MatrixXd h_inv =
      eig.eigenvectors() * lam.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();

  double step_try = step;
  for (int attempt = 0; attempt < 30; ++attempt) {
    MatrixXd prec = h_inv + 2.0 * step_try * d_h;
    prec = 0.5 * (prec + prec.transpose());
    Eigen::LLT<MatrixXd> llt_prec(prec);
    if (llt_prec.info() == Eigen::Success) {
      const VectorXd rhs = h_inv * m - step_try * (d_m - 2.0 * d_h * m);
      MatrixXd h_new = llt_prec.solve(MatrixXd::Identity(msz, msz));
      h_new = 0.5 * (h_new + h_new.transpose());
      m = h_new * rhs;
      h = std::move(h_new);
      return;
    }
    step_try *= 0.5;
  }
  Eigen::SelfAdjointEigenSolver<MatrixXd> diag_h(d_h);
  throw std::runtime_error(
      "natural_gradient_step: updated precision stayed indefinite after 30 halvings (H eigen [" +
      std::to_string(eig.eigenvalues().minCoeff()) + ", " + std::to_string(lam_max) +
      "], dH eigen [" + std::to_string(diag_h.eigenvalues().minCoeff()) + ", " +
      std::to_string(diag_h.eigenvalues().maxCoeff()) + "])");
}

double kl_total(const std::vector<KlRequest>& requests, const MatrixXd& mu_all,
                const MatrixXd& w_all, const AdditivePrior& prior, const CovariateMatrix& x,
                const CovariateMatrix* s, const std::vector<VectorXd>* m,
                const std::vector<MatrixXd>* h) {
  const int latent = prior.latent_dim;
  if (static_cast<int>(requests.size()) != latent)
    throw std::invalid_argument("kl_total: one request per latent dimension expected");
  for (const auto& r : requests)
    if (r.kind != requests[0].kind)
      throw std::invalid_argument("kl_total: mixed bound kinds across dimensions are not supported");
  if (mu_all.cols() != latent || w_all.cols() != latent || mu_all.rows() != x.rows() ||
      w_all.rows() != x.rows())
    throw std::invalid_argument("kl_total: mu/w must be N x latent_dim");

  const BoundKind kind = requests[0].kind;
  if (kind != BoundKind::Exact && s == nullptr)
    throw std::invalid_argument("kl_total: inducing rows required for sparse bounds");
  if (kind == BoundKind::D4 && (m == nullptr || h == nullptr ||
                                static_cast<int>(m->size()) != latent ||
                                static_cast<int>(h->size()) != latent))
    throw std::invalid_argument("kl_total: variational pairs required for the uncollapsed bound");

  double total = 0.0;
  for (int l = 0; l < latent; ++l) {
    const VectorXd mu = mu_all.col(l);
    const VectorXd w = w_all.col(l);
    switch (kind) {
      case BoundKind::Exact:
        total += kl_exact(mu, w, prior, l, x);
        break;
      case BoundKind::D1:
        total += bound_D1(mu, w, prior, l, x, *s);
        break;
      case BoundKind::D2Dense:
        total += bound_D2_dense(mu, w, prior, l, x, *s);
        break;
      case BoundKind::D2:
        total += bound_D2(mu, w, prior, l, x, *s);
        break;
      case BoundKind::D4:
        total += svi_D4_full(mu, w, prior, l, x, *s, (*m)[l], (*h)[l]);
        break;
    }
  }
  return total;
}

}  // namespace lvae
