#include "lvae/predictive.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace lvae {

namespace {

std::vector<int> block_rows(const CovariateMatrix::Block& blk) {
  std::vector<int> idx(blk.size);
  for (int i = 0; i < blk.size; ++i) idx[i] = blk.start + i;
  return idx;
}

MatrixXd gram_full(const AdditivePrior& prior, int l, const CovariateMatrix& a, const CovariateMatrix& b) {
  MatrixXd k = MatrixXd::Zero(a.rows(), b.rows());
  for (int r = 0; r < prior.term_count(); ++r) k += gram(prior.terms.at(l)[r], a, b);
  return k;
}

double full_diag(const AdditivePrior& prior, int l, const CovariateMatrix& x, int i) {
  double v = 0.0;
  for (int r = 0; r < prior.term_count(); ++r)
    v += eval_term(prior.terms.at(l)[r], x.values.row(i), x.values.row(i));
  return v;
}

void check_stats(const VectorXd& mu, const VectorXd& w, int n, const char* who) {
  if (mu.size() != n || w.size() != n)
    throw std::invalid_argument(std::string(who) + ": mu/w length does not match training rows");
  for (int i = 0; i < n; ++i)
    if (!(w(i) > 0.0)) throw std::invalid_argument(std::string(who) + ": encoder variances must be positive");
}

}  // namespace

LatentPredictive predict_latent_exact(const AdditivePrior& prior, int l, const CovariateMatrix& x,
                                      const VectorXd& mu, const VectorXd& w,
                                      const CovariateMatrix& x_query) {
  const int n = x.rows();
  check_stats(mu, w, n, "predict_latent_exact");
  const MatrixXd sigma = assemble_sigma(prior, l, x);
  SpdChol chol(sigma);
  const MatrixXd k_qx = gram_full(prior, l, x_query, x);

  LatentPredictive out;
  out.mean = k_qx * chol.solve(mu);
  out.var.resize(x_query.rows());
  const MatrixXd si_kxq = chol.solve(k_qx.transpose());        // sigma^-1 K_Xq
  const MatrixXd w_si_kxq = w.asDiagonal() * si_kxq;
  for (int i = 0; i < x_query.rows(); ++i) {
    const double kss = full_diag(prior, l, x_query, i);
    double v = kss - k_qx.row(i).dot(si_kxq.col(i)) + si_kxq.col(i).dot(w_si_kxq.col(i)) +
               prior.noise_var;
    out.var(i) = v;
  }
  return out;
}

namespace {

// Shared machinery for the inducing-point predictive paths: block solves of
// sigma_hat, the U = K_ss + sum C' sigma_hat^-1 C factor, and the sparse
// instance-kernel products against query rows grouped by instance id.
struct SparseWork {
  SpdChol chol_ss;
  std::vector<SpdChol> chol_hat;
  std::vector<MatrixXd> c;          // per train block, np x M
  SpdChol chol_u;
  VectorXd si_mu;                   // stacked sigma_hat^-1 mu
  SparseWork(const AdditivePrior& prior, int l, const CovariateMatrix& x, const CovariateMatrix& s,
             const VectorXd& mu, MatrixXd k_ss)
      : chol_ss(k_ss), chol_u(MatrixXd::Identity(1, 1)) {
    MatrixXd u = std::move(k_ss);
    si_mu.resize(x.rows());
    for (const auto& blk : x.blocks) {
      CovariateMatrix sub = x.select_rows(block_rows(blk));
      MatrixXd sigma_hat = gram_r(prior, l, sub, sub);
      sigma_hat.diagonal().array() += prior.noise_var;
      chol_hat.emplace_back(sigma_hat);
      c.push_back(gram_a(prior, l, sub, s));
      u += c.back().transpose() * chol_hat.back().solve(c.back());
      si_mu.segment(blk.start, blk.size) =
          chol_hat.back().solve(VectorXd(mu.segment(blk.start, blk.size)));
    }
    chol_u = SpdChol(u);
  }
};

}  // namespace

LatentPredictive predict_latent_variational(const AdditivePrior& prior, int l,
                                            const CovariateMatrix& x, const VectorXd& mu,
                                            const VectorXd& w, const CovariateMatrix& s,
                                            const VectorXd& m, const MatrixXd& h,
                                            const CovariateMatrix& x_query) {
  const int n = x.rows();
  const int msz = s.rows();
  const int nq = x_query.rows();
  check_stats(mu, w, n, "predict_latent_variational");
  if (m.size() != msz || h.rows() != msz || h.cols() != msz)
    throw std::invalid_argument("predict_latent_variational: variational shape mismatch");

  const MatrixXd k_ss = gram_a(prior, l, s, s);
  SpdChol chol_ss(k_ss);
  const VectorXd kssi_m = chol_ss.solve(m);
  const MatrixXd hs = chol_ss.solve(chol_ss.solve(h).transpose());  // kss^-1 H kss^-1

  const MatrixXd k_qs = gram_a(prior, l, x_query, s);

  LatentPredictive out;
  out.mean = k_qs * kssi_m;
  out.var = VectorXd::Constant(nq, prior.noise_var);
  // rows of (K_qs - K^R_qX sigma_hat^-1 K_XS) for the H quadratic
  MatrixXd a_rows = k_qs;

  // instance-term pieces: group query rows by id and match against training blocks
  std::map<double, int> train_block_of;
  for (int p = 0; p < x.instances(); ++p) train_block_of[x.blocks[p].id] = p;

  for (const auto& qblk : x_query.blocks) {
    std::vector<int> qidx = block_rows(qblk);
    CovariateMatrix qsub = x_query.select_rows(qidx);
    // within-query instance variance: diag of K^R_qq
    for (int i = 0; i < qblk.size; ++i)
      out.var(qblk.start + i) +=
          prior.instance_term < 0
              ? 0.0
              : eval_term(prior.terms.at(l)[prior.instance_term], qsub.values.row(i), qsub.values.row(i));

    auto it = train_block_of.find(qblk.id);
    if (it == train_block_of.end()) continue;
    const auto& tblk = x.blocks[it->second];
    CovariateMatrix tsub = x.select_rows(block_rows(tblk));

    MatrixXd sigma_hat = gram_r(prior, l, tsub, tsub);
    sigma_hat.diagonal().array() += prior.noise_var;
    SpdChol chol_hat(sigma_hat);
    const MatrixXd k_r = gram_r(prior, l, qsub, tsub);       // nq' x np
    const MatrixXd c_p = gram_a(prior, l, tsub, s);          // np x M
    const VectorXd mu_p = mu.segment(tblk.start, tblk.size);

    const VectorXd resid = chol_hat.solve(VectorXd(mu_p - c_p * kssi_m));
    out.mean.segment(qblk.start, qblk.size) += k_r * resid;

    const MatrixXd si_krt = chol_hat.solve(k_r.transpose());  // sigma_hat^-1 K_Xq^R
    a_rows.block(qblk.start, 0, qblk.size, msz) -= k_r * chol_hat.solve(c_p);
    for (int i = 0; i < qblk.size; ++i)
      out.var(qblk.start + i) -= k_r.row(i).dot(si_krt.col(i));
  }

  for (int i = 0; i < nq; ++i) out.var(i) += (a_rows.row(i) * hs).dot(a_rows.row(i));
  return out;
}

LatentPredictive predict_latent_sparse(const AdditivePrior& prior, int l, const CovariateMatrix& x,
                                       const VectorXd& mu, const VectorXd& w,
                                       const CovariateMatrix& s, const CovariateMatrix& x_query) {
  const int n = x.rows();
  check_stats(mu, w, n, "predict_latent_sparse");
  const int msz = s.rows();
  if (msz == 0) throw std::invalid_argument("predict_latent_sparse: empty inducing set");

  const MatrixXd k_ss = gram_a(prior, l, s, s);
  SparseWork work(prior, l, x, s, mu, k_ss);

  // mu_tilde = sigma_hat^-1 mu - sigma_hat^-1 C U^-1 C' sigma_hat^-1 mu, blockwise
  VectorXd ct_simu = VectorXd::Zero(msz);
  for (int p = 0; p < x.instances(); ++p) {
    const auto& blk = x.blocks[p];
    ct_simu += work.c[p].transpose() * work.si_mu.segment(blk.start, blk.size);
  }
  const VectorXd ui_ct = work.chol_u.solve(ct_simu);
  VectorXd mu_tilde(n);
  for (int p = 0; p < x.instances(); ++p) {
    const auto& blk = x.blocks[p];
    mu_tilde.segment(blk.start, blk.size) =
        work.si_mu.segment(blk.start, blk.size) -
        work.chol_hat[p].solve(MatrixXd(work.c[p] * ui_ct)).col(0);
  }

  // low-rank part of the mean: K_qs kss^-1 (C' mu_tilde)
  VectorXd ct_mt = VectorXd::Zero(msz);
  for (int p = 0; p < x.instances(); ++p) {
    const auto& blk = x.blocks[p];
    ct_mt += work.c[p].transpose() * mu_tilde.segment(blk.start, blk.size);
  }
  const MatrixXd k_qs = gram_a(prior, l, x_query, s);
  VectorXd mean = k_qs * work.chol_ss.solve(ct_mt);

  // sparse instance part: only id-matching blocks contribute
  std::map<double, int> train_block_of;
  for (int p = 0; p < x.instances(); ++p) train_block_of[x.blocks[p].id] = p;
  for (const auto& qblk : x_query.blocks) {
    auto it = train_block_of.find(qblk.id);
    if (it == train_block_of.end()) continue;
    const auto& tblk = x.blocks[it->second];
    CovariateMatrix qsub = x_query.select_rows(block_rows(qblk));
    CovariateMatrix tsub = x.select_rows(block_rows(tblk));
    const MatrixXd k_r = gram_r(prior, l, qsub, tsub);
    mean.segment(qblk.start, qblk.size) += k_r * mu_tilde.segment(tblk.start, tblk.size);
  }

  // variance from the variational form at the optimal inducing posterior
  const VectorXd m_star = k_ss * work.chol_u.solve(ct_simu);
  MatrixXd h_star = k_ss * work.chol_u.solve(k_ss);
  h_star = 0.5 * (h_star + h_star.transpose());
  LatentPredictive var_path =
      predict_latent_variational(prior, l, x, mu, w, s, m_star, h_star, x_query);

  LatentPredictive out;
  out.mean = std::move(mean);
  out.var = std::move(var_path.var);
  return out;
}

ObservationPredictive predict_observation(const Decoder& dec, const MatrixXd& z_mean,
                                          const MatrixXd& z_var, int mc_samples, Rng& rng) {
  if (z_mean.rows() != z_var.rows() || z_mean.cols() != z_var.cols())
    throw std::invalid_argument("predict_observation: latent stats shape mismatch");
  const int n = static_cast<int>(z_mean.rows());
  const int d = dec.net.out_dim();
  const VectorXd obs_var = dec.log_obs_var.array().exp().matrix();

  ObservationPredictive out;
  if (mc_samples <= 0) {
    out.mean = mlp_forward(dec.net, z_mean);
    out.var = MatrixXd::Zero(n, d);
    out.var.rowwise() += obs_var.transpose();
    return out;
  }

  MatrixXd acc = MatrixXd::Zero(n, d);
  MatrixXd acc_sq = MatrixXd::Zero(n, d);
  const MatrixXd sd = z_var.array().sqrt().matrix();
  for (int t = 0; t < mc_samples; ++t) {
    const MatrixXd eps = rng.normal_mat(n, static_cast<int>(z_mean.cols()));
    const MatrixXd z = z_mean + sd.cwiseProduct(eps);
    const MatrixXd g = mlp_forward(dec.net, z);
    acc += g;
    acc_sq += g.cwiseProduct(g);
  }
  out.mean = acc / mc_samples;
  out.var = acc_sq / mc_samples - out.mean.cwiseProduct(out.mean);
  out.var = out.var.cwiseMax(0.0);
  out.var.rowwise() += obs_var.transpose();
  return out;
}

}  // namespace lvae
