#include "lvae/datagen.hpp"

#include <filesystem>
#include <stdexcept>

#include "lvae/chol.hpp"

namespace lvae {

namespace {

// column order matches the written header
enum Col { kId = 0, kAge, kSex, kDisease, kDiseaseAge, kLocation };

KernelTerm se_term(int col, double scale, double length) {
  KernelTerm t;
  t.kind = TermKind::SE;
  t.column = col;
  t.log_scale = std::log(scale);
  t.log_length = std::log(length);
  return t;
}

KernelTerm cat_term(int col, double scale) {
  KernelTerm t;
  t.kind = TermKind::CAT;
  t.column = col;
  t.log_scale = std::log(scale);
  return t;
}

KernelTerm product_term(TermKind factor_kind, int factor_col, int se_col, double scale,
                        double length) {
  KernelTerm t;
  t.kind = TermKind::Product;
  t.log_scale = std::log(scale);
  KernelTerm f;
  f.kind = factor_kind;
  f.column = factor_col;
  t.factors.push_back(f);
  KernelTerm s;
  s.kind = TermKind::SE;
  s.column = se_col;
  s.log_length = std::log(length);
  t.factors.push_back(s);
  return t;
}

}  // namespace

CovariateSchema benchmark_schema() {
  CovariateSchema schema;
  schema.entries = {{"id", CovariateKind::Categorical},
                    {"age", CovariateKind::Continuous},
                    {"sex", CovariateKind::Categorical},
                    {"diseasePresence", CovariateKind::Binary},
                    {"diseaseAge", CovariateKind::Continuous},
                    {"location", CovariateKind::Binary}};
  schema.id_index = kId;
  return schema;
}

GeneratedData generate_benchmark(const GenConfig& cfg) {
  if (cfg.instances < 1 || cfg.timepoints < 1 || cfg.obs_dim < 1 || cfg.latent_dim < 1)
    throw std::invalid_argument("generate_benchmark: counts must be >= 1");
  if (cfg.missing_frac < 0.0 || cfg.missing_frac > 1.0 || cfg.disease_frac < 0.0 ||
      cfg.disease_frac > 1.0)
    throw std::invalid_argument("generate_benchmark: fractions must lie in [0,1]");
  if (cfg.val_instances + cfg.predict_instances >= cfg.instances)
    throw std::invalid_argument("generate_benchmark: no fully observed training instances left");
  if (cfg.predict_instances > 0 &&
      (cfg.predict_observed < 1 || cfg.predict_observed >= cfg.timepoints))
    throw std::invalid_argument(
        "generate_benchmark: prediction instances need 1 <= observed rows < timepoints");

  const int p = cfg.instances;
  const int np = cfg.timepoints;
  const long n_all = static_cast<long>(p) * np;
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 101);

  // ---- covariates -----------------------------------------------------------
  // ages on a unit grid; disease onset lands in the middle half of the range
  CovariateSchema schema = benchmark_schema();
  MatrixXd xv(n_all, 6);
  const double age_hi = static_cast<double>(np - 1);
  for (int i = 0; i < p; ++i) {
    const double sex = rng.index(2);
    const double location = rng.index(2);
    const bool diseased = rng.uniform() < cfg.disease_frac;
    const double onset = diseased ? age_hi * (0.25 + 0.5 * rng.uniform()) : 0.0;
    for (int t = 0; t < np; ++t) {
      const long r = static_cast<long>(i) * np + t;
      const double age = static_cast<double>(t);
      xv(r, kId) = static_cast<double>(i);
      xv(r, kAge) = age;
      xv(r, kSex) = sex;
      xv(r, kDisease) = diseased && age >= onset ? 1.0 : 0.0;
      xv(r, kDiseaseAge) = diseased ? age - onset : missing_value();
      xv(r, kLocation) = location;
    }
  }
  const CovariateMatrix x_all = CovariateMatrix::build(schema, xv);

  // ---- ground-truth latent draw --------------------------------------------
  // additive GP; the location column is read by no term
  std::vector<KernelTerm> terms;
  terms.push_back(cat_term(kId, 0.5));
  terms.push_back(se_term(kAge, 1.0, 0.35 * age_hi));
  terms.push_back(product_term(TermKind::CAT, kId, kAge, 1.0, 0.3 * age_hi));
  terms.push_back(product_term(TermKind::CAT, kSex, kAge, 0.5, 0.4 * age_hi));
  terms.push_back(product_term(TermKind::BIN, kDisease, kDiseaseAge, cfg.disease_scale,
                               0.25 * age_hi));

  MatrixXd sigma = MatrixXd::Zero(n_all, n_all);
  for (const auto& term : terms) sigma += gram(term, x_all);
  sigma.diagonal().array() += 1e-8 * sigma.diagonal().mean();
  const Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("generate_benchmark: latent covariance not positive definite");
  const MatrixXd chol_l = llt.matrixL();

  MatrixXd z(n_all, cfg.latent_dim);
  for (int l = 0; l < cfg.latent_dim; ++l) z.col(l) = chol_l * rng.normal_vec(n_all);

  // ---- fixed random nonlinear map + noise ----------------------------------
  Rng map_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 102);
  const Mlp decoder = make_mlp({cfg.latent_dim, 2 * cfg.obs_dim, cfg.obs_dim}, map_rng);
  MatrixXd y_clean = mlp_forward(decoder, z);
  for (long r = 0; r < n_all; ++r)
    for (int d = 0; d < cfg.obs_dim; ++d) y_clean(r, d) += cfg.noise_sd * rng.normal();

  // ---- split indices --------------------------------------------------------
  // instance roles: leading block fully observed train, then prediction
  // instances (first rows train, remainder test), then validation instances
  const int train_full = p - cfg.val_instances - cfg.predict_instances;
  std::vector<int> train_rows, val_rows, test_rows;
  for (int i = 0; i < p; ++i) {
    for (int t = 0; t < np; ++t) {
      const int r = i * np + t;
      if (i < train_full)
        train_rows.push_back(r);
      else if (i < train_full + cfg.predict_instances)
        (t < cfg.predict_observed ? train_rows : test_rows).push_back(r);
      else
        val_rows.push_back(r);
    }
  }

  // standardize per dimension with the training rows, before masking
  VectorXd mu = VectorXd::Zero(cfg.obs_dim), sd = VectorXd::Ones(cfg.obs_dim);
  for (int d = 0; d < cfg.obs_dim; ++d) {
    double s = 0.0, s2 = 0.0;
    for (int r : train_rows) {
      s += y_clean(r, d);
      s2 += y_clean(r, d) * y_clean(r, d);
    }
    const double m = s / train_rows.size();
    const double v = s2 / train_rows.size() - m * m;
    mu(d) = m;
    sd(d) = v > 0.0 ? std::sqrt(v) : 1.0;
  }
  for (long r = 0; r < n_all; ++r)
    for (int d = 0; d < cfg.obs_dim; ++d) y_clean(r, d) = (y_clean(r, d) - mu(d)) / sd(d);

  auto take = [&](const std::vector<int>& rows) {
    MatrixXd out(rows.size(), cfg.obs_dim);
    for (size_t i = 0; i < rows.size(); ++i) out.row(i) = y_clean.row(rows[i]);
    return out;
  };

  GeneratedData data;
  data.schema = schema;
  data.x_train = x_all.select_rows(train_rows);
  data.x_val = x_all.select_rows(val_rows);
  data.x_test = x_all.select_rows(test_rows);
  data.y_train_truth = take(train_rows);
  data.y_val_truth = take(val_rows);
  data.y_test_truth = take(test_rows);

  // MCAR masks on train and val; test rows are future points, fully unobserved
  auto mask = [&](const MatrixXd& truth) {
    MatrixXd out = truth;
    for (long r = 0; r < out.rows(); ++r)
      for (long d = 0; d < out.cols(); ++d)
        if (rng.uniform() < cfg.missing_frac) out(r, d) = missing_value();
    return out;
  };
  data.y_train = mask(data.y_train_truth);
  data.y_val = mask(data.y_val_truth);
  data.y_test = MatrixXd::Constant(data.y_test_truth.rows(), cfg.obs_dim, missing_value());
  return data;
}

void write_benchmark(const std::string& dir, const GeneratedData& data) {
  namespace fs = std::filesystem;
  auto write_split = [&](const std::string& name, const CovariateMatrix& x, const MatrixXd& y,
                         const MatrixXd& truth) {
    const fs::path split = fs::path(dir) / name;
    fs::create_directories(split);
    write_covariate_csv((split / "X.csv").string(), x);
    write_observation_csv((split / "Y.csv").string(), y);
    write_observation_csv((split / "Y_truth.csv").string(), truth);
  };
  write_split("train", data.x_train, data.y_train, data.y_train_truth);
  write_split("val", data.x_val, data.y_val, data.y_val_truth);
  write_split("test", data.x_test, data.y_test, data.y_test_truth);
}

}  // namespace lvae
