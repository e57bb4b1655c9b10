#include "lvae/verify.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "lvae/data.hpp"

namespace lvae {

namespace {

BoundInstance make_instance(Rng& rng, int p, int n_cap, int m_cap, double len_lo, double len_hi) {
  BoundInstance inst;

  inst.schema.entries = {{"id", CovariateKind::Categorical},
                         {"t", CovariateKind::Continuous},
                         {"g", CovariateKind::Categorical},
                         {"b", CovariateKind::Binary}};
  inst.schema.id_index = 0;

  std::vector<Eigen::RowVector4d> rows;
  for (int i = 0; i < p; ++i) {
    int np = 2 + rng.index(9);  // 2..10 rows per instance
    while (static_cast<int>(rows.size()) + np > n_cap && np > 1) --np;
    const double g = rng.index(3);
    const double b = rng.index(2);
    double t = rng.uniform(0.0, 2.0);
    for (int j = 0; j < np; ++j) {
      Eigen::RowVector4d r;
      r << i, t, g, (rng.uniform() < 0.15 ? missing_value() : b);
      rows.push_back(r);
      t += rng.uniform(0.35, 1.1);  // strictly increasing grid, no duplicates
    }
    if (static_cast<int>(rows.size()) >= n_cap) break;
  }
  MatrixXd values(static_cast<int>(rows.size()), 4);
  for (int i = 0; i < values.rows(); ++i) values.row(i) = rows[i];
  inst.x = CovariateMatrix::build(inst.schema, std::move(values));

  inst.prior = parse_prior("ca_x_se(id,t) + se(t) + ca_x_se(g,t) + bi_x_se(b,t)", inst.schema, 1);
  // generic hyperparameters; lengthscales drawn relative to the time range
  const double t_range = std::max(1.0, inst.x.values.col(1).maxCoeff() - inst.x.values.col(1).minCoeff());
  for (auto& term : inst.prior.terms[0]) {
    term.log_scale = std::log(rng.uniform(0.5, 1.6));
    auto set_len = [&](KernelTerm& f) {
      if (f.kind == TermKind::SE) f.log_length = std::log(rng.uniform(len_lo, len_hi) * t_range);
    };
    set_len(term);
    for (auto& f : term.factors) set_len(f);
  }

  const int n = inst.x.rows();
  inst.mu = rng.normal_vec(n);
  inst.w = VectorXd(n);
  for (int i = 0; i < n; ++i) inst.w(i) = rng.uniform(0.2, 2.0);

  // greedy farthest-point pick over time keeps the inducing gram well
  // conditioned; near-duplicate times would make it numerically singular
  const int m = std::min(n, 2 + rng.index(std::max(1, m_cap - 1)));
  std::vector<int> picked{rng.index(n)};
  while (static_cast<int>(picked.size()) < m) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int j : picked)
        d = std::min(d, std::abs(inst.x.values(i, 1) - inst.x.values(j, 1)));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picked.push_back(best);
  }
  inst.s_rows = picked;
  std::sort(inst.s_rows.begin(), inst.s_rows.end());

  // full-space rows keep their ids; shared-space rows blank the id so the id
  // kernels vanish against them
  MatrixXd s_vals(m, 4);
  for (int i = 0; i < m; ++i) s_vals.row(i) = inst.x.values.row(inst.s_rows[i]);
  inst.s_full = CovariateMatrix::build(inst.schema, s_vals);
  // ids are mandatory per row, so the shared-space copy carries fresh unique
  // ids instead of blanks; no shared-kernel term reads them
  inst.s_a = shared_space_copy(inst.s_full);
  return inst;
}

}  // namespace

BoundInstance random_bound_instance(std::uint64_t seed, int max_instances, int n_cap, int m_cap,
                                    double len_lo, double len_hi) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 1);
  const int p = 1 + rng.index(max_instances);
  return make_instance(rng, p, n_cap, m_cap, len_lo, len_hi);
}

BoundInstance random_bound_instance_fixed_p(std::uint64_t seed, int instances, int m_cap) {
  Rng rng(seed * 0x9e3779b97f4a7c15ULL + 2);
  return make_instance(rng, instances, 100000, m_cap, 0.35, 0.9);
}

CovariateMatrix shared_space_copy(const CovariateMatrix& x, double id_base) {
  MatrixXd v = x.values;
  for (int i = 0; i < v.rows(); ++i) v(i, x.schema.id_index) = id_base + i;
  return CovariateMatrix::build(x.schema, std::move(v));
}

void d4_fixed_point(const BoundInstance& inst, VectorXd& m, MatrixXd& h) {
  const int msz = inst.s_a.rows();
  m = VectorXd::Zero(msz);
  h = gram_a(inst.prior, 0, inst.s_a, inst.s_a);
  h.diagonal().array() += 1e-10 * std::max(1.0, h.diagonal().mean());
  VectorXd d_m;
  MatrixXd d_h;
  svi_D4_full(inst.mu, inst.w, inst.prior, 0, inst.x, inst.s_a, m, h, nullptr, &d_m, &d_h);
  natural_gradient_step(m, h, d_m, d_h, 1.0);
}

BoundRecord evaluate_bounds(const BoundInstance& inst, std::uint64_t seed) {
  BoundRecord rec;
  rec.seed = seed;
  rec.n = inst.x.rows();
  rec.p = inst.x.instances();
  rec.m = inst.s_a.rows();
  rec.kl_exact = kl_exact(inst.mu, inst.w, inst.prior, 0, inst.x);
  rec.d1 = bound_D1(inst.mu, inst.w, inst.prior, 0, inst.x, inst.s_full);
  rec.d2_dense = bound_D2_dense(inst.mu, inst.w, inst.prior, 0, inst.x, inst.s_a);
  rec.d2_efficient = bound_D2(inst.mu, inst.w, inst.prior, 0, inst.x, inst.s_a);

  VectorXd m;
  MatrixXd h;
  d4_fixed_point(inst, m, h);
  rec.d4_at_optimum = svi_D4_full(inst.mu, inst.w, inst.prior, 0, inst.x, inst.s_a, m, h);

  rec.slack_d1_vs_exact = rec.d1 - rec.kl_exact;
  rec.slack_d1_vs_d2 = rec.d1 - rec.d2_efficient;
  rec.slack_d2_vs_exact = rec.d2_efficient - rec.kl_exact;
  return rec;
}

std::string bound_record_json(const BoundRecord& rec) {
  std::ostringstream out;
  out.precision(12);
  out << "{\"seed\":" << rec.seed << ",\"n\":" << rec.n << ",\"p\":" << rec.p << ",\"m\":" << rec.m
      << ",\"kl_exact\":" << rec.kl_exact << ",\"d1\":" << rec.d1
      << ",\"d2_dense\":" << rec.d2_dense << ",\"d2_efficient\":" << rec.d2_efficient
      << ",\"d4_at_optimum\":" << rec.d4_at_optimum
      << ",\"slack_d1_vs_exact\":" << rec.slack_d1_vs_exact
      << ",\"slack_d1_vs_d2\":" << rec.slack_d1_vs_d2
      << ",\"slack_d2_vs_exact\":" << rec.slack_d2_vs_exact << "}";
  return out.str();
}

}  // namespace lvae
