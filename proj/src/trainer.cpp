#include "lvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace lvae {

using nlohmann::json;

namespace {

void check_bound_kind(const TrainConfig& cfg) {
  if (cfg.bound != BoundKind::Exact && cfg.bound != BoundKind::D2 && cfg.bound != BoundKind::D4)
    throw std::invalid_argument("trainer: bound must be exact, structured, or stochastic");
}

bool needs_inducing(const TrainConfig& cfg) { return cfg.bound != BoundKind::Exact; }

// Farthest-point selection over the continuous columns the shared kernel part
// reads; keeps the inducing gram well conditioned. Falls back to a row stride
// when no shared term reads a continuous column.
std::vector<int> pick_inducing_rows(const AdditivePrior& prior, const CovariateMatrix& x, int m) {
  std::vector<int> cont_cols;
  for (int c = 0; c < static_cast<int>(prior.schema.entries.size()); ++c) {
    if (prior.schema.entries[c].kind != CovariateKind::Continuous) continue;
    for (int r = 0; r < prior.term_count(); ++r) {
      if (r == prior.instance_term) continue;
      if (prior.terms[0][r].reads_column(c)) {
        cont_cols.push_back(c);
        break;
      }
    }
  }
  const int n = x.rows();
  m = std::min(m, n);
  std::vector<int> picked;
  if (cont_cols.empty()) {
    for (int i = 0; i < m; ++i) picked.push_back(i * n / m);
    return picked;
  }
  // scale each column by its spread so no single covariate dominates
  std::vector<double> scale(cont_cols.size(), 1.0);
  for (size_t k = 0; k < cont_cols.size(); ++k) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (int i = 0; i < n; ++i) {
      const double v = x.values(i, cont_cols[k]);
      if (std::isnan(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi > lo) scale[k] = hi - lo;
  }
  auto dist = [&](int i, int j) {
    double d = 0.0;
    for (size_t k = 0; k < cont_cols.size(); ++k) {
      double a = x.values(i, cont_cols[k]), b = x.values(j, cont_cols[k]);
      if (std::isnan(a)) a = 0.0;
      if (std::isnan(b)) b = 0.0;
      const double r = (a - b) / scale[k];
      d += r * r;
    }
    return d;
  };
  picked.push_back(0);
  while (static_cast<int>(picked.size()) < m) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      double d = std::numeric_limits<double>::infinity();
      for (int j : picked) d = std::min(d, dist(i, j));
      if (d > best_d) {
        best_d = d;
        best = i;
      }
    }
    picked.push_back(best);
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

MatrixXd initial_ind_cov(const AdditivePrior& prior, int l, const CovariateMatrix& s) {
  MatrixXd k = gram_a(prior, l, s, s);
  const double bump = std::max(1e-8, 1e-6 * k.diagonal().mean());
  k.diagonal().array() += bump;
  return k;
}

// ---- json helpers ----------------------------------------------------------

json mat_to_json(const MatrixXd& m) {
  json data = json::array();
  for (long j = 0; j < m.cols(); ++j)
    for (long i = 0; i < m.rows(); ++i) {
      const double v = m(i, j);
      if (std::isnan(v))
        data.push_back(nullptr);
      else
        data.push_back(v);
    }
  return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

MatrixXd mat_from_json(const json& j) {
  MatrixXd m(j.at("rows").get<long>(), j.at("cols").get<long>());
  const auto& data = j.at("data");
  if (static_cast<long>(data.size()) != m.size())
    throw std::runtime_error("checkpoint: matrix payload size mismatch");
  long k = 0;
  for (long c = 0; c < m.cols(); ++c)
    for (long r = 0; r < m.rows(); ++r, ++k)
      m(r, c) = data[k].is_null() ? std::numeric_limits<double>::quiet_NaN()
                                  : data[k].get<double>();
  return m;
}

json vec_to_json(const VectorXd& v) { return mat_to_json(v); }

VectorXd vec_from_json(const json& j) {
  MatrixXd m = mat_from_json(j);
  if (m.cols() != 1) throw std::runtime_error("checkpoint: expected a column vector");
  return m.col(0);
}

json layer_to_json(const DenseLayer& l) {
  return json{{"w", mat_to_json(l.w)},
              {"b", vec_to_json(l.b)},
              {"act", l.act == Activation::Tanh ? "tanh" : "identity"}};
}

DenseLayer layer_from_json(const json& j) {
  DenseLayer l;
  l.w = mat_from_json(j.at("w"));
  l.b = vec_from_json(j.at("b"));
  const std::string act = j.at("act").get<std::string>();
  if (act == "tanh")
    l.act = Activation::Tanh;
  else if (act == "identity")
    l.act = Activation::Identity;
  else
    throw std::runtime_error("checkpoint: unknown activation " + act);
  return l;
}

json mlp_to_json(const Mlp& net) {
  json layers = json::array();
  for (const auto& l : net.layers) layers.push_back(layer_to_json(l));
  return json{{"layers", std::move(layers)}};
}

Mlp mlp_from_json(const json& j) {
  Mlp net;
  for (const auto& l : j.at("layers")) net.layers.push_back(layer_from_json(l));
  return net;
}

const char* kind_name(CovariateKind k) {
  switch (k) {
    case CovariateKind::Categorical: return "categorical";
    case CovariateKind::Continuous: return "continuous";
    case CovariateKind::Binary: return "binary";
  }
  throw std::logic_error("unreachable");
}

CovariateKind kind_from_name(const std::string& s) {
  if (s == "categorical") return CovariateKind::Categorical;
  if (s == "continuous") return CovariateKind::Continuous;
  if (s == "binary") return CovariateKind::Binary;
  throw std::runtime_error("checkpoint: unknown covariate kind " + s);
}

// ---- parameter refs ---------------------------------------------------------

void add_mlp_refs(Mlp& net, std::vector<ParamRef>& out) {
  for (auto& l : net.layers) {
    out.push_back({l.w.data(), l.w.size(), ParamGroup::Net});
    out.push_back({l.b.data(), l.b.size(), ParamGroup::Net});
  }
}

void add_term_refs(KernelTerm& term, std::vector<ParamRef>& out) {
  out.push_back({&term.log_scale, 1, ParamGroup::Gp});
  if (term.kind == TermKind::SE) {
    out.push_back({&term.log_length, 1, ParamGroup::Gp});
  } else if (term.kind == TermKind::Product) {
    for (auto& f : term.factors)
      if (f.kind == TermKind::SE) out.push_back({&f.log_length, 1, ParamGroup::Gp});
  }
}

}  // namespace

LvaeModel init_model(const TrainConfig& cfg, const CovariateSchema& schema,
                     const CovariateMatrix& x_train, int obs_dim, Rng& rng) {
  check_bound_kind(cfg);
  if (cfg.prior.empty()) throw std::invalid_argument("init_model: prior descriptor is required");
  LvaeModel model;
  model.schema = schema;
  model.latent_dim = cfg.latent_dim;
  model.prior = parse_prior(cfg.prior, schema, cfg.latent_dim);
  initialize_lengthscales(model.prior, x_train);
  model.enc = make_encoder(obs_dim, cfg.enc_hidden, cfg.latent_dim, rng);
  model.dec = make_decoder(cfg.latent_dim, cfg.dec_hidden, obs_dim, rng);

  if (needs_inducing(cfg)) {
    const auto rows = pick_inducing_rows(model.prior, x_train, cfg.inducing_count);
    MatrixXd vals(rows.size(), x_train.values.cols());
    double max_id = 0.0;
    for (int i = 0; i < x_train.rows(); ++i)
      max_id = std::max(max_id, x_train.values(i, schema.id_index));
    for (size_t i = 0; i < rows.size(); ++i) {
      vals.row(i) = x_train.values.row(rows[i]);
      // fresh ids so the instance term never couples data rows to inducing rows
      vals(i, schema.id_index) = max_id + 1.0 + static_cast<double>(i);
    }
    model.inducing = CovariateMatrix::build(schema, vals);
    if (cfg.bound == BoundKind::D4) {
      for (int l = 0; l < cfg.latent_dim; ++l) {
        model.ind_mean.push_back(VectorXd::Zero(model.inducing.rows()));
        model.ind_cov.push_back(initial_ind_cov(model.prior, l, model.inducing));
      }
    }
  }
  return model;
}

// ---- checkpoints ------------------------------------------------------------

std::string checkpoint_to_json(const LvaeModel& model) {
  json schema_entries = json::array();
  for (const auto& e : model.schema.entries)
    schema_entries.push_back(json{{"name", e.name}, {"kind", kind_name(e.kind)}});

  VectorXd params;
  model.prior.get_params(params);

  json j;
  j["version"] = 1;
  j["schema"] = json{{"entries", std::move(schema_entries)}, {"id_index", model.schema.id_index}};
  j["prior"] = json{{"descriptor", describe_prior(model.prior)},
                    {"params", vec_to_json(params)},
                    {"noise_var", model.prior.noise_var}};
  j["latent_dim"] = model.latent_dim;
  j["encoder"] = json{{"trunk", mlp_to_json(model.enc.trunk)},
                      {"mean_head", layer_to_json(model.enc.mean_head)},
                      {"logvar_head", layer_to_json(model.enc.logvar_head)}};
  j["decoder"] =
      json{{"net", mlp_to_json(model.dec.net)}, {"log_obs_var", vec_to_json(model.dec.log_obs_var)}};
  j["inducing"] = mat_to_json(model.inducing.rows() > 0 ? model.inducing.values : MatrixXd(0, 0));
  json ms = json::array(), hs = json::array();
  for (const auto& m : model.ind_mean) ms.push_back(vec_to_json(m));
  for (const auto& h : model.ind_cov) hs.push_back(mat_to_json(h));
  j["ind_mean"] = std::move(ms);
  j["ind_cov"] = std::move(hs);
  return j.dump(2);
}

LvaeModel checkpoint_from_json(const std::string& text) {
  json j = json::parse(text);
  if (j.at("version").get<int>() != 1) throw std::runtime_error("checkpoint: unsupported version");

  LvaeModel model;
  for (const auto& e : j.at("schema").at("entries"))
    model.schema.entries.push_back(
        {e.at("name").get<std::string>(), kind_from_name(e.at("kind").get<std::string>())});
  model.schema.id_index = j.at("schema").at("id_index").get<int>();
  model.latent_dim = j.at("latent_dim").get<int>();

  model.prior = parse_prior(j.at("prior").at("descriptor").get<std::string>(), model.schema,
                            model.latent_dim);
  model.prior.set_params(vec_from_json(j.at("prior").at("params")));
  model.prior.noise_var = j.at("prior").at("noise_var").get<double>();

  model.enc.trunk = mlp_from_json(j.at("encoder").at("trunk"));
  model.enc.mean_head = layer_from_json(j.at("encoder").at("mean_head"));
  model.enc.logvar_head = layer_from_json(j.at("encoder").at("logvar_head"));
  model.dec.net = mlp_from_json(j.at("decoder").at("net"));
  model.dec.log_obs_var = vec_from_json(j.at("decoder").at("log_obs_var"));

  const MatrixXd ind = mat_from_json(j.at("inducing"));
  if (ind.rows() > 0) model.inducing = CovariateMatrix::build(model.schema, ind);
  for (const auto& m : j.at("ind_mean")) model.ind_mean.push_back(vec_from_json(m));
  for (const auto& h : j.at("ind_cov")) model.ind_cov.push_back(mat_from_json(h));
  return model;
}

void save_checkpoint(const std::string& path, const LvaeModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << checkpoint_to_json(model) << "\n";
}

LvaeModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str());
}

// ---- optimizer --------------------------------------------------------------

std::vector<ParamRef> trainable_params(LvaeModel& model) {
  std::vector<ParamRef> refs;
  add_mlp_refs(model.enc.trunk, refs);
  refs.push_back({model.enc.mean_head.w.data(), model.enc.mean_head.w.size(), ParamGroup::Net});
  refs.push_back({model.enc.mean_head.b.data(), model.enc.mean_head.b.size(), ParamGroup::Net});
  refs.push_back({model.enc.logvar_head.w.data(), model.enc.logvar_head.w.size(), ParamGroup::Net});
  refs.push_back({model.enc.logvar_head.b.data(), model.enc.logvar_head.b.size(), ParamGroup::Net});
  add_mlp_refs(model.dec.net, refs);
  refs.push_back({model.dec.log_obs_var.data(), model.dec.log_obs_var.size(), ParamGroup::Net});
  for (auto& dim_terms : model.prior.terms)
    for (auto& term : dim_terms) add_term_refs(term, refs);
  if (model.inducing.rows() > 0) {
    for (int c = 0; c < static_cast<int>(model.schema.entries.size()); ++c)
      if (model.schema.entries[c].kind == CovariateKind::Continuous)
        refs.push_back({model.inducing.values.col(c).data(),
                        model.inducing.rows(), ParamGroup::Inducing});
  }
  return refs;
}

long param_count(const std::vector<ParamRef>& refs) {
  long n = 0;
  for (const auto& r : refs) n += r.size;
  return n;
}

VectorXd gather_params(const std::vector<ParamRef>& refs) {
  VectorXd flat(param_count(refs));
  long at = 0;
  for (const auto& r : refs) {
    flat.segment(at, r.size) = Eigen::Map<const VectorXd>(r.data, r.size);
    at += r.size;
  }
  return flat;
}

void scatter_params(const std::vector<ParamRef>& refs, const VectorXd& flat) {
  if (flat.size() != param_count(refs))
    throw std::invalid_argument("scatter_params: size mismatch");
  long at = 0;
  for (const auto& r : refs) {
    Eigen::Map<VectorXd>(r.data, r.size) = flat.segment(at, r.size);
    at += r.size;
  }
}

void Adam::step(const TrainConfig& cfg, const std::vector<ParamRef>& refs, const VectorXd& grad) {
  const long n = param_count(refs);
  if (grad.size() != n) throw std::invalid_argument("Adam::step: gradient size mismatch");
  if (m1.size() != n) {
    m1 = VectorXd::Zero(n);
    m2 = VectorXd::Zero(n);
    t = 0;
  }
  ++t;
  m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
  m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  long at = 0;
  for (const auto& r : refs) {
    const double lr = cfg.lr * (r.group == ParamGroup::Net ? 1.0 : cfg.gp_lr_scale);
    for (long i = 0; i < r.size; ++i) {
      const double mh = m1(at + i) / c1;
      const double vh = m2(at + i) / c2;
      r.data[i] -= lr * mh / (std::sqrt(vh) + cfg.adam_eps);
    }
    at += r.size;
  }
}

// ---- objective --------------------------------------------------------------

namespace {

// maps analytic gradients into trainable_params order
struct GradSink {
  EncoderGrad enc;
  MlpGrad dec;
  VectorXd d_log_obs_var;
  VectorXd d_prior_params;  // get_params order
  MatrixXd d_inducing;      // M x Q

  void init(LvaeModel& model) {
    zero_grad(model.enc, enc);
    zero_grad(model.dec.net, dec);
    d_log_obs_var = VectorXd::Zero(model.dec.log_obs_var.size());
    VectorXd p;
    model.prior.get_params(p);
    d_prior_params = VectorXd::Zero(p.size());
    d_inducing = MatrixXd::Zero(model.inducing.rows(), model.inducing.values.cols());
  }

  VectorXd flatten(LvaeModel& model) const {
    std::vector<const double*> heads;
    std::vector<long> sizes;
    auto push_mat = [&](const MatrixXd& m) {
      heads.push_back(m.data());
      sizes.push_back(m.size());
    };
    auto push_vec = [&](const VectorXd& v) {
      heads.push_back(v.data());
      sizes.push_back(v.size());
    };
    for (size_t l = 0; l < enc.trunk.d_w.size(); ++l) {
      push_mat(enc.trunk.d_w[l]);
      push_vec(enc.trunk.d_b[l]);
    }
    push_mat(enc.d_mean_w);
    push_vec(enc.d_mean_b);
    push_mat(enc.d_logvar_w);
    push_vec(enc.d_logvar_b);
    for (size_t l = 0; l < dec.d_w.size(); ++l) {
      push_mat(dec.d_w[l]);
      push_vec(dec.d_b[l]);
    }
    push_vec(d_log_obs_var);
    push_vec(d_prior_params);
    long total = 0;
    for (long s : sizes) total += s;
    std::vector<long> ind_cols;
    if (model.inducing.rows() > 0)
      for (int c = 0; c < static_cast<int>(model.schema.entries.size()); ++c)
        if (model.schema.entries[c].kind == CovariateKind::Continuous) {
          ind_cols.push_back(c);
          total += model.inducing.rows();
        }
    VectorXd flat(total);
    long at = 0;
    for (size_t k = 0; k < heads.size(); ++k) {
      flat.segment(at, sizes[k]) = Eigen::Map<const VectorXd>(heads[k], sizes[k]);
      at += sizes[k];
    }
    for (long c : ind_cols) {
      flat.segment(at, d_inducing.rows()) = d_inducing.col(c);
      at += d_inducing.rows();
    }
    return flat;
  }
};

}  // namespace

ElboParts elbo_batch(LvaeModel& model, const TrainConfig& cfg, const CovariateMatrix& x_batch,
                     const MatrixXd& y_batch, const MatrixXd& eps, int total_instances,
                     long total_rows, VectorXd* grad_out, std::vector<VectorXd>* d_m,
                     std::vector<MatrixXd>* d_h) {
  check_bound_kind(cfg);
  const int n = x_batch.rows();
  const int latent = model.latent_dim;
  if (y_batch.rows() != n) throw std::invalid_argument("elbo_batch: x/y row mismatch");
  if (eps.rows() != n || eps.cols() != latent)
    throw std::invalid_argument("elbo_batch: eps shape mismatch");
  if (cfg.bound != BoundKind::D4 && x_batch.instances() != total_instances)
    throw std::invalid_argument("elbo_batch: this bound runs full batch");
  const double scale =
      static_cast<double>(total_instances) / static_cast<double>(x_batch.instances());

  const MatrixXd y_filled = fill_missing(y_batch);
  MatrixXd mean, var;
  EncoderCache enc_cache;
  encoder_forward(model.enc, y_filled, mean, var, grad_out ? &enc_cache : nullptr);

  const MatrixXd z = sample_latent(mean, var, eps, cfg.sigma_floor);
  MlpCache dec_cache;
  const MatrixXd y_mean = mlp_forward(model.dec.net, z, grad_out ? &dec_cache : nullptr);

  MatrixXd d_ymean;
  VectorXd d_lov;
  const double recon = recon_loglik(y_batch, y_mean, model.dec.log_obs_var,
                                    grad_out ? &d_ymean : nullptr, grad_out ? &d_lov : nullptr);

  GradSink sink;
  if (grad_out) sink.init(model);

  // KL part, summed over latent dimensions
  double kl = 0.0;
  MatrixXd d_mean_kl, d_var_kl;
  if (grad_out) {
    d_mean_kl = MatrixXd::Zero(n, latent);
    d_var_kl = MatrixXd::Zero(n, latent);
  }
  if (d_m) d_m->assign(latent, VectorXd());
  if (d_h) d_h->assign(latent, MatrixXd());
  const int ppd = model.prior.params_per_dim();
  for (int l = 0; l < latent; ++l) {
    const VectorXd mu_l = mean.col(l);
    const VectorXd w_l = var.col(l);
    BoundGrad bg;
    BoundGrad* bgp = grad_out ? &bg : nullptr;
    double kl_l = 0.0;
    switch (cfg.bound) {
      case BoundKind::Exact:
        kl_l = kl_exact(mu_l, w_l, model.prior, l, x_batch, bgp);
        break;
      case BoundKind::D2:
        kl_l = bound_D2(mu_l, w_l, model.prior, l, x_batch, model.inducing, bgp);
        break;
      case BoundKind::D4: {
        VectorXd* dml = d_m ? &(*d_m)[l] : nullptr;
        MatrixXd* dhl = d_h ? &(*d_h)[l] : nullptr;
        kl_l = svi_D4_minibatch(mu_l, w_l, model.prior, l, x_batch, model.inducing,
                                model.ind_mean[l], model.ind_cov[l], total_instances, total_rows,
                                bgp, dml, dhl);
        break;
      }
      default:
        throw std::logic_error("unreachable");
    }
    kl += kl_l;
    if (grad_out) {
      d_mean_kl.col(l) = bg.d_mu;
      d_var_kl.col(l) = bg.d_w;
      sink.d_prior_params.segment(static_cast<long>(l) * ppd, ppd) += bg.d_params;
      if (bg.d_inducing.size() > 0) sink.d_inducing += bg.d_inducing;
    }
  }

  ElboParts parts;
  parts.recon = scale * recon;
  parts.kl = kl;
  parts.loss = -parts.recon + parts.kl;

  if (grad_out) {
    // decoder and encoder backward under the loss sign
    const MatrixXd d_z = mlp_backward(model.dec.net, dec_cache, (-scale) * d_ymean, sink.dec);
    sink.d_log_obs_var = (-scale) * d_lov;
    const MatrixXd d_mean_total = d_z + d_mean_kl;
    const MatrixXd d_var_total =
        d_z.cwiseProduct(sample_latent_dvar(var, eps, cfg.sigma_floor)) + d_var_kl;
    encoder_backward(model.enc, enc_cache, d_mean_total, d_var_total, sink.enc);
    *grad_out = sink.flatten(model);
  }
  return parts;
}

ElboParts vae_batch(LvaeModel& model, const TrainConfig& cfg, const MatrixXd& y_batch,
                    const MatrixXd& eps, double scale, VectorXd* grad_out) {
  const int n = static_cast<int>(y_batch.rows());
  const int latent = model.latent_dim;
  if (eps.rows() != n || eps.cols() != latent)
    throw std::invalid_argument("vae_batch: eps shape mismatch");

  const MatrixXd y_filled = fill_missing(y_batch);
  MatrixXd mean, var;
  EncoderCache enc_cache;
  encoder_forward(model.enc, y_filled, mean, var, grad_out ? &enc_cache : nullptr);
  const MatrixXd z = sample_latent(mean, var, eps, cfg.sigma_floor);
  MlpCache dec_cache;
  const MatrixXd y_mean = mlp_forward(model.dec.net, z, grad_out ? &dec_cache : nullptr);

  MatrixXd d_ymean;
  VectorXd d_lov;
  const double recon = recon_loglik(y_batch, y_mean, model.dec.log_obs_var,
                                    grad_out ? &d_ymean : nullptr, grad_out ? &d_lov : nullptr);

  // KL(N(mean, var) || N(0, I)) summed over rows and dimensions
  const double kl =
      0.5 * (mean.array().square() + var.array() - 1.0 - var.array().log()).sum();

  ElboParts parts;
  parts.recon = scale * recon;
  parts.kl = scale * kl;
  parts.loss = -parts.recon + parts.kl;

  if (grad_out) {
    GradSink sink;
    sink.init(model);
    const MatrixXd d_z = mlp_backward(model.dec.net, dec_cache, (-scale) * d_ymean, sink.dec);
    sink.d_log_obs_var = (-scale) * d_lov;
    const MatrixXd d_mean_total = d_z + scale * mean;
    const MatrixXd d_var_total =
        d_z.cwiseProduct(sample_latent_dvar(var, eps, cfg.sigma_floor)) +
        (0.5 * scale) * (1.0 - var.array().inverse()).matrix();
    encoder_backward(model.enc, enc_cache, d_mean_total, d_var_total, sink.enc);
    *grad_out = sink.flatten(model);
  }
  return parts;
}

// ---- training loops ---------------------------------------------------------

namespace {

struct BestTracker {
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  int since = 0;
  bool update(double val, int epoch) {
    if (val < best) {
      best = val;
      best_epoch = epoch;
      since = 0;
      return true;
    }
    ++since;
    return false;
  }
};

}  // namespace

TrainResult pretrain(LvaeModel model, const TrainConfig& cfg, const MatrixXd& y_train,
                     const MatrixXd& y_val, const LogSink& sink) {
  const int n = static_cast<int>(y_train.rows());
  const int latent = model.latent_dim;
  const int batch_rows = std::min(n, 128);

  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 11);
  Rng val_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 12);
  // one frozen validation draw keeps snapshot selection free of sampling noise
  const MatrixXd val_eps = val_rng.normal_mat(static_cast<int>(y_val.rows()), latent);

  auto refs = trainable_params(model);
  Adam adam;
  TrainResult result;
  BestTracker tracker;

  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    auto order = rng.permutation(n);
    double loss_sum = 0.0, recon_sum = 0.0, kl_sum = 0.0;
    int batches = 0;
    for (int at = 0; at < n; at += batch_rows) {
      const int bsz = std::min(batch_rows, n - at);
      MatrixXd yb(bsz, y_train.cols());
      for (int i = 0; i < bsz; ++i) yb.row(i) = y_train.row(order[at + i]);
      const MatrixXd eps = rng.normal_mat(bsz, latent);
      VectorXd grad;
      const double scale = static_cast<double>(n) / bsz;
      const ElboParts parts = vae_batch(model, cfg, yb, eps, scale, &grad);
      adam.step(cfg, refs, grad);
      loss_sum += parts.loss;
      recon_sum += parts.recon;
      kl_sum += parts.kl;
      ++batches;
    }

    const ElboParts val = vae_batch(model, cfg, y_val, val_eps, 1.0, nullptr);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = "pretrain";
    rec.train_loss = loss_sum / batches;
    rec.recon = recon_sum / batches;
    rec.kl = kl_sum / batches;
    rec.val_loss = val.loss;
    rec.is_best = tracker.update(val.loss, epoch);
    if (rec.is_best) result.best = model;
    result.log.push_back(rec);
    if (sink) sink(rec);
    if (cfg.early_stop_patience > 0 && tracker.since >= cfg.early_stop_patience) break;
  }
  if (tracker.best_epoch < 0) result.best = model;
  result.last = std::move(model);
  result.best_val_loss = tracker.best;
  result.best_epoch = tracker.best_epoch;
  return result;
}

ElboParts evaluate(LvaeModel& model, const TrainConfig& cfg, const CovariateMatrix& x,
                   const MatrixXd& y, const MatrixXd& eps) {
  check_bound_kind(cfg);
  return elbo_batch(model, cfg, x, y, eps, x.instances(), x.rows(), nullptr);
}

TrainResult train(LvaeModel model, const TrainConfig& cfg, const CovariateMatrix& x_train,
                  const MatrixXd& y_train, const CovariateMatrix& x_val, const MatrixXd& y_val,
                  const LogSink& sink) {
  check_bound_kind(cfg);
  if (needs_inducing(cfg) && model.inducing.rows() == 0)
    throw std::invalid_argument("train: model has no inducing rows for a sparse bound");
  if (cfg.bound == BoundKind::D4 &&
      (model.ind_mean.size() != static_cast<size_t>(model.latent_dim) ||
       model.ind_cov.size() != static_cast<size_t>(model.latent_dim)))
    throw std::invalid_argument("train: model has no inducing posteriors");

  const int p_total = x_train.instances();
  const int latent = model.latent_dim;

  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 21);
  Rng val_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 22);
  const MatrixXd val_eps = val_rng.normal_mat(x_val.rows(), latent);

  auto refs = trainable_params(model);
  Adam adam;
  TrainResult result;
  BestTracker tracker;

  const int batch_p = cfg.bound == BoundKind::D4 ? std::min(cfg.batch_instances, p_total) : p_total;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = rng.permutation(p_total);
    double loss_sum = 0.0, recon_sum = 0.0, kl_sum = 0.0;
    int batches = 0;
    for (int at = 0; at < p_total; at += batch_p) {
      const int bp = std::min(batch_p, p_total - at);
      std::vector<int> blocks(order.begin() + at, order.begin() + at + bp);
      std::sort(blocks.begin(), blocks.end());
      const CovariateMatrix xb = x_train.select_instances(blocks);
      MatrixXd yb(xb.rows(), y_train.cols());
      {
        int row_at = 0;
        for (int b : blocks) {
          const auto& blk = x_train.blocks[b];
          yb.middleRows(row_at, blk.size) = y_train.middleRows(blk.start, blk.size);
          row_at += blk.size;
        }
      }
      const MatrixXd eps = rng.normal_mat(xb.rows(), latent);
      VectorXd grad;
      std::vector<VectorXd> d_m;
      std::vector<MatrixXd> d_h;
      const bool svi = cfg.bound == BoundKind::D4;
      const ElboParts parts =
          elbo_batch(model, cfg, xb, yb, eps, p_total, x_train.rows(), &grad,
                     svi ? &d_m : nullptr, svi ? &d_h : nullptr);
      adam.step(cfg, refs, grad);
      if (svi) {
        for (int l = 0; l < latent; ++l)
          natural_gradient_step(model.ind_mean[l], model.ind_cov[l], d_m[l], d_h[l],
                                cfg.nat_grad_step);
      }
      loss_sum += parts.loss;
      recon_sum += parts.recon;
      kl_sum += parts.kl;
      ++batches;
    }

    const ElboParts val = evaluate(model, cfg, x_val, y_val, val_eps);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = "train";
    rec.train_loss = loss_sum / batches;
    rec.recon = recon_sum / batches;
    rec.kl = kl_sum / batches;
    rec.val_loss = val.loss;
    rec.is_best = tracker.update(val.loss, epoch);
    if (rec.is_best) result.best = model;
    result.log.push_back(rec);
    if (sink) sink(rec);
    if (cfg.early_stop_patience > 0 && tracker.since >= cfg.early_stop_patience) break;
  }
  if (tracker.best_epoch < 0) result.best = model;
  result.last = std::move(model);
  result.best_val_loss = tracker.best;
  result.best_epoch = tracker.best_epoch;
  return result;
}

// ---- model application ------------------------------------------------------

void encode_stats(const LvaeModel& model, const MatrixXd& y, MatrixXd& mean, MatrixXd& var) {
  encoder_forward(model.enc, fill_missing(y), mean, var);
}

void latent_predictive(const LvaeModel& model, const TrainConfig& cfg, const CovariateMatrix& x,
                       const MatrixXd& y, const CovariateMatrix& x_query, MatrixXd& z_mean,
                       MatrixXd& z_var) {
  MatrixXd mean, var;
  encode_stats(model, y, mean, var);
  const int latent = model.latent_dim;
  z_mean.resize(x_query.rows(), latent);
  z_var.resize(x_query.rows(), latent);
  const bool dense = x.rows() <= cfg.dense_cap || model.inducing.rows() == 0;
  for (int l = 0; l < latent; ++l) {
    const LatentPredictive pred =
        dense ? predict_latent_exact(model.prior, l, x, mean.col(l), var.col(l), x_query)
              : predict_latent_sparse(model.prior, l, x, mean.col(l), var.col(l), model.inducing,
                                      x_query);
    z_mean.col(l) = pred.mean;
    z_var.col(l) = pred.var;
  }
}

MatrixXd impute(const LvaeModel& model, const TrainConfig& cfg, const CovariateMatrix& x,
                const MatrixXd& y) {
  MatrixXd z_mean, z_var;
  latent_predictive(model, cfg, x, y, x, z_mean, z_var);
  const MatrixXd decoded = mlp_forward(model.dec.net, z_mean);
  MatrixXd out = y;
  for (long i = 0; i < out.rows(); ++i)
    for (long j = 0; j < out.cols(); ++j)
      if (std::isnan(out(i, j))) out(i, j) = decoded(i, j);
  return out;
}

MatrixXd impute_vae(const LvaeModel& model, const MatrixXd& y) {
  MatrixXd mean, var;
  encode_stats(model, y, mean, var);
  const MatrixXd decoded = mlp_forward(model.dec.net, mean);
  MatrixXd out = y;
  for (long i = 0; i < out.rows(); ++i)
    for (long j = 0; j < out.cols(); ++j)
      if (std::isnan(out(i, j))) out(i, j) = decoded(i, j);
  return out;
}

}  // namespace lvae
