#include "lvae/kernels.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace lvae {

static constexpr long kGramEntryCap = 100'000'000;  // guard against runaway allocations

int KernelTerm::param_count() const {
  if (kind == TermKind::SE) return 2;
  if (kind == TermKind::Product) {
    int n = 1;
    for (const auto& f : factors)
      if (f.kind == TermKind::SE) ++n;
    return n;
  }
  return 1;  // CAT/BIN: scale only
}

void KernelTerm::get_params(double* out) const {
  int k = 0;
  out[k++] = log_scale;
  if (kind == TermKind::SE) out[k++] = log_length;
  if (kind == TermKind::Product)
    for (const auto& f : factors)
      if (f.kind == TermKind::SE) out[k++] = f.log_length;
}

void KernelTerm::set_params(const double* in) {
  int k = 0;
  log_scale = in[k++];
  if (kind == TermKind::SE) log_length = in[k++];
  if (kind == TermKind::Product)
    for (auto& f : factors)
      if (f.kind == TermKind::SE) f.log_length = in[k++];
}

bool KernelTerm::reads_column(int c) const {
  if (kind == TermKind::Product) {
    for (const auto& f : factors)
      if (f.reads_column(c)) return true;
    return false;
  }
  return column == c;
}

bool KernelTerm::has_se() const {
  if (kind == TermKind::SE) return true;
  if (kind == TermKind::Product)
    for (const auto& f : factors)
      if (f.kind == TermKind::SE) return true;
  return false;
}

int AdditivePrior::params_per_dim() const {
  int n = 0;
  for (const auto& t : terms[0]) n += t.param_count();
  return n;
}

void AdditivePrior::get_params(Eigen::VectorXd& out) const {
  out.resize(latent_dim * params_per_dim());
  int k = 0;
  for (int l = 0; l < latent_dim; ++l)
    for (const auto& t : terms[l]) {
      t.get_params(out.data() + k);
      k += t.param_count();
    }
}

void AdditivePrior::set_params(const Eigen::VectorXd& in) {
  if (in.size() != latent_dim * params_per_dim())
    throw std::invalid_argument("prior set_params: wrong length");
  int k = 0;
  for (int l = 0; l < latent_dim; ++l)
    for (auto& t : terms[l]) {
      t.set_params(in.data() + k);
      k += t.param_count();
    }
}

void AdditivePrior::validate() const {
  schema.validate();
  if (latent_dim <= 0) throw std::invalid_argument("prior: latent_dim must be positive");
  if (static_cast<int>(terms.size()) != latent_dim)
    throw std::invalid_argument("prior: term table does not match latent_dim");
  for (const auto& per_dim : terms)
    if (per_dim.size() != terms[0].size())
      throw std::invalid_argument("prior: term structure must match across latent dimensions");
  if (noise_var <= 0) throw std::invalid_argument("prior: noise_var must be positive");
  if (instance_term >= term_count()) throw std::invalid_argument("prior: instance term index out of range");
}

// ---- descriptor parsing ----------------------------------------------------

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

TermKind kind_from_name(const std::string& name, const std::string& descr) {
  if (name == "se") return TermKind::SE;
  if (name == "ca") return TermKind::CAT;
  if (name == "bi") return TermKind::BIN;
  throw std::invalid_argument("prior descriptor: unknown kernel '" + name + "' in '" + descr + "'");
}

void check_factor_column(TermKind kind, const CovariateSchema& schema, int col, const std::string& descr) {
  const auto ckind = schema.entries[col].kind;
  const auto& name = schema.entries[col].name;
  switch (kind) {
    case TermKind::SE:
      if (ckind != CovariateKind::Continuous)
        throw std::invalid_argument("prior descriptor: se needs a continuous covariate, got '" + name + "' in '" + descr + "'");
      break;
    case TermKind::CAT:
      if (ckind == CovariateKind::Continuous)
        throw std::invalid_argument("prior descriptor: ca needs a categorical covariate, got '" + name + "' in '" + descr + "'");
      break;
    case TermKind::BIN:
      if (ckind != CovariateKind::Binary)
        throw std::invalid_argument("prior descriptor: bi needs a binary covariate, got '" + name + "' in '" + descr + "'");
      break;
    default:
      break;
  }
}

KernelTerm parse_term(const std::string& token, const CovariateSchema& schema) {
  size_t open = token.find('(');
  if (open == std::string::npos || token.back() != ')')
    throw std::invalid_argument("prior descriptor: malformed term '" + token + "'");
  const std::string head = trim(token.substr(0, open));
  const std::string args_str = token.substr(open + 1, token.size() - open - 2);

  std::vector<std::string> kinds;
  for (auto& piece : split(head, '_')) {
    piece = trim(piece);
    if (piece == "x") continue;
    kinds.push_back(piece);
  }
  {  // head must be k1 or k1_x_k2[_x_k3...]
    std::string expect;
    for (size_t i = 0; i < kinds.size(); ++i) expect += (i ? "_x_" : "") + kinds[i];
    if (expect != head)
      throw std::invalid_argument("prior descriptor: malformed term '" + token + "'");
  }

  std::vector<std::string> args;
  for (auto& a : split(args_str, ',')) {
    a = trim(a);
    if (a.empty()) throw std::invalid_argument("prior descriptor: empty argument in '" + token + "'");
    args.push_back(a);
  }
  if (kinds.size() != args.size())
    throw std::invalid_argument("prior descriptor: '" + token + "' takes " + std::to_string(kinds.size()) +
                                " covariate(s), got " + std::to_string(args.size()));

  auto column_of = [&](const std::string& name) {
    int c = schema.index_of(name);
    if (c < 0) throw std::invalid_argument("prior descriptor: unknown covariate '" + name + "' in '" + token + "'");
    return c;
  };

  if (kinds.size() == 1) {
    KernelTerm t;
    t.kind = kind_from_name(kinds[0], token);
    t.column = column_of(args[0]);
    check_factor_column(t.kind, schema, t.column, token);
    return t;
  }

  KernelTerm t;
  t.kind = TermKind::Product;
  int se_factors = 0;
  for (size_t i = 0; i < kinds.size(); ++i) {
    KernelTerm f;
    f.kind = kind_from_name(kinds[i], token);
    f.column = column_of(args[i]);
    check_factor_column(f.kind, schema, f.column, token);
    if (f.kind == TermKind::SE) ++se_factors;
    t.factors.push_back(std::move(f));
  }
  if (se_factors > 1)
    throw std::invalid_argument("prior descriptor: at most one se factor per product, got '" + token + "'");
  return t;
}

}  // namespace

AdditivePrior parse_prior(const std::string& descriptor, const CovariateSchema& schema, int latent_dim) {
  schema.validate();
  if (latent_dim <= 0) throw std::invalid_argument("parse_prior: latent_dim must be positive");

  std::vector<KernelTerm> base;
  for (auto& tok : split(descriptor, '+')) {
    tok = trim(tok);
    if (tok.empty()) throw std::invalid_argument("prior descriptor: empty term in '" + descriptor + "'");
    base.push_back(parse_term(tok, schema));
  }
  if (base.empty()) throw std::invalid_argument("prior descriptor: no terms");

  AdditivePrior prior;
  prior.schema = schema;
  prior.latent_dim = latent_dim;
  const int idc = schema.id_index;
  for (int r = 0; r < static_cast<int>(base.size()); ++r) {
    if (!base[r].reads_column(idc)) continue;
    if (prior.instance_term >= 0)
      throw std::invalid_argument("prior descriptor: more than one term reads the id covariate");
    const auto& t = base[r];
    bool ca_on_id = false;
    int se_factors = 0;
    if (t.kind == TermKind::Product)
      for (const auto& f : t.factors) {
        if (f.kind == TermKind::CAT && f.column == idc) ca_on_id = true;
        if (f.kind == TermKind::SE) ++se_factors;
      }
    if (!ca_on_id || se_factors != 1)
      throw std::invalid_argument("prior descriptor: the id covariate may appear only inside a ca(id) x se(...) product");
    prior.instance_term = r;
  }
  prior.terms.assign(latent_dim, base);
  prior.validate();
  return prior;
}

static std::string describe_term(const KernelTerm& t, const CovariateSchema& schema) {
  auto leaf_name = [](TermKind k) {
    switch (k) {
      case TermKind::SE: return "se";
      case TermKind::CAT: return "ca";
      case TermKind::BIN: return "bi";
      default: throw std::logic_error("describe_term: nested product");
    }
  };
  std::ostringstream head, args;
  if (t.kind == TermKind::Product) {
    for (size_t i = 0; i < t.factors.size(); ++i) {
      head << (i ? "_x_" : "") << leaf_name(t.factors[i].kind);
      args << (i ? "," : "") << schema.entries[t.factors[i].column].name;
    }
  } else {
    head << leaf_name(t.kind);
    args << schema.entries[t.column].name;
  }
  return head.str() + "(" + args.str() + ")";
}

std::string describe_prior(const AdditivePrior& prior) {
  std::ostringstream out;
  for (int r = 0; r < prior.term_count(); ++r)
    out << (r ? " + " : "") << describe_term(prior.terms[0][r], prior.schema);
  return out.str();
}

void initialize_lengthscales(AdditivePrior& prior, const CovariateMatrix& x) {
  auto half_range = [&](int col) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    int seen = 0;
    for (int i = 0; i < x.rows(); ++i) {
      double v = x.values(i, col);
      if (is_missing(v)) continue;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      ++seen;
    }
    if (seen < 2 || hi <= lo) return 1.0;
    return (hi - lo) / 2.0;
  };
  for (auto& per_dim : prior.terms)
    for (auto& t : per_dim) {
      t.log_scale = 0.0;
      if (t.kind == TermKind::SE) t.log_length = std::log(half_range(t.column));
      if (t.kind == TermKind::Product)
        for (auto& f : t.factors)
          if (f.kind == TermKind::SE) f.log_length = std::log(half_range(f.column));
    }
}

// ---- evaluation ------------------------------------------------------------

namespace {

// unit-scale factor value; 0 on missing input
inline double factor_value(const KernelTerm& f, const Eigen::RowVectorXd& xa, const Eigen::RowVectorXd& xb) {
  const double a = xa(f.column), b = xb(f.column);
  if (is_missing(a) || is_missing(b)) return 0.0;
  switch (f.kind) {
    case TermKind::SE: {
      const double d = a - b;
      const double l2 = std::exp(2.0 * f.log_length);
      return std::exp(-0.5 * d * d / l2);
    }
    case TermKind::CAT:
      return a == b ? 1.0 : 0.0;
    case TermKind::BIN:
      return (a == 1.0 && b == 1.0) ? 1.0 : 0.0;
    default:
      throw std::logic_error("factor_value: nested product");
  }
}

}  // namespace

double eval_term(const KernelTerm& term, const Eigen::RowVectorXd& xa, const Eigen::RowVectorXd& xb) {
  const double s2 = std::exp(term.log_scale);
  if (term.kind == TermKind::Product) {
    double v = 1.0;
    for (const auto& f : term.factors) {
      v *= factor_value(f, xa, xb);
      if (v == 0.0) return 0.0;
    }
    return s2 * v;
  }
  const double v = factor_value(term, xa, xb);
  return v == 0.0 ? 0.0 : s2 * v;
}

Eigen::MatrixXd gram(const KernelTerm& term, const CovariateMatrix& a, const CovariateMatrix& b) {
  const long entries = static_cast<long>(a.rows()) * b.rows();
  if (entries > kGramEntryCap) throw std::runtime_error("gram: requested matrix too large");
  Eigen::MatrixXd k(a.rows(), b.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < b.rows(); ++j) k(i, j) = eval_term(term, a.values.row(i), b.values.row(j));
  return k;
}

Eigen::MatrixXd gram(const KernelTerm& term, const CovariateMatrix& a) {
  const long entries = static_cast<long>(a.rows()) * a.rows();
  if (entries > kGramEntryCap) throw std::runtime_error("gram: requested matrix too large");
  Eigen::MatrixXd k(a.rows(), a.rows());
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j <= i; ++j) {
      k(i, j) = eval_term(term, a.values.row(i), a.values.row(j));
      k(j, i) = k(i, j);
    }
  }
  return k;
}

Eigen::MatrixXd assemble_sigma(const AdditivePrior& prior, int l, const CovariateMatrix& x) {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(x.rows(), x.rows());
  for (const auto& t : prior.terms.at(l)) s += gram(t, x);
  s.diagonal().array() += prior.noise_var;
  return s;
}

SplitStructure split_structure(const AdditivePrior& prior, int l, const CovariateMatrix& x) {
  SplitStructure out;
  out.k_a = Eigen::MatrixXd::Zero(x.rows(), x.rows());
  for (int r = 0; r < prior.term_count(); ++r)
    if (r != prior.instance_term) out.k_a += gram(prior.terms.at(l)[r], x);
  for (const auto& blk : x.blocks) {
    Eigen::MatrixXd sh = Eigen::MatrixXd::Zero(blk.size, blk.size);
    if (prior.instance_term >= 0) {
      CovariateMatrix sub = x.select_rows([&] {
        std::vector<int> idx(blk.size);
        for (int i = 0; i < blk.size; ++i) idx[i] = blk.start + i;
        return idx;
      }());
      sh = gram(prior.terms.at(l)[prior.instance_term], sub);
    }
    sh.diagonal().array() += prior.noise_var;
    out.sigma_hat.push_back(std::move(sh));
  }
  return out;
}

BlockStructure block_structure(const AdditivePrior& prior, int l, const CovariateMatrix& x) {
  BlockStructure out;
  for (const auto& blk : x.blocks) {
    std::vector<int> idx(blk.size);
    for (int i = 0; i < blk.size; ++i) idx[i] = blk.start + i;
    CovariateMatrix sub = x.select_rows(idx);
    Eigen::MatrixXd sh = Eigen::MatrixXd::Zero(blk.size, blk.size);
    if (prior.instance_term >= 0) sh = gram(prior.terms.at(l)[prior.instance_term], sub);
    sh.diagonal().array() += prior.noise_var;
    out.sigma_hat.push_back(std::move(sh));

    Eigen::MatrixXd ka = Eigen::MatrixXd::Zero(blk.size, blk.size);
    for (int r = 0; r < prior.term_count(); ++r)
      if (r != prior.instance_term) ka += gram(prior.terms.at(l)[r], sub);
    out.k_a_diag.push_back(std::move(ka));
  }
  return out;
}

Eigen::MatrixXd gram_a(const AdditivePrior& prior, int l, const CovariateMatrix& a, const CovariateMatrix& b) {
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(a.rows(), b.rows());
  for (int r = 0; r < prior.term_count(); ++r)
    if (r != prior.instance_term) k += gram(prior.terms.at(l)[r], a, b);
  return k;
}

Eigen::MatrixXd gram_r(const AdditivePrior& prior, int l, const CovariateMatrix& a, const CovariateMatrix& b) {
  if (prior.instance_term < 0) return Eigen::MatrixXd::Zero(a.rows(), b.rows());
  return gram(prior.terms.at(l)[prior.instance_term], a, b);
}

// ---- gradients -------------------------------------------------------------

namespace {

struct FactorSlot {
  const KernelTerm* f;
  int param_index;  // slot in the term's param vector for log_length, -1 if none
};

// flatten a term into factor list + param slots; top-level scale is slot 0
std::vector<FactorSlot> factor_slots(const KernelTerm& term) {
  std::vector<FactorSlot> out;
  int next = 1;
  if (term.kind == TermKind::Product) {
    for (const auto& f : term.factors) out.push_back({&f, f.kind == TermKind::SE ? next++ : -1});
  } else {
    out.push_back({&term, term.kind == TermKind::SE ? next++ : -1});
  }
  return out;
}

}  // namespace

void gram_backward(const KernelTerm& term, const CovariateMatrix& a, const CovariateMatrix& b,
                   const Eigen::MatrixXd& bar, TermGrad& grad, Eigen::MatrixXd* d_a_values,
                   Eigen::MatrixXd* d_b_values) {
  if (bar.rows() != a.rows() || bar.cols() != b.rows())
    throw std::invalid_argument("gram_backward: weight shape mismatch");
  if (grad.d.size() != term.param_count()) grad.d = Eigen::VectorXd::Zero(term.param_count());
  const auto slots = factor_slots(term);

  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < b.rows(); ++j) {
      const double w = bar(i, j);
      if (w == 0.0) continue;
      const double k = eval_term(term, a.values.row(i), b.values.row(j));
      if (k == 0.0) continue;
      grad.d(0) += w * k;  // d/d log_scale
      for (const auto& s : slots) {
        if (s.f->kind != TermKind::SE) continue;
        const double xa = a.values(i, s.f->column), xb = b.values(j, s.f->column);
        const double d = xa - xb;
        const double l2 = std::exp(2.0 * s.f->log_length);
        if (s.param_index >= 0) grad.d(s.param_index) += w * k * d * d / l2;
        const double dka = -k * d / l2;  // d k / d xa
        if (d_a_values != nullptr) (*d_a_values)(i, s.f->column) += w * dka;
        if (d_b_values != nullptr) (*d_b_values)(j, s.f->column) -= w * dka;
      }
    }
  }
}

void PriorGrad::ensure(const AdditivePrior& prior, int inducing_rows, int cols) {
  if (d_terms.empty()) d_terms.assign(prior.latent_dim, Eigen::VectorXd());
  for (auto& v : d_terms)
    if (v.size() == 0) v = Eigen::VectorXd::Zero(prior.params_per_dim());
  if (inducing_rows > 0 && d_inducing.size() == 0)
    d_inducing = Eigen::MatrixXd::Zero(inducing_rows, cols);
}

Eigen::VectorXd PriorGrad::flat(const AdditivePrior& prior) const {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(prior.latent_dim * prior.params_per_dim());
  for (int l = 0; l < prior.latent_dim; ++l)
    if (l < static_cast<int>(d_terms.size()) && d_terms[l].size() > 0)
      out.segment(l * prior.params_per_dim(), prior.params_per_dim()) = d_terms[l];
  return out;
}

}  // namespace lvae
