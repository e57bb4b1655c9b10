#include "lvae/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lvae {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(std::stoi(item));
  }
  return out;
}

std::string render_int_list(const std::vector<int>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

BoundKind parse_bound(const std::string& s) {
  if (s == "exact") return BoundKind::Exact;
  if (s == "structured") return BoundKind::D2;
  if (s == "stochastic") return BoundKind::D4;
  throw std::invalid_argument("config: bound must be exact|structured|stochastic, got " + s);
}

const char* render_bound(BoundKind k) {
  switch (k) {
    case BoundKind::Exact: return "exact";
    case BoundKind::D2: return "structured";
    case BoundKind::D4: return "stochastic";
    default: throw std::invalid_argument("config: unrenderable bound kind");
  }
}

}  // namespace

TrainConfig parse_train_config(const std::map<std::string, std::string>& kv) {
  TrainConfig cfg;
  for (const auto& [key, raw] : kv) {
    const std::string v = trim(raw);
    try {
      if (key == "prior") cfg.prior = v;
      else if (key == "latent_dim") cfg.latent_dim = std::stoi(v);
      else if (key == "enc_hidden") cfg.enc_hidden = parse_int_list(v);
      else if (key == "dec_hidden") cfg.dec_hidden = parse_int_list(v);
      else if (key == "bound") cfg.bound = parse_bound(v);
      else if (key == "inducing_count") cfg.inducing_count = std::stoi(v);
      else if (key == "epochs") cfg.epochs = std::stoi(v);
      else if (key == "pretrain_epochs") cfg.pretrain_epochs = std::stoi(v);
      else if (key == "batch_instances") cfg.batch_instances = std::stoi(v);
      else if (key == "lr") cfg.lr = std::stod(v);
      else if (key == "beta1") cfg.beta1 = std::stod(v);
      else if (key == "beta2") cfg.beta2 = std::stod(v);
      else if (key == "adam_eps") cfg.adam_eps = std::stod(v);
      else if (key == "gp_lr_scale") cfg.gp_lr_scale = std::stod(v);
      else if (key == "nat_grad_step") cfg.nat_grad_step = std::stod(v);
      else if (key == "early_stop_patience") cfg.early_stop_patience = std::stoi(v);
      else if (key == "dense_cap") cfg.dense_cap = std::stoi(v);
      else if (key == "mc_samples") cfg.mc_samples = std::stoi(v);
      else if (key == "sigma_floor") cfg.sigma_floor = std::stod(v);
      else if (key == "seed") cfg.seed = std::stoull(v);
      else throw std::invalid_argument("config: unknown key " + key);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for " + key + ": " + v);
    }
  }
  if (cfg.latent_dim < 1) throw std::invalid_argument("config: latent_dim must be >= 1");
  if (cfg.lr <= 0.0) throw std::invalid_argument("config: lr must be positive");
  if (cfg.batch_instances < 1) throw std::invalid_argument("config: batch_instances must be >= 1");
  if (cfg.inducing_count < 1) throw std::invalid_argument("config: inducing_count must be >= 1");
  return cfg;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw std::runtime_error("config line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key))
      throw std::runtime_error("config line " + std::to_string(lineno) + ": duplicate key " + key);
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string render_train_config(const TrainConfig& cfg) {
  std::ostringstream out;
  out << "prior = " << cfg.prior << "\n";
  out << "latent_dim = " << cfg.latent_dim << "\n";
  out << "enc_hidden = " << render_int_list(cfg.enc_hidden) << "\n";
  out << "dec_hidden = " << render_int_list(cfg.dec_hidden) << "\n";
  out << "bound = " << render_bound(cfg.bound) << "\n";
  out << "inducing_count = " << cfg.inducing_count << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "pretrain_epochs = " << cfg.pretrain_epochs << "\n";
  out << "batch_instances = " << cfg.batch_instances << "\n";
  out << "lr = " << format_double(cfg.lr) << "\n";
  out << "beta1 = " << format_double(cfg.beta1) << "\n";
  out << "beta2 = " << format_double(cfg.beta2) << "\n";
  out << "adam_eps = " << format_double(cfg.adam_eps) << "\n";
  out << "gp_lr_scale = " << format_double(cfg.gp_lr_scale) << "\n";
  out << "nat_grad_step = " << format_double(cfg.nat_grad_step) << "\n";
  out << "early_stop_patience = " << cfg.early_stop_patience << "\n";
  out << "dense_cap = " << cfg.dense_cap << "\n";
  out << "mc_samples = " << cfg.mc_samples << "\n";
  out << "sigma_floor = " << format_double(cfg.sigma_floor) << "\n";
  out << "seed = " << cfg.seed << "\n";
  return out.str();
}

}  // namespace lvae
