#include "lvae/cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "lvae/classifier.hpp"
#include "lvae/config.hpp"
#include "lvae/datagen.hpp"
#include "lvae/metrics.hpp"
#include "lvae/trainer.hpp"
#include "lvae/verify.hpp"

namespace lvae {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---- generate config --------------------------------------------------------

GenConfig parse_gen_config(const std::map<std::string, std::string>& kv) {
  GenConfig cfg;
  for (const auto& [key, v] : kv) {
    try {
      if (key == "instances") cfg.instances = std::stoi(v);
      else if (key == "val_instances") cfg.val_instances = std::stoi(v);
      else if (key == "predict_instances") cfg.predict_instances = std::stoi(v);
      else if (key == "timepoints") cfg.timepoints = std::stoi(v);
      else if (key == "predict_observed") cfg.predict_observed = std::stoi(v);
      else if (key == "obs_dim") cfg.obs_dim = std::stoi(v);
      else if (key == "latent_dim") cfg.latent_dim = std::stoi(v);
      else if (key == "disease_frac") cfg.disease_frac = std::stod(v);
      else if (key == "missing_frac") cfg.missing_frac = std::stod(v);
      else if (key == "noise_sd") cfg.noise_sd = std::stod(v);
      else if (key == "disease_scale") cfg.disease_scale = std::stod(v);
      else if (key == "seed") cfg.seed = std::stoull(v);
      else throw std::invalid_argument("config: unknown key " + key);
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("config: bad value for " + key + ": " + v);
    }
  }
  return cfg;
}

std::string render_gen_config(const GenConfig& cfg) {
  std::ostringstream out;
  out << "instances = " << cfg.instances << "\n";
  out << "val_instances = " << cfg.val_instances << "\n";
  out << "predict_instances = " << cfg.predict_instances << "\n";
  out << "timepoints = " << cfg.timepoints << "\n";
  out << "predict_observed = " << cfg.predict_observed << "\n";
  out << "obs_dim = " << cfg.obs_dim << "\n";
  out << "latent_dim = " << cfg.latent_dim << "\n";
  out << "disease_frac = " << format_double(cfg.disease_frac) << "\n";
  out << "missing_frac = " << format_double(cfg.missing_frac) << "\n";
  out << "noise_sd = " << format_double(cfg.noise_sd) << "\n";
  out << "disease_scale = " << format_double(cfg.disease_scale) << "\n";
  out << "seed = " << cfg.seed << "\n";
  return out.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

TrainConfig load_train_config(const std::string& path, std::uint64_t* seed_override) {
  TrainConfig cfg = parse_train_config(read_config_file(path));
  if (seed_override) cfg.seed = *seed_override;
  return cfg;
}

LogSink make_log_sink() {
  auto start = std::chrono::steady_clock::now();
  return [start](const EpochRecord& rec) {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json j{{"epoch", rec.epoch},        {"phase", rec.phase}, {"train_loss", rec.train_loss},
           {"recon", rec.recon},        {"kl", rec.kl},       {"val_loss", rec.val_loss},
           {"is_best", rec.is_best},    {"wall_s", wall}};
    std::cout << j.dump() << "\n";
  };
}

Dataset load_split(const std::string& data_dir, const std::string& split) {
  const fs::path dir = fs::path(data_dir) / split;
  if (!fs::exists(dir)) throw std::runtime_error("no split directory: " + dir.string());
  return read_dataset_dir(dir.string(), benchmark_schema());
}

MatrixXd require_y(const Dataset& ds, const std::string& what) {
  if (!ds.y) throw std::runtime_error(what + ": split has no Y.csv");
  return *ds.y;
}

// predictions CSV: header mean_<d>,var_<d> per observed dimension
void write_prediction_csv(const std::string& path, const MatrixXd& mean, const MatrixXd& var) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (long d = 0; d < mean.cols(); ++d) {
    if (d) out << ",";
    out << "mean_" << d << ",var_" << d;
  }
  out << "\n";
  for (long r = 0; r < mean.rows(); ++r) {
    for (long d = 0; d < mean.cols(); ++d) {
      if (d) out << ",";
      out << format_double(mean(r, d)) << "," << format_double(var(r, d));
    }
    out << "\n";
  }
}

// reads either a plain numeric grid or the mean/var pair format from `predict`
MatrixXd read_prediction_means(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw std::runtime_error("cannot read " + path);
  std::string first;
  std::getline(probe, first);
  probe.close();
  if (first.find("mean_") == std::string::npos) return read_observation_csv(path);

  // strip var columns from the pair format
  std::ifstream in(path);
  std::getline(in, first);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell.empty() ? missing_value()
                                                                     : std::stod(cell));
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) throw std::runtime_error("empty prediction file: " + path);
  const long pairs = static_cast<long>(rows[0].size()) / 2;
  MatrixXd mean(rows.size(), pairs);
  for (size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != static_cast<size_t>(2 * pairs))
      throw std::runtime_error("ragged prediction file: " + path);
    for (long d = 0; d < pairs; ++d) mean(r, d) = rows[r][2 * d];
  }
  return mean;
}

json summary_json(const MetricSummary& s) {
  return json{{"mse", s.mse},
              {"mean_of_instance", s.mean_of_instance},
              {"stderr_of_instance", s.stderr_of_instance},
              {"scored", s.scored},
              {"instances", s.instances}};
}

// ---- subcommand bodies ------------------------------------------------------

int cmd_generate(const std::string& config_path, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
  GenConfig cfg = config_path.empty() ? GenConfig{} : parse_gen_config(read_config_file(config_path));
  if (seed) cfg.seed = *seed;
  const GeneratedData data = generate_benchmark(cfg);
  fs::create_directories(out_dir);
  write_benchmark(out_dir, data);
  write_text((fs::path(out_dir) / "config.txt").string(), render_gen_config(cfg));
  std::cerr << "generated " << data.x_train.instances() << " train / " << data.x_val.instances()
            << " val / " << data.x_test.instances() << " test instances under " << out_dir << "\n";
  return 0;
}

int cmd_pretrain(const std::string& config_path, const std::string& data_dir,
                 const std::string& out_ckpt, std::optional<std::uint64_t> seed) {
  TrainConfig cfg = load_train_config(config_path, seed ? &*seed : nullptr);
  const Dataset train_ds = load_split(data_dir, "train");
  const Dataset val_ds = load_split(data_dir, "val");
  const MatrixXd y_train = require_y(train_ds, "pretrain");
  const MatrixXd y_val = require_y(val_ds, "pretrain");

  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
  LvaeModel model =
      init_model(cfg, train_ds.x.schema, train_ds.x, static_cast<int>(y_train.cols()), rng);
  TrainResult result = pretrain(std::move(model), cfg, y_train, y_val, make_log_sink());
  save_checkpoint(out_ckpt, result.best);
  write_text(out_ckpt + ".config", render_train_config(cfg));
  std::cerr << "pretrain best val loss " << result.best_val_loss << " at epoch "
            << result.best_epoch << "; checkpoint " << out_ckpt << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_ckpt, const std::string& init_ckpt,
              std::optional<std::uint64_t> seed) {
  TrainConfig cfg = load_train_config(config_path, seed ? &*seed : nullptr);
  const Dataset train_ds = load_split(data_dir, "train");
  const Dataset val_ds = load_split(data_dir, "val");
  const MatrixXd y_train = require_y(train_ds, "train");
  const MatrixXd y_val = require_y(val_ds, "train");

  LvaeModel model;
  if (!init_ckpt.empty()) {
    model = load_checkpoint(init_ckpt);
  } else {
    Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
    model = init_model(cfg, train_ds.x.schema, train_ds.x, static_cast<int>(y_train.cols()), rng);
  }
  TrainResult result =
      train(std::move(model), cfg, train_ds.x, y_train, val_ds.x, y_val, make_log_sink());
  save_checkpoint(out_ckpt, result.best);
  write_text(out_ckpt + ".config", render_train_config(cfg));
  std::cerr << "train best val loss " << result.best_val_loss << " at epoch " << result.best_epoch
            << "; checkpoint " << out_ckpt << "\n";
  return 0;
}

int cmd_verify_bounds(int seeds, std::uint64_t base_seed, const std::string& out_path) {
  std::ostream* out = &std::cout;
  std::ofstream file;
  if (!out_path.empty()) {
    file.open(out_path, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write " + out_path);
    out = &file;
  }
  int violations = 0;
  for (int i = 0; i < seeds; ++i) {
    const auto inst = random_bound_instance(base_seed + i);
    const BoundRecord rec = evaluate_bounds(inst, base_seed + i);
    (*out) << bound_record_json(rec) << "\n";
    if (rec.slack_d1_vs_exact < -1e-8 || rec.slack_d1_vs_d2 < -1e-8 ||
        rec.slack_d2_vs_exact < -1e-8)
      ++violations;
  }
  std::cerr << seeds << " instances, " << violations << " ordering violations\n";
  return violations == 0 ? 0 : 2;
}

int cmd_impute(const std::string& config_path, const std::string& data_dir,
               const std::string& ckpt, const std::string& split, const std::string& out_csv,
               std::optional<std::uint64_t> seed) {
  TrainConfig cfg = load_train_config(config_path, seed ? &*seed : nullptr);
  const LvaeModel model = load_checkpoint(ckpt);
  const Dataset ds = load_split(data_dir, split);
  const MatrixXd y = require_y(ds, "impute");
  const MatrixXd filled = impute(model, cfg, ds.x, y);
  write_observation_csv(out_csv, filled);
  std::cerr << "imputed " << y.rows() << " rows onto " << out_csv << "\n";
  return 0;
}

int cmd_predict(const std::string& config_path, const std::string& data_dir,
                const std::string& ckpt, const std::string& query_csv, const std::string& out_csv,
                std::optional<std::uint64_t> seed) {
  TrainConfig cfg = load_train_config(config_path, seed ? &*seed : nullptr);
  const LvaeModel model = load_checkpoint(ckpt);
  const Dataset train_ds = load_split(data_dir, "train");
  const MatrixXd y_train = require_y(train_ds, "predict");
  const CovariateMatrix x_query = read_covariate_csv_infer(query_csv, model.schema);

  MatrixXd z_mean, z_var;
  latent_predictive(model, cfg, train_ds.x, y_train, x_query, z_mean, z_var);
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 31);
  const ObservationPredictive pred =
      predict_observation(model.dec, z_mean, z_var, cfg.mc_samples, rng);
  write_prediction_csv(out_csv, pred.mean, pred.var);
  std::cerr << "predicted " << x_query.rows() << " rows onto " << out_csv << "\n";
  return 0;
}

int cmd_classify(const std::string& config_path, const std::string& data_dir,
                 const std::string& ckpt, const std::string& split, const std::string& out_csv,
                 int bins, int permutations, std::optional<std::uint64_t> seed) {
  TrainConfig cfg = load_train_config(config_path, seed ? &*seed : nullptr);
  const LvaeModel model = load_checkpoint(ckpt);
  const Dataset train_ds = load_split(data_dir, "train");
  const Dataset eval_ds = load_split(data_dir, split);
  const MatrixXd y_eval = require_y(eval_ds, "classify");

  ClassifierConfig cc;
  cc.bins = bins;
  const EventBins event_bins = fit_bins(training_onsets(train_ds.x, cc), cc.bins);
  const int ev = eval_ds.x.schema.index_of(cc.event_covariate);
  if (ev < 0) throw std::runtime_error("classify: split lacks covariate " + cc.event_covariate);

  const int subjects = eval_ds.x.instances();
  VectorXd scores(subjects);
  std::vector<int> labels(subjects, 0);
  std::ofstream out(out_csv, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + out_csv);
  out << "id,probability,label\n";
  for (int s = 0; s < subjects; ++s) {
    const CovariateMatrix xs = eval_ds.x.select_instances({s});
    const auto& blk = eval_ds.x.blocks[s];
    const MatrixXd ys = y_eval.middleRows(blk.start, blk.size);
    for (int r = 0; r < blk.size; ++r)
      if (eval_ds.x.values(blk.start + r, ev) == 1.0) labels[s] = 1;
    scores(s) = predict_outcome_prob(model, cc, event_bins, xs, ys);
    out << format_double(blk.id) << "," << format_double(scores(s)) << "," << labels[s] << "\n";
  }
  Rng rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 41);
  const double roc = auroc(scores, labels);
  const double pval = auroc_permutation_pvalue(scores, labels, permutations, rng);
  json j{{"subjects", subjects},
         {"auroc", roc},
         {"permutation_pvalue", pval},
         {"permutations", permutations}};
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_metrics(const std::string& pred_csv, const std::string& data_dir, const std::string& split,
                const std::string& mode) {
  const Dataset ds = load_split(data_dir, split);
  if (!ds.y_truth) throw std::runtime_error("metrics: split has no Y_truth.csv");
  const MatrixXd pred = read_prediction_means(pred_csv);

  MetricSummary summary;
  if (mode == "imputation") {
    const MatrixXd y = require_y(ds, "metrics");
    summary = mse_imputation(pred, y, *ds.y_truth, ds.x);
  } else if (mode == "future") {
    summary = mse_future(pred, *ds.y_truth, ds.x);
  } else {
    throw std::invalid_argument("metrics: mode must be imputation|future");
  }
  json j = summary_json(summary);
  j["mode"] = mode;
  std::cout << j.dump() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
  CLI::App app{"longitudinal VAE with additive GP priors", "lvae"};
  app.require_subcommand(1);

  std::string config_path, data_dir, out_path, init_ckpt, ckpt, query_csv, mode, pred_csv;
  std::string imp_split = "train", cls_split = "val", met_split = "train";
  std::optional<std::uint64_t> seed;
  int seeds = 100, bins = 6, permutations = 1000;
  std::uint64_t base_seed = 1;

  auto* gen = app.add_subcommand("generate", "write a synthetic longitudinal benchmark");
  gen->add_option("--config", config_path, "generator config file");
  gen->add_option("--out", out_path, "output directory")->required();
  gen->add_option("--seed", seed, "seed override");

  auto* pre = app.add_subcommand("pretrain", "train the plain-VAE baseline");
  pre->add_option("--config", config_path, "training config file")->required();
  pre->add_option("--data-dir", data_dir, "benchmark directory")->required();
  pre->add_option("--out", out_path, "checkpoint path")->required();
  pre->add_option("--seed", seed, "seed override");

  auto* trn = app.add_subcommand("train", "train with the configured KL bound");
  trn->add_option("--config", config_path, "training config file")->required();
  trn->add_option("--data-dir", data_dir, "benchmark directory")->required();
  trn->add_option("--out", out_path, "checkpoint path")->required();
  trn->add_option("--init", init_ckpt, "starting checkpoint (e.g. pretrained)");
  trn->add_option("--seed", seed, "seed override");

  auto* ver = app.add_subcommand("verify-bounds", "randomized bound-ordering records");
  ver->add_option("--seeds", seeds, "number of random instances");
  ver->add_option("--seed", base_seed, "base seed");
  ver->add_option("--out", out_path, "record file (default stdout)");

  auto* imp = app.add_subcommand("impute", "fill missing observations in a split");
  imp->add_option("--config", config_path, "training config file")->required();
  imp->add_option("--data-dir", data_dir, "benchmark directory")->required();
  imp->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  imp->add_option("--split", imp_split, "split name");
  imp->add_option("--out", out_path, "imputed Y csv")->required();
  imp->add_option("--seed", seed, "seed override");

  auto* prd = app.add_subcommand("predict", "observation predictive at query covariates");
  prd->add_option("--config", config_path, "training config file")->required();
  prd->add_option("--data-dir", data_dir, "benchmark directory")->required();
  prd->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  prd->add_option("--query", query_csv, "query covariate csv")->required();
  prd->add_option("--out", out_path, "prediction csv")->required();
  prd->add_option("--seed", seed, "seed override");

  auto* cls = app.add_subcommand("classify", "two-hypothesis event classification");
  cls->add_option("--config", config_path, "training config file")->required();
  cls->add_option("--data-dir", data_dir, "benchmark directory")->required();
  cls->add_option("--checkpoint", ckpt, "model checkpoint")->required();
  cls->add_option("--split", cls_split, "split to classify");
  cls->add_option("--out", out_path, "per-subject csv")->required();
  cls->add_option("--bins", bins, "onset bins");
  cls->add_option("--permutations", permutations, "label permutations");
  cls->add_option("--seed", seed, "seed override");

  auto* met = app.add_subcommand("metrics", "score predictions against ground truth");
  met->add_option("--pred", pred_csv, "prediction csv")->required();
  met->add_option("--data-dir", data_dir, "benchmark directory")->required();
  met->add_option("--split", met_split, "split name");
  met->add_option("--mode", mode, "imputation|future")->default_val("imputation");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_generate(config_path, out_path, seed);
    if (pre->parsed()) return cmd_pretrain(config_path, data_dir, out_path, seed);
    if (trn->parsed()) return cmd_train(config_path, data_dir, out_path, init_ckpt, seed);
    if (ver->parsed()) return cmd_verify_bounds(seeds, base_seed, out_path);
    if (imp->parsed()) return cmd_impute(config_path, data_dir, ckpt, imp_split, out_path, seed);
    if (prd->parsed()) return cmd_predict(config_path, data_dir, ckpt, query_csv, out_path, seed);
    if (cls->parsed())
      return cmd_classify(config_path, data_dir, ckpt, cls_split, out_path, bins, permutations,
                          seed);
    if (met->parsed()) return cmd_metrics(pred_csv, data_dir, met_split, mode);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace lvae
