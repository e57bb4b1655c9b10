#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "doctest.h"
#include "lvae/cli.hpp"
#include "lvae/config.hpp"
#include "lvae/data.hpp"

using namespace lvae;

namespace {

namespace fs = std::filesystem;

// run_cli writes records to the standard streams; keep test output clean
struct CaptureStreams {
  std::ostringstream out, err;
  std::streambuf* old_out;
  std::streambuf* old_err;
  CaptureStreams() : old_out(std::cout.rdbuf(out.rdbuf())), old_err(std::cerr.rdbuf(err.rdbuf())) {}
  ~CaptureStreams() {
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
  }
};

int run(const std::vector<std::string>& args, std::string* out = nullptr,
        std::string* err = nullptr) {
  CaptureStreams cap;
  const int code = run_cli(args);
  if (out) *out = cap.out.str();
  if (err) *err = cap.err.str();
  return code;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  REQUIRE(f.good());
  f << text;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct TempTree {
  fs::path root;
  explicit TempTree(const std::string& tag) : root(fs::temp_directory_path() / tag) {
    fs::remove_all(root);
    fs::create_directories(root);
  }
  ~TempTree() { fs::remove_all(root); }
  std::string operator/(const std::string& leaf) const { return (root / leaf).string(); }
};

const char* kTrainCfg =
    "prior = ca_x_se(id,age) + se(age) + bi_x_se(diseasePresence,diseaseAge)\n"
    "latent_dim = 2\n"
    "enc_hidden = 8\n"
    "dec_hidden = 8\n"
    "bound = stochastic\n"
    "inducing_count = 6\n"
    "epochs = 3\n"
    "pretrain_epochs = 3\n"
    "batch_instances = 4\n"
    "seed = 11\n";

}  // namespace

TEST_CASE("usage errors exit with code one") {
  std::string err;
  CHECK(run({}, nullptr, &err) == 1);
  CHECK(run({"bogus"}) == 1);
  CHECK(run({"train"}) == 1);                       // missing required flags
  CHECK(run({"generate", "--nope", "x"}) == 1);     // unknown flag
  CHECK(run({"--help"}) == 0);
  std::string help;
  CHECK(run({"train", "--help"}, &help) == 0);
  CHECK(help.find("--config") != std::string::npos);
  CHECK(help.find("--data-dir") != std::string::npos);
  CHECK(help.find("--seed") != std::string::npos);
}

TEST_CASE("runtime failures exit with code two") {
  TempTree tmp("lvae_cli_fail");
  CHECK(run({"generate", "--config", tmp / "absent.cfg", "--out", tmp / "d"}) == 2);
  write_file(tmp.root / "bad.cfg", "latent_dim = 2\nnot_a_key = 1\n");
  CHECK(run({"generate", "--config", tmp / "bad.cfg", "--out", tmp / "d"}) == 2);
  CHECK(run({"pretrain", "--config", tmp / "bad.cfg", "--data-dir", tmp / "none", "--out",
             tmp / "m.ckpt"}) == 2);
}

TEST_CASE("the full pipeline runs through the command line") {
  TempTree tmp("lvae_cli_pipeline");
  write_file(tmp.root / "gen.cfg",
             "instances = 14\nval_instances = 4\npredict_instances = 2\ntimepoints = 8\n"
             "predict_observed = 3\nobs_dim = 6\nlatent_dim = 2\nseed = 3\n");
  write_file(tmp.root / "train.cfg", kTrainCfg);

  REQUIRE(run({"generate", "--config", tmp / "gen.cfg", "--out", tmp / "data"}) == 0);
  CHECK(fs::exists(tmp.root / "data" / "config.txt"));
  // the echoed generator config parses back to the same text
  CHECK(slurp(tmp.root / "data" / "config.txt").find("instances = 14") != std::string::npos);

  std::string log;
  REQUIRE(run({"pretrain", "--config", tmp / "train.cfg", "--data-dir", tmp / "data", "--out",
               tmp / "pre.ckpt"},
              &log) == 0);
  CHECK(log.find("\"phase\":\"pretrain\"") != std::string::npos);
  CHECK(log.find("\"val_loss\"") != std::string::npos);

  REQUIRE(run({"train", "--config", tmp / "train.cfg", "--data-dir", tmp / "data", "--out",
               tmp / "model.ckpt", "--init", tmp / "pre.ckpt"},
              &log) == 0);
  CHECK(log.find("\"phase\":\"train\"") != std::string::npos);
  CHECK(log.find("\"recon\"") != std::string::npos);
  CHECK(log.find("\"kl\"") != std::string::npos);
  CHECK(fs::exists(tmp.root / "model.ckpt.config"));

  REQUIRE(run({"impute", "--config", tmp / "train.cfg", "--data-dir", tmp / "data", "--checkpoint",
               tmp / "model.ckpt", "--out", tmp / "imputed.csv"}) == 0);
  const MatrixXd imputed = read_observation_csv(tmp / "imputed.csv");
  const MatrixXd masked = read_observation_csv((tmp.root / "data" / "train" / "Y.csv").string());
  REQUIRE(imputed.rows() == masked.rows());
  CHECK(!imputed.array().isNaN().any());
  for (int r = 0; r < masked.rows(); ++r)
    for (int c = 0; c < masked.cols(); ++c)
      if (!is_missing(masked(r, c))) CHECK(imputed(r, c) == doctest::Approx(masked(r, c)));

  std::string metrics_out;
  REQUIRE(run({"metrics", "--pred", tmp / "imputed.csv", "--data-dir", tmp / "data", "--split",
               "train", "--mode", "imputation"},
              &metrics_out) == 0);
  CHECK(metrics_out.find("\"mse\"") != std::string::npos);
  CHECK(metrics_out.find("\"stderr_of_instance\"") != std::string::npos);

  REQUIRE(run({"predict", "--config", tmp / "train.cfg", "--data-dir", tmp / "data", "--checkpoint",
               tmp / "model.ckpt", "--query", (tmp.root / "data" / "test" / "X.csv").string(),
               "--out", tmp / "pred.csv"}) == 0);
  const std::string pred_text = slurp(tmp.root / "pred.csv");
  CHECK(pred_text.rfind("mean_0,var_0,mean_1,var_1", 0) == 0);

  REQUIRE(run({"metrics", "--pred", tmp / "pred.csv", "--data-dir", tmp / "data", "--split", "test",
               "--mode", "future"},
              &metrics_out) == 0);
  CHECK(metrics_out.find("\"mode\":\"future\"") != std::string::npos);

  std::string cls_out;
  REQUIRE(run({"classify", "--config", tmp / "train.cfg", "--data-dir", tmp / "data",
               "--checkpoint", tmp / "model.ckpt", "--out", tmp / "cls.csv", "--permutations",
               "50"},
              &cls_out) == 0);
  CHECK(cls_out.find("\"auroc\"") != std::string::npos);
  const std::string cls_text = slurp(tmp.root / "cls.csv");
  CHECK(cls_text.rfind("id,probability,label", 0) == 0);
  CHECK(std::count(cls_text.begin(), cls_text.end(), '\n') == 5);  // header + 4 val subjects

  CHECK(run({"metrics", "--pred", tmp / "pred.csv", "--data-dir", tmp / "data", "--split", "test",
             "--mode", "nonsense"}) == 2);
}

TEST_CASE("seeded command line runs are reproducible") {
  TempTree tmp("lvae_cli_repro");
  write_file(tmp.root / "gen.cfg",
             "instances = 10\nval_instances = 3\npredict_instances = 1\ntimepoints = 6\n"
             "predict_observed = 2\nobs_dim = 5\nlatent_dim = 2\n");
  write_file(tmp.root / "train.cfg", kTrainCfg);
  REQUIRE(run({"generate", "--config", tmp / "gen.cfg", "--out", tmp / "a", "--seed", "41"}) == 0);
  REQUIRE(run({"generate", "--config", tmp / "gen.cfg", "--out", tmp / "b", "--seed", "41"}) == 0);
  CHECK(slurp(tmp.root / "a" / "train" / "Y.csv") == slurp(tmp.root / "b" / "train" / "Y.csv"));
  REQUIRE(run({"generate", "--config", tmp / "gen.cfg", "--out", tmp / "c", "--seed", "42"}) == 0);
  CHECK(slurp(tmp.root / "a" / "train" / "Y.csv") != slurp(tmp.root / "c" / "train" / "Y.csv"));

  for (const char* tag : {"m1", "m2"})
    REQUIRE(run({"train", "--config", tmp / "train.cfg", "--data-dir", tmp / "a", "--out",
                 tmp / (std::string(tag) + ".ckpt"), "--seed", "1234"}) == 0);
  CHECK(slurp(tmp.root / "m1.ckpt") == slurp(tmp.root / "m2.ckpt"));
}

TEST_CASE("bound verification emits one record per seed") {
  std::string out, err;
  REQUIRE(run({"verify-bounds", "--seeds", "4"}, &out, &err) == 0);
  CHECK(std::count(out.begin(), out.end(), '\n') == 4);
  CHECK(out.find("\"kl_exact\"") != std::string::npos);
  CHECK(out.find("\"d2_efficient\"") != std::string::npos);
  CHECK(err.find("0 ordering violations") != std::string::npos);

  TempTree tmp("lvae_cli_bounds");
  REQUIRE(run({"verify-bounds", "--seeds", "2", "--out", tmp / "records.jsonl"}) == 0);
  const std::string text = slurp(tmp.root / "records.jsonl");
  CHECK(std::count(text.begin(), text.end(), '\n') == 2);
}

TEST_CASE("training configuration round trips through its echo") {
  const TrainConfig defaults;
  const std::string rendered = render_train_config(defaults);
  TempTree tmp("lvae_cfg_echo");
  write_file(tmp.root / "echo.cfg", rendered);
  const TrainConfig back = parse_train_config(read_config_file(tmp / "echo.cfg"));
  CHECK(render_train_config(back) == rendered);

  // every field survives an explicit setting
  TrainConfig cfg;
  cfg.prior = "se(age)";
  cfg.latent_dim = 5;
  cfg.enc_hidden = {7, 3};
  cfg.bound = BoundKind::Exact;
  cfg.lr = 0.25;
  cfg.seed = 99;
  write_file(tmp.root / "set.cfg", render_train_config(cfg));
  const TrainConfig cfg2 = parse_train_config(read_config_file(tmp / "set.cfg"));
  CHECK(cfg2.prior == "se(age)");
  CHECK(cfg2.latent_dim == 5);
  CHECK(cfg2.enc_hidden == std::vector<int>{7, 3});
  CHECK(cfg2.bound == BoundKind::Exact);
  CHECK(cfg2.lr == 0.25);
  CHECK(cfg2.seed == 99);
}

TEST_CASE("config files reject malformed input") {
  TempTree tmp("lvae_cfg_bad");
  write_file(tmp.root / "dup.cfg", "latent_dim = 2\nlatent_dim = 3\n");
  CHECK_THROWS(read_config_file(tmp / "dup.cfg"));
  write_file(tmp.root / "noeq.cfg", "latent_dim 2\n");
  CHECK_THROWS(read_config_file(tmp / "noeq.cfg"));

  auto parse_one = [](const std::string& k, const std::string& v) {
    return parse_train_config({{k, v}});
  };
  CHECK_THROWS(parse_one("unknown_key", "1"));
  CHECK_THROWS(parse_one("bound", "hensman"));
  CHECK_THROWS(parse_one("latent_dim", "zero"));
  CHECK_THROWS(parse_one("latent_dim", "0"));
  CHECK_THROWS(parse_one("lr", "-1"));
  CHECK_THROWS(parse_one("enc_hidden", "4,x"));

  // comments and blank lines are fine
  write_file(tmp.root / "ok.cfg", "# a comment\n\nlatent_dim = 4  # trailing\n");
  CHECK(parse_train_config(read_config_file(tmp / "ok.cfg")).latent_dim == 4);

  // bound names accepted
  CHECK(parse_one("bound", "exact").bound == BoundKind::Exact);
  CHECK(parse_one("bound", "structured").bound == BoundKind::D2);
  CHECK(parse_one("bound", "stochastic").bound == BoundKind::D4);
}
