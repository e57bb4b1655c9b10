#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "lvae/datagen.hpp"

using namespace lvae;

namespace {

GenConfig small_config() {
  GenConfig cfg;
  cfg.instances = 20;
  cfg.val_instances = 4;
  cfg.predict_instances = 3;
  cfg.timepoints = 10;
  cfg.predict_observed = 4;
  cfg.obs_dim = 6;
  cfg.latent_dim = 2;
  cfg.missing_frac = 0.25;
  cfg.seed = 9;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int col(const CovariateSchema& s, const std::string& name) {
  const int i = s.index_of(name);
  REQUIRE(i >= 0);
  return i;
}

// equality that treats two missing cells as equal
bool same_grid(const MatrixXd& a, const MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) {
      if (is_missing(a(r, c)) != is_missing(b(r, c))) return false;
      if (!is_missing(a(r, c)) && a(r, c) != b(r, c)) return false;
    }
  return true;
}

}  // namespace

TEST_CASE("generator output is deterministic in the seed") {
  const GenConfig cfg = small_config();
  const GeneratedData a = generate_benchmark(cfg);
  const GeneratedData b = generate_benchmark(cfg);
  CHECK(same_grid(a.x_train.values, b.x_train.values));
  CHECK(same_grid(a.y_train, b.y_train));
  CHECK(a.y_val_truth == b.y_val_truth);
  CHECK(a.y_test_truth == b.y_test_truth);

  GenConfig other = cfg;
  other.seed = 10;
  const GeneratedData c = generate_benchmark(other);
  CHECK(a.y_train_truth != c.y_train_truth);

  // written files are byte-identical across runs
  const auto base = std::filesystem::temp_directory_path() / "lvae_gen_test";
  std::filesystem::remove_all(base);
  write_benchmark((base / "one").string(), a);
  write_benchmark((base / "two").string(), b);
  for (const char* split : {"train", "val", "test"})
    for (const char* file : {"X.csv", "Y.csv", "Y_truth.csv"})
      CHECK(slurp(base / "one" / split / file) == slurp(base / "two" / split / file));
  std::filesystem::remove_all(base);
}

TEST_CASE("split shapes follow the configuration") {
  const GenConfig cfg = small_config();
  const GeneratedData d = generate_benchmark(cfg);

  const int full_train = cfg.instances - cfg.val_instances - cfg.predict_instances;
  CHECK(d.x_train.instances() == full_train + cfg.predict_instances);
  CHECK(d.x_val.instances() == cfg.val_instances);
  CHECK(d.x_test.instances() == cfg.predict_instances);

  for (int i = 0; i < full_train; ++i) CHECK(d.x_train.blocks[i].size == cfg.timepoints);
  for (int i = full_train; i < d.x_train.instances(); ++i)
    CHECK(d.x_train.blocks[i].size == cfg.predict_observed);
  for (const auto& blk : d.x_val.blocks) CHECK(blk.size == cfg.timepoints);
  for (const auto& blk : d.x_test.blocks) CHECK(blk.size == cfg.timepoints - cfg.predict_observed);

  CHECK(d.y_train.rows() == d.x_train.rows());
  CHECK(d.y_train.cols() == cfg.obs_dim);

  // test instances continue train instances: same ids, later ages
  std::set<double> train_ids, val_ids;
  for (const auto& blk : d.x_train.blocks) train_ids.insert(blk.id);
  for (const auto& blk : d.x_val.blocks) val_ids.insert(blk.id);
  const int age = col(d.schema, "age");
  for (int i = 0; i < d.x_test.instances(); ++i) {
    const auto& blk = d.x_test.blocks[i];
    CHECK(train_ids.count(blk.id) == 1);
    CHECK(val_ids.count(blk.id) == 0);
    const auto& tb = d.x_train.blocks[full_train + i];
    CHECK(tb.id == blk.id);
    const double last_observed = d.x_train.values(tb.start + tb.size - 1, age);
    CHECK(d.x_test.values(blk.start, age) > last_observed);
  }
  for (double v : val_ids) CHECK(train_ids.count(v) == 0);
}

TEST_CASE("disease covariates are consistent within every instance") {
  const GenConfig cfg = small_config();
  const GeneratedData d = generate_benchmark(cfg);
  const int age = col(d.schema, "age");
  const int pres = col(d.schema, "diseasePresence");
  const int dage = col(d.schema, "diseaseAge");

  int diseased = 0, healthy = 0;
  auto check_matrix = [&](const CovariateMatrix& x) {
    for (const auto& blk : x.blocks) {
      // diseased instances carry the signed disease-related age on every row,
      // including pre-onset rows (and blocks truncated before the onset)
      const bool is_diseased = !is_missing(x.values(blk.start, dage));
      bool seen_onset = false;
      for (int r = blk.start; r < blk.start + blk.size; ++r) {
        const double p = x.values(r, pres);
        CHECK((p == 0.0 || p == 1.0));
        if (is_diseased) {
          REQUIRE(!is_missing(x.values(r, dage)));
          const double rel = x.values(r, dage);
          if (p == 1.0) {
            CHECK(rel >= 0.0);
            seen_onset = true;
          } else {
            CHECK(rel < 0.0);
            CHECK(!seen_onset);  // presence is monotone along the ages
          }
          if (r > blk.start)
            CHECK(rel - x.values(r - 1, dage) ==
                  doctest::Approx(x.values(r, age) - x.values(r - 1, age)).epsilon(1e-12));
        } else {
          CHECK(p == 0.0);
          CHECK(is_missing(x.values(r, dage)));
        }
      }
      (is_diseased ? diseased : healthy) += 1;
    }
  };
  check_matrix(d.x_train);
  check_matrix(d.x_val);
  CHECK(diseased > 0);
  CHECK(healthy > 0);
}

TEST_CASE("masking hits the requested rate and never touches the truth") {
  GenConfig cfg = small_config();
  cfg.instances = 60;
  cfg.val_instances = 10;
  cfg.timepoints = 12;
  const GeneratedData d = generate_benchmark(cfg);

  CHECK(!d.y_train_truth.array().isNaN().any());
  CHECK(!d.y_val_truth.array().isNaN().any());
  CHECK(!d.y_test_truth.array().isNaN().any());
  CHECK(d.y_test.array().isNaN().all());  // future rows carry no observations

  long missing = 0;
  for (int r = 0; r < d.y_train.rows(); ++r)
    for (int c = 0; c < d.y_train.cols(); ++c) {
      if (is_missing(d.y_train(r, c))) ++missing;
      else CHECK(d.y_train(r, c) == d.y_train_truth(r, c));
    }
  const double rate = static_cast<double>(missing) / d.y_train.size();
  CHECK(rate == doctest::Approx(cfg.missing_frac).epsilon(0.12));

  // standardization used the train-row statistics (population variance)
  for (int c = 0; c < d.y_train_truth.cols(); ++c) {
    const auto colv = d.y_train_truth.col(c);
    const double mean = colv.mean();
    const double sd = std::sqrt((colv.array() - mean).square().sum() / colv.size());
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(sd == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("benchmark files round trip through the readers") {
  const GenConfig cfg = small_config();
  const GeneratedData d = generate_benchmark(cfg);
  const auto base = std::filesystem::temp_directory_path() / "lvae_gen_roundtrip";
  std::filesystem::remove_all(base);
  write_benchmark(base.string(), d);

  const Dataset train = read_dataset_dir((base / "train").string(), benchmark_schema());
  const Dataset test = read_dataset_dir((base / "test").string(), benchmark_schema());
  REQUIRE(train.y.has_value());
  REQUIRE(train.y_truth.has_value());
  CHECK(train.x.rows() == d.x_train.rows());
  CHECK(train.x.instances() == d.x_train.instances());
  for (int i = 0; i < train.x.schema.size(); ++i)
    CHECK(static_cast<int>(train.x.schema.entries[i].kind) ==
          static_cast<int>(d.schema.entries[i].kind));

  // 9 significant digits through the csv layer
  for (int r = 0; r < d.y_train.rows(); ++r)
    for (int c = 0; c < d.y_train.cols(); ++c) {
      if (is_missing(d.y_train(r, c))) CHECK(is_missing((*train.y)(r, c)));
      else CHECK((*train.y)(r, c) == doctest::Approx(d.y_train(r, c)).epsilon(1e-8));
    }
  CHECK(test.y->array().isNaN().all());
  std::filesystem::remove_all(base);
}

TEST_CASE("impossible generator configurations are rejected") {
  GenConfig cfg = small_config();
  cfg.val_instances = 18;  // 18 + 3 > 20
  CHECK_THROWS(generate_benchmark(cfg));
  cfg = small_config();
  cfg.predict_observed = cfg.timepoints;  // nothing left to predict
  CHECK_THROWS(generate_benchmark(cfg));
  cfg = small_config();
  cfg.missing_frac = 1.2;
  CHECK_THROWS(generate_benchmark(cfg));
  cfg = small_config();
  cfg.obs_dim = 0;
  CHECK_THROWS(generate_benchmark(cfg));
}
