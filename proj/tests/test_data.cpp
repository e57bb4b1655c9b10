#include <fstream>

#include "doctest.h"
#include "lvae/data.hpp"
#include "test_util.hpp"

using namespace lvae;
using lvae::test::TempDir;
using lvae::test::toy_schema;

TEST_CASE("schema validation") {
  CovariateSchema s = toy_schema();
  CHECK_NOTHROW(s.validate());
  CHECK(s.index_of("t") == 1);
  CHECK(s.index_of("nope") == -1);

  CovariateSchema dup = s;
  dup.entries.push_back({"t", CovariateKind::Continuous});
  CHECK_THROWS(dup.validate());

  CovariateSchema bad_id = s;
  bad_id.id_index = 1;  // continuous column cannot be the id
  CHECK_THROWS(bad_id.validate());

  CovariateSchema no_id = s;
  no_id.id_index = -1;
  CHECK_THROWS(no_id.validate());
}

TEST_CASE("covariate matrix blocks") {
  auto x = lvae::test::toy_x();
  REQUIRE(x.instances() == 2);
  CHECK(x.blocks[0].id == 0);
  CHECK(x.blocks[0].start == 0);
  CHECK(x.blocks[0].size == 3);
  CHECK(x.blocks[1].id == 1);
  CHECK(x.blocks[1].start == 3);
  CHECK(x.blocks[1].size == 2);

  SUBCASE("id must not repeat across separated runs") {
    Eigen::MatrixXd v(3, 4);
    v << 0, 0.0, 0, 0,
         1, 0.5, 0, 0,
         0, 1.0, 0, 0;
    CHECK_THROWS(CovariateMatrix::build(toy_schema(), v));
  }
  SUBCASE("missing id rejected") {
    Eigen::MatrixXd v(1, 4);
    v << missing_value(), 0.0, 0, 0;
    CHECK_THROWS(CovariateMatrix::build(toy_schema(), v));
  }
  SUBCASE("binary cells must be 0/1") {
    Eigen::MatrixXd v(1, 4);
    v << 0, 0.0, 0, 2;
    CHECK_THROWS(CovariateMatrix::build(toy_schema(), v));
  }
  SUBCASE("categorical cells must be integer codes") {
    Eigen::MatrixXd v(1, 4);
    v << 0, 0.0, 1.5, 0;
    CHECK_THROWS(CovariateMatrix::build(toy_schema(), v));
  }
  SUBCASE("missing non-id cells pass") {
    Eigen::MatrixXd v(1, 4);
    v << 0, missing_value(), missing_value(), missing_value();
    CHECK_NOTHROW(CovariateMatrix::build(toy_schema(), v));
  }
}

TEST_CASE("row and instance selection") {
  auto x = lvae::test::toy_x();
  auto sel = x.select_rows({0, 2});
  CHECK(sel.rows() == 2);
  CHECK(sel.values(1, 1) == doctest::Approx(1.9));
  CHECK(sel.instances() == 1);

  auto inst = x.select_instances({1});
  CHECK(inst.rows() == 2);
  CHECK(inst.blocks[0].id == 1);

  CHECK_THROWS(x.select_rows({99}));
  CHECK_THROWS(x.select_instances({5}));
}

TEST_CASE("covariate csv round trip") {
  TempDir dir("covcsv");
  auto x = lvae::test::toy_x();
  x.values(1, 3) = missing_value();
  x = CovariateMatrix::build(x.schema, x.values);
  write_covariate_csv(dir.file("X.csv"), x);

  auto back = read_covariate_csv(dir.file("X.csv"), x.schema);
  REQUIRE(back.rows() == x.rows());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) {
      if (is_missing(x.values(i, j))) {
        CHECK(is_missing(back.values(i, j)));
      } else {
        CHECK(back.values(i, j) == x.values(i, j));
      }
    }

  SUBCASE("schema mismatch rejected") {
    CovariateSchema other = x.schema;
    other.entries[1].name = "time";
    CHECK_THROWS(read_covariate_csv(dir.file("X.csv"), other));
  }
  SUBCASE("inference resolves kinds by name") {
    auto inferred = read_covariate_csv_infer(dir.file("X.csv"), x.schema);
    CHECK(inferred.schema.entries[0].kind == CovariateKind::Categorical);
    CHECK(inferred.schema.entries[1].kind == CovariateKind::Continuous);
    CHECK(inferred.schema.id_index == 0);
  }
}

TEST_CASE("observation csv") {
  TempDir dir("obscsv");
  Eigen::MatrixXd y(2, 3);
  y << 1.25, missing_value(), -0.5,
       0.0, 3.0, missing_value();
  write_observation_csv(dir.file("Y.csv"), y);
  auto back = read_observation_csv(dir.file("Y.csv"));
  REQUIRE(back.rows() == 2);
  REQUIRE(back.cols() == 3);
  CHECK(back(0, 0) == 1.25);
  CHECK(is_missing(back(0, 1)));
  CHECK(back(1, 1) == 3.0);

  SUBCASE("ragged rows rejected") {
    std::ofstream f(dir.file("bad.csv"));
    f << "1,2,3\n1,2\n";
    f.close();
    CHECK_THROWS(read_observation_csv(dir.file("bad.csv")));
  }
  SUBCASE("garbage cells rejected") {
    std::ofstream f(dir.file("bad2.csv"));
    f << "1,abc\n";
    f.close();
    CHECK_THROWS(read_observation_csv(dir.file("bad2.csv")));
  }
}

TEST_CASE("nine significant digits") {
  CHECK(format_double(0.5) == "0.5");
  CHECK(format_double(-3.0) == "-3");
  CHECK(format_double(0.123456789123) == "0.123456789");
  CHECK(format_double(1234567891.0) == "1.23456789e+09");
}

TEST_CASE("dataset directory") {
  TempDir dir("dataset");
  auto x = lvae::test::toy_x();
  write_covariate_csv(dir.file("X.csv"), x);
  Eigen::MatrixXd y = Eigen::MatrixXd::Constant(x.rows(), 2, 1.0);
  write_observation_csv(dir.file("Y.csv"), y);

  auto d = read_dataset_dir(dir.path.string(), x.schema);
  CHECK(d.x.rows() == x.rows());
  REQUIRE(d.y.has_value());
  CHECK(!d.y_truth.has_value());
  CHECK(d.y->rows() == x.rows());

  SUBCASE("row count mismatch rejected") {
    write_observation_csv(dir.file("Y.csv"), y.topRows(2));
    CHECK_THROWS(read_dataset_dir(dir.path.string(), x.schema));
  }
}
