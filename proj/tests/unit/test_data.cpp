#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "vcl/data.hpp"

using namespace vcl;
using namespace vcl::data;

namespace {

std::string write_temp(const std::string& name, const std::string& text) {
  const auto dir = std::filesystem::temp_directory_path() / "vcl_unit_data";
  std::filesystem::create_directories(dir);
  const auto path = (dir / name).string();
  std::ofstream(path, std::ios::binary) << text;
  return path;
}

}  // namespace

TEST_CASE("CSV with header, quoted fields and named classes") {
  const auto path = write_temp("ok.csv", "x,\"y, with comma\",label\n1.5,2,cat\n-1,3e-1,\"dog\"\n4,5,cat\n");
  const auto load = load_csv(path);
  const Dataset& ds = load.dataset;
  CHECK(load.warnings.empty());
  CHECK(ds.rows == 3);
  CHECK(ds.dim == 2);
  CHECK(ds.feature_names[1] == "y, with comma");
  CHECK(ds.class_count == 2);
  CHECK(ds.class_names[0] == "cat");
  CHECK(ds.labels == std::vector<int>{0, 1, 0});
  CHECK(ds.at(1, 1) == doctest::Approx(0.3));
  CHECK_NOTHROW(ds.validate());
}

TEST_CASE("CSV label column by name or index, other delimiters") {
  const auto path = write_temp("semi.csv", "label;a;b\n1;0.5;0.25\n0;1;2\n");
  CsvOptions opts;
  opts.delimiter = ';';
  opts.label_column = std::string("label");
  const auto by_name = load_csv(path, opts).dataset;
  CHECK(by_name.at(0, 0) == 0.5);
  CHECK(by_name.class_names == std::vector<std::string>{"1", "0"});
  opts.label_column = std::size_t{0};
  CHECK(load_csv(path, opts).dataset.rows == 2);
  opts.label_column = std::string("missing");
  CHECK_THROWS_AS((void)load_csv(path, opts), std::invalid_argument);
  opts.label_column = std::size_t{7};
  CHECK_THROWS_AS((void)load_csv(path, opts), std::invalid_argument);
}

TEST_CASE("CSV rows that fail to parse are dropped with warnings") {
  const auto path = write_temp("bad.csv", "a,b,y\n1,2,u\n1,,v\nx,2,u\n1,2\n3,4,\n5,6,v\n");
  const auto load = load_csv(path);
  CHECK(load.dataset.rows == 2);
  REQUIRE(load.warnings.size() == 4);
  CHECK(load.warnings[0].rfind("line 3", 0) == 0);
}

TEST_CASE("CSV without usable rows or missing file") {
  CHECK_THROWS_AS((void)load_csv(write_temp("empty.csv", "")), std::runtime_error);
  CHECK_THROWS_AS((void)load_csv(write_temp("header_only.csv", "a,b\n")), std::runtime_error);
  CHECK_THROWS_AS((void)load_csv("/nonexistent/file.csv"), std::runtime_error);
}

TEST_CASE("CSV write then read round-trips") {
  const auto ds = make_blobs(circle_centers(3, 2.0), 0.5, 30, 4);
  const auto path = write_temp("roundtrip.csv", "");
  write_csv(ds, path);
  const auto back = load_csv(path).dataset;
  CHECK(back.rows == ds.rows);
  for (std::size_t i = 0; i < ds.features.size(); ++i) CHECK(back.features[i] == ds.features[i]);
}

TEST_CASE("blobs are balanced and seeded") {
  const auto centers = circle_centers(4, 3.0);
  CHECK(centers[1][1] == doctest::Approx(3.0));
  const auto a = make_blobs(centers, 1.0, 400, 9);
  const auto b = make_blobs(centers, 1.0, 400, 9);
  CHECK(a.features == b.features);
  std::vector<int> counts(4, 0);
  for (int y : a.labels) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) CHECK(c == 100);
  CHECK_THROWS_AS((void)make_blobs({}, 1.0, 10, 1), std::invalid_argument);
}

TEST_CASE("stratified split sizes and determinism") {
  const auto ds = make_blobs(circle_centers(4, 3.0), 1.0, 1000, 2);
  const auto s = split(ds, 0.6, 0.2, 0.2, 5);
  CHECK(s.train.rows == 600);
  CHECK(s.val.rows == 200);
  CHECK(s.test.rows == 200);
  std::vector<int> counts(4, 0);
  for (int y : s.val.labels) ++counts[static_cast<std::size_t>(y)];
  for (int c : counts) CHECK(c == 50);
  const auto again = split(ds, 0.6, 0.2, 0.2, 5);
  CHECK(again.train.features == s.train.features);
  CHECK_THROWS_AS((void)split(ds, 0.8, 0.3, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS((void)split(ds, -0.1, 0.3, 0.0, 1), std::invalid_argument);
}

TEST_CASE("tiny classes produce a warning") {
  Dataset ds;
  ds.rows = 5;
  ds.dim = 1;
  ds.features = {0, 1, 2, 3, 4};
  ds.labels = {0, 0, 0, 0, 1};
  ds.class_count = 2;
  const auto s = split(ds, 0.5, 0.25, 0.25, 1);
  CHECK_FALSE(s.warnings.empty());
  CHECK(s.train.rows + s.val.rows + s.test.rows == 5);
}

TEST_CASE("standardization uses training statistics only") {
  Dataset train;
  train.rows = 4;
  train.dim = 2;
  train.features = {1, 5, 2, 5, 3, 5, 4, 5};
  train.labels = {0, 0, 1, 1};
  train.class_count = 2;
  const auto st = fit_standardization(train);
  CHECK(st.mean[0] == 2.5);
  CHECK(st.stddev[0] == doctest::Approx(std::sqrt(1.25)));
  CHECK(st.stddev[1] == 0.0);
  const auto z = st.apply(train);
  CHECK(z.at(0, 0) == doctest::Approx(-1.5 / std::sqrt(1.25)));
  CHECK(z.at(0, 1) == 0.0);
}

TEST_CASE("validation catches inconsistent datasets") {
  Dataset ds;
  ds.rows = 2;
  ds.dim = 1;
  ds.features = {0.0, NAN};
  ds.labels = {0, 0};
  ds.class_count = 1;
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.features = {0.0, 1.0};
  ds.labels = {0, 3};
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
  ds.labels = {0};
  CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
}
