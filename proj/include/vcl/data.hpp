#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "vcl/gmm.hpp"
#include "vcl/tensor.hpp"

namespace vcl::data {

/// Row-major feature matrix with dense integer labels in [0, class_count).
struct Dataset {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> features;
  std::vector<int> labels;
  int class_count = 0;
  std::vector<std::string> feature_names;
  std::vector<std::string> class_names;

  [[nodiscard]] double at(std::size_t r, std::size_t c) const { return features[r * dim + c]; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const { return {features.data() + r * dim, dim}; }
  /// Rows selected by index, in that order.
  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;
  [[nodiscard]] ad::Tensor feature_tensor() const;
  /// Throws std::invalid_argument when sizes disagree, a label is out of
  /// range, or a feature is non-finite.
  void validate() const;
};

struct CsvOptions {
  /// Column name (requires header) or zero-based index; defaults to the last column.
  std::variant<std::monostate, std::string, std::size_t> label_column;
  bool header = true;
  char delimiter = ',';
};

struct CsvLoad {
  Dataset dataset;
  /// One entry per rejected row ("row 7: ...", 1-based physical line numbers).
  std::vector<std::string> warnings;
};

/// Numeric feature columns; the label column is mapped to class indices in
/// first-appearance order. Quoted fields follow RFC 4180. Rows that fail to
/// parse are dropped and listed in `warnings`.
[[nodiscard]] CsvLoad load_csv(const std::string& path, const CsvOptions& opts = {});

/// Writes features then a `label` column using class_names when present.
void write_csv(const Dataset& ds, const std::string& path, char delimiter = ',');

struct Standardization {
  std::vector<double> mean;
  std::vector<double> stddev;  // population (divisor n)

  [[nodiscard]] Dataset apply(const Dataset& ds) const;
};

/// Per-feature statistics of the training split. Zero-stddev features are
/// only centered.
[[nodiscard]] Standardization fit_standardization(const Dataset& train);
[[nodiscard]] std::pair<Dataset, Standardization> standardize(const Dataset& ds, const Dataset& train);

struct Splits {
  Dataset train;
  Dataset val;
  Dataset test;
  std::vector<std::string> warnings;
};

/// Stratified seeded split. Fractions (train, val, test) are positive and
/// sum to at most 1; rows left over by rounding go to train.
[[nodiscard]] Splits split(const Dataset& ds, double train_fraction, double val_fraction, double test_fraction,
                           std::uint64_t seed);

/// Labels record the component (0 for prior p, 1 otherwise).
[[nodiscard]] Dataset make_gmm2_dataset(const gmm::Gmm2& g, std::size_t count, std::uint64_t seed);

/// Equal-prior isotropic Gaussian blobs, one class per center.
[[nodiscard]] Dataset make_blobs(const std::vector<std::vector<double>>& centers, double stddev, std::size_t count,
                                 std::uint64_t seed);

/// Centers evenly spaced on a circle of the given radius.
[[nodiscard]] std::vector<std::vector<double>> circle_centers(int classes, double radius);

}  // namespace vcl::data
