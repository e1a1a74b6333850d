#include "vcl/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vcl::data {
namespace {

struct Record {
  std::size_t line = 0;  // 1-based line where the record starts
  std::vector<std::string> fields;
};

// RFC 4180 records: quoted fields may contain delimiters, doubled quotes and
// line breaks. Blank lines are skipped.
std::vector<Record> parse_records(std::istream& in, char delim) {
  std::vector<Record> records;
  Record current;
  std::string field;
  bool in_quotes = false;
  bool field_started = false;
  std::size_t line = 1;
  current.line = 1;

  auto end_field = [&] {
    current.fields.push_back(std::move(field));
    field.clear();
    field_started = false;
  };
  auto end_record = [&] {
    const bool blank = current.fields.size() == 1 && current.fields[0].empty() && !field_started;
    if (!blank) records.push_back(std::move(current));
    current = Record{};
    current.line = line;
  };

  char c;
  while (in.get(c)) {
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field.push_back('"');
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        field.push_back(c);
      }
      continue;
    }
    if (c == '"' && field.empty()) {
      in_quotes = true;
      field_started = true;
    } else if (c == delim) {
      end_field();
    } else if (c == '\r') {
      if (in.peek() != '\n') field.push_back(c);
    } else if (c == '\n') {
      end_field();
      ++line;
      end_record();
    } else {
      field.push_back(c);
    }
  }
  if (!field.empty() || field_started || !current.fields.empty()) {
    end_field();
    end_record();
  }
  return records;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

bool parse_number(const std::string& raw, double& out) {
  const std::string s = trim(raw);
  if (s.empty()) return false;
  const char* first = s.data();
  if (*first == '+') ++first;
  const auto [ptr, ec] = std::from_chars(first, s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size() && std::isfinite(out);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote_if_needed(const std::string& s, char delim) {
  if (s.find_first_of(std::string{delim, '"', '\n', '\r'}) == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

}  // namespace

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.rows = indices.size();
  out.dim = dim;
  out.class_count = class_count;
  out.feature_names = feature_names;
  out.class_names = class_names;
  out.features.resize(out.rows * dim);
  out.labels.resize(out.rows);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t r = indices[i];
    if (r >= rows) throw std::out_of_range("subset index out of range");
    std::copy_n(features.begin() + static_cast<std::ptrdiff_t>(r * dim), dim,
                out.features.begin() + static_cast<std::ptrdiff_t>(i * dim));
    out.labels[i] = labels[r];
  }
  return out;
}

ad::Tensor Dataset::feature_tensor() const { return ad::Tensor::from({rows, dim}, features); }

void Dataset::validate() const {
  if (features.size() != rows * dim) throw std::invalid_argument("feature buffer does not match rows x dim");
  if (labels.size() != rows) throw std::invalid_argument("label count does not match rows");
  for (int y : labels)
    if (y < 0 || y >= class_count) throw std::invalid_argument("label outside [0, class_count)");
  for (double v : features)
    if (!std::isfinite(v)) throw std::invalid_argument("non-finite feature value");
}

CsvLoad load_csv(const std::string& path, const CsvOptions& opts) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open CSV file " + path);
  std::vector<Record> records = parse_records(in, opts.delimiter);
  if (records.empty()) throw std::runtime_error(path + " is empty");

  std::size_t columns = records.front().fields.size();
  std::vector<std::string> names;
  std::size_t first_data = 0;
  if (opts.header) {
    for (const auto& f : records.front().fields) names.push_back(trim(f));
    first_data = 1;
  }

  std::size_t label_col = columns - 1;
  if (const auto* name = std::get_if<std::string>(&opts.label_column)) {
    if (!opts.header) throw std::invalid_argument("a label column name needs a header row");
    const auto it = std::find(names.begin(), names.end(), *name);
    if (it == names.end()) throw std::invalid_argument("label column '" + *name + "' not found in " + path);
    label_col = static_cast<std::size_t>(it - names.begin());
  } else if (const auto* index = std::get_if<std::size_t>(&opts.label_column)) {
    if (*index >= columns)
      throw std::invalid_argument("label column index " + std::to_string(*index) + " out of range in " + path);
    label_col = *index;
  }
  if (columns < 2) throw std::invalid_argument(path + " needs at least one feature column and a label column");

  CsvLoad result;
  Dataset& ds = result.dataset;
  ds.dim = columns - 1;
  for (std::size_t c = 0; c < columns; ++c)
    if (c != label_col) ds.feature_names.push_back(opts.header ? names[c] : "f" + std::to_string(c));

  std::map<std::string, int> class_index;
  std::vector<double> row(ds.dim);
  for (std::size_t r = first_data; r < records.size(); ++r) {
    const Record& rec = records[r];
    auto reject = [&](const std::string& why) {
      result.warnings.push_back("line " + std::to_string(rec.line) + ": " + why);
    };
    if (rec.fields.size() != columns) {
      reject("expected " + std::to_string(columns) + " fields, found " + std::to_string(rec.fields.size()));
      continue;
    }
    bool ok = true;
    std::size_t k = 0;
    for (std::size_t c = 0; c < columns && ok; ++c) {
      if (c == label_col) continue;
      if (!parse_number(rec.fields[c], row[k++])) {
        reject("unparseable or missing value in column " + std::to_string(c));
        ok = false;
      }
    }
    if (!ok) continue;
    const std::string label = trim(rec.fields[label_col]);
    if (label.empty()) {
      reject("missing label");
      continue;
    }
    auto [it, inserted] = class_index.emplace(label, static_cast<int>(ds.class_names.size()));
    if (inserted) ds.class_names.push_back(label);
    ds.features.insert(ds.features.end(), row.begin(), row.end());
    ds.labels.push_back(it->second);
    ++ds.rows;
  }
  ds.class_count = static_cast<int>(ds.class_names.size());
  if (ds.rows == 0) throw std::runtime_error(path + " has no usable rows");
  return result;
}

void write_csv(const Dataset& ds, const std::string& path, char delimiter) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  for (std::size_t c = 0; c < ds.dim; ++c) {
    const std::string name = c < ds.feature_names.size() ? ds.feature_names[c] : "f" + std::to_string(c);
    out << quote_if_needed(name, delimiter) << delimiter;
  }
  out << "label\n";
  for (std::size_t r = 0; r < ds.rows; ++r) {
    for (std::size_t c = 0; c < ds.dim; ++c) out << format_double(ds.at(r, c)) << delimiter;
    const int y = ds.labels[r];
    const std::string label =
        static_cast<std::size_t>(y) < ds.class_names.size() ? ds.class_names[static_cast<std::size_t>(y)] : std::to_string(y);
    out << quote_if_needed(label, delimiter) << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path);
}

Standardization fit_standardization(const Dataset& train) {
  if (train.rows == 0) throw std::invalid_argument("cannot standardize from an empty training split");
  Standardization s;
  s.mean.assign(train.dim, 0.0);
  s.stddev.assign(train.dim, 0.0);
  const auto n = static_cast<double>(train.rows);
  for (std::size_t r = 0; r < train.rows; ++r)
    for (std::size_t c = 0; c < train.dim; ++c) s.mean[c] += train.at(r, c);
  for (double& m : s.mean) m /= n;
  for (std::size_t r = 0; r < train.rows; ++r)
    for (std::size_t c = 0; c < train.dim; ++c) {
      const double d = train.at(r, c) - s.mean[c];
      s.stddev[c] += d * d;
    }
  for (double& v : s.stddev) v = std::sqrt(v / n);
  return s;
}

Dataset Standardization::apply(const Dataset& ds) const {
  if (ds.dim != mean.size()) throw std::invalid_argument("standardization width mismatch");
  Dataset out = ds;
  for (std::size_t r = 0; r < ds.rows; ++r)
    for (std::size_t c = 0; c < ds.dim; ++c) {
      double& v = out.features[r * ds.dim + c];
      v -= mean[c];
      if (stddev[c] > 0.0) v /= stddev[c];
    }
  return out;
}

std::pair<Dataset, Standardization> standardize(const Dataset& ds, const Dataset& train) {
  Standardization s = fit_standardization(train);
  return {s.apply(ds), std::move(s)};
}

Splits split(const Dataset& ds, double train_fraction, double val_fraction, double test_fraction, std::uint64_t seed) {
  const double fractions[3] = {train_fraction, val_fraction, test_fraction};
  for (double f : fractions)
    if (!(f >= 0.0)) throw std::invalid_argument("split fractions must be non-negative");
  const double total = train_fraction + val_fraction + test_fraction;
  if (!(total > 0.0) || total > 1.0 + 1e-9) throw std::invalid_argument("split fractions must sum to (0, 1]");
  const bool exhaustive = total > 1.0 - 1e-9;

  Splits out;
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(ds.class_count, 0)));
  for (std::size_t r = 0; r < ds.rows; ++r) by_class.at(static_cast<std::size_t>(ds.labels[r])).push_back(r);

  Rng rng = make_rng(seed);
  std::vector<std::size_t> parts[3];
  const int active = static_cast<int>(train_fraction > 0) + static_cast<int>(val_fraction > 0) +
                     static_cast<int>(test_fraction > 0);
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& rows = by_class[k];
    if (rows.empty()) continue;
    std::shuffle(rows.begin(), rows.end(), rng);
    const auto m = static_cast<double>(rows.size());
    if (rows.size() < static_cast<std::size_t>(active))
      out.warnings.push_back("class " + std::to_string(k) + " has " + std::to_string(rows.size()) +
                             " rows, fewer than the " + std::to_string(active) + " splits");
    std::size_t val = static_cast<std::size_t>(std::llround(m * val_fraction));
    std::size_t test = static_cast<std::size_t>(std::llround(m * test_fraction));
    val = std::min(val, rows.size());
    test = std::min(test, rows.size() - val);
    std::size_t train = exhaustive ? rows.size() - val - test
                                   : std::min(static_cast<std::size_t>(std::llround(m * train_fraction)),
                                              rows.size() - val - test);
    // Best effort: a tiny class still gets a training row when possible.
    if (train == 0 && train_fraction > 0.0 && rows.size() > 0) {
      if (val > 0) --val;
      else if (test > 0) --test;
      train = 1;
    }
    std::size_t pos = 0;
    for (std::size_t i = 0; i < train; ++i) parts[0].push_back(rows[pos++]);
    for (std::size_t i = 0; i < val; ++i) parts[1].push_back(rows[pos++]);
    for (std::size_t i = 0; i < test; ++i) parts[2].push_back(rows[pos++]);
  }
  for (auto& p : parts) std::sort(p.begin(), p.end());
  out.train = ds.subset(parts[0]);
  out.val = ds.subset(parts[1]);
  out.test = ds.subset(parts[2]);
  return out;
}

Dataset make_gmm2_dataset(const gmm::Gmm2& g, std::size_t count, std::uint64_t seed) {
  Eigen::MatrixXd samples;
  Dataset ds;
  gmm::sample_gmm2(g, count, seed, samples, ds.labels);
  ds.rows = count;
  ds.dim = g.dim();
  ds.class_count = 2;
  ds.class_names = {"component1", "component2"};
  ds.features.resize(count * ds.dim);
  for (std::size_t r = 0; r < count; ++r)
    for (std::size_t c = 0; c < ds.dim; ++c)
      ds.features[r * ds.dim + c] = samples(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  return ds;
}

Dataset make_blobs(const std::vector<std::vector<double>>& centers, double stddev, std::size_t count,
                   std::uint64_t seed) {
  if (centers.empty()) throw std::invalid_argument("blobs need at least one center");
  if (!(stddev >= 0.0)) throw std::invalid_argument("blob stddev must be non-negative");
  const std::size_t d = centers.front().size();
  for (const auto& c : centers)
    if (c.size() != d || d == 0) throw std::invalid_argument("blob centers must share a positive dimension");
  Dataset ds;
  ds.rows = count;
  ds.dim = d;
  ds.class_count = static_cast<int>(centers.size());
  for (std::size_t k = 0; k < centers.size(); ++k) ds.class_names.push_back("c" + std::to_string(k));
  ds.features.resize(count * d);
  ds.labels.resize(count);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> normal(0.0, stddev);
  for (std::size_t r = 0; r < count; ++r) {
    const std::size_t k = r % centers.size();
    ds.labels[r] = static_cast<int>(k);
    for (std::size_t c = 0; c < d; ++c) ds.features[r * d + c] = centers[k][c] + normal(rng);
  }
  return ds;
}

std::vector<std::vector<double>> circle_centers(int classes, double radius) {
  if (classes < 1) throw std::invalid_argument("need at least one class");
  std::vector<std::vector<double>> out;
  for (int k = 0; k < classes; ++k) {
    const double a = 2.0 * std::numbers::pi * k / classes;
    out.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return out;
}

}  // namespace vcl::data
