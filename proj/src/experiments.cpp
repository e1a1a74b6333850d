#include "vcl/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vcl/data.hpp"
#include "vcl/gmm.hpp"
#include "vcl/layers.hpp"
#include "vcl/moments.hpp"
#include "vcl/regularizer.hpp"
#include "vcl/rng.hpp"
#include "vcl/trainer.hpp"

namespace vcl::lab {
namespace {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- config --

std::string join_path(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

bool compatible(const json& base, const json& value) {
  if (base.is_null() || value.is_null()) return true;
  if (base.is_number() && value.is_number()) return true;
  return base.type() == value.type();
}

void merge_strict(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError("config " + (prefix.empty() ? std::string("root") : prefix) + " must be an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = join_path(prefix, it.key());
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + path + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      merge_strict(slot, it.value(), path);
    } else {
      if (!compatible(slot, it.value())) throw ConfigError("config key '" + path + "' has the wrong type");
      slot = it.value();
    }
  }
}

const json& at_path(const json& j, const std::string& path) {
  const json* cur = &j;
  std::size_t start = 0;
  while (start <= path.size()) {
    const std::size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!cur->is_object() || !cur->contains(key)) throw ConfigError("missing config key '" + path + "'");
    cur = &(*cur)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  return *cur;
}

template <typename T>
T get(const json& j, const std::string& path) {
  const json& v = at_path(j, path);
  try {
    if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, int> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError("config key '" + path + "' must be an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && v.get<std::int64_t>() < 0)
          throw ConfigError("config key '" + path + "' must be non-negative");
    }
    return v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config key '" + path + "': " + e.what());
  }
}

double positive(const json& j, const std::string& path) {
  const auto v = get<double>(j, path);
  if (!(v > 0.0)) throw ConfigError("config key '" + path + "' must be positive");
  return v;
}

json parse_config(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return json::object();
  try {
    return json::parse(text, nullptr, true, true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

// ------------------------------------------------------------- defaults --

json data_defaults(const std::string& source) {
  return json{{"source", source},
              {"count", 4000},
              {"blobs", {{"classes", 4}, {"radius", 4.0}, {"stddev", 1.0}}},
              {"gmm2", {{"p", 0.25}, {"separation", 4.0}, {"dim", 2}}},
              {"gaussian", {{"dim", 2}}},
              {"csv", {{"path", ""}, {"label_column", nullptr}, {"header", true}, {"delimiter", ","}}},
              {"split", {{"train", 1.0}, {"val", 0.0}, {"test", 0.0}}},
              {"standardize", false}};
}

json model_defaults() {
  return json{{"depth", 4},
              {"width", 64},
              {"hidden", json::array()},
              {"activation", "elu"},
              {"normalizer", "none"},
              {"dropout_rate", 0.0},
              {"dropout_kind", "standard"},
              {"dropout_placement", "last_hidden"},
              {"bn_momentum", 0.1},
              {"norm_eps", 1e-5}};
}

json defaults_for(const std::string& command) {
  if (command == "stats-verify") {
    return json{{"seed", 0},
                {"workers", 0},
                {"negative_control", false},
                {"variance",
                 {{"distributions", {"gaussian", "uniform", "two_point"}},
                  {"n", {2, 5, 10, 50}},
                  {"trials", 1000000},
                  {"rel_tol", 0.02}}},
                {"kurtosis",
                 {{"distributions", {"two_point", "gaussian", "laplace"}},
                  {"draws", 1000000},
                  {"rel_tol", 0.02},
                  {"two_point_abs_tol", 0.01},
                  {"ordering_n", 10}}},
                {"coverage",
                 {{"distributions", {"gaussian", "two_point"}},
                  {"n", {5, 20}},
                  {"eps", {0.3, 0.5, 0.8}},
                  {"trials", 100000}}}};
  }
  if (command == "gmm-phase") {
    const gmm::SingleUnitOptions su;
    return json{{"seed", 0},
                {"p", {0.1, 0.25}},
                {"separation", 4.0},
                {"dim", 2},
                {"runs", 10},
                {"angle_tol_deg", 8.0},
                {"min_pass", 9},
                {"grid_step_deg", 1.0},
                {"descent", {{"enabled", true}, {"steps", 2000}, {"lr", 0.5}, {"record_every", 10}}},
                {"single_unit",
                 {{"enabled", true},
                  {"samples", 800000},
                  {"n", su.vcl.n},
                  {"gamma", su.vcl.gamma},
                  {"beta_init", su.vcl.beta_init},
                  {"batch_size", su.batch_size},
                  {"epochs", su.epochs},
                  {"lr", su.lr},
                  {"lr_final", su.lr_final},
                  {"momentum", su.momentum},
                  {"clip_norm", su.clip_norm}}}};
  }
  if (command == "train") {
    const train::TrainConfig tc;
    const loss::VclConfig vc;
    json schedule = json::array();
    for (const auto& bp : tc.lr_schedule) schedule.push_back({bp.epoch, bp.rate});
    return json{{"seed", 0},
                {"data", data_defaults("blobs")},
                {"model", model_defaults()},
                {"train",
                 {{"batch_size", tc.batch_size},
                  {"epochs", tc.epochs},
                  {"lr_schedule", schedule},
                  {"momentum", tc.momentum},
                  {"weight_decay", tc.weight_decay},
                  {"clip_norm", tc.clip_norm},
                  {"record_kurtosis", tc.record_kurtosis}}},
                {"vcl", {{"n", vc.n}, {"gamma", vc.gamma}, {"beta_init", vc.beta_init}}},
                {"selection", {{"mask", 10}}},
                {"checks", {{"max_train_error", nullptr}}}};
  }
  if (command == "activation-hist") {
    json d = data_defaults("gaussian");
    return json{{"seed", 0},
                {"model_path", ""},
                {"model", model_defaults()},
                {"data", d},
                {"layers", json::array()},
                {"units", json::array()},
                {"bins", 30}};
  }
  if (command == "bound-check") {
    return json{{"seed", 0},
                {"model_path", ""},
                {"model", model_defaults()},
                {"data", data_defaults("blobs")},
                {"layers", json::array()},
                {"max_units_per_layer", 0},
                {"n", 20},
                {"eps", {0.3, 0.5}},
                {"trials", 10000}};
  }
  throw ConfigError("unknown command '" + command + "'");
}

// --------------------------------------------------------------- output --

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

class Report {
 public:
  Report(std::string command, json config, std::uint64_t seed) {
    doc_["command"] = std::move(command);
    doc_["seed"] = seed;
    doc_["config"] = std::move(config);
    doc_["results"] = json::object();
    doc_["checks"] = json::array();
  }

  json& results() { return doc_["results"]; }

  void check(const std::string& name, bool passed, const std::string& detail) {
    doc_["checks"].push_back({{"name", name}, {"passed", passed}, {"detail", detail}});
    summary_ << (passed ? "PASS " : "FAIL ") << name << ": " << detail << '\n';
    all_passed_ = all_passed_ && passed;
  }

  void note(const std::string& line) { summary_ << "     " << line << '\n'; }

  CommandResult finish(const fs::path& out_dir) {
    doc_["passed"] = all_passed_;
    CommandResult r;
    r.report_json = doc_.dump(2);
    r.summary = summary_.str();
    r.exit_code = all_passed_ ? kExitPass : kExitCheckFailure;
    write_text(out_dir / "report.json", r.report_json + "\n");
    return r;
  }

 private:
  json doc_;
  std::ostringstream summary_;
  bool all_passed_ = true;
};

// ----------------------------------------------------------------- data --

data::Splits resolve_data(const json& cfg, std::uint64_t seed) {
  const auto source = get<std::string>(cfg, "source");
  const auto count = get<std::size_t>(cfg, "count");
  const std::uint64_t data_seed = derive_seed(seed, 100);
  data::Dataset ds;
  std::vector<std::string> warnings;
  if (source == "blobs") {
    const int classes = get<int>(cfg, "blobs.classes");
    if (classes < 1) throw ConfigError("data.blobs.classes must be >= 1");
    ds = data::make_blobs(data::circle_centers(classes, get<double>(cfg, "blobs.radius")), positive(cfg, "blobs.stddev"),
                          count, data_seed);
  } else if (source == "gmm2") {
    const auto g = gmm::Gmm2::isotropic(get<double>(cfg, "gmm2.p"), get<double>(cfg, "gmm2.separation"),
                                        get<std::size_t>(cfg, "gmm2.dim"));
    ds = data::make_gmm2_dataset(g, count, data_seed);
  } else if (source == "gaussian") {
    const auto dim = get<std::size_t>(cfg, "gaussian.dim");
    if (dim == 0) throw ConfigError("data.gaussian.dim must be positive");
    Rng rng = make_rng(data_seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ds.rows = count;
    ds.dim = dim;
    ds.features.resize(count * dim);
    for (double& v : ds.features) v = normal(rng);
    ds.labels.assign(count, 0);
    ds.class_count = 1;
    ds.class_names = {"0"};
  } else if (source == "csv") {
    data::CsvOptions opts;
    const json& label = at_path(cfg, "csv.label_column");
    if (label.is_string()) opts.label_column = label.get<std::string>();
    else if (label.is_number_unsigned() || (label.is_number_integer() && label.get<std::int64_t>() >= 0))
      opts.label_column = label.get<std::size_t>();
    else if (!label.is_null()) throw ConfigError("data.csv.label_column must be null, a name, or an index");
    opts.header = get<bool>(cfg, "csv.header");
    const auto delim = get<std::string>(cfg, "csv.delimiter");
    if (delim.size() != 1) throw ConfigError("data.csv.delimiter must be one character");
    opts.delimiter = delim[0];
    const auto path = get<std::string>(cfg, "csv.path");
    if (path.empty()) throw ConfigError("data.csv.path is required for the csv source");
    try {
      auto loaded = data::load_csv(path, opts);
      ds = std::move(loaded.dataset);
      warnings = std::move(loaded.warnings);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  } else {
    throw ConfigError("data.source must be blobs, gmm2, gaussian, or csv");
  }
  data::Splits s = data::split(ds, get<double>(cfg, "split.train"), get<double>(cfg, "split.val"),
                               get<double>(cfg, "split.test"), derive_seed(seed, 101));
  s.warnings.insert(s.warnings.begin(), warnings.begin(), warnings.end());
  if (s.train.rows == 0) throw ConfigError("training split is empty");
  if (get<bool>(cfg, "standardize")) {
    const auto st = data::fit_standardization(s.train);
    s.train = st.apply(s.train);
    if (s.val.rows) s.val = st.apply(s.val);
    if (s.test.rows) s.test = st.apply(s.test);
  }
  return s;
}

nn::MlpSpec resolve_model(const json& cfg, std::size_t inputs, std::size_t outputs) {
  nn::MlpSpec spec;
  spec.inputs = inputs;
  spec.outputs = outputs;
  const json& hidden = at_path(cfg, "hidden");
  spec.hidden.clear();
  if (!hidden.empty()) {
    for (const auto& h : hidden) {
      if (!h.is_number_unsigned() && !(h.is_number_integer() && h.get<std::int64_t>() > 0))
        throw ConfigError("model.hidden entries must be positive integers");
      spec.hidden.push_back(h.get<std::size_t>());
    }
  } else {
    spec.hidden.assign(get<std::size_t>(cfg, "depth"), get<std::size_t>(cfg, "width"));
  }
  for (auto w : spec.hidden)
    if (w == 0) throw ConfigError("hidden widths must be positive");
  spec.activation = nn::parse_activation(get<std::string>(cfg, "activation"));
  spec.normalizer = nn::parse_normalizer(get<std::string>(cfg, "normalizer"));
  spec.dropout_rate = get<double>(cfg, "dropout_rate");
  spec.dropout_kind = nn::parse_dropout_kind(get<std::string>(cfg, "dropout_kind"));
  spec.dropout_placement = nn::parse_dropout_placement(get<std::string>(cfg, "dropout_placement"));
  spec.bn_momentum = get<double>(cfg, "bn_momentum");
  spec.norm_eps = get<double>(cfg, "norm_eps");
  return spec;
}

nn::Mlp model_from_config(const json& cfg, std::size_t inputs, std::size_t outputs, std::uint64_t seed) {
  const auto path = get<std::string>(cfg, "model_path");
  if (!path.empty()) {
    nn::Mlp m;
    try {
      m = nn::load_model(path);
    } catch (const std::exception& e) {
      throw ConfigError(std::string("cannot load model: ") + e.what());
    }
    if (m.spec().inputs != inputs)
      throw ConfigError("model expects " + std::to_string(m.spec().inputs) + " inputs, data has " +
                        std::to_string(inputs));
    return m;
  }
  Rng rng = make_rng(seed, 3);
  return nn::Mlp(resolve_model(at_path(cfg, "model"), inputs, outputs), rng);
}

std::vector<std::size_t> selected_layers(const json& cfg, std::size_t hidden_count) {
  std::vector<std::size_t> layers;
  const json& sel = at_path(cfg, "layers");
  if (sel.empty()) {
    layers.resize(hidden_count);
    std::iota(layers.begin(), layers.end(), 0);
    return layers;
  }
  for (const auto& l : sel) {
    if (!l.is_number_integer() || l.get<std::int64_t>() < 0 || l.get<std::size_t>() >= hidden_count)
      throw ConfigError("layer index " + l.dump() + " out of range (model has " + std::to_string(hidden_count) +
                        " hidden layers)");
    layers.push_back(l.get<std::size_t>());
  }
  return layers;
}

std::vector<double> unit_column(const ad::Tensor& t, std::size_t unit) {
  const std::size_t rows = t.rows();
  const std::size_t cols = t.cols();
  const auto v = t.data();
  std::vector<double> out(rows);
  for (std::size_t i = 0; i < rows; ++i) out[i] = v[i * cols + unit];
  return out;
}

std::string warnings_line(const std::vector<std::string>& warnings) {
  std::string s;
  for (const auto& w : warnings) s += (s.empty() ? "" : "; ") + w;
  return s;
}

// -------------------------------------------------------- stats-verify --

std::vector<std::string> string_list(const json& cfg, const std::string& path) {
  std::vector<std::string> out;
  for (const auto& v : at_path(cfg, path)) {
    if (!v.is_string()) throw ConfigError("config key '" + path + "' must list strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

template <typename T>
std::vector<T> number_list(const json& cfg, const std::string& path) {
  std::vector<T> out;
  for (const auto& v : at_path(cfg, path)) {
    if (!v.is_number()) throw ConfigError("config key '" + path + "' must list numbers");
    if constexpr (std::is_integral_v<T>)
      if (!v.is_number_integer()) throw ConfigError("config key '" + path + "' must list integers");
    out.push_back(v.get<T>());
  }
  return out;
}

std::unique_ptr<stats::DistSampler> sampler(const std::string& name) {
  try {
    return stats::make_sampler(name, 1.0);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// Deliberately wrong closed form used by the negative control: drops the
// finite-sample correction term.
double broken_var_of_sample_variance(double m4, double sigma2, int n) { return (m4 - sigma2 * sigma2) / n; }

CommandResult cmd_stats_verify(const json& cfg, std::uint64_t seed, const fs::path& out) {
  Report rep("stats-verify", cfg, seed);
  const stats::MonteCarloOptions mc{seed, static_cast<unsigned>(get<std::size_t>(cfg, "workers"))};
  const bool broken = get<bool>(cfg, "negative_control");
  if (broken) rep.note("negative control: closed form replaced by a wrong formula");

  std::ostringstream table;
  table << "check\tdistribution\tn\teps\tclosed_form\tmonte_carlo\trel_error\tpassed\n";

  // Variance of the sample variance.
  const auto var_trials = get<std::size_t>(cfg, "variance.trials");
  const auto var_tol = positive(cfg, "variance.rel_tol");
  json var_rows = json::array();
  std::size_t stream = 0;
  for (const auto& name : string_list(cfg, "variance.distributions")) {
    const auto dist = sampler(name);
    for (int n : number_list<int>(cfg, "variance.n")) {
      if (n < 2) throw ConfigError("variance.n entries must be >= 2");
      const double s2 = *dist->population_variance();
      const double m4 = *dist->population_m4();
      const double closed = broken ? broken_var_of_sample_variance(m4, s2, n) : stats::var_of_sample_variance(m4, s2, n);
      const double mcv =
          stats::mc_var_of_sample_variance(*dist, n, var_trials, {derive_seed(mc.seed, ++stream), mc.workers});
      const double rel = std::abs(mcv - closed) / std::abs(closed);
      const bool ok = rel <= var_tol;
      var_rows.push_back({{"distribution", name}, {"n", n}, {"closed_form", closed}, {"monte_carlo", mcv},
                          {"rel_error", rel}, {"passed", ok}});
      table << "variance\t" << name << '\t' << n << "\t\t" << fmt(closed) << '\t' << fmt(mcv) << '\t' << fmt(rel)
            << '\t' << ok << '\n';
      char detail[160];
      std::snprintf(detail, sizeof detail, "closed %.6g, Monte-Carlo %.6g, rel error %.4f (tol %.3g)", closed, mcv,
                    rel, var_tol);
      rep.check("var_of_sample_variance " + name + " n=" + std::to_string(n), ok, detail);
    }
  }
  rep.results()["variance"] = var_rows;

  // Kurtosis and the ordering of the population VCL value.
  const auto draws = get<std::size_t>(cfg, "kurtosis.draws");
  const auto kurt_tol = positive(cfg, "kurtosis.rel_tol");
  const auto two_point_tol = positive(cfg, "kurtosis.two_point_abs_tol");
  const int ordering_n = get<int>(cfg, "kurtosis.ordering_n");
  if (ordering_n < 2) throw ConfigError("kurtosis.ordering_n must be >= 2");
  json kurt_rows = json::array();
  std::vector<std::pair<double, std::string>> by_kappa;
  for (const auto& name : string_list(cfg, "kurtosis.distributions")) {
    const auto dist = sampler(name);
    const double kappa = *dist->population_kurtosis();
    const auto m = stats::mc_moments(*dist, draws, {derive_seed(mc.seed, ++stream), mc.workers});
    const double mck = m.kurtosis.value_or(std::nan(""));
    const double rel = std::abs(mck - kappa) / kappa;
    bool ok = rel <= kurt_tol;
    std::string detail = "closed " + num(kappa) + ", Monte-Carlo " + num(mck);
    if (name == "two_point") {
      ok = ok && std::abs(mck - 1.0) <= two_point_tol;
      detail += " (|k - 1| <= " + num(two_point_tol) + ")";
    }
    const double pop = loss::population_vcl(kappa, ordering_n);
    by_kappa.emplace_back(pop, name);
    kurt_rows.push_back({{"distribution", name}, {"closed_form", kappa}, {"monte_carlo", number_or_null(mck)},
                         {"rel_error", number_or_null(rel)}, {"population_vcl", pop}, {"passed", ok}});
    table << "kurtosis\t" << name << "\t\t\t" << fmt(kappa) << '\t' << fmt(mck) << '\t' << fmt(rel) << '\t' << ok
          << '\n';
    rep.check("kurtosis " + name, ok, detail);
  }
  std::sort(by_kappa.begin(), by_kappa.end());
  std::string order;
  for (const auto& [v, name] : by_kappa) order += (order.empty() ? "" : " < ") + name;
  bool ordering_ok = true;
  for (std::size_t i = 1; i < by_kappa.size(); ++i) {
    const auto ki = sampler(by_kappa[i].second)->population_kurtosis().value();
    const auto kp = sampler(by_kappa[i - 1].second)->population_kurtosis().value();
    ordering_ok = ordering_ok && by_kappa[i].first > by_kappa[i - 1].first && ki > kp;
  }
  rep.results()["kurtosis"] = kurt_rows;
  rep.results()["population_vcl_order"] = order;
  rep.check("population_vcl increases with kurtosis", ordering_ok, order);

  // Ratio coverage against the Chebyshev bound.
  const auto cov_trials = get<std::size_t>(cfg, "coverage.trials");
  json cov_rows = json::array();
  for (const auto& name : string_list(cfg, "coverage.distributions")) {
    const auto dist = sampler(name);
    const double kappa = *dist->population_kurtosis();
    for (int n : number_list<int>(cfg, "coverage.n")) {
      if (n < 2) throw ConfigError("coverage.n entries must be >= 2");
      for (double eps : number_list<double>(cfg, "coverage.eps")) {
        if (!(eps > 0.0 && eps < 1.0)) throw ConfigError("coverage.eps entries must lie in (0, 1)");
        const double bound = stats::chebyshev_bound_rhs(kappa, n, eps);
        const stats::MonteCarloOptions opts{derive_seed(mc.seed, ++stream), mc.workers};
        const double cover = stats::mc_ratio_coverage(*dist, n, eps, cov_trials, opts);
        const double band =
            stats::mc_ratio_coverage(*dist, n, eps, cov_trials, opts, stats::RatioEvent::squared_band);
        const bool ok = cover >= bound;
        cov_rows.push_back({{"distribution", name}, {"n", n}, {"eps", eps}, {"bound", bound}, {"coverage", cover},
                            {"squared_band_coverage", band}, {"passed", ok}});
        table << "coverage\t" << name << '\t' << n << '\t' << fmt(eps) << '\t' << fmt(bound) << '\t' << fmt(cover)
              << "\t\t" << ok << '\n';
        rep.check("coverage " + name + " n=" + std::to_string(n) + " eps=" + num(eps), ok,
                  "coverage " + num(cover) + " >= bound " + num(bound));
      }
    }
  }
  rep.results()["coverage"] = cov_rows;
  write_text(out / "stats.tsv", table.str());
  return rep.finish(out);
}

// ------------------------------------------------------------ gmm-phase --

void append_trajectory(std::ostringstream& os, double p, std::size_t run, const std::vector<gmm::TrajectoryRow>& rows) {
  for (const auto& r : rows) {
    os << fmt(p) << '\t' << run << '\t' << r.step;
    for (Eigen::Index i = 0; i < r.theta.size(); ++i) os << '\t' << fmt(r.theta(i));
    os << '\t' << fmt(r.kurtosis) << '\n';
  }
}

std::string trajectory_header(const char* step_name, std::size_t dim) {
  std::string h = std::string("p\trun\t") + step_name;
  for (std::size_t i = 0; i < dim; ++i) h += "\ttheta_" + std::to_string(i);
  return h + "\tkurtosis\n";
}

json vec_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

CommandResult cmd_gmm_phase(const json& cfg, std::uint64_t seed, const fs::path& out) {
  Report rep("gmm-phase", cfg, seed);
  const auto ps = number_list<double>(cfg, "p");
  const double separation = positive(cfg, "separation");
  const auto dim = get<std::size_t>(cfg, "dim");
  if (dim < 2) throw ConfigError("dim must be >= 2");
  const auto runs = get<std::size_t>(cfg, "runs");
  const double tol = positive(cfg, "angle_tol_deg");
  const auto min_pass = get<std::size_t>(cfg, "min_pass");
  const double grid_step = positive(cfg, "grid_step_deg");

  const bool descent_on = get<bool>(cfg, "descent.enabled");
  const int steps = get<int>(cfg, "descent.steps");
  const double lr = positive(cfg, "descent.lr");
  const int record_every = get<int>(cfg, "descent.record_every");
  if (record_every < 1) throw ConfigError("descent.record_every must be >= 1");

  const bool unit_on = get<bool>(cfg, "single_unit.enabled");
  const auto samples = get<std::size_t>(cfg, "single_unit.samples");
  gmm::SingleUnitOptions su;
  su.vcl.n = get<int>(cfg, "single_unit.n");
  su.vcl.gamma = positive(cfg, "single_unit.gamma");
  su.vcl.beta_init = positive(cfg, "single_unit.beta_init");
  su.batch_size = get<std::size_t>(cfg, "single_unit.batch_size");
  su.epochs = get<int>(cfg, "single_unit.epochs");
  su.lr = positive(cfg, "single_unit.lr");
  su.lr_final = positive(cfg, "single_unit.lr_final");
  su.momentum = get<double>(cfg, "single_unit.momentum");
  su.clip_norm = positive(cfg, "single_unit.clip_norm");
  if (unit_on) {
    try {
      su.vcl.validate(su.batch_size);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("single_unit: ") + e.what());
    }
    if (samples < su.batch_size) throw ConfigError("single_unit.samples is smaller than one minibatch");
  }

  std::ostringstream descent_tsv, unit_tsv, angles_tsv;
  descent_tsv << trajectory_header("step", dim);
  unit_tsv << trajectory_header("epoch", dim);
  angles_tsv << "p\tregime\trun\tdescent_angle_deg\tsingle_unit_angle_deg\n";

  json per_p = json::array();
  for (double p : ps) {
    gmm::Gmm2 g;
    try {
      g = gmm::Gmm2::isotropic(p, separation, dim);
      g.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    const auto sp = gmm::scatter_matrices(g);
    const gmm::Regime regime = gmm::phase_regime(p);
    const Eigen::VectorXd lda = gmm::lda_direction(sp);
    Eigen::VectorXd target = lda;
    std::string target_kind = "lda";
    if (regime == gmm::Regime::merge) {
      if (dim == 2) {
        target = gmm::grid_rayleigh_direction(sp, false, grid_step);
        target_kind = "grid_rayleigh_min";
      } else {
        target = gmm::merge_direction(sp);
        target_kind = "generalized_eigen_min";
      }
    }

    json entry{{"p", p},
               {"regime", gmm::to_string(regime)},
               {"target", target_kind},
               {"target_direction", vec_json(target)},
               {"lda_direction", vec_json(lda)}};
    std::size_t descent_ok = 0, unit_ok = 0;
    json descent_angles = json::array(), unit_angles = json::array();
    for (std::size_t run = 0; run < runs; ++run) {
      const std::uint64_t run_seed = derive_seed(seed, run);
      double da = std::nan(""), ua = std::nan("");
      if (descent_on) {
        Rng rng = make_rng(run_seed, 0);
        std::normal_distribution<double> normal(0.0, 1.0);
        Eigen::VectorXd theta0(static_cast<Eigen::Index>(dim));
        for (Eigen::Index i = 0; i < theta0.size(); ++i) theta0(i) = normal(rng);
        const auto res = gmm::minimize_projection_kurtosis(g, theta0, steps, lr, record_every);
        da = gmm::axial_angle_deg(res.direction, target);
        descent_ok += da <= tol;
        descent_angles.push_back(da);
        append_trajectory(descent_tsv, p, run, res.trajectory);
      }
      if (unit_on) {
        Eigen::MatrixXd x;
        std::vector<int> labels;
        gmm::sample_gmm2(g, samples, derive_seed(run_seed, 1), x, labels);
        const auto res = gmm::train_single_unit_vcl(x, su, derive_seed(run_seed, 2));
        ua = gmm::axial_angle_deg(res.direction, target);
        unit_ok += ua <= tol;
        unit_angles.push_back(number_or_null(ua));
        append_trajectory(unit_tsv, p, run, res.trajectory);
      }
      angles_tsv << fmt(p) << '\t' << gmm::to_string(regime) << '\t' << run << '\t' << fmt(da) << '\t' << fmt(ua)
                 << '\n';
    }
    const std::string label = "p=" + num(p) + " (" + gmm::to_string(regime) + ", target " + target_kind + ")";
    if (descent_on) {
      entry["descent"] = {{"angles_deg", descent_angles}, {"within_tol", descent_ok}};
      rep.check("kurtosis descent " + label, descent_ok >= min_pass,
                std::to_string(descent_ok) + "/" + std::to_string(runs) + " runs within " + num(tol) + " deg");
    }
    if (unit_on) {
      entry["single_unit"] = {{"angles_deg", unit_angles}, {"within_tol", unit_ok}};
      rep.check("single-unit VCL " + label, unit_ok >= min_pass,
                std::to_string(unit_ok) + "/" + std::to_string(runs) + " runs within " + num(tol) + " deg");
    }
    per_p.push_back(entry);
  }
  rep.results()["phase_boundary"] = {gmm::phase_boundary_low(), gmm::phase_boundary_high()};
  rep.results()["mixtures"] = per_p;
  write_text(out / "angles.tsv", angles_tsv.str());
  if (descent_on) write_text(out / "descent_trajectories.tsv", descent_tsv.str());
  if (unit_on) write_text(out / "single_unit_trajectories.tsv", unit_tsv.str());
  return rep.finish(out);
}

// ---------------------------------------------------------------- train --

train::TrainConfig resolve_train(const json& cfg, nn::Normalizer normalizer, std::uint64_t seed) {
  train::TrainConfig tc;
  tc.batch_size = get<std::size_t>(cfg, "train.batch_size");
  tc.epochs = get<int>(cfg, "train.epochs");
  tc.lr_schedule.clear();
  for (const auto& bp : at_path(cfg, "train.lr_schedule")) {
    if (!bp.is_array() || bp.size() != 2 || !bp[0].is_number_integer() || !bp[1].is_number())
      throw ConfigError("train.lr_schedule entries must be [epoch, rate] pairs");
    tc.lr_schedule.push_back({bp[0].get<int>(), bp[1].get<double>()});
  }
  tc.momentum = get<double>(cfg, "train.momentum");
  tc.weight_decay = get<double>(cfg, "train.weight_decay");
  tc.clip_norm = get<double>(cfg, "train.clip_norm");
  tc.record_kurtosis = get<bool>(cfg, "train.record_kurtosis");
  tc.seed = seed;
  tc.normalizer = normalizer;
  if (normalizer == nn::Normalizer::vcl)
    tc.vcl = loss::VclConfig{get<int>(cfg, "vcl.n"), get<double>(cfg, "vcl.gamma"), get<double>(cfg, "vcl.beta_init")};
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return tc;
}

json epoch_json(const train::EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", number_or_null(r.train_loss)},
          {"train_err", number_or_null(r.train_err)},
          {"val_err", number_or_null(r.val_err)},
          {"test_err", number_or_null(r.test_err)},
          {"mean_kurtosis", number_or_null(r.mean_kurtosis)},
          {"vcl_loss", number_or_null(r.vcl_loss)}};
}

CommandResult cmd_train(const json& cfg, std::uint64_t seed, const fs::path& out) {
  Report rep("train", cfg, seed);
  const data::Splits splits = resolve_data(at_path(cfg, "data"), seed);
  if (!splits.warnings.empty()) rep.note("data warnings: " + warnings_line(splits.warnings));
  const nn::MlpSpec spec =
      resolve_model(at_path(cfg, "model"), splits.train.dim, static_cast<std::size_t>(splits.train.class_count));
  const train::TrainConfig tc = resolve_train(cfg, spec.normalizer, seed);
  const auto mask = get<std::size_t>(cfg, "selection.mask");
  if (mask == 0) throw ConfigError("selection.mask must be positive");
  if (spec.outputs < 2) throw ConfigError("training needs at least two classes");

  Rng init_rng = make_rng(seed, 3);
  nn::Mlp model(spec, init_rng);
  train::TrainState state;
  rep.results()["sizes"] = {{"train", splits.train.rows}, {"val", splits.val.rows}, {"test", splits.test.rows}};
  rep.results()["data_warnings"] = splits.warnings;

  const auto start = std::chrono::steady_clock::now();
  train::TrainHistory history;
  std::string aborted;
  try {
    history = train::train(model, splits.train, splits.val, tc, &state, &splits.test);
  } catch (const train::TrainingAborted& e) {
    history = e.history();
    aborted = e.what();
  } catch (const std::domain_error& e) {
    aborted = e.what();
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_text(out / "history.tsv", history.to_tsv());
  rep.results()["seconds"] = seconds;
  rep.results()["clip_events"] = history.total_clip_events();

  if (!aborted.empty()) {
    rep.results()["aborted"] = aborted;
    rep.check("training completed", false, aborted);
    return rep.finish(out);
  }
  nn::save_model(model, (out / "model.vclm").string());
  if (!history.epochs.empty()) rep.results()["final"] = epoch_json(history.epochs.back());
  if (!state.vcl.empty()) {
    json betas = json::array();
    for (const auto& s : state.vcl) {
      const auto b = s.beta.data();
      betas.push_back({{"mean", std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size())},
                       {"min", *std::min_element(b.begin(), b.end())},
                       {"max", *std::max_element(b.begin(), b.end())}});
    }
    rep.results()["vcl_beta"] = betas;
  }
  if (splits.val.rows && !history.epochs.empty()) {
    const auto sel = train::smoothed_validation_selection(history.val_errors(), mask);
    const auto& r = history.epochs[sel.epoch];
    rep.results()["selection"] = {{"epoch", sel.epoch},
                                  {"smoothed_val_err", sel.smoothed},
                                  {"train_err", r.train_err},
                                  {"val_err", r.val_err},
                                  {"test_err", number_or_null(r.test_err)}};
  }
  rep.check("training completed", true,
            std::to_string(history.epochs.size()) + " epochs, " + std::to_string(history.total_clip_events()) +
                " clip events");
  const json& max_err = at_path(cfg, "checks.max_train_error");
  if (!max_err.is_null() && !history.epochs.empty()) {
    const double e = history.epochs.back().train_err;
    rep.check("final train error", e <= max_err.get<double>(), num(e) + " <= " + num(max_err.get<double>()));
  }
  return rep.finish(out);
}

// ------------------------------------------------------ activation-hist --

struct Histogram {
  double lo = 0.0;
  double hi = 0.0;
  std::vector<std::size_t> counts;
};

Histogram histogram(std::span<const double> v, std::size_t bins) {
  Histogram h;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  h.lo = *mn;
  h.hi = *mx;
  if (h.lo == h.hi) {
    h.counts = {v.size()};
    return h;
  }
  h.counts.assign(bins, 0);
  const double width = (h.hi - h.lo) / static_cast<double>(bins);
  for (double x : v) {
    auto k = static_cast<std::size_t>((x - h.lo) / width);
    ++h.counts[std::min(k, bins - 1)];
  }
  return h;
}

CommandResult cmd_activation_hist(const json& cfg, std::uint64_t seed, const fs::path& out) {
  Report rep("activation-hist", cfg, seed);
  const data::Splits splits = resolve_data(at_path(cfg, "data"), seed);
  const data::Dataset& ds = splits.train;
  nn::Mlp model = model_from_config(cfg, ds.dim, std::max<std::size_t>(2, static_cast<std::size_t>(ds.class_count)), seed);
  const auto bins = get<std::size_t>(cfg, "bins");
  if (bins == 0) throw ConfigError("bins must be positive");
  const auto layers = selected_layers(cfg, model.hidden_count());

  (void)train::forward_eval(model, ds);
  const auto pre = model.hidden_pre_activations();
  const auto& post = model.hidden_post_activations();

  std::ostringstream hist_tsv, unit_tsv;
  hist_tsv << "layer\tunit\tstage\tbin\tlo\thi\tcount\n";
  unit_tsv << "layer\tunit\tpre_mean\tpre_variance\tpre_kurtosis\tpost_kurtosis\n";
  double pre_sum = 0.0, post_sum = 0.0;
  std::size_t pre_count = 0, post_count = 0;
  json per_layer = json::array();
  for (std::size_t l : layers) {
    const std::size_t width = pre[l].cols();
    std::vector<std::size_t> units;
    const json& sel = at_path(cfg, "units");
    if (sel.empty()) {
      units.resize(width);
      std::iota(units.begin(), units.end(), 0);
    } else {
      for (const auto& u : sel) {
        if (!u.is_number_integer() || u.get<std::int64_t>() < 0 || u.get<std::size_t>() >= width)
          throw ConfigError("unit index " + u.dump() + " out of range (layer " + std::to_string(l) + " has " +
                            std::to_string(width) + " units)");
        units.push_back(u.get<std::size_t>());
      }
    }
    double layer_sum = 0.0;
    std::size_t layer_count = 0;
    for (std::size_t u : units) {
      const auto a = unit_column(pre[l], u);
      const auto b = unit_column(post[l], u);
      const auto ma = stats::compute_moments(a);
      const auto mb = stats::compute_moments(b);
      for (const auto& [stage, values] : {std::pair{"pre", &a}, std::pair{"post", &b}}) {
        const Histogram h = histogram(*values, bins);
        const double w = h.counts.size() > 1 ? (h.hi - h.lo) / static_cast<double>(h.counts.size()) : 0.0;
        for (std::size_t k = 0; k < h.counts.size(); ++k) {
          const double lo = h.lo + w * static_cast<double>(k);
          const double hi = k + 1 == h.counts.size() ? h.hi : lo + w;
          hist_tsv << l << '\t' << u << '\t' << stage << '\t' << k << '\t' << fmt(lo) << '\t' << fmt(hi) << '\t'
                   << h.counts[k] << '\n';
        }
      }
      const double ka = ma.kurtosis.value_or(std::nan(""));
      const double kb = mb.kurtosis.value_or(std::nan(""));
      unit_tsv << l << '\t' << u << '\t' << fmt(ma.mean) << '\t' << fmt(ma.var_biased) << '\t' << fmt(ka) << '\t'
               << fmt(kb) << '\n';
      if (ma.kurtosis) {
        pre_sum += ka;
        layer_sum += ka;
        ++pre_count;
        ++layer_count;
      }
      if (mb.kurtosis) {
        post_sum += kb;
        ++post_count;
      }
    }
    per_layer.push_back({{"layer", l},
                         {"units", units.size()},
                         {"mean_pre_kurtosis", number_or_null(layer_count ? layer_sum / static_cast<double>(layer_count)
                                                                          : std::nan(""))}});
  }
  const double mean_pre = pre_count ? pre_sum / static_cast<double>(pre_count) : std::nan("");
  const double mean_post = post_count ? post_sum / static_cast<double>(post_count) : std::nan("");
  rep.results()["rows"] = ds.rows;
  rep.results()["layers"] = per_layer;
  rep.results()["mean_pre_kurtosis"] = number_or_null(mean_pre);
  rep.results()["mean_post_kurtosis"] = number_or_null(mean_post);
  write_text(out / "histograms.tsv", hist_tsv.str());
  write_text(out / "units.tsv", unit_tsv.str());
  rep.check("histograms written", true,
            "mean pre-activation kurtosis " + num(mean_pre) + " over " + std::to_string(pre_count) + " units");
  return rep.finish(out);
}

// ---------------------------------------------------------- bound-check --

CommandResult cmd_bound_check(const json& cfg, std::uint64_t seed, const fs::path& out) {
  Report rep("bound-check", cfg, seed);
  const data::Splits splits = resolve_data(at_path(cfg, "data"), seed);
  const data::Dataset& ds = splits.train;
  nn::Mlp model = model_from_config(cfg, ds.dim, std::max<std::size_t>(2, static_cast<std::size_t>(ds.class_count)), seed);
  const auto layers = selected_layers(cfg, model.hidden_count());
  const auto per_layer = get<std::size_t>(cfg, "max_units_per_layer");
  const int n = get<int>(cfg, "n");
  if (n < 2) throw ConfigError("n must be >= 2");
  const auto eps_grid = number_list<double>(cfg, "eps");
  for (double e : eps_grid)
    if (!(e > 0.0 && e < 1.0)) throw ConfigError("eps entries must lie in (0, 1)");
  const auto trials = get<std::size_t>(cfg, "trials");
  if (trials == 0) throw ConfigError("trials must be positive");

  (void)train::forward_eval(model, ds);
  const auto pre = model.hidden_pre_activations();

  std::ostringstream tsv;
  tsv << "layer\tunit\tkurtosis\teps\tbound\tempirical\n";
  std::vector<double> emp_sum(eps_grid.size(), 0.0), bound_sum(eps_grid.size(), 0.0),
      min_margin(eps_grid.size(), std::numeric_limits<double>::infinity());
  std::vector<std::size_t> violations(eps_grid.size(), 0);
  std::size_t tested = 0;
  double kappa_sum = 0.0;
  json skipped = json::array();
  std::vector<double> batch(static_cast<std::size_t>(n));
  for (std::size_t l : layers) {
    const std::size_t width = pre[l].cols();
    std::vector<std::size_t> units(width);
    std::iota(units.begin(), units.end(), 0);
    if (per_layer > 0 && per_layer < width) {
      Rng pick = make_rng(derive_seed(seed, 200 + l));
      std::shuffle(units.begin(), units.end(), pick);
      units.resize(per_layer);
      std::sort(units.begin(), units.end());
    }
    for (std::size_t u : units) {
      const auto values = unit_column(pre[l], u);
      const auto m = stats::compute_moments(values);
      if (!m.kurtosis) {
        skipped.push_back({{"layer", l}, {"unit", u}});
        continue;
      }
      ++tested;
      kappa_sum += *m.kurtosis;
      Rng rng = make_rng(derive_seed(seed, 300 + l), u);
      std::uniform_int_distribution<std::size_t> index(0, values.size() - 1);
      std::vector<double> ratios(trials);
      for (auto& r : ratios) {
        for (double& b : batch) b = values[index(rng)];
        r = stats::sample_variance_unbiased(batch) / m.var_biased;
      }
      for (std::size_t e = 0; e < eps_grid.size(); ++e) {
        const double eps = eps_grid[e];
        const auto hits = std::count_if(ratios.begin(), ratios.end(),
                                        [&](double r) { return r >= 1.0 - eps && r <= 1.0 + eps; });
        const double empirical = static_cast<double>(hits) / static_cast<double>(trials);
        const double bound = stats::batchnorm_stability_bound(*m.kurtosis, n, eps);
        emp_sum[e] += empirical;
        bound_sum[e] += bound;
        min_margin[e] = std::min(min_margin[e], empirical - bound);
        violations[e] += empirical < bound;
        tsv << l << '\t' << u << '\t' << fmt(*m.kurtosis) << '\t' << fmt(eps) << '\t' << fmt(bound) << '\t'
            << fmt(empirical) << '\n';
      }
    }
  }
  write_text(out / "units.tsv", tsv.str());
  json per_eps = json::array();
  for (std::size_t e = 0; e < eps_grid.size(); ++e) {
    const double denom = tested ? static_cast<double>(tested) : std::nan("");
    per_eps.push_back({{"eps", eps_grid[e]},
                       {"mean_empirical", number_or_null(emp_sum[e] / denom)},
                       {"mean_bound", number_or_null(bound_sum[e] / denom)},
                       {"min_margin", number_or_null(min_margin[e])},
                       {"violations", violations[e]}});
    rep.check("bound eps=" + num(eps_grid[e]), violations[e] == 0,
              std::to_string(violations[e]) + " of " + std::to_string(tested) + " units below the bound, mean empirical " +
                  num(emp_sum[e] / denom));
  }
  rep.results()["units_tested"] = tested;
  rep.results()["mean_kurtosis"] = number_or_null(tested ? kappa_sum / static_cast<double>(tested) : std::nan(""));
  rep.results()["per_eps"] = per_eps;
  rep.results()["skipped_zero_variance"] = skipped;
  if (!skipped.empty()) rep.note(std::to_string(skipped.size()) + " zero-variance units skipped");
  return rep.finish(out);
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"stats-verify", "gmm-phase", "train", "activation-hist", "bound-check"};
  return names;
}

std::string default_config(const std::string& command) { return defaults_for(command).dump(2); }

CommandResult run_command(const std::string& command, const std::string& config_json, const std::string& out_dir,
                          std::optional<std::uint64_t> seed) {
  json cfg = defaults_for(command);
  merge_strict(cfg, parse_config(config_json), "");
  if (seed) cfg["seed"] = *seed;
  const auto resolved_seed = get<std::uint64_t>(cfg, "seed");

  const fs::path out(out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw ConfigError("cannot create output directory " + out.string() + ": " + ec.message());

  try {
    if (command == "stats-verify") return cmd_stats_verify(cfg, resolved_seed, out);
    if (command == "gmm-phase") return cmd_gmm_phase(cfg, resolved_seed, out);
    if (command == "train") return cmd_train(cfg, resolved_seed, out);
    if (command == "activation-hist") return cmd_activation_hist(cfg, resolved_seed, out);
    return cmd_bound_check(cfg, resolved_seed, out);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

}  // namespace vcl::lab
