#include "srco/dataset.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "srco/eval.hpp"

namespace srco {

std::vector<BenchmarkSpec> desk_benchmarks() {
  auto box = [](int d) {
    return std::vector<std::pair<double, double>>(d, {1.0, 5.0});
  };
  std::vector<BenchmarkSpec> specs;
  auto add = [&](std::string name, std::string tier, int d, std::string expr) {
    BenchmarkSpec s;
    s.name = std::move(name);
    s.tier = std::move(tier);
    s.d = d;
    s.expression = std::move(expr);
    s.input_box = box(d);
    specs.push_back(std::move(s));
  };
  // easy: d=2
  add("easy_linsin", "easy", 2, "2.5 x0 mul 1.3 x1 mul sin add");
  add("easy_linlin", "easy", 2, "1.7 x0 mul 0.8 x1 mul add");
  add("easy_mulcos", "easy", 2, "0.6 x0 x1 mul mul 0.9 x0 mul cos add");
  // medium: d=3
  add("medium_prodsin", "medium", 3, "0.8 x0 x1 mul mul 1.1 x2 mul sin add");
  add("medium_linprod", "medium", 3, "1.2 x0 mul 0.7 x1 x2 mul mul add");
  add("medium_ratio", "medium", 3, "2.0 x0 mul x2 div 0.5 x1 mul add");
  // hard: d=4
  add("hard_ratiocos", "hard", 4, "0.9 x0 x1 mul mul x2 div 0.7 x3 mul cos add");
  add("hard_twotrig", "hard", 4, "2.0 1.1 x0 mul sin mul 1.5 0.9 x1 mul cos mul add 0.5 x2 x3 mul mul add");
  add("hard_mixed", "hard", 4, "1.5 x0 mul x1 div 0.8 x2 x3 mul mul add 1.0 add");
  return specs;
}

BenchmarkSpec find_desk_benchmark(const std::string& name) {
  for (auto& s : desk_benchmarks())
    if (s.name == name) return s;
  fail(ErrorCode::ConfigError, "unknown desk benchmark '" + name + "'");
}

namespace {

Dataset sample_split(const BenchmarkSpec& spec, const ExprTree& truth, int n,
                     const std::string& split, uint64_t stream_seed) {
  Dataset ds;
  ds.name = spec.name;
  ds.split = split;
  ds.input_box = spec.input_box;
  ds.X = Matrix(n, spec.d);
  for (int j = 0; j < spec.d; ++j) ds.feature_names.push_back("x" + std::to_string(j));

  std::mt19937_64 rng(stream_seed);
  for (int j = 0; j < spec.d; ++j) {
    std::uniform_real_distribution<double> u(spec.input_box[j].first, spec.input_box[j].second);
    for (int i = 0; i < n; ++i) ds.X(i, j) = u(rng);
  }
  EvalResult out = evaluate_tree(truth, ds.X);
  for (int i = 0; i < n; ++i) {
    if (!out.finite_mask[i])
      fail(ErrorCode::NonFiniteTarget,
           spec.name + ": ground truth non-finite at a sampled input (row " + std::to_string(i) +
               ")");
  }
  ds.y = std::move(out.values);
  return ds;
}

}  // namespace

std::pair<Dataset, Dataset> generate_synthetic(const BenchmarkSpec& spec, const Vocab& vocab) {
  if (spec.d < 1 || spec.train_n < 1 || spec.test_n < 1)
    fail(ErrorCode::ConfigError, "invalid benchmark spec '" + spec.name + "'");
  if (static_cast<int>(spec.input_box.size()) != spec.d)
    fail(ErrorCode::ConfigError, "input_box size != d for '" + spec.name + "'");
  if (spec.d > vocab.max_vars())
    fail(ErrorCode::ConfigError, "benchmark dimensionality exceeds vocab max_vars");
  ExprTree truth = parse_postfix_with_constants(spec.expression, vocab);

  uint64_t train_seed = derive_seed(spec.seed, "dataset.train", fnv1a64(spec.name));
  uint64_t test_seed = derive_seed(spec.seed, "dataset.test", fnv1a64(spec.name));
  Dataset train = sample_split(spec, truth, spec.train_n, "train", train_seed);
  Dataset test = sample_split(spec, truth, spec.test_n, "test", test_seed);
  return {std::move(train), std::move(test)};
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

Dataset load_csv(const std::string& path, const std::string& target_column) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path);
  std::string line;
  if (!std::getline(in, line)) fail(ErrorCode::EmptyFile, path);
  std::vector<std::string> header = split_csv_line(line);
  for (auto& h : header) h = trim(h);

  int target_idx = -1;
  for (size_t i = 0; i < header.size(); ++i)
    if (header[i] == target_column) target_idx = static_cast<int>(i);
  if (target_idx < 0) fail(ErrorCode::MissingTarget, "'" + target_column + "' not in header");
  if (header.size() < 2) fail(ErrorCode::MissingTarget, "no feature columns");

  Dataset ds;
  ds.name = path;
  for (size_t i = 0; i < header.size(); ++i)
    if (static_cast<int>(i) != target_idx) ds.feature_names.push_back(header[i]);

  std::vector<double> flat;
  std::vector<double> targets;
  int row_number = 1;
  while (std::getline(in, line)) {
    ++row_number;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != header.size())
      fail(ErrorCode::NonNumericCell,
           "row " + std::to_string(row_number) + ": expected " + std::to_string(header.size()) +
               " cells, got " + std::to_string(cells.size()));
    for (size_t c = 0; c < cells.size(); ++c) {
      bool ok = false;
      double v = parse_double(trim(cells[c]), &ok);
      if (!ok || !std::isfinite(v))
        fail(ErrorCode::NonNumericCell,
             "row " + std::to_string(row_number) + ", column '" + header[c] + "'");
      if (static_cast<int>(c) == target_idx)
        targets.push_back(v);
      else
        flat.push_back(v);
    }
  }
  if (targets.empty()) fail(ErrorCode::EmptyFile, path + " has no data rows");

  int n = static_cast<int>(targets.size());
  int d = static_cast<int>(ds.feature_names.size());
  ds.X = Matrix(n, d);
  ds.X.a = std::move(flat);
  ds.y = std::move(targets);
  // input box from the observed data range; used for probing only
  ds.input_box.resize(d);
  for (int j = 0; j < d; ++j) {
    double lo = ds.X(0, j), hi = ds.X(0, j);
    for (int i = 1; i < n; ++i) {
      lo = std::min(lo, ds.X(i, j));
      hi = std::max(hi, ds.X(i, j));
    }
    ds.input_box[j] = {lo, hi};
  }
  return ds;
}

void save_csv(const Dataset& ds, const std::string& target_column, const std::string& path) {
  std::string out;
  for (const auto& f : ds.feature_names) out += f + ",";
  out += target_column + "\n";
  for (int i = 0; i < ds.n(); ++i) {
    for (int j = 0; j < ds.d(); ++j) out += format_double(ds.X(i, j)) + ",";
    out += format_double(ds.y[i]) + "\n";
  }
  atomic_write_file(path, out);
}

Dataset perturb_features(const Dataset& test, const Dataset& train, double eta, uint64_t seed,
                         PerturbInfo* info) {
  if (test.d() != train.d()) fail(ErrorCode::DimensionMismatch, "train/test dimensionality");
  if (eta < 0.0 || eta > 1.0) fail(ErrorCode::ConfigError, "eta must lie in [0, 1]");

  PerturbInfo local;
  local.sigma.resize(train.d());
  for (int j = 0; j < train.d(); ++j) {
    double m = 0.0;
    for (int i = 0; i < train.n(); ++i) m += train.X(i, j);
    m /= train.n();
    double ss = 0.0;
    for (int i = 0; i < train.n(); ++i) {
      double dxi = train.X(i, j) - m;
      ss += dxi * dxi;
    }
    local.sigma[j] = train.n() > 1 ? std::sqrt(ss / (train.n() - 1)) : 0.0;
    if (local.sigma[j] == 0.0) local.degenerate_features.push_back(j);
  }

  Dataset out = test;
  if (eta > 0.0) {
    std::mt19937_64 rng(seed);
    for (int j = 0; j < test.d(); ++j) {
      if (local.sigma[j] == 0.0) continue;
      std::normal_distribution<double> noise(0.0, eta * local.sigma[j]);
      for (int i = 0; i < test.n(); ++i) out.X(i, j) += noise(rng);
    }
  }
  if (info) *info = std::move(local);
  return out;
}

std::vector<NoiseSweepRow> noise_sweep(const PostfixTemplate& tmpl, std::span<const double> w,
                                       const Dataset& train, const Dataset& test,
                                       std::span<const double> etas, uint64_t seed,
                                       const Vocab& vocab) {
  std::vector<NoiseSweepRow> rows;
  rows.reserve(etas.size());
  for (size_t k = 0; k < etas.size(); ++k) {
    Dataset noisy = perturb_features(test, train, etas[k], derive_seed(seed, "noise", k));
    EvalResult pred = evaluate(tmpl, w, noisy.X, vocab);
    NoiseSweepRow row;
    row.eta = etas[k];
    row.metrics = compute_metrics(pred.values, noisy.y);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace srco
