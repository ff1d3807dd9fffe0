#ifndef SRCO_DATASET_HPP_
#define SRCO_DATASET_HPP_

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srco/common.hpp"
#include "srco/expr.hpp"
#include "srco/metrics.hpp"

namespace srco {

struct Dataset {
  std::string name;
  Matrix X;                   // N x d
  std::vector<double> y;      // length N
  std::vector<std::string> feature_names;
  std::vector<std::pair<double, double>> input_box;  // per-feature (lo, hi)
  std::string split;          // "train" | "test" | ""

  int n() const { return X.rows; }
  int d() const { return X.cols; }
};

struct BenchmarkSpec {
  std::string name;
  std::string tier;          // easy | medium | hard
  int d = 0;
  std::string expression;    // postfix with literal constants, e.g. "2.5 x0 mul 1.3 x1 mul sin add"
  int train_n = 200;
  int test_n = 200;
  std::vector<std::pair<double, double>> input_box;  // defaults to [1,5]^d
  uint64_t seed = 0;
};

// Three ground-truth expressions per tier over {+,-,*,/,sin,cos}, with
// d = 2/3/4 for easy/medium/hard. Stands in for benchmark files that are not
// distributed with the method.
std::vector<BenchmarkSpec> desk_benchmarks();
BenchmarkSpec find_desk_benchmark(const std::string& name);

// X uniform over the input box with disjoint train/test RNG streams,
// y evaluated from the ground-truth expression, noiseless.
// Throws NonFiniteTarget if the expression blows up anywhere in the sample.
std::pair<Dataset, Dataset> generate_synthetic(const BenchmarkSpec& spec, const Vocab& vocab);

// Header row required; features are the non-target columns in header order.
// Throws MissingTarget / NonNumericCell / EmptyFile.
Dataset load_csv(const std::string& path, const std::string& target_column);
void save_csv(const Dataset& ds, const std::string& target_column, const std::string& path);

struct PerturbInfo {
  std::vector<double> sigma;            // training-split std per feature (N-1 denominator)
  std::vector<int> degenerate_features; // sigma == 0, left unperturbed
};

// Test-input corruption: X~ = X + eps, eps_ij ~ N(0, (eta*sigma_j)^2), with
// sigma_j computed on the TRAIN split. Targets stay fixed. eta == 0 returns X
// bitwise unchanged.
Dataset perturb_features(const Dataset& test, const Dataset& train, double eta, uint64_t seed,
                         PerturbInfo* info = nullptr);

struct NoiseSweepRow {
  double eta = 0.0;
  MetricReport metrics;
};

// Evaluates a frozen equation (template + fitted coefficients) on perturbed
// test inputs for each eta. Row 0 with eta=0 reproduces the clean metrics.
std::vector<NoiseSweepRow> noise_sweep(const PostfixTemplate& tmpl, std::span<const double> w,
                                       const Dataset& train, const Dataset& test,
                                       std::span<const double> etas, uint64_t seed,
                                       const Vocab& vocab);

}  // namespace srco

#endif  // SRCO_DATASET_HPP_
