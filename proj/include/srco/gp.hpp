#ifndef SRCO_GP_HPP_
#define SRCO_GP_HPP_

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srco/dataset.hpp"
#include "srco/expr.hpp"

namespace srco {

struct GpConfig {
  int population_size = 200;
  int generations = 10;
  int max_depth = 4;                      // single leaf counts as depth 1
  double parsimony_coefficient = 0.001;
  int tournament_size = 7;
  double crossover_prob = 0.8;
  double subtree_mutation_prob = 0.1;
  double point_mutation_prob = 0.05;      // remainder of the three is plain reproduction
  double point_replace_rate = 0.15;       // per-node rate inside point mutation
  std::pair<double, double> constant_range = {-5.0, 5.0};
  double constant_jitter_sigma = 0.5;     // Gaussian used by point mutation on constants
  uint64_t seed = 0;
  double min_fit_r2 = 0.0;
  int max_template_len = 64;              // corpus length filter (L_max)
  int corpus_floor = 1;

  void validate() const;
};

struct CorpusEntry {
  PostfixTemplate tmpl;
  std::string source_dataset;
  double train_r2 = 0.0;
};

// Ramped half-and-half over variables, uniform constants, and the six
// primitive operators. max_depth == 1 yields single terminals.
std::vector<ExprTree> init_population(const GpConfig& config, int d, std::mt19937_64& rng);

// RMSE (with the shared non-finite penalty folded into the mean square)
// plus parsimony * node_count. Smaller is better.
double fitness(const ExprTree& tree, const Matrix& X, std::span<const double> y,
               double parsimony);

struct EvolveResult {
  std::vector<ExprTree> population;      // final generation, sorted by fitness ascending
  std::vector<double> population_fitness;
  std::vector<ExprTree> champions;       // per-generation best plus the final population's best
  std::vector<double> champion_fitness;  // non-increasing under elitism
};

EvolveResult evolve_run(const GpConfig& config, const Matrix& X, std::span<const double> y);

// Final population sorted by fitness ascending; deterministic given the seed.
std::vector<ExprTree> evolve(const GpConfig& config, const Matrix& X, std::span<const double> y);

// Runs the bootstrapper per dataset and harvests up to M abstracted templates
// each (final population + per-generation champions, ranked by fitness,
// filtered for fit / stack validity / length, deduplicated within a dataset).
std::vector<CorpusEntry> build_corpus(std::span<const Dataset> datasets, const GpConfig& config,
                                      int M, const Vocab& vocab);

}  // namespace srco

#endif  // SRCO_GP_HPP_
