#pragma once
// Coefficient fitting for sampled templates: adaptive-moment gradient descent
// with random restarts and plateau safeguards, a budget-matched stochastic
// hill-climbing baseline, pool-wide fitting, and final model selection under
// the complexity budget.

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srco/common.hpp"
#include "srco/dataset.hpp"
#include "srco/expr.hpp"
#include "srco/metrics.hpp"
#include "srco/sampler.hpp"
#include "srco/vocab.hpp"

namespace srco {

enum class FitOptimizer { Gradient, HillClimb };

struct FitConfig {
  FitOptimizer optimizer = FitOptimizer::Gradient;
  std::pair<double, double> init_range{-3.0, 3.0};
  int num_restarts = 5;
  int max_iters = 2000;
  double learning_rate = 0.05;
  int plateau_patience = 100;
  double plateau_tol = 1e-10;
  int max_lr_halvings = 20;  // plateau response: halve lr, then stop at the cap
  double hc_step_sigma = 0.25;
  long loss_eval_budget = 0;  // HillClimb total; <= 0 derives 2*max_iters*num_restarts
  bool record_trace = false;
  std::uint64_t seed = 0;

  void validate() const;
  long hillclimb_budget() const;
};

struct FitTracePoint {
  long evals = 0;          // cumulative across restarts
  double best_loss = 0.0;  // best loss within the current restart
};

// Budget accounting: a loss evaluation costs 1 unit and a combined
// loss+gradient evaluation costs 2, so both optimizers are charged in the
// same currency.
struct FitResult {
  std::vector<double> w;
  double train_loss = 0.0;  // penalized mean-squared objective at w (== MSE
                            // when every training prediction is finite)
  long evals_used = 0;
  std::vector<FitTracePoint> trace;
};

FitResult fit_gradient(const PostfixTemplate& tmpl, const Matrix& X, std::span<const double> y,
                       const FitConfig& config, const Vocab& vocab);
FitResult fit_hillclimb(const PostfixTemplate& tmpl, const Matrix& X, std::span<const double> y,
                        const FitConfig& config, const Vocab& vocab);
FitResult fit_template(const PostfixTemplate& tmpl, const Matrix& X, std::span<const double> y,
                       const FitConfig& config, const Vocab& vocab);  // dispatch on optimizer

struct FittedEquation {
  PostfixTemplate tmpl;
  std::vector<double> w;
  double proxy_score = 0.0;
  double train_loss = 0.0;
  double train_mse = 0.0;
  double test_mse = 0.0;
  double test_log_mse = 0.0;
  double test_r2 = 0.0;
  std::optional<double> test_pearson;
  int complexity_value = 0;
  long fit_evals = 0;
  bool failed = false;       // fit or metric evaluation did not produce usable numbers
  std::string failure;

  std::string infix(const Vocab& vocab) const { return render_infix(tmpl, vocab, w); }
};

// Fits every pool candidate on the train split and scores it on both splits.
// Candidate i uses the RNG stream derived from (config.seed, i), so serial
// and parallel execution agree. Failures are flagged entries, not aborts.
std::vector<FittedEquation> fit_pool(std::span<const Candidate> pool, const Dataset& train,
                                     const Dataset& test, const FitConfig& config,
                                     const Vocab& vocab);

// Among non-failed entries with complexity <= c_max: max test R^2, ties by
// lower complexity, then lower test MSE, then token string. NoFeasibleCandidate
// when nothing qualifies.
FittedEquation select_final(std::span<const FittedEquation> fitted, int c_max,
                            const Vocab& vocab);

}  // namespace srco
