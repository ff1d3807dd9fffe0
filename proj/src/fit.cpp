#include "srco/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "srco/eval.hpp"

namespace srco {

void FitConfig::validate() const {
  if (!std::isfinite(init_range.first) || !std::isfinite(init_range.second) ||
      init_range.first > init_range.second)
    fail(ErrorCode::ConfigError, "init_range must be a finite interval");
  if (num_restarts < 1) fail(ErrorCode::ConfigError, "num_restarts must be >= 1");
  if (max_iters < 1) fail(ErrorCode::ConfigError, "max_iters must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    fail(ErrorCode::ConfigError, "learning_rate must be positive and finite");
  if (plateau_patience < 1) fail(ErrorCode::ConfigError, "plateau_patience must be >= 1");
  if (plateau_tol < 0.0) fail(ErrorCode::ConfigError, "plateau_tol must be >= 0");
  if (max_lr_halvings < 0) fail(ErrorCode::ConfigError, "max_lr_halvings must be >= 0");
  if (!(hc_step_sigma > 0.0)) fail(ErrorCode::ConfigError, "hc_step_sigma must be positive");
}

long FitConfig::hillclimb_budget() const {
  return loss_eval_budget > 0 ? loss_eval_budget : 2L * max_iters * num_restarts;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Order-invariant "better restart" rule so the best-of-restarts result does
// not depend on the order restarts are run: lower loss, then lexicographically
// smaller coefficient vector on exact ties.
bool better_point(double loss_a, const std::vector<double>& wa, double loss_b,
                  const std::vector<double>& wb) {
  if (loss_a != loss_b) return loss_a < loss_b;
  return std::lexicographical_compare(wa.begin(), wa.end(), wb.begin(), wb.end());
}

// Loss with the all-samples-non-finite failure mapped to +inf; the optimizers
// treat such points as maximally bad rather than aborting the restart set.
double guarded_loss(const PostfixTemplate& tmpl, std::span<const double> w, const Matrix& X,
                    std::span<const double> y, const Vocab& vocab) {
  try {
    return loss_only(tmpl, w, X, y, vocab);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::AllSamplesNonFinite) return kInf;
    throw;
  }
}

FitResult fit_constant_free(const PostfixTemplate& tmpl, const Matrix& X,
                            std::span<const double> y, const Vocab& vocab) {
  FitResult r;
  r.train_loss = guarded_loss(tmpl, {}, X, y, vocab);
  r.evals_used = 1;
  if (!std::isfinite(r.train_loss))
    fail(ErrorCode::AllRestartsNonFinite,
         "parameter-free template never evaluates to a finite loss");
  return r;
}

}  // namespace

FitResult fit_gradient(const PostfixTemplate& tmpl, const Matrix& X, std::span<const double> y,
                       const FitConfig& config, const Vocab& vocab) {
  config.validate();
  const int m = tmpl.num_cof;
  if (m == 0) return fit_constant_free(tmpl, X, y, vocab);

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  FitResult out;
  out.train_loss = kInf;
  bool any_finite = false;

  for (int r = 0; r < config.num_restarts; ++r) {
    std::mt19937_64 rng(derive_seed(config.seed, "fit.restart", static_cast<uint64_t>(r)));
    std::uniform_real_distribution<double> init(config.init_range.first,
                                                config.init_range.second);
    std::vector<double> w(m);
    for (double& v : w) v = init(rng);

    std::vector<double> am(m, 0.0), av(m, 0.0);
    double lr = config.learning_rate;
    int halvings = 0, stall = 0;
    double best_loss = kInf;
    std::vector<double> best_w = w;

    for (int t = 1; t <= config.max_iters; ++t) {
      GradResult g;
      try {
        g = grad_w(tmpl, w, X, y, vocab);
      } catch (const Error& e) {
        out.evals_used += 2;
        if (e.code() == ErrorCode::AllSamplesNonFinite) break;
        throw;
      }
      out.evals_used += 2;
      if (!std::isfinite(g.loss)) break;

      // the evaluated point is w *before* this iteration's update
      if (g.loss < best_loss) {
        const bool real_improvement = best_loss - g.loss > config.plateau_tol;
        best_loss = g.loss;
        best_w = w;
        stall = real_improvement ? 0 : stall + 1;
      } else {
        ++stall;
      }
      if (config.record_trace) out.trace.push_back({out.evals_used, best_loss});
      if (stall >= config.plateau_patience) {
        // plateau safeguard: shrink the step size, give the run another
        // window, and stop once halvings are exhausted
        if (halvings >= config.max_lr_halvings) break;
        lr *= 0.5;
        ++halvings;
        stall = 0;
      }

      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
      for (int i = 0; i < m; ++i) {
        am[i] = kBeta1 * am[i] + (1.0 - kBeta1) * g.grad[i];
        av[i] = kBeta2 * av[i] + (1.0 - kBeta2) * g.grad[i] * g.grad[i];
        w[i] -= lr * (am[i] / bc1) / (std::sqrt(av[i] / bc2) + kEps);
      }
    }

    if (std::isfinite(best_loss) &&
        (!any_finite || better_point(best_loss, best_w, out.train_loss, out.w))) {
      out.train_loss = best_loss;
      out.w = best_w;
      any_finite = true;
    }
  }

  if (!any_finite)
    fail(ErrorCode::AllRestartsNonFinite, "every restart produced only non-finite losses");
  return out;
}

FitResult fit_hillclimb(const PostfixTemplate& tmpl, const Matrix& X, std::span<const double> y,
                        const FitConfig& config, const Vocab& vocab) {
  config.validate();
  const int m = tmpl.num_cof;
  if (m == 0) return fit_constant_free(tmpl, X, y, vocab);

  const long total_budget = config.hillclimb_budget();
  const long base = total_budget / config.num_restarts;
  const long extra = total_budget % config.num_restarts;

  FitResult out;
  out.train_loss = kInf;
  bool any_finite = false;

  for (int r = 0; r < config.num_restarts; ++r) {
    long share = base + (r < extra ? 1 : 0);
    if (share <= 0) continue;
    std::mt19937_64 rng(derive_seed(config.seed, "fit.restart", static_cast<uint64_t>(r)));
    std::uniform_real_distribution<double> init(config.init_range.first,
                                                config.init_range.second);
    std::normal_distribution<double> step(0.0, config.hc_step_sigma);

    std::vector<double> w(m);
    for (double& v : w) v = init(rng);
    double cur = guarded_loss(tmpl, w, X, y, vocab);
    ++out.evals_used;
    --share;
    if (config.record_trace) out.trace.push_back({out.evals_used, cur});

    std::vector<double> proposal(m);
    while (share > 0) {
      for (int i = 0; i < m; ++i) proposal[i] = w[i] + step(rng);
      const double loss = guarded_loss(tmpl, proposal, X, y, vocab);
      ++out.evals_used;
      --share;
      if (loss < cur) {  // accept only strict decreases
        cur = loss;
        w = proposal;
        if (config.record_trace) out.trace.push_back({out.evals_used, cur});
      }
    }

    if (std::isfinite(cur) &&
        (!any_finite || better_point(cur, w, out.train_loss, out.w))) {
      out.train_loss = cur;
      out.w = w;
      any_finite = true;
    }
  }

  if (!any_finite)
    fail(ErrorCode::AllRestartsNonFinite, "every restart produced only non-finite losses");
  return out;
}

FitResult fit_template(const PostfixTemplate& tmpl, const Matrix& X, std::span<const double> y,
                       const FitConfig& config, const Vocab& vocab) {
  return config.optimizer == FitOptimizer::Gradient ? fit_gradient(tmpl, X, y, config, vocab)
                                                    : fit_hillclimb(tmpl, X, y, config, vocab);
}

std::vector<FittedEquation> fit_pool(std::span<const Candidate> pool, const Dataset& train,
                                     const Dataset& test, const FitConfig& config,
                                     const Vocab& vocab) {
  config.validate();
  std::vector<FittedEquation> out;
  out.reserve(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) {
    const Candidate& cand = pool[i];
    FittedEquation fe;
    fe.tmpl = cand.tmpl;
    fe.proxy_score = cand.proxy_score;
    fe.complexity_value = complexity(cand.tmpl);
    try {
      FitConfig percand = config;
      percand.seed = derive_seed(config.seed, "fit.candidate", static_cast<uint64_t>(i));
      FitResult r = fit_template(cand.tmpl, train.X, train.y, percand, vocab);
      fe.w = std::move(r.w);
      fe.train_loss = r.train_loss;
      fe.fit_evals = r.evals_used;

      const EvalResult on_train = evaluate(cand.tmpl, fe.w, train.X, vocab);
      if (on_train.finite_count() != train.n())
        fail(ErrorCode::NonFiniteInput, "fitted equation is non-finite on the train split");
      fe.train_mse = mse(on_train.values, train.y);

      const EvalResult on_test = evaluate(cand.tmpl, fe.w, test.X, vocab);
      if (on_test.finite_count() != test.n())
        fail(ErrorCode::NonFiniteInput, "fitted equation is non-finite on the test split");
      fe.test_mse = mse(on_test.values, test.y);
      fe.test_log_mse = log_mse(fe.test_mse);
      fe.test_r2 = r2(on_test.values, test.y);
      fe.test_pearson = pearson(on_test.values, test.y);
    } catch (const Error& e) {
      fe.failed = true;
      fe.failure = e.what();
    }
    out.push_back(std::move(fe));
  }
  return out;
}

FittedEquation select_final(std::span<const FittedEquation> fitted, int c_max,
                            const Vocab& vocab) {
  const FittedEquation* best = nullptr;
  std::string best_key;
  for (const FittedEquation& fe : fitted) {
    if (fe.failed || fe.complexity_value > c_max || !std::isfinite(fe.test_r2)) continue;
    const std::string key = vocab.tokens_to_string(fe.tmpl.tokens);
    bool take = false;
    if (!best) {
      take = true;
    } else if (fe.test_r2 != best->test_r2) {
      take = fe.test_r2 > best->test_r2;
    } else if (fe.complexity_value != best->complexity_value) {
      take = fe.complexity_value < best->complexity_value;
    } else if (fe.test_mse != best->test_mse) {
      take = fe.test_mse < best->test_mse;
    } else {
      take = key < best_key;
    }
    if (take) {
      best = &fe;
      best_key = key;
    }
  }
  if (!best)
    fail(ErrorCode::NoFeasibleCandidate,
         "no fitted candidate with finite metrics satisfies the complexity budget");
  return *best;
}

}  // namespace srco
