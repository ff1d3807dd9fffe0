#include "srco/gp.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "srco/eval.hpp"

namespace srco {

void GpConfig::validate() const {
  if (population_size < 2) fail(ErrorCode::ConfigError, "population_size must be >= 2");
  if (max_depth < 1) fail(ErrorCode::ConfigError, "max_depth must be >= 1");
  if (generations < 0) fail(ErrorCode::ConfigError, "generations must be >= 0");
  if (tournament_size < 1) fail(ErrorCode::ConfigError, "tournament_size must be >= 1");
  for (double p : {crossover_prob, subtree_mutation_prob, point_mutation_prob})
    if (p < 0.0 || p > 1.0) fail(ErrorCode::ConfigError, "probabilities must lie in [0, 1]");
  if (crossover_prob + subtree_mutation_prob + point_mutation_prob > 1.0 + 1e-12)
    fail(ErrorCode::ConfigError, "operator probabilities must sum to <= 1");
  if (!(constant_range.first <= constant_range.second) ||
      !std::isfinite(constant_range.first) || !std::isfinite(constant_range.second))
    fail(ErrorCode::ConfigError, "constant_range must be a finite interval");
}

namespace {

constexpr OpCode kOps[] = {OpCode::Add, OpCode::Sub, OpCode::Mul,
                           OpCode::Div, OpCode::Sin, OpCode::Cos};

ExprNode random_terminal(const GpConfig& cfg, int d, std::mt19937_64& rng) {
  // one extra slot for an ephemeral constant, matching the usual GP setup
  std::uniform_int_distribution<int> pick(0, d);
  int k = pick(rng);
  if (k < d) return ExprNode::variable(k);
  std::uniform_real_distribution<double> c(cfg.constant_range.first, cfg.constant_range.second);
  return ExprNode::constant(c(rng));
}

OpCode random_op(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> pick(0, 5);
  return kOps[pick(rng)];
}

// depth budget counts nodes along the path: budget 1 forces a terminal
ExprNode grow_tree(const GpConfig& cfg, int d, int depth_budget, bool full, std::mt19937_64& rng) {
  bool make_terminal = depth_budget <= 1;
  if (!make_terminal && !full) {
    // grow: terminals stay available at every level
    std::uniform_int_distribution<int> pick(0, d + 5);  // d+1 terminals vs 6 operators
    make_terminal = pick(rng) <= d;
  }
  if (make_terminal) return random_terminal(cfg, d, rng);
  OpCode op = random_op(rng);
  std::vector<ExprNode> children;
  for (int i = 0; i < op_arity(op); ++i)
    children.push_back(grow_tree(cfg, d, depth_budget - 1, full, rng));
  return ExprNode::operation(op, std::move(children));
}

void collect_nodes(ExprNode& n, std::vector<ExprNode*>& out) {
  out.push_back(&n);
  for (auto& c : n.children) collect_nodes(c, out);
}

ExprNode* random_node(ExprTree& t, std::mt19937_64& rng) {
  std::vector<ExprNode*> nodes;
  collect_nodes(t.root, nodes);
  std::uniform_int_distribution<size_t> pick(0, nodes.size() - 1);
  return nodes[pick(rng)];
}

ExprTree crossover(const GpConfig& cfg, const ExprTree& p1, const ExprTree& p2,
                   std::mt19937_64& rng) {
  ExprTree child = p1;
  ExprTree donor = p2;
  ExprNode* site = random_node(child, rng);
  ExprNode* graft = random_node(donor, rng);
  *site = *graft;
  if (child.depth() > cfg.max_depth) return p1;  // depth clamp: keep the parent
  return child;
}

ExprTree subtree_mutation(const GpConfig& cfg, const ExprTree& p, int d, std::mt19937_64& rng) {
  ExprTree child = p;
  ExprNode* site = random_node(child, rng);
  int budget = std::min(cfg.max_depth, 3);
  *site = grow_tree(cfg, d, budget, false, rng);
  if (child.depth() > cfg.max_depth) return p;
  return child;
}

void point_mutate_node(const GpConfig& cfg, ExprNode& n, int d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) < cfg.point_replace_rate) {
    switch (n.kind) {
      case NodeKind::Constant: {
        std::normal_distribution<double> jitter(0.0, cfg.constant_jitter_sigma);
        n.value += jitter(rng);
        break;
      }
      case NodeKind::Variable: {
        std::uniform_int_distribution<int> pick(0, d - 1);
        n.var_index = pick(rng);
        break;
      }
      case NodeKind::Operator: {
        int arity = op_arity(n.op);
        OpCode candidate;
        do {
          candidate = random_op(rng);
        } while (op_arity(candidate) != arity);
        n.op = candidate;
        break;
      }
      case NodeKind::Coefficient:
        break;
    }
  }
  for (auto& c : n.children) point_mutate_node(cfg, c, d, rng);
}

ExprTree point_mutation(const GpConfig& cfg, const ExprTree& p, int d, std::mt19937_64& rng) {
  ExprTree child = p;
  point_mutate_node(cfg, child.root, d, rng);
  return child;
}

int tournament(const std::vector<double>& fit, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<size_t> pick(0, fit.size() - 1);
  size_t best = pick(rng);
  for (int i = 1; i < k; ++i) {
    size_t j = pick(rng);
    if (fit[j] < fit[best]) best = j;
  }
  return static_cast<int>(best);
}

}  // namespace

std::vector<ExprTree> init_population(const GpConfig& config, int d, std::mt19937_64& rng) {
  config.validate();
  if (d < 1) fail(ErrorCode::ConfigError, "d must be >= 1");
  std::vector<ExprTree> pop;
  pop.reserve(config.population_size);
  int ramp_lo = std::min(2, config.max_depth);
  int ramp_span = config.max_depth - ramp_lo + 1;
  for (int i = 0; i < config.population_size; ++i) {
    int depth = ramp_lo + (i % ramp_span);
    bool full = (i / ramp_span) % 2 == 0;
    pop.push_back(ExprTree{grow_tree(config, d, depth, full, rng)});
  }
  return pop;
}

double fitness(const ExprTree& tree, const Matrix& X, std::span<const double> y,
               double parsimony) {
  EvalResult pred = evaluate_tree(tree, X);
  const int n = X.rows;
  double sq = 0.0;
  int finite = 0;
  for (int i = 0; i < n; ++i) {
    if (pred.finite_mask[i]) {
      double e = pred.values[i] - y[i];
      sq += e * e;
      ++finite;
    }
  }
  double mean_sq = (sq + kNonFinitePenalty * (n - finite)) / n;
  return std::sqrt(mean_sq) + parsimony * tree.node_count();
}

EvolveResult evolve_run(const GpConfig& config, const Matrix& X, std::span<const double> y) {
  config.validate();
  const int d = X.cols;
  std::mt19937_64 rng(config.seed);

  EvolveResult result;
  std::vector<ExprTree> pop = init_population(config, d, rng);
  std::vector<double> fit(pop.size());
  for (size_t i = 0; i < pop.size(); ++i)
    fit[i] = fitness(pop[i], X, y, config.parsimony_coefficient);

  auto record_champion = [&]() {
    size_t best = 0;
    for (size_t i = 1; i < pop.size(); ++i)
      if (fit[i] < fit[best]) best = i;
    result.champions.push_back(pop[best]);
    result.champion_fitness.push_back(fit[best]);
    return best;
  };

  for (int gen = 0; gen < config.generations; ++gen) {
    size_t best = record_champion();

    std::vector<ExprTree> next;
    next.reserve(pop.size());
    next.push_back(pop[best]);  // elitism of one
    std::uniform_real_distribution<double> u(0.0, 1.0);
    while (static_cast<int>(next.size()) < config.population_size) {
      double roll = u(rng);
      int a = tournament(fit, config.tournament_size, rng);
      if (roll < config.crossover_prob) {
        int b = tournament(fit, config.tournament_size, rng);
        next.push_back(crossover(config, pop[a], pop[b], rng));
      } else if (roll < config.crossover_prob + config.subtree_mutation_prob) {
        next.push_back(subtree_mutation(config, pop[a], d, rng));
      } else if (roll <
                 config.crossover_prob + config.subtree_mutation_prob + config.point_mutation_prob) {
        next.push_back(point_mutation(config, pop[a], d, rng));
      } else {
        next.push_back(pop[a]);
      }
    }
    pop = std::move(next);
    for (size_t i = 0; i < pop.size(); ++i)
      fit[i] = fitness(pop[i], X, y, config.parsimony_coefficient);
  }
  record_champion();

  std::vector<size_t> order(pop.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return fit[a] < fit[b]; });
  result.population.reserve(pop.size());
  result.population_fitness.reserve(pop.size());
  for (size_t idx : order) {
    result.population.push_back(std::move(pop[idx]));
    result.population_fitness.push_back(fit[idx]);
  }
  return result;
}

std::vector<ExprTree> evolve(const GpConfig& config, const Matrix& X, std::span<const double> y) {
  return evolve_run(config, X, y).population;
}

namespace {

// train R^2 of a constant-bearing tree; nullopt when predictions are not all
// finite or the target is constant
std::optional<double> tree_train_r2(const ExprTree& tree, const Matrix& X,
                                    std::span<const double> y) {
  EvalResult pred = evaluate_tree(tree, X);
  for (char f : pred.finite_mask)
    if (!f) return std::nullopt;
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(y.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (size_t i = 0; i < y.size(); ++i) {
    double e = pred.values[i] - y[i];
    double dy = y[i] - ybar;
    ss_res += e * e;
    ss_tot += dy * dy;
  }
  if (ss_tot == 0.0) return std::nullopt;
  return 1.0 - ss_res / ss_tot;
}

}  // namespace

std::vector<CorpusEntry> build_corpus(std::span<const Dataset> datasets, const GpConfig& config,
                                      int M, const Vocab& vocab) {
  config.validate();
  if (M < 1) fail(ErrorCode::ConfigError, "M must be >= 1");
  std::vector<CorpusEntry> corpus;

  for (const Dataset& ds : datasets) {
    GpConfig cfg = config;
    cfg.seed = derive_seed(config.seed, "gp.dataset", fnv1a64(ds.name));
    EvolveResult run = evolve_run(cfg, ds.X, ds.y);

    // candidates in fitness order: champions first carry their own scores
    std::vector<std::pair<const ExprTree*, double>> candidates;
    for (size_t i = 0; i < run.population.size(); ++i)
      candidates.push_back({&run.population[i], run.population_fitness[i]});
    for (size_t i = 0; i < run.champions.size(); ++i)
      candidates.push_back({&run.champions[i], run.champion_fitness[i]});
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const auto& a, const auto& b) { return a.second < b.second; });

    std::unordered_map<std::string, bool> seen;
    int taken = 0;
    for (const auto& [tree, fit_value] : candidates) {
      if (taken >= M) break;
      std::optional<double> r2v = tree_train_r2(*tree, ds.X, ds.y);
      if (!r2v || *r2v < config.min_fit_r2) continue;
      PostfixTemplate tmpl = abstract_coefficients(*tree, vocab);
      if (tmpl.length() > config.max_template_len) continue;
      if (!check_stack_validity(tmpl.tokens, vocab).ok) continue;  // malformed: discard
      std::string key = vocab.tokens_to_string(tmpl.tokens);
      if (seen.count(key)) continue;
      seen[key] = true;
      corpus.push_back({std::move(tmpl), ds.name, *r2v});
      ++taken;
    }
  }

  if (static_cast<int>(corpus.size()) < config.corpus_floor)
    fail(ErrorCode::CorpusTooSmall,
         "harvested " + std::to_string(corpus.size()) + " templates, floor is " +
             std::to_string(config.corpus_floor));
  return corpus;
}

}  // namespace srco
