#pragma once
// Shared helpers for the test binaries: independent reference implementations
// (kept deliberately naive) and random-instance generators.

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "srco/expr.hpp"
#include "srco/gp.hpp"
#include "srco/vocab.hpp"

namespace testutil {

using namespace srco;

// The nine template tokens of a 2-variable vocabulary (no specials).
inline std::vector<TokenId> template_alphabet(const Vocab& v) {
  return {v.cof(), v.var(0), v.var(1), v.add(), v.sub(), v.mul(), v.div(), v.sin(), v.cos()};
}

// Independent validity oracle: a sequence is a postfix serialization iff it
// can be split recursively into (operand)|(sub sin/cos)|(sub sub add/..).
// Implemented as interval recursion with memoization; no stack simulation.
class RecursiveValidityOracle {
 public:
  explicit RecursiveValidityOracle(const Vocab& vocab) : vocab_(&vocab) {}

  bool valid(const std::vector<TokenId>& seq) {
    seq_ = &seq;
    memo_.clear();
    return seq.empty() ? false : is_tree(0, static_cast<int>(seq.size()));
  }

 private:
  bool is_tree(int begin, int end) {
    if (begin >= end) return false;
    const auto key = std::make_pair(begin, end);
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    bool ok = false;
    const TokenId last = (*seq_)[end - 1];
    if (vocab_->is_operand(last)) {
      ok = (end - begin == 1);
    } else if (vocab_->is_trig(last)) {
      ok = is_tree(begin, end - 1);
    } else if (vocab_->is_operator(last)) {
      for (int split = begin + 1; split < end - 1 && !ok; ++split)
        ok = is_tree(begin, split) && is_tree(split, end - 1);
    }
    memo_[key] = ok;
    return ok;
  }

  const Vocab* vocab_;
  const std::vector<TokenId>* seq_ = nullptr;
  std::map<std::pair<int, int>, bool> memo_;
};

// Every expression tree over {COF, x0..x{d-1}} terminals up to max_depth.
inline std::vector<ExprTree> enumerate_trees(int max_depth, int d) {
  std::vector<std::vector<ExprNode>> by_depth(max_depth + 1);
  by_depth[1].push_back(ExprNode::coefficient());
  for (int i = 0; i < d; ++i) by_depth[1].push_back(ExprNode::variable(i));
  for (int depth = 2; depth <= max_depth; ++depth) {
    std::vector<ExprNode> shallower;  // all nodes with depth < depth-1
    for (int s = 1; s < depth - 1; ++s)
      shallower.insert(shallower.end(), by_depth[s].begin(), by_depth[s].end());
    const std::vector<ExprNode>& exact = by_depth[depth - 1];
    for (OpCode op : {OpCode::Sin, OpCode::Cos})
      for (const ExprNode& child : exact)
        by_depth[depth].push_back(ExprNode::operation(op, {child}));
    for (OpCode op : {OpCode::Add, OpCode::Sub, OpCode::Mul, OpCode::Div}) {
      // at least one child must have depth exactly depth-1
      for (const ExprNode& a : exact)
        for (const ExprNode& b : exact)
          by_depth[depth].push_back(ExprNode::operation(op, {a, b}));
      for (const ExprNode& a : exact)
        for (const ExprNode& b : shallower) {
          by_depth[depth].push_back(ExprNode::operation(op, {a, b}));
          by_depth[depth].push_back(ExprNode::operation(op, {b, a}));
        }
    }
  }
  std::vector<ExprTree> trees;
  for (int depth = 1; depth <= max_depth; ++depth)
    for (const ExprNode& n : by_depth[depth]) trees.push_back(ExprTree{n});
  return trees;
}

// Random coefficient-abstracted template drawn from the bootstrapper's
// ramped initializer.
inline PostfixTemplate random_template(const Vocab& vocab, std::mt19937_64& rng,
                                       int max_depth = 4) {
  GpConfig cfg;
  cfg.population_size = 2;
  cfg.max_depth = max_depth;
  std::vector<ExprTree> pop = init_population(cfg, vocab.max_vars(), rng);
  return abstract_coefficients(pop[rng() % pop.size()], vocab);
}

inline Matrix random_inputs(int n, int d, std::mt19937_64& rng, double lo = 1.0,
                            double hi = 5.0) {
  Matrix X(n, d);
  std::uniform_real_distribution<double> u(lo, hi);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = u(rng);
  return X;
}

}  // namespace testutil
