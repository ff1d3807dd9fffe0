#ifndef SRCO_EVAL_HPP_
#define SRCO_EVAL_HPP_

#include <span>
#include <vector>

#include "srco/common.hpp"
#include "srco/expr.hpp"

namespace srco {

// Per-sample loss penalty for non-finite predictions; see grad_w.
inline constexpr double kNonFinitePenalty = 1e6;

struct EvalResult {
  std::vector<double> values;   // one per sample; reported even when non-finite
  std::vector<char> finite_mask;  // 1 iff values[i] is finite

  int finite_count() const;
};

// Stack evaluation of a template over every row of X. Division is the true
// IEEE quotient; blow-ups surface as non-finite values with finite_mask=0
// rather than being silently "protected" away.
EvalResult evaluate(const PostfixTemplate& tmpl, std::span<const double> w, const Matrix& X,
                    const Vocab& vocab);

// Direct evaluation of a tree that may still contain numeric constants
// (the GP bootstrap works on such trees before abstraction).
EvalResult evaluate_tree(const ExprTree& tree, const Matrix& X);

struct GradResult {
  double loss = 0.0;
  std::vector<double> grad;  // dloss/dw, length num_cof
  int finite_count = 0;
};

// MSE-style loss with reverse-mode gradient w.r.t. the coefficient vector:
//
//   loss = (1/N) * [ sum over finite samples (f_i - y_i)^2
//                    + (penalty per non-finite sample) ]
//
// Non-finite samples contribute a constant penalty and no gradient.
// Throws AllSamplesNonFinite when no sample evaluates to a finite value.
GradResult grad_w(const PostfixTemplate& tmpl, std::span<const double> w, const Matrix& X,
                  std::span<const double> y, const Vocab& vocab,
                  double nonfinite_penalty = kNonFinitePenalty);

// Loss only (same definition as grad_w), for optimizers that do not need the
// gradient. One call counts as one loss evaluation in budget accounting.
double loss_only(const PostfixTemplate& tmpl, std::span<const double> w, const Matrix& X,
                 std::span<const double> y, const Vocab& vocab,
                 double nonfinite_penalty = kNonFinitePenalty);

}  // namespace srco

#endif  // SRCO_EVAL_HPP_
