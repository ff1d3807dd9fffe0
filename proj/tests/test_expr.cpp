#include <doctest.h>

#include <cmath>
#include <random>

#include "srco/eval.hpp"
#include "srco/expr.hpp"
#include "srco/vocab.hpp"
#include "test_util.hpp"

using namespace srco;
using namespace testutil;

TEST_SUITE("expr") {

TEST_CASE("vocabulary layout and fingerprint") {
  Vocab v(2);
  CHECK(v.size() == 12);
  CHECK(v.pad() == 0);
  CHECK(v.bos() == 1);
  CHECK(v.eos() == 2);
  CHECK(v.cof() == 3);
  CHECK(v.var(0) == 4);
  CHECK(v.name(v.sin()) == "sin");
  CHECK(v.id("x1") == v.var(1));
  CHECK(v.arity(v.cof()) == 0);
  CHECK(v.arity(v.cos()) == 1);
  CHECK(v.arity(v.div()) == 2);
  CHECK_THROWS_AS((void)v.arity(v.bos()), Error);
  CHECK(Vocab(2).fingerprint() == v.fingerprint());
  CHECK(Vocab(3).fingerprint() != v.fingerprint());
  const std::vector<TokenId> toks = {v.cof(), v.var(0), v.mul()};
  CHECK(v.tokens_to_string(toks) == "COF x0 mul");
  CHECK(v.tokens_from_string("COF x0 mul") == toks);
  CHECK_THROWS_AS((void)v.tokens_from_string("COF nope"), Error);
}

TEST_CASE("stack validity agrees with recursive-construction oracle on short sequences") {
  // exhaustive over all sequences of length <= 4 here; the full length-5
  // sweep with timing lives in the acceptance suite
  Vocab v(2);
  RecursiveValidityOracle oracle(v);
  const std::vector<TokenId> alphabet = template_alphabet(v);
  std::vector<TokenId> seq;
  long checked = 0;
  auto recurse = [&](auto&& self, int remaining) -> void {
    if (!seq.empty()) {
      const bool fast = check_stack_validity(seq, v).ok;
      const bool slow = oracle.valid(seq);
      REQUIRE(fast == slow);
      bool parsed = true;
      try {
        (void)parse_postfix(seq, v);
      } catch (const Error&) {
        parsed = false;
      }
      REQUIRE(parsed == slow);
      ++checked;
    }
    if (remaining == 0) return;
    for (TokenId t : alphabet) {
      seq.push_back(t);
      self(self, remaining - 1);
      seq.pop_back();
    }
  };
  recurse(recurse, 4);
  CHECK(checked == 9 + 81 + 729 + 6561);
}

TEST_CASE("special tokens are rejected, stack errors carry positions") {
  Vocab v(2);
  StackVerdict verdict = check_stack_validity(std::vector<TokenId>{v.var(0), v.bos()}, v);
  CHECK_FALSE(verdict.ok);
  CHECK(verdict.reason == ErrorCode::UnknownToken);
  CHECK(verdict.position == 1);

  verdict = check_stack_validity(std::vector<TokenId>{v.var(0), v.add()}, v);
  CHECK_FALSE(verdict.ok);
  CHECK(verdict.reason == ErrorCode::StackUnderflow);

  verdict = check_stack_validity(std::vector<TokenId>{v.var(0), v.var(1)}, v);
  CHECK_FALSE(verdict.ok);
  CHECK(verdict.reason == ErrorCode::LeftoverOperands);

  CHECK_FALSE(check_stack_validity(std::vector<TokenId>{}, v).ok);
}

TEST_CASE("postfix round-trip is the identity on enumerated trees to depth 2") {
  // depth-3 enumeration (8193 trees) runs in the acceptance suite
  Vocab v(2);
  const auto trees = enumerate_trees(2, 2);
  // 3 leaves, plus 2 trig * 3 + 4 binary * 3*3 = 42 two-level trees
  CHECK(trees.size() == 45);
  for (const ExprTree& raw : trees) {
    const PostfixTemplate p = to_postfix(raw, v);
    const ExprTree back = parse_postfix(p.tokens, v);
    CHECK(back.structurally_equal(raw));
    CHECK(to_postfix(back, v).tokens == p.tokens);
  }
}

TEST_CASE("coefficient abstraction rewrites constants and numbers slots") {
  Vocab v(2);
  const ExprTree t = parse_postfix_with_constants("2.5 x0 mul 1.3 x1 mul sin add", v);
  const PostfixTemplate tmpl = abstract_coefficients(t, v);
  CHECK(v.tokens_to_string(tmpl.tokens) == "COF x0 mul COF x1 mul sin add");
  CHECK(tmpl.num_cof == 2);
  CHECK(complexity(tmpl) == 8);
  // a tree with raw constants cannot serialize directly
  CHECK_THROWS_AS((void)to_postfix(t, v), Error);
}

TEST_CASE("evaluation matches closed forms and exposes division blow-ups") {
  Vocab v(2);
  const PostfixTemplate tmpl{v.tokens_from_string("COF x0 mul COF x1 mul sin add"), 2};
  const std::vector<double> w = {2.5, 1.3};
  Matrix X(3, 2);
  X(0, 0) = 1.0; X(0, 1) = 2.0;
  X(1, 0) = 4.0; X(1, 1) = 0.5;
  X(2, 0) = -3.0; X(2, 1) = 5.0;
  const EvalResult r = evaluate(tmpl, w, X, v);
  REQUIRE(r.values.size() == 3);
  for (int i = 0; i < 3; ++i) {
    CHECK(r.finite_mask[i] == 1);
    CHECK(r.values[i] == doctest::Approx(2.5 * X(i, 0) + std::sin(1.3 * X(i, 1))).epsilon(1e-15));
  }

  const PostfixTemplate ratio{v.tokens_from_string("x0 x1 div"), 0};
  Matrix Z(2, 2);
  Z(0, 0) = 1.0; Z(0, 1) = 0.0;   // 1/0 -> inf
  Z(1, 0) = 3.0; Z(1, 1) = 2.0;
  const EvalResult rz = evaluate(ratio, {}, Z, v);
  CHECK(rz.finite_mask[0] == 0);
  CHECK(rz.finite_mask[1] == 1);
  CHECK(rz.values[1] == doctest::Approx(1.5));
  CHECK(rz.finite_count() == 1);
}

TEST_CASE("coefficient gradient matches central finite differences") {
  Vocab v(2);
  std::mt19937_64 rng(2024);
  int instances = 0;
  while (instances < 25) {  // the 100-instance sweep runs in acceptance
    const PostfixTemplate tmpl = random_template(v, rng);
    if (tmpl.num_cof == 0) continue;
    const Matrix X = random_inputs(16, 2, rng);
    std::vector<double> y(16), w(tmpl.num_cof);
    std::uniform_real_distribution<double> uy(-3.0, 3.0);
    for (double& yi : y) yi = uy(rng);
    for (double& wi : w) wi = uy(rng);

    GradResult g;
    try {
      g = grad_w(tmpl, w, X, y, v);
    } catch (const Error&) {
      continue;
    }
    if (g.finite_count != 16) continue;

    bool usable = true;
    std::vector<double> fd(w.size());
    for (size_t k = 0; k < w.size() && usable; ++k) {
      const double h = 1e-6 * std::max(1.0, std::abs(w[k]));
      std::vector<double> wp = w, wm = w;
      wp[k] += h;
      wm[k] -= h;
      try {
        const double fp = loss_only(tmpl, wp, X, y, v);
        const double fm = loss_only(tmpl, wm, X, y, v);
        fd[k] = (fp - fm) / (2 * h);
      } catch (const Error&) {
        usable = false;
      }
    }
    if (!usable) continue;
    for (size_t k = 0; k < w.size(); ++k) {
      const double scale = std::max({1.0, std::abs(fd[k]), std::abs(g.grad[k])});
      REQUIRE(std::abs(fd[k] - g.grad[k]) <= 1e-5 * scale);
    }
    ++instances;
  }
}

TEST_CASE("masked samples contribute penalty but no gradient") {
  Vocab v(2);
  // COF / x0 with one row at x0=0: that row is non-finite
  const PostfixTemplate tmpl{v.tokens_from_string("COF x0 div"), 1};
  Matrix X(2, 2);
  X(0, 0) = 0.0; X(0, 1) = 1.0;
  X(1, 0) = 2.0; X(1, 1) = 1.0;
  const std::vector<double> y = {0.0, 3.0};
  const std::vector<double> w = {4.0};
  const GradResult g = grad_w(tmpl, w, X, y, v);
  CHECK(g.finite_count == 1);
  // loss = ((4/2 - 3)^2 + penalty) / 2
  CHECK(g.loss == doctest::Approx((1.0 + kNonFinitePenalty) / 2).epsilon(1e-12));
  // gradient only from the finite sample: d/dw (w/2 - 3)^2 / 2 = (w/2-3)/2
  CHECK(g.grad[0] == doctest::Approx((4.0 / 2 - 3.0) * (1.0 / 2)).epsilon(1e-12));

  Matrix Z(1, 2);
  Z(0, 0) = 0.0; Z(0, 1) = 1.0;
  const std::vector<double> yz = {1.0};
  CHECK_THROWS_AS((void)grad_w(tmpl, w, Z, yz, v), Error);
}

TEST_CASE("infix rendering is deterministic and substitutes coefficients") {
  Vocab v(2);
  const PostfixTemplate tmpl{v.tokens_from_string("COF x0 mul COF x1 mul sin add"), 2};
  CHECK(render_infix(tmpl, v) == "((COF * x0) + sin((COF * x1)))");
  CHECK(render_infix(tmpl, v, std::vector<double>{2.5, 1.3}) ==
        "((2.5 * x0) + sin((1.3 * x1)))");
}

}  // TEST_SUITE
