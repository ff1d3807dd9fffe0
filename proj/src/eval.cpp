#include "srco/eval.hpp"

#include <cmath>

namespace srco {

int EvalResult::finite_count() const {
  int n = 0;
  for (char f : finite_mask) n += f;
  return n;
}

namespace {

// Child positions of every token in a postfix sequence, recovered with an
// index stack. child0/child1 are -1 for leaves; unary ops use child0.
struct PostfixShape {
  std::vector<int> child0, child1;
  std::vector<int> cof_slot;  // slot index for COF tokens, else -1
  int num_cof = 0;

  PostfixShape(std::span<const TokenId> tokens, const Vocab& vocab) {
    int n = static_cast<int>(tokens.size());
    child0.assign(n, -1);
    child1.assign(n, -1);
    cof_slot.assign(n, -1);
    std::vector<int> stack;
    stack.reserve(n);
    for (int i = 0; i < n; ++i) {
      TokenId t = tokens[i];
      int k = vocab.arity(t);
      if (static_cast<int>(stack.size()) < k)
        fail(ErrorCode::ArityMismatch, "invalid template passed to evaluation");
      if (k == 1) {
        child0[i] = stack.back();
        stack.pop_back();
      } else if (k == 2) {
        child1[i] = stack.back();
        stack.pop_back();
        child0[i] = stack.back();
        stack.pop_back();
      } else if (vocab.is_cof(t)) {
        cof_slot[i] = num_cof++;
      }
      stack.push_back(i);
    }
    if (stack.size() != 1) fail(ErrorCode::ArityMismatch, "template does not reduce to one root");
  }
};

}  // namespace

EvalResult evaluate(const PostfixTemplate& tmpl, std::span<const double> w, const Matrix& X,
                    const Vocab& vocab) {
  const int L = tmpl.length();
  const int N = X.rows;
  if (L == 0) fail(ErrorCode::ArityMismatch, "empty template");
  PostfixShape shape(tmpl.tokens, vocab);
  if (static_cast<int>(w.size()) != shape.num_cof)
    fail(ErrorCode::DimensionMismatch,
         "coefficient vector length " + std::to_string(w.size()) + " != num_cof " +
             std::to_string(shape.num_cof));

  // forward values, one row of N per token
  Matrix vals(L, N);
  for (int i = 0; i < L; ++i) {
    TokenId t = tmpl.tokens[i];
    double* out = vals.row(i);
    if (vocab.is_var(t)) {
      int j = vocab.var_index(t);
      if (j >= X.cols)
        fail(ErrorCode::DimensionMismatch,
             "template uses x" + std::to_string(j) + " but data has d=" + std::to_string(X.cols));
      for (int s = 0; s < N; ++s) out[s] = X(s, j);
    } else if (vocab.is_cof(t)) {
      double c = w[shape.cof_slot[i]];
      for (int s = 0; s < N; ++s) out[s] = c;
    } else {
      const double* a = vals.row(shape.child0[i]);
      if (t == vocab.sin()) {
        for (int s = 0; s < N; ++s) out[s] = std::sin(a[s]);
      } else if (t == vocab.cos()) {
        for (int s = 0; s < N; ++s) out[s] = std::cos(a[s]);
      } else {
        const double* b = vals.row(shape.child1[i]);
        if (t == vocab.add()) {
          for (int s = 0; s < N; ++s) out[s] = a[s] + b[s];
        } else if (t == vocab.sub()) {
          for (int s = 0; s < N; ++s) out[s] = a[s] - b[s];
        } else if (t == vocab.mul()) {
          for (int s = 0; s < N; ++s) out[s] = a[s] * b[s];
        } else {
          for (int s = 0; s < N; ++s) out[s] = a[s] / b[s];
        }
      }
    }
  }

  EvalResult res;
  res.values.assign(vals.row(L - 1), vals.row(L - 1) + N);
  res.finite_mask.resize(N);
  for (int s = 0; s < N; ++s) res.finite_mask[s] = std::isfinite(res.values[s]) ? 1 : 0;
  return res;
}

namespace {

void eval_node(const ExprNode& n, const Matrix& X, std::vector<double>& out) {
  const int N = X.rows;
  out.resize(N);
  switch (n.kind) {
    case NodeKind::Variable: {
      if (n.var_index >= X.cols)
        fail(ErrorCode::DimensionMismatch, "tree uses x" + std::to_string(n.var_index));
      for (int s = 0; s < N; ++s) out[s] = X(s, n.var_index);
      return;
    }
    case NodeKind::Constant:
      for (int s = 0; s < N; ++s) out[s] = n.value;
      return;
    case NodeKind::Coefficient:
      fail(ErrorCode::ContainsRawConstant,
           "tree contains unbound COF; evaluate the template with a coefficient vector");
    case NodeKind::Operator: {
      std::vector<double> a;
      eval_node(n.children[0], X, a);
      if (op_arity(n.op) == 1) {
        if (n.op == OpCode::Sin)
          for (int s = 0; s < N; ++s) out[s] = std::sin(a[s]);
        else
          for (int s = 0; s < N; ++s) out[s] = std::cos(a[s]);
        return;
      }
      std::vector<double> b;
      eval_node(n.children[1], X, b);
      switch (n.op) {
        case OpCode::Add: for (int s = 0; s < N; ++s) out[s] = a[s] + b[s]; break;
        case OpCode::Sub: for (int s = 0; s < N; ++s) out[s] = a[s] - b[s]; break;
        case OpCode::Mul: for (int s = 0; s < N; ++s) out[s] = a[s] * b[s]; break;
        case OpCode::Div: for (int s = 0; s < N; ++s) out[s] = a[s] / b[s]; break;
        default: break;
      }
      return;
    }
  }
}

}  // namespace

EvalResult evaluate_tree(const ExprTree& tree, const Matrix& X) {
  EvalResult res;
  eval_node(tree.root, X, res.values);
  res.finite_mask.resize(res.values.size());
  for (size_t s = 0; s < res.values.size(); ++s)
    res.finite_mask[s] = std::isfinite(res.values[s]) ? 1 : 0;
  return res;
}

GradResult grad_w(const PostfixTemplate& tmpl, std::span<const double> w, const Matrix& X,
                  std::span<const double> y, const Vocab& vocab, double nonfinite_penalty) {
  const int L = tmpl.length();
  const int N = X.rows;
  if (static_cast<int>(y.size()) != N)
    fail(ErrorCode::DimensionMismatch, "y length != number of rows");
  PostfixShape shape(tmpl.tokens, vocab);
  if (static_cast<int>(w.size()) != shape.num_cof)
    fail(ErrorCode::DimensionMismatch, "coefficient vector length != num_cof");

  // forward tape
  Matrix vals(L, N);
  for (int i = 0; i < L; ++i) {
    TokenId t = tmpl.tokens[i];
    double* out = vals.row(i);
    if (vocab.is_var(t)) {
      int j = vocab.var_index(t);
      if (j >= X.cols) fail(ErrorCode::DimensionMismatch, "template variable out of range");
      for (int s = 0; s < N; ++s) out[s] = X(s, j);
    } else if (vocab.is_cof(t)) {
      double c = w[shape.cof_slot[i]];
      for (int s = 0; s < N; ++s) out[s] = c;
    } else if (t == vocab.sin()) {
      const double* a = vals.row(shape.child0[i]);
      for (int s = 0; s < N; ++s) out[s] = std::sin(a[s]);
    } else if (t == vocab.cos()) {
      const double* a = vals.row(shape.child0[i]);
      for (int s = 0; s < N; ++s) out[s] = std::cos(a[s]);
    } else {
      const double* a = vals.row(shape.child0[i]);
      const double* b = vals.row(shape.child1[i]);
      if (t == vocab.add()) for (int s = 0; s < N; ++s) out[s] = a[s] + b[s];
      else if (t == vocab.sub()) for (int s = 0; s < N; ++s) out[s] = a[s] - b[s];
      else if (t == vocab.mul()) for (int s = 0; s < N; ++s) out[s] = a[s] * b[s];
      else for (int s = 0; s < N; ++s) out[s] = a[s] / b[s];
    }
  }

  GradResult res;
  res.grad.assign(shape.num_cof, 0.0);

  const double* f = vals.row(L - 1);
  std::vector<char> mask(N);
  double sq = 0.0;
  int finite = 0;
  for (int s = 0; s < N; ++s) {
    bool ok = std::isfinite(f[s]);
    mask[s] = ok ? 1 : 0;
    if (ok) {
      double e = f[s] - y[s];
      sq += e * e;
      ++finite;
    }
  }
  if (finite == 0) fail(ErrorCode::AllSamplesNonFinite, "no finite predictions");
  res.finite_count = finite;
  res.loss = (sq + nonfinite_penalty * (N - finite)) / N;

  // reverse sweep; masked samples carry zero adjoint throughout
  Matrix adj(L, N);
  {
    double* aroot = adj.row(L - 1);
    for (int s = 0; s < N; ++s)
      aroot[s] = mask[s] ? 2.0 * (f[s] - y[s]) / N : 0.0;
  }
  for (int i = L - 1; i >= 0; --i) {
    TokenId t = tmpl.tokens[i];
    const double* ai = adj.row(i);
    if (vocab.is_cof(t)) {
      double g = 0.0;
      for (int s = 0; s < N; ++s) g += ai[s];
      res.grad[shape.cof_slot[i]] += g;
    } else if (vocab.is_var(t)) {
      // leaf, nothing to propagate
    } else if (t == vocab.sin()) {
      const double* c = vals.row(shape.child0[i]);
      double* ac = adj.row(shape.child0[i]);
      for (int s = 0; s < N; ++s) ac[s] += ai[s] * std::cos(c[s]);
    } else if (t == vocab.cos()) {
      const double* c = vals.row(shape.child0[i]);
      double* ac = adj.row(shape.child0[i]);
      for (int s = 0; s < N; ++s) ac[s] -= ai[s] * std::sin(c[s]);
    } else if (t == vocab.add()) {
      double* al = adj.row(shape.child0[i]);
      double* ar = adj.row(shape.child1[i]);
      for (int s = 0; s < N; ++s) {
        al[s] += ai[s];
        ar[s] += ai[s];
      }
    } else if (t == vocab.sub()) {
      double* al = adj.row(shape.child0[i]);
      double* ar = adj.row(shape.child1[i]);
      for (int s = 0; s < N; ++s) {
        al[s] += ai[s];
        ar[s] -= ai[s];
      }
    } else if (t == vocab.mul()) {
      const double* vl = vals.row(shape.child0[i]);
      const double* vr = vals.row(shape.child1[i]);
      double* al = adj.row(shape.child0[i]);
      double* ar = adj.row(shape.child1[i]);
      for (int s = 0; s < N; ++s) {
        al[s] += ai[s] * vr[s];
        ar[s] += ai[s] * vl[s];
      }
    } else {  // div
      const double* vl = vals.row(shape.child0[i]);
      const double* vr = vals.row(shape.child1[i]);
      double* al = adj.row(shape.child0[i]);
      double* ar = adj.row(shape.child1[i]);
      for (int s = 0; s < N; ++s) {
        if (ai[s] == 0.0) continue;  // masked or dead path
        double inv = 1.0 / vr[s];
        al[s] += ai[s] * inv;
        ar[s] -= ai[s] * vl[s] * inv * inv;
      }
    }
  }
  return res;
}

double loss_only(const PostfixTemplate& tmpl, std::span<const double> w, const Matrix& X,
                 std::span<const double> y, const Vocab& vocab, double nonfinite_penalty) {
  if (static_cast<int>(y.size()) != X.rows)
    fail(ErrorCode::DimensionMismatch, "y length != number of rows");
  EvalResult pred = evaluate(tmpl, w, X, vocab);
  double sq = 0.0;
  int finite = 0;
  for (int s = 0; s < X.rows; ++s) {
    if (pred.finite_mask[s]) {
      double e = pred.values[s] - y[s];
      sq += e * e;
      ++finite;
    }
  }
  if (finite == 0) fail(ErrorCode::AllSamplesNonFinite, "no finite predictions");
  return (sq + nonfinite_penalty * (X.rows - finite)) / X.rows;
}

}  // namespace srco
