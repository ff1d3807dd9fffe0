#include "srco/expr.hpp"

#include <algorithm>
#include <cmath>

namespace srco {

int op_arity(OpCode op) {
  switch (op) {
    case OpCode::Sin:
    case OpCode::Cos:
      return 1;
    default:
      return 2;
  }
}

TokenId op_token(OpCode op, const Vocab& vocab) {
  switch (op) {
    case OpCode::Add: return vocab.add();
    case OpCode::Sub: return vocab.sub();
    case OpCode::Mul: return vocab.mul();
    case OpCode::Div: return vocab.div();
    case OpCode::Sin: return vocab.sin();
    case OpCode::Cos: return vocab.cos();
  }
  fail(ErrorCode::UnknownToken, "bad opcode");
}

std::optional<OpCode> token_op(TokenId t, const Vocab& vocab) {
  if (t == vocab.add()) return OpCode::Add;
  if (t == vocab.sub()) return OpCode::Sub;
  if (t == vocab.mul()) return OpCode::Mul;
  if (t == vocab.div()) return OpCode::Div;
  if (t == vocab.sin()) return OpCode::Sin;
  if (t == vocab.cos()) return OpCode::Cos;
  return std::nullopt;
}

ExprNode ExprNode::variable(int index) {
  ExprNode n;
  n.kind = NodeKind::Variable;
  n.var_index = index;
  return n;
}

ExprNode ExprNode::constant(double value) {
  ExprNode n;
  n.kind = NodeKind::Constant;
  n.value = value;
  return n;
}

ExprNode ExprNode::coefficient(int slot) {
  ExprNode n;
  n.kind = NodeKind::Coefficient;
  n.cof_slot = slot;
  return n;
}

ExprNode ExprNode::operation(OpCode op, std::vector<ExprNode> children) {
  ExprNode n;
  n.kind = NodeKind::Operator;
  n.op = op;
  n.children = std::move(children);
  return n;
}

namespace {

int count_nodes(const ExprNode& n) {
  int total = 1;
  for (const auto& c : n.children) total += count_nodes(c);
  return total;
}

int node_depth(const ExprNode& n) {
  int best = 0;
  for (const auto& c : n.children) best = std::max(best, node_depth(c));
  return best + 1;
}

}  // namespace

int ExprTree::node_count() const { return count_nodes(root); }
int ExprTree::depth() const { return node_depth(root); }

bool nodes_equal(const ExprNode& a, const ExprNode& b) {
  if (a.kind != b.kind) return false;
  switch (a.kind) {
    case NodeKind::Variable:
      return a.var_index == b.var_index;
    case NodeKind::Constant:
      return a.value == b.value;
    case NodeKind::Coefficient:
      return true;  // slot numbers are positional, not structural
    case NodeKind::Operator:
      if (a.op != b.op || a.children.size() != b.children.size()) return false;
      for (size_t i = 0; i < a.children.size(); ++i)
        if (!nodes_equal(a.children[i], b.children[i])) return false;
      return true;
  }
  return false;
}

bool ExprTree::structurally_equal(const ExprTree& other) const {
  return nodes_equal(root, other.root);
}

StackVerdict check_stack_validity(std::span<const TokenId> tokens, const Vocab& vocab) {
  int depth = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    TokenId t = tokens[i];
    if (t < 0 || t >= vocab.size() || vocab.is_special(t))
      return {false, ErrorCode::UnknownToken, static_cast<int>(i)};
    int k = vocab.arity(t);
    if (depth < k) return {false, ErrorCode::StackUnderflow, static_cast<int>(i)};
    depth += 1 - k;
  }
  if (depth != 1) {
    ErrorCode why = depth == 0 ? ErrorCode::StackUnderflow : ErrorCode::LeftoverOperands;
    return {false, why, static_cast<int>(tokens.size())};
  }
  return {true, ErrorCode::StackUnderflow, -1};
}

ExprTree parse_postfix(std::span<const TokenId> tokens, const Vocab& vocab) {
  std::vector<ExprNode> stack;
  int next_slot = 0;
  for (size_t i = 0; i < tokens.size(); ++i) {
    TokenId t = tokens[i];
    if (t < 0 || t >= vocab.size() || vocab.is_special(t))
      fail(ErrorCode::UnknownToken,
           "position " + std::to_string(i) + ": token id " + std::to_string(t));
    if (vocab.is_var(t)) {
      stack.push_back(ExprNode::variable(vocab.var_index(t)));
    } else if (vocab.is_cof(t)) {
      stack.push_back(ExprNode::coefficient(next_slot++));
    } else {
      OpCode op = *token_op(t, vocab);
      int k = op_arity(op);
      if (static_cast<int>(stack.size()) < k)
        fail(ErrorCode::StackUnderflow,
             "operator '" + vocab.name(t) + "' at position " + std::to_string(i));
      std::vector<ExprNode> children(k);
      for (int c = k - 1; c >= 0; --c) {
        children[c] = std::move(stack.back());
        stack.pop_back();
      }
      stack.push_back(ExprNode::operation(op, std::move(children)));
    }
  }
  if (stack.empty()) fail(ErrorCode::StackUnderflow, "empty token sequence");
  if (stack.size() != 1)
    fail(ErrorCode::LeftoverOperands, std::to_string(stack.size()) + " roots remain");
  return ExprTree{std::move(stack.front())};
}

namespace {

void emit_postfix(const ExprNode& n, const Vocab& vocab, std::vector<TokenId>& out, int& cofs) {
  switch (n.kind) {
    case NodeKind::Variable:
      if (n.var_index < 0 || n.var_index >= vocab.max_vars())
        fail(ErrorCode::UnknownToken, "variable index " + std::to_string(n.var_index));
      out.push_back(vocab.var(n.var_index));
      return;
    case NodeKind::Constant:
      fail(ErrorCode::ContainsRawConstant,
           "constant leaf " + format_double(n.value) + "; abstract coefficients first");
    case NodeKind::Coefficient:
      out.push_back(vocab.cof());
      ++cofs;
      return;
    case NodeKind::Operator:
      if (static_cast<int>(n.children.size()) != op_arity(n.op))
        fail(ErrorCode::ArityMismatch, "operator child count");
      for (const auto& c : n.children) emit_postfix(c, vocab, out, cofs);
      out.push_back(op_token(n.op, vocab));
      return;
  }
}

ExprNode abstract_node(const ExprNode& n, int& next_slot) {
  if (n.kind == NodeKind::Constant) return ExprNode::coefficient(next_slot++);
  if (n.kind == NodeKind::Coefficient) {
    return ExprNode::coefficient(next_slot++);
  }
  ExprNode out = n;
  if (n.kind == NodeKind::Operator) {
    out.children.clear();
    for (const auto& c : n.children) out.children.push_back(abstract_node(c, next_slot));
  }
  return out;
}

}  // namespace

PostfixTemplate to_postfix(const ExprTree& tree, const Vocab& vocab) {
  PostfixTemplate t;
  int cofs = 0;
  emit_postfix(tree.root, vocab, t.tokens, cofs);
  t.num_cof = cofs;
  return t;
}

ExprTree abstract_tree(const ExprTree& tree_with_constants) {
  int slot = 0;
  return ExprTree{abstract_node(tree_with_constants.root, slot)};
}

PostfixTemplate abstract_coefficients(const ExprTree& tree_with_constants, const Vocab& vocab) {
  return to_postfix(abstract_tree(tree_with_constants), vocab);
}

ExprTree parse_postfix_with_constants(std::string_view text, const Vocab& vocab) {
  std::vector<ExprNode> stack;
  auto words = split_ws(text);
  for (size_t i = 0; i < words.size(); ++i) {
    const std::string& word = words[i];
    bool numeric = false;
    double value = parse_double(word, &numeric);
    if (numeric) {
      stack.push_back(ExprNode::constant(value));
      continue;
    }
    TokenId t = vocab.id(word);
    if (vocab.is_special(t))
      fail(ErrorCode::UnknownToken, "special marker '" + word + "' inside expression");
    if (vocab.is_var(t)) {
      stack.push_back(ExprNode::variable(vocab.var_index(t)));
    } else if (vocab.is_cof(t)) {
      stack.push_back(ExprNode::coefficient());
    } else {
      OpCode op = *token_op(t, vocab);
      int k = op_arity(op);
      if (static_cast<int>(stack.size()) < k)
        fail(ErrorCode::StackUnderflow, "operator '" + word + "' at position " + std::to_string(i));
      std::vector<ExprNode> children(k);
      for (int c = k - 1; c >= 0; --c) {
        children[c] = std::move(stack.back());
        stack.pop_back();
      }
      stack.push_back(ExprNode::operation(op, std::move(children)));
    }
  }
  if (stack.empty()) fail(ErrorCode::StackUnderflow, "empty expression");
  if (stack.size() != 1)
    fail(ErrorCode::LeftoverOperands, std::to_string(stack.size()) + " roots remain");
  return ExprTree{std::move(stack.front())};
}

namespace {

const char* op_symbol(OpCode op) {
  switch (op) {
    case OpCode::Add: return "+";
    case OpCode::Sub: return "-";
    case OpCode::Mul: return "*";
    case OpCode::Div: return "/";
    case OpCode::Sin: return "sin";
    case OpCode::Cos: return "cos";
  }
  return "?";
}

void render_node(const ExprNode& n, std::span<const double> w, std::string& out) {
  switch (n.kind) {
    case NodeKind::Variable:
      out += "x" + std::to_string(n.var_index);
      return;
    case NodeKind::Constant:
      out += format_double(n.value);
      return;
    case NodeKind::Coefficient:
      if (!w.empty() && n.cof_slot >= 0 && n.cof_slot < static_cast<int>(w.size()))
        out += format_double(w[n.cof_slot]);
      else
        out += "COF";
      return;
    case NodeKind::Operator:
      if (op_arity(n.op) == 1) {
        out += op_symbol(n.op);
        out += '(';
        render_node(n.children[0], w, out);
        out += ')';
      } else {
        out += '(';
        render_node(n.children[0], w, out);
        out += ' ';
        out += op_symbol(n.op);
        out += ' ';
        render_node(n.children[1], w, out);
        out += ')';
      }
      return;
  }
}

}  // namespace

std::string render_infix(const ExprTree& tree, std::span<const double> w) {
  std::string out;
  render_node(tree.root, w, out);
  return out;
}

std::string render_infix(const PostfixTemplate& tmpl, const Vocab& vocab,
                         std::span<const double> w) {
  return render_infix(parse_postfix(tmpl.tokens, vocab), w);
}

}  // namespace srco
