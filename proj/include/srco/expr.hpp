#ifndef SRCO_EXPR_HPP_
#define SRCO_EXPR_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "srco/common.hpp"
#include "srco/vocab.hpp"

namespace srco {

// ============================================================================
//  Expression trees
// ============================================================================

enum class NodeKind { Variable, Constant, Coefficient, Operator };
enum class OpCode { Add, Sub, Mul, Div, Sin, Cos };

int op_arity(OpCode op);
TokenId op_token(OpCode op, const Vocab& vocab);
std::optional<OpCode> token_op(TokenId t, const Vocab& vocab);

struct ExprNode {
  NodeKind kind = NodeKind::Constant;
  int var_index = -1;                // Variable
  double value = 0.0;                // Constant
  int cof_slot = -1;                 // Coefficient; 0-based, left-to-right postfix order
  OpCode op = OpCode::Add;           // Operator
  std::vector<ExprNode> children;    // size == arity for operators, empty for leaves

  static ExprNode variable(int index);
  static ExprNode constant(double value);
  static ExprNode coefficient(int slot = -1);
  static ExprNode operation(OpCode op, std::vector<ExprNode> children);
};

struct ExprTree {
  ExprNode root;

  int node_count() const;
  int depth() const;  // single leaf has depth 1
  bool structurally_equal(const ExprTree& other) const;
};

bool nodes_equal(const ExprNode& a, const ExprNode& b);

// ============================================================================
//  Coefficient-abstracted postfix templates
// ============================================================================

// A validated token sequence over the vocab: no specials, stack-valid,
// constants already abstracted to COF.
struct PostfixTemplate {
  std::vector<TokenId> tokens;
  int num_cof = 0;

  int length() const { return static_cast<int>(tokens.size()); }
};

// Complexity C(S): token count, which equals the node count of the parsed tree.
inline int complexity(const PostfixTemplate& t) { return t.length(); }

struct StackVerdict {
  bool ok = false;
  ErrorCode reason = ErrorCode::StackUnderflow;  // meaningful when !ok
  int position = -1;                             // offending token index
};

// Single left-to-right pass: operands push, operators pop/push. Valid iff the
// scan never underflows and ends at depth exactly 1.
StackVerdict check_stack_validity(std::span<const TokenId> tokens, const Vocab& vocab);

// ============================================================================
//  Conversions
// ============================================================================

// Builds the unique tree whose postfix serialization is `tokens`.
// Throws StackUnderflow / LeftoverOperands / UnknownToken.
ExprTree parse_postfix(std::span<const TokenId> tokens, const Vocab& vocab);

// Inverse of parse_postfix. The tree must be coefficient-abstracted already;
// a numeric constant leaf throws ContainsRawConstant.
PostfixTemplate to_postfix(const ExprTree& tree, const Vocab& vocab);

// Rewrites every numeric constant leaf to COF and numbers the slots in
// postfix order. Pure structural rewrite, never fails.
PostfixTemplate abstract_coefficients(const ExprTree& tree_with_constants, const Vocab& vocab);

// Tree-level variant of abstract_coefficients, for callers that keep working
// with the rewritten tree.
ExprTree abstract_tree(const ExprTree& tree_with_constants);

// Parses a postfix token string in which numeric literals are allowed as
// constant leaves (benchmark ground-truth expressions use this form).
ExprTree parse_postfix_with_constants(std::string_view text, const Vocab& vocab);

// ============================================================================
//  Rendering
// ============================================================================

// Deterministic fully parenthesized infix. COF slots render as their fitted
// value when `w` is given, otherwise as the literal "COF".
std::string render_infix(const PostfixTemplate& tmpl, const Vocab& vocab,
                         std::span<const double> w = {});
std::string render_infix(const ExprTree& tree, std::span<const double> w = {});

}  // namespace srco

#endif  // SRCO_EXPR_HPP_
