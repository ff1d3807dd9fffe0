#ifndef SRCO_VOCAB_HPP_
#define SRCO_VOCAB_HPP_

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "srco/common.hpp"

namespace srco {

using TokenId = int;

// Token alphabet for postfix sequences. Ids are dense and contiguous, and the
// layout is a pure function of max_vars, so corpora and checkpoints built
// against the same variable count always agree:
//
//   PAD, BOS, EOS, COF, x0 .. x{max_vars-1}, add, sub, mul, div, sin, cos
class Vocab {
 public:
  explicit Vocab(int max_vars);

  int max_vars() const { return max_vars_; }
  int size() const { return static_cast<int>(names_.size()); }

  TokenId pad() const { return 0; }
  TokenId bos() const { return 1; }
  TokenId eos() const { return 2; }
  TokenId cof() const { return 3; }
  TokenId var(int i) const { return 4 + i; }

  TokenId add() const { return 4 + max_vars_ + 0; }
  TokenId sub() const { return 4 + max_vars_ + 1; }
  TokenId mul() const { return 4 + max_vars_ + 2; }
  TokenId div() const { return 4 + max_vars_ + 3; }
  TokenId sin() const { return 4 + max_vars_ + 4; }
  TokenId cos() const { return 4 + max_vars_ + 5; }

  bool is_special(TokenId t) const { return t >= 0 && t <= 2; }
  bool is_cof(TokenId t) const { return t == cof(); }
  bool is_var(TokenId t) const { return t >= 4 && t < 4 + max_vars_; }
  bool is_operand(TokenId t) const { return is_cof(t) || is_var(t); }
  bool is_operator(TokenId t) const { return t >= add() && t <= cos(); }
  bool is_trig(TokenId t) const { return t == sin() || t == cos(); }

  int var_index(TokenId t) const { return t - 4; }

  // 0 for operands, 1 for sin/cos, 2 for add/sub/mul/div; specials have no arity
  int arity(TokenId t) const;

  const std::string& name(TokenId t) const;
  TokenId id(std::string_view name) const;  // throws UnknownToken
  bool contains(std::string_view name) const;

  // Stable digest of (max_vars, token layout); embedded in corpora-dependent
  // artifacts so a checkpoint cannot be silently used with the wrong alphabet.
  uint64_t fingerprint() const { return fingerprint_; }

  std::string tokens_to_string(const std::vector<TokenId>& tokens) const;
  std::vector<TokenId> tokens_from_string(std::string_view text) const;

 private:
  int max_vars_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, TokenId> ids_;
  uint64_t fingerprint_;
};

}  // namespace srco

#endif  // SRCO_VOCAB_HPP_
