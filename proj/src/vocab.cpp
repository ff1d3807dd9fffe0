#include "srco/vocab.hpp"

namespace srco {

Vocab::Vocab(int max_vars) : max_vars_(max_vars) {
  if (max_vars < 1) fail(ErrorCode::ConfigError, "Vocab requires max_vars >= 1");
  names_ = {"PAD", "BOS", "EOS", "COF"};
  for (int i = 0; i < max_vars; ++i) names_.push_back("x" + std::to_string(i));
  for (const char* op : {"add", "sub", "mul", "div", "sin", "cos"}) names_.emplace_back(op);
  for (int i = 0; i < static_cast<int>(names_.size()); ++i) ids_[names_[i]] = i;

  uint64_t h = fnv1a64("srco.vocab.v1");
  h = fnv1a64(std::to_string(max_vars_), h);
  for (const auto& n : names_) {
    h = fnv1a64(n, h);
    h = fnv1a64("|", h);
  }
  fingerprint_ = h;
}

int Vocab::arity(TokenId t) const {
  if (is_operand(t)) return 0;
  if (is_trig(t)) return 1;
  if (is_operator(t)) return 2;
  fail(ErrorCode::UnknownToken, "token " + std::to_string(t) + " has no arity");
}

const std::string& Vocab::name(TokenId t) const {
  if (t < 0 || t >= size()) fail(ErrorCode::UnknownToken, "token id " + std::to_string(t));
  return names_[t];
}

TokenId Vocab::id(std::string_view name) const {
  auto it = ids_.find(std::string(name));
  if (it == ids_.end()) fail(ErrorCode::UnknownToken, "'" + std::string(name) + "'");
  return it->second;
}

bool Vocab::contains(std::string_view name) const {
  return ids_.count(std::string(name)) > 0;
}

std::string Vocab::tokens_to_string(const std::vector<TokenId>& tokens) const {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += name(tokens[i]);
  }
  return out;
}

std::vector<TokenId> Vocab::tokens_from_string(std::string_view text) const {
  std::vector<TokenId> out;
  for (const auto& word : split_ws(text)) out.push_back(id(word));
  return out;
}

}  // namespace srco
