#include "srco/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "srco/eval.hpp"

namespace srco {

void SamplerConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    fail(ErrorCode::ConfigError, "temperature must be positive and finite");
  if (top_k < 1) fail(ErrorCode::ConfigError, "top_k must be >= 1");
  if (num_samples < 0) fail(ErrorCode::ConfigError, "num_samples must be >= 0");
  if (l_max < 1) fail(ErrorCode::ConfigError, "l_max must be >= 1");
  if (c_max < 1) fail(ErrorCode::ConfigError, "c_max must be >= 1");
  if (c_max > l_max) fail(ErrorCode::ConfigError, "c_max must not exceed l_max");
  if (max_term < 1) fail(ErrorCode::ConfigError, "max_term must be >= 1");
  if (max_trig_vars < 1) fail(ErrorCode::ConfigError, "max_trig_vars must be >= 1");
  if (semantic_probe_count < 1)
    fail(ErrorCode::ConfigError, "semantic_probe_count must be >= 1");
  if (retry_cap < 1) fail(ErrorCode::ConfigError, "retry_cap must be >= 1");
}

const char* reject_reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::Syntax: return "Syntax";
    case RejectReason::Semantic: return "Semantic";
    case RejectReason::Complexity: return "Complexity";
    case RejectReason::Budget: return "Budget";
    case RejectReason::Overlength: return "Overlength";
  }
  return "?";
}

// ============================================================================
//  Decoding masks
// ============================================================================

std::vector<char> decoding_mask(const DecodeState& state, const SamplerConfig& config,
                                const Vocab& vocab) {
  std::vector<char> allowed(vocab.size(), 0);
  // Tokens still available after emitting one more. A prefix at depth s needs
  // s-1 further binary reductions to reach depth 1, so a token keeping the
  // new depth s' with s'-1 <= remaining stays completable within l_max.
  const int remaining = config.l_max - state.len - 1;

  if (state.depth == 1) allowed[vocab.eos()] = 1;

  if (state.operand_count < config.max_term && state.depth <= remaining) {
    allowed[vocab.cof()] = 1;
    for (int i = 0; i < vocab.max_vars(); ++i) allowed[vocab.var(i)] = 1;
  }
  if (state.depth >= 1 && state.trig_count < config.max_trig_vars &&
      state.depth - 1 <= remaining) {
    allowed[vocab.sin()] = 1;
    allowed[vocab.cos()] = 1;
  }
  if (state.depth >= 2 && state.depth - 2 <= remaining) {
    allowed[vocab.add()] = 1;
    allowed[vocab.sub()] = 1;
    allowed[vocab.mul()] = 1;
    allowed[vocab.div()] = 1;
  }
  return allowed;
}

void apply_token(DecodeState& state, TokenId token, const Vocab& vocab) {
  const int k = vocab.arity(token);  // throws UnknownToken for specials
  state.depth += 1 - k;
  ++state.len;
  if (vocab.is_operand(token)) ++state.operand_count;
  if (vocab.is_trig(token)) ++state.trig_count;
}

// ============================================================================
//  Temperature / top-k draw
// ============================================================================

TopKDistribution topk_distribution(std::span<const double> logits, std::span<const char> allowed,
                                   double temperature, int top_k) {
  TopKDistribution dist;
  for (size_t t = 0; t < logits.size(); ++t)
    if (allowed.empty() || allowed[t]) dist.ids.push_back(static_cast<TokenId>(t));
  if (dist.ids.empty()) return dist;

  std::sort(dist.ids.begin(), dist.ids.end(), [&](TokenId a, TokenId b) {
    if (logits[a] != logits[b]) return logits[a] > logits[b];
    return a < b;
  });
  if (top_k < static_cast<int>(dist.ids.size())) dist.ids.resize(top_k);

  // logits sorted descending, so the first is the max; scaling by 1/tau keeps
  // the order and the max subtraction keeps exp() in range for tiny tau
  const double top = logits[dist.ids[0]] / temperature;
  dist.probs.resize(dist.ids.size());
  double sum = 0.0;
  for (size_t i = 0; i < dist.ids.size(); ++i) {
    dist.probs[i] = std::exp(logits[dist.ids[i]] / temperature - top);
    sum += dist.probs[i];
  }
  for (double& p : dist.probs) p /= sum;
  return dist;
}

TokenId draw_from(const TopKDistribution& dist, std::mt19937_64& rng, double* logp) {
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  const double u = uniform(rng);
  double acc = 0.0;
  size_t pick = dist.ids.size() - 1;  // guard against rounding at u ~ 1
  for (size_t i = 0; i < dist.ids.size(); ++i) {
    acc += dist.probs[i];
    if (u < acc) {
      pick = i;
      break;
    }
  }
  if (logp) *logp += std::log(dist.probs[pick]);
  return dist.ids[pick];
}

// ============================================================================
//  Sampling loops
// ============================================================================

SampleResult sample_one(LogitSource& source, const SamplerConfig& config, const Vocab& vocab,
                        std::mt19937_64& rng) {
  config.validate();
  for (int attempt = 0; attempt < config.retry_cap; ++attempt) {
    source.reset();
    const std::vector<double>* logits = &source.advance(vocab.bos());
    DecodeState state;
    SampleResult result;
    bool dead = false;
    while (true) {
      const std::vector<char> mask = decoding_mask(state, config, vocab);
      const TopKDistribution dist =
          topk_distribution(*logits, mask, config.temperature, config.top_k);
      if (dist.ids.empty()) {
        dead = true;
        break;
      }
      const TokenId t = draw_from(dist, rng, &result.proxy_score);
      if (t == vocab.eos()) return result;
      apply_token(state, t, vocab);
      result.tokens.push_back(t);
      logits = &source.advance(t);
    }
    (void)dead;
  }
  fail(ErrorCode::DeadEnd,
       "no completable continuation after " + std::to_string(config.retry_cap) + " attempts");
}

RawSample sample_unmasked(LogitSource& source, const SamplerConfig& config,
                          std::mt19937_64& rng) {
  config.validate();
  source.reset();
  const std::vector<double>* logits = &source.advance(1 /* BOS is id 1 in every layout */);
  RawSample out;
  for (int step = 0; step < config.l_max; ++step) {
    const TopKDistribution dist =
        topk_distribution(*logits, {}, config.temperature, config.top_k);
    const TokenId t = draw_from(dist, rng, nullptr);
    if (t == 2 /* EOS */) return out;
    out.tokens.push_back(t);
    logits = &source.advance(t);
  }
  out.hit_length_cap = true;
  return out;
}

// ============================================================================
//  Filters
// ============================================================================

Matrix semantic_probe_points(std::span<const std::pair<double, double>> input_box, int count,
                             std::uint64_t seed) {
  Matrix probes(count, static_cast<int>(input_box.size()));
  std::mt19937_64 rng(seed);
  for (int r = 0; r < probes.rows; ++r)
    for (int c = 0; c < probes.cols; ++c) {
      std::uniform_real_distribution<double> u(input_box[c].first, input_box[c].second);
      probes(r, c) = u(rng);
    }
  return probes;
}

namespace {

bool subtree_has_cof(const ExprNode& n) {
  if (n.kind == NodeKind::Coefficient) return true;
  for (const auto& c : n.children)
    if (subtree_has_cof(c)) return true;
  return false;
}

// denominator that is identically zero by construction: a subtraction of two
// identical coefficient-free subtrees (COF slots fit independently, so equal
// COF-bearing subtrees are not guaranteed to cancel)
bool has_zero_denominator(const ExprNode& n) {
  if (n.kind == NodeKind::Operator && n.op == OpCode::Div) {
    const ExprNode& den = n.children[1];
    if (den.kind == NodeKind::Operator && den.op == OpCode::Sub &&
        nodes_equal(den.children[0], den.children[1]) && !subtree_has_cof(den))
      return true;
  }
  for (const auto& c : n.children)
    if (has_zero_denominator(c)) return true;
  return false;
}

}  // namespace

bool semantic_filter(const PostfixTemplate& tmpl, const Matrix& probe_points,
                     const Vocab& vocab) {
  // A variable the input box does not cover makes the expression undefined
  // over the whole target domain, which is exactly what this filter rejects.
  for (TokenId t : tmpl.tokens)
    if (vocab.is_var(t) && vocab.var_index(t) >= probe_points.cols) return false;
  const ExprTree tree = parse_postfix(tmpl.tokens, vocab);
  if (has_zero_denominator(tree.root)) return false;
  const std::vector<double> unit(tmpl.num_cof, 1.0);
  const EvalResult probe = evaluate(tmpl, unit, probe_points, vocab);
  return probe.finite_count() > 0;
}

// ============================================================================
//  Pool generation
// ============================================================================

void rank_by_proxy(std::vector<Candidate>& pool, const Vocab& vocab) {
  std::vector<std::string> keys(pool.size());
  for (size_t i = 0; i < pool.size(); ++i) keys[i] = vocab.tokens_to_string(pool[i].tmpl.tokens);
  std::vector<size_t> order(pool.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    if (pool[a].proxy_score != pool[b].proxy_score)
      return pool[a].proxy_score > pool[b].proxy_score;
    if (pool[a].tmpl.length() != pool[b].tmpl.length())
      return pool[a].tmpl.length() < pool[b].tmpl.length();
    return keys[a] < keys[b];
  });
  std::vector<Candidate> sorted;
  sorted.reserve(pool.size());
  for (size_t idx : order) sorted.push_back(std::move(pool[idx]));
  pool = std::move(sorted);
}

PoolResult generate_pool(const PriorModel& model, const SamplerConfig& config,
                         std::span<const std::pair<double, double>> input_box,
                         const Vocab& vocab) {
  config.validate();
  if (model.vocab_fingerprint != vocab.fingerprint())
    fail(ErrorCode::VocabMismatch, "model was trained with a different vocabulary");

  const Matrix probes = semantic_probe_points(input_box, config.semantic_probe_count,
                                              derive_seed(config.seed, "sampler.probes"));
  PriorLogitSource source(model);
  PoolResult out;
  std::unordered_map<std::string, size_t> by_tokens;

  for (int slot = 0; slot < config.num_samples; ++slot) {
    std::mt19937_64 rng(derive_seed(config.seed, "sampler.slot", static_cast<uint64_t>(slot)));
    const SampleResult s = sample_one(source, config, vocab, rng);
    ++out.stats.sampled;

    if (static_cast<int>(s.tokens.size()) > config.l_max) {
      ++out.stats.overlength_rejected;
      continue;
    }
    if (!check_stack_validity(s.tokens, vocab).ok) {
      ++out.stats.syntax_rejected;
      continue;
    }
    int operands = 0, trigs = 0, cofs = 0;
    for (TokenId t : s.tokens) {
      if (vocab.is_operand(t)) ++operands;
      if (vocab.is_trig(t)) ++trigs;
      if (vocab.is_cof(t)) ++cofs;
    }
    if (operands > config.max_term || trigs > config.max_trig_vars) {
      ++out.stats.budget_rejected;
      continue;
    }
    PostfixTemplate tmpl;
    tmpl.tokens = s.tokens;
    tmpl.num_cof = cofs;
    if (complexity(tmpl) > config.c_max) {
      ++out.stats.complexity_rejected;
      continue;
    }
    if (!semantic_filter(tmpl, probes, vocab)) {
      ++out.stats.semantic_rejected;
      continue;
    }

    const std::string key = vocab.tokens_to_string(tmpl.tokens);
    auto it = by_tokens.find(key);
    if (it != by_tokens.end()) {
      ++out.stats.duplicates_merged;
      Candidate& kept = out.survivors[it->second];
      kept.proxy_score = std::max(kept.proxy_score, s.proxy_score);
    } else {
      by_tokens.emplace(key, out.survivors.size());
      out.survivors.push_back({std::move(tmpl), s.proxy_score, std::nullopt});
    }
  }

  out.stats.survivors = static_cast<int>(out.survivors.size());
  if (out.survivors.empty())
    fail(ErrorCode::EmptyPool,
         "no survivors from " + std::to_string(out.stats.sampled) + " samples (syntax " +
             std::to_string(out.stats.syntax_rejected) + ", semantic " +
             std::to_string(out.stats.semantic_rejected) + ", complexity " +
             std::to_string(out.stats.complexity_rejected) + ", budget " +
             std::to_string(out.stats.budget_rejected) + ", overlength " +
             std::to_string(out.stats.overlength_rejected) + ")");
  rank_by_proxy(out.survivors, vocab);
  return out;
}

double recompute_proxy(const PriorModel& model, const SamplerConfig& config,
                       const std::vector<TokenId>& tokens, const Vocab& vocab) {
  config.validate();
  PriorLogitSource source(model);
  const std::vector<double>* logits = &source.advance(vocab.bos());
  DecodeState state;
  double logp = 0.0;
  for (size_t i = 0; i <= tokens.size(); ++i) {
    const TokenId t = i < tokens.size() ? tokens[i] : vocab.eos();
    const std::vector<char> mask = decoding_mask(state, config, vocab);
    const TopKDistribution dist =
        topk_distribution(*logits, mask, config.temperature, config.top_k);
    size_t pick = dist.ids.size();
    for (size_t j = 0; j < dist.ids.size(); ++j)
      if (dist.ids[j] == t) {
        pick = j;
        break;
      }
    if (pick == dist.ids.size())
      fail(ErrorCode::DeadEnd, "token " + vocab.name(t) + " at position " + std::to_string(i) +
                                   " is outside the decodable top-k set");
    logp += std::log(dist.probs[pick]);
    if (t == vocab.eos()) return logp;
    apply_token(state, t, vocab);
    logits = &source.advance(t);
  }
  fail(ErrorCode::DeadEnd, "sequence did not terminate with a valid template");
}

}  // namespace srco
