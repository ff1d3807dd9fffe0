#pragma once
// Constrained sampling of postfix templates from an autoregressive prior:
// temperature / top-k truncation with renormalization, decoding-time masks
// that keep every partial sequence completable, and the post-hoc syntactic /
// semantic / complexity filter pipeline with proxy log-scores.

#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "srco/common.hpp"
#include "srco/expr.hpp"
#include "srco/prior.hpp"
#include "srco/vocab.hpp"

namespace srco {

struct SamplerConfig {
  double temperature = 0.8;
  int top_k = 10;
  int num_samples = 200;  // M
  int l_max = 64;
  int c_max = 64;
  int max_term = 10;       // budget on operand tokens (variables + COF)
  int max_trig_vars = 4;   // budget on sin/cos tokens
  int semantic_probe_count = 16;
  int retry_cap = 32;      // dead-end resamples per slot before surfacing
  std::uint64_t seed = 0;

  void validate() const;
};

enum class RejectReason { Syntax, Semantic, Complexity, Budget, Overlength };
const char* reject_reason_name(RejectReason r);

struct Candidate {
  PostfixTemplate tmpl;
  double proxy_score = 0.0;
  std::optional<RejectReason> rejected_reason;
};

// ---------------------------------------------------------------------------
// Logit sources. The production source wraps the prior's incremental decoder;
// tests substitute fixed-logit stubs, and the masks-off validity comparison
// uses the uniform source.

class LogitSource {
 public:
  virtual ~LogitSource() = default;
  virtual void reset() = 0;
  // Feed one token; returns logits over the vocabulary for the next position.
  virtual const std::vector<double>& advance(TokenId token) = 0;
};

class PriorLogitSource final : public LogitSource {
 public:
  explicit PriorLogitSource(const PriorModel& model) : model_(&model) { reset(); }
  void reset() override { state_ = decoder_begin(*model_); }
  const std::vector<double>& advance(TokenId token) override {
    return decoder_advance(state_, token);
  }

 private:
  const PriorModel* model_;
  DecoderState state_;
};

class UniformLogitSource final : public LogitSource {
 public:
  explicit UniformLogitSource(int vocab_size) : logits_(vocab_size, 0.0) {}
  void reset() override {}
  const std::vector<double>& advance(TokenId) override { return logits_; }

 private:
  std::vector<double> logits_;
};

// ---------------------------------------------------------------------------
// Decoding masks

struct DecodeState {
  int len = 0;           // template tokens emitted so far (BOS excluded)
  int depth = 0;         // postfix stack depth
  int operand_count = 0;
  int trig_count = 0;
};

// allowed[t] != 0 iff token t may be emitted next. Guarantees: BOS/PAD never;
// EOS exactly when depth == 1; operand/trig budgets respected; and any allowed
// continuation can still reach stack depth 1 within l_max tokens.
std::vector<char> decoding_mask(const DecodeState& state, const SamplerConfig& config,
                                const Vocab& vocab);
void apply_token(DecodeState& state, TokenId token, const Vocab& vocab);

// ---------------------------------------------------------------------------
// Temperature / top-k distribution (the unit the sampling loop draws from)

struct TopKDistribution {
  std::vector<TokenId> ids;   // sorted by (logit desc, id asc), truncated to k
  std::vector<double> probs;  // renormalized over the kept ids
};

// Scales allowed logits by 1/temperature, keeps the top_k highest, and
// renormalizes. top_k larger than the allowed set means "keep all".
TopKDistribution topk_distribution(std::span<const double> logits, std::span<const char> allowed,
                                   double temperature, int top_k);

// Inverse-CDF draw in the distribution's stored order; returns the token and
// adds log p(token) to *logp.
TokenId draw_from(const TopKDistribution& dist, std::mt19937_64& rng, double* logp);

// ---------------------------------------------------------------------------
// Sampling

struct SampleResult {
  std::vector<TokenId> tokens;  // template tokens, BOS/EOS stripped
  double proxy_score = 0.0;     // sum of log renormalized probs, EOS included
};

// Masked autoregressive sampling; retries internally on dead ends up to
// config.retry_cap, then surfaces DeadEnd.
SampleResult sample_one(LogitSource& source, const SamplerConfig& config, const Vocab& vocab,
                        std::mt19937_64& rng);

struct RawSample {
  std::vector<TokenId> tokens;  // may contain specials; EOS stripped when hit
  bool hit_length_cap = false;
};

// Masks-off decoding used for the structural-validity-rate comparison: same
// temperature/top-k draw over the full vocabulary, stopping at EOS or l_max.
RawSample sample_unmasked(LogitSource& source, const SamplerConfig& config,
                          std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Filters

// Probe inputs for the semantic filter: rows uniform over the input box.
Matrix semantic_probe_points(std::span<const std::pair<double, double>> input_box, int count,
                             std::uint64_t seed);

// Fails when a division's denominator is a syntactically-zero subtraction
// (both operands identical and coefficient-free), or when evaluation with
// unit coefficients is non-finite at every probe row.
bool semantic_filter(const PostfixTemplate& tmpl, const Matrix& probe_points,
                     const Vocab& vocab);

struct PoolStats {
  int sampled = 0;
  int syntax_rejected = 0;
  int semantic_rejected = 0;
  int complexity_rejected = 0;
  int budget_rejected = 0;
  int overlength_rejected = 0;
  int duplicates_merged = 0;
  int survivors = 0;
};

struct PoolResult {
  std::vector<Candidate> survivors;  // ranked by proxy score
  PoolStats stats;
};

// Draws M samples (slot i uses an RNG stream derived from (seed, i)), applies
// the filter pipeline, deduplicates token sequences keeping the higher proxy
// score, and ranks survivors. EmptyPool when nothing survives.
PoolResult generate_pool(const PriorModel& model, const SamplerConfig& config,
                         std::span<const std::pair<double, double>> input_box,
                         const Vocab& vocab);

// Stable order: proxy_score desc, then complexity asc, then token string asc.
void rank_by_proxy(std::vector<Candidate>& pool, const Vocab& vocab);

// Replays a finished template through the masked temperature/top-k decoding
// distribution and returns the accumulated log-probability (EOS step
// included). Performs the exact arithmetic of the sampling loop, so a
// survivor's stored proxy score is reproduced bitwise. Throws DeadEnd if some
// token falls outside the kept top-k set (the sequence could not have been
// sampled under this config).
double recompute_proxy(const PriorModel& model, const SamplerConfig& config,
                       const std::vector<TokenId>& tokens, const Vocab& vocab);

}  // namespace srco
