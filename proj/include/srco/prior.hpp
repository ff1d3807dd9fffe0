#pragma once
// Decoder-only autoregressive next-token model over postfix templates:
// learned token + positional embeddings, pre-norm causal self-attention
// blocks with ReLU feed-forward layers, and a linear softmax head. All
// dense math and reverse-mode gradients are implemented here directly.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "srco/common.hpp"
#include "srco/expr.hpp"
#include "srco/vocab.hpp"

namespace srco {

// ---------------------------------------------------------------------------
// Configuration and weights

struct PriorConfig {
  int d_model = 64;
  int num_layers = 2;
  int num_heads = 4;
  int ffn_dim = 128;
  int max_seq_len = 66;  // longest template + BOS/EOS
  double dropout = 0.0;
  double learning_rate = 3e-4;
  int batch_size = 32;
  int epochs = 30;
  int warmup_steps = 100;
  double grad_clip = 1.0;
  double holdout_fraction = 0.10;
  double init_scale = 0.02;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LayerWeights {
  Matrix ln1_g, ln1_b;    // 1 x d
  Matrix qkv_w, qkv_b;    // d x 3d, 1 x 3d
  Matrix proj_w, proj_b;  // d x d, 1 x d
  Matrix ln2_g, ln2_b;    // 1 x d
  Matrix fc1_w, fc1_b;    // d x ffn, 1 x ffn
  Matrix fc2_w, fc2_b;    // ffn x d, 1 x d
};

struct PriorWeights {
  Matrix tok_emb;  // V x d
  Matrix pos_emb;  // max_seq_len x d
  std::vector<LayerWeights> layers;
  Matrix lnf_g, lnf_b;    // 1 x d
  Matrix head_w, head_b;  // d x V, 1 x V
};

// Named view over every weight matrix, in a stable documented order. Used by
// the optimizer, the checkpoint writer, and gradient checks.
struct ParamRef {
  std::string name;
  Matrix* value;
};
std::vector<ParamRef> parameters(PriorWeights& w);

struct PriorModel {
  PriorConfig config;
  std::uint64_t vocab_fingerprint = 0;
  int vocab_size = 0;
  PriorWeights w;
};

PriorModel init_model(const PriorConfig& config, const Vocab& vocab);
PriorWeights zero_like(const PriorModel& model);

// ---------------------------------------------------------------------------
// Inference

// Next-token distribution given the prefix (prefix[0] must be BOS).
std::vector<double> forward(const PriorModel& model, std::span<const TokenId> prefix);

// Row ell holds the next-token distribution after tokens[0..ell]; equals
// forward() on each prefix (causal masking makes the passes agree).
Matrix forward_all(const PriorModel& model, std::span<const TokenId> tokens);

std::vector<double> softmax_vector(std::span<const double> logits);

// Incremental decoding with per-layer key/value caches. decoder_advance
// returns raw next-token logits; softmaxing them reproduces forward() on the
// same prefix bitwise.
struct DecoderState {
  const PriorModel* model = nullptr;
  int length = 0;
  std::vector<Matrix> k_cache, v_cache;  // per layer, length x d
  std::vector<double> logits;            // after the latest advance
};
DecoderState decoder_begin(const PriorModel& model);
const std::vector<double>& decoder_advance(DecoderState& state, TokenId token);

// Sum over the BOS...EOS-wrapped sequence of log p(next token | prefix).
double log_prob(const PriorModel& model, const PostfixTemplate& tmpl, const Vocab& vocab);

std::vector<TokenId> wrap_sequence(std::span<const TokenId> tokens, const Vocab& vocab,
                                   int max_seq_len);

// ---------------------------------------------------------------------------
// Training

// Mean per-token cross-entropy over wrapped sequences (PAD targets excluded).
// ce_and_grads accumulates d(mean CE)/d(weights) into `grads`; pass a
// dropout RNG only during training updates (evaluation never drops).
double ce_only(const PriorModel& model, std::span<const std::vector<TokenId>> seqs);
double ce_and_grads(const PriorModel& model, std::span<const std::vector<TokenId>> seqs,
                    PriorWeights& grads, std::mt19937_64* dropout_rng = nullptr);

struct EpochStats {
  int epoch = 0;       // 1-based
  double train_ce = 0.0;
  double heldout_ce = 0.0;  // NaN when the held-out split is empty
};

struct TrainResult {
  PriorModel model;
  std::vector<EpochStats> history;  // one entry per epoch, measured post-update
  double init_train_ce = 0.0;       // cross-entropies at initialization
  double init_heldout_ce = 0.0;
  int train_count = 0;
  int heldout_count = 0;
};

// Splits the corpus 90/10 by hash of the token string (stable across runs),
// then runs mini-batch adaptive-moment updates with linear warmup and global
// gradient-norm clipping. Deterministic given config.seed.
TrainResult train(const PriorConfig& config, std::span<const PostfixTemplate> corpus,
                  const Vocab& vocab);

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary with config, vocab fingerprint, named weight
// blobs, and a trailing whole-file checksum.

void save_checkpoint(const PriorModel& model, const std::string& path);
PriorModel load_checkpoint(const std::string& path, const Vocab& vocab);

}  // namespace srco
