#include "srco/prior.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace srco {

// Token ids 0..2 are pinned by the Vocab layout for every max_vars.
namespace {
constexpr TokenId kPad = 0;
constexpr TokenId kBos = 1;
constexpr double kLnEps = 1e-5;
}  // namespace

// ============================================================================
//  Config / weights
// ============================================================================

void PriorConfig::validate() const {
  if (d_model < 1) fail(ErrorCode::ConfigError, "d_model must be >= 1");
  if (num_heads < 1) fail(ErrorCode::ConfigError, "num_heads must be >= 1");
  if (d_model % num_heads != 0)
    fail(ErrorCode::ConfigError, "d_model must be divisible by num_heads");
  if (num_layers < 1) fail(ErrorCode::ConfigError, "num_layers must be >= 1");
  if (ffn_dim < 1) fail(ErrorCode::ConfigError, "ffn_dim must be >= 1");
  if (max_seq_len < 3) fail(ErrorCode::ConfigError, "max_seq_len must be >= 3");
  if (dropout < 0.0 || dropout >= 1.0) fail(ErrorCode::ConfigError, "dropout must be in [0, 1)");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    fail(ErrorCode::ConfigError, "learning_rate must be positive and finite");
  if (batch_size < 1) fail(ErrorCode::ConfigError, "batch_size must be >= 1");
  if (epochs < 0) fail(ErrorCode::ConfigError, "epochs must be >= 0");
  if (warmup_steps < 0) fail(ErrorCode::ConfigError, "warmup_steps must be >= 0");
  if (!(grad_clip > 0.0)) fail(ErrorCode::ConfigError, "grad_clip must be positive");
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0)
    fail(ErrorCode::ConfigError, "holdout_fraction must be in [0, 1)");
  if (!(init_scale > 0.0)) fail(ErrorCode::ConfigError, "init_scale must be positive");
}

namespace {

PriorWeights make_weights(const PriorConfig& cfg, int vocab_size) {
  const int d = cfg.d_model;
  PriorWeights w;
  w.tok_emb = Matrix(vocab_size, d);
  w.pos_emb = Matrix(cfg.max_seq_len, d);
  w.layers.resize(cfg.num_layers);
  for (auto& l : w.layers) {
    l.ln1_g = Matrix(1, d);
    l.ln1_b = Matrix(1, d);
    l.qkv_w = Matrix(d, 3 * d);
    l.qkv_b = Matrix(1, 3 * d);
    l.proj_w = Matrix(d, d);
    l.proj_b = Matrix(1, d);
    l.ln2_g = Matrix(1, d);
    l.ln2_b = Matrix(1, d);
    l.fc1_w = Matrix(d, cfg.ffn_dim);
    l.fc1_b = Matrix(1, cfg.ffn_dim);
    l.fc2_w = Matrix(cfg.ffn_dim, d);
    l.fc2_b = Matrix(1, d);
  }
  w.lnf_g = Matrix(1, d);
  w.lnf_b = Matrix(1, d);
  w.head_w = Matrix(d, vocab_size);
  w.head_b = Matrix(1, vocab_size);
  return w;
}

}  // namespace

std::vector<ParamRef> parameters(PriorWeights& w) {
  std::vector<ParamRef> out;
  out.push_back({"tok_emb", &w.tok_emb});
  out.push_back({"pos_emb", &w.pos_emb});
  for (size_t i = 0; i < w.layers.size(); ++i) {
    LayerWeights& l = w.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    out.push_back({p + "ln1_g", &l.ln1_g});
    out.push_back({p + "ln1_b", &l.ln1_b});
    out.push_back({p + "qkv_w", &l.qkv_w});
    out.push_back({p + "qkv_b", &l.qkv_b});
    out.push_back({p + "proj_w", &l.proj_w});
    out.push_back({p + "proj_b", &l.proj_b});
    out.push_back({p + "ln2_g", &l.ln2_g});
    out.push_back({p + "ln2_b", &l.ln2_b});
    out.push_back({p + "fc1_w", &l.fc1_w});
    out.push_back({p + "fc1_b", &l.fc1_b});
    out.push_back({p + "fc2_w", &l.fc2_w});
    out.push_back({p + "fc2_b", &l.fc2_b});
  }
  out.push_back({"lnf_g", &w.lnf_g});
  out.push_back({"lnf_b", &w.lnf_b});
  out.push_back({"head_w", &w.head_w});
  out.push_back({"head_b", &w.head_b});
  return out;
}

PriorModel init_model(const PriorConfig& config, const Vocab& vocab) {
  config.validate();
  PriorModel m;
  m.config = config;
  m.vocab_fingerprint = vocab.fingerprint();
  m.vocab_size = vocab.size();
  m.w = make_weights(config, m.vocab_size);

  std::mt19937_64 rng(derive_seed(config.seed, "prior.init"));
  std::normal_distribution<double> gauss(0.0, config.init_scale);
  auto fill_gauss = [&](Matrix& mat) {
    for (double& v : mat.a) v = gauss(rng);
  };
  auto fill_ones = [](Matrix& mat) {
    for (double& v : mat.a) v = 1.0;
  };
  fill_gauss(m.w.tok_emb);
  fill_gauss(m.w.pos_emb);
  for (auto& l : m.w.layers) {
    fill_ones(l.ln1_g);
    fill_gauss(l.qkv_w);
    fill_gauss(l.proj_w);
    fill_ones(l.ln2_g);
    fill_gauss(l.fc1_w);
    fill_gauss(l.fc2_w);
  }
  fill_ones(m.w.lnf_g);
  fill_gauss(m.w.head_w);
  return m;
}

PriorWeights zero_like(const PriorModel& model) {
  return make_weights(model.config, model.vocab_size);
}

// ============================================================================
//  Row-level primitives (shared by the batched and incremental paths so both
//  produce bit-identical numbers: same accumulation order everywhere)
// ============================================================================

namespace {

// out[j] = sum_k x[k] * W(k, j), k ascending
void row_matvec(const double* x, const Matrix& W, double* out) {
  for (int j = 0; j < W.cols; ++j) out[j] = 0.0;
  for (int k = 0; k < W.rows; ++k) {
    const double a = x[k];
    const double* wrow = W.row(k);
    for (int j = 0; j < W.cols; ++j) out[j] += a * wrow[j];
  }
}

void add_row(double* out, const double* b, int n) {
  for (int j = 0; j < n; ++j) out[j] += b[j];
}

void layer_norm_row(const double* x, const double* g, const double* b, int d, double* y,
                    double* xhat, double* inv_std_out) {
  double mean = 0.0;
  for (int k = 0; k < d; ++k) mean += x[k];
  mean /= d;
  double var = 0.0;
  for (int k = 0; k < d; ++k) {
    const double c = x[k] - mean;
    var += c * c;
  }
  var /= d;
  const double inv = 1.0 / std::sqrt(var + kLnEps);
  for (int k = 0; k < d; ++k) {
    const double xh = (x[k] - mean) * inv;
    xhat[k] = xh;
    y[k] = g[k] * xh + b[k];
  }
  *inv_std_out = inv;
}

void softmax_row(double* s, int n) {
  double mx = s[0];
  for (int k = 1; k < n; ++k) mx = std::max(mx, s[k]);
  double sum = 0.0;
  for (int k = 0; k < n; ++k) {
    s[k] = std::exp(s[k] - mx);
    sum += s[k];
  }
  const double inv = 1.0 / sum;
  for (int k = 0; k < n; ++k) s[k] *= inv;
}

// ---------------------------------------------------------------------------
// Matrix-level wrappers built on the row primitives

Matrix matmul(const Matrix& A, const Matrix& B) {
  Matrix C(A.rows, B.cols);
  for (int i = 0; i < A.rows; ++i) row_matvec(A.row(i), B, C.row(i));
  return C;
}

void add_bias_rows(Matrix& C, const Matrix& b) {
  for (int i = 0; i < C.rows; ++i) add_row(C.row(i), b.row(0), C.cols);
}

// C = A * B^T
Matrix matmul_nt(const Matrix& A, const Matrix& B) {
  Matrix C(A.rows, B.rows);
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    for (int k = 0; k < B.rows; ++k) {
      const double* brow = B.row(k);
      double s = 0.0;
      for (int j = 0; j < B.cols; ++j) s += arow[j] * brow[j];
      C(i, k) = s;
    }
  }
  return C;
}

// dB += A^T * dC
void add_matmul_tn(Matrix& dB, const Matrix& A, const Matrix& dC) {
  for (int i = 0; i < A.rows; ++i) {
    const double* arow = A.row(i);
    const double* crow = dC.row(i);
    for (int k = 0; k < A.cols; ++k) {
      const double a = arow[k];
      double* brow = dB.row(k);
      for (int j = 0; j < dC.cols; ++j) brow[j] += a * crow[j];
    }
  }
}

void add_colsum(Matrix& b, const Matrix& dC) {
  for (int i = 0; i < dC.rows; ++i) add_row(b.row(0), dC.row(i), dC.cols);
}

void add_into(Matrix& dst, const Matrix& src) {
  for (size_t n = 0; n < dst.a.size(); ++n) dst.a[n] += src.a[n];
}

// ---------------------------------------------------------------------------
// Forward caches

struct LnCache {
  Matrix xhat;
  std::vector<double> inv_std;
};

struct BlockCache {
  Matrix a1;
  LnCache ln1;
  Matrix qkv;                  // L x 3d
  std::vector<Matrix> probs;   // per head, L x L (row i holds softmax over j<=i)
  Matrix attn_cat;             // L x d
  std::vector<double> drop1;   // inverted-dropout scales, empty when inactive
  Matrix x_mid;
  Matrix a2;
  LnCache ln2;
  Matrix h1;                   // L x ffn, pre-activation
  Matrix r;                    // L x ffn, post-ReLU
  std::vector<double> drop2;
  Matrix x_out;
};

struct SeqCache {
  Matrix x0;
  std::vector<BlockCache> blocks;
  Matrix a3;
  LnCache lnf;
  Matrix logits;  // L x V
};

Matrix layer_norm_rows(const Matrix& X, const Matrix& g, const Matrix& b, LnCache& cache) {
  Matrix Y(X.rows, X.cols);
  cache.xhat = Matrix(X.rows, X.cols);
  cache.inv_std.assign(X.rows, 0.0);
  for (int i = 0; i < X.rows; ++i)
    layer_norm_row(X.row(i), g.row(0), b.row(0), X.cols, Y.row(i), cache.xhat.row(i),
                   &cache.inv_std[i]);
  return Y;
}

// dx for one normalized row; accumulates dgamma/dbeta
void layer_norm_backward_rows(const Matrix& dY, const LnCache& cache, const Matrix& g,
                              Matrix& dG, Matrix& dB, Matrix& dX) {
  const int d = dY.cols;
  std::vector<double> dxhat(d);
  for (int i = 0; i < dY.rows; ++i) {
    const double* dy = dY.row(i);
    const double* xh = cache.xhat.row(i);
    double s1 = 0.0, s2 = 0.0;
    for (int k = 0; k < d; ++k) {
      dxhat[k] = dy[k] * g(0, k);
      s1 += dxhat[k];
      s2 += dxhat[k] * xh[k];
      dG(0, k) += dy[k] * xh[k];
      dB(0, k) += dy[k];
    }
    const double inv = cache.inv_std[i];
    double* dx = dX.row(i);
    for (int k = 0; k < d; ++k) dx[k] += inv * (dxhat[k] - s1 / d - xh[k] * s2 / d);
  }
}

void apply_dropout(Matrix& y, std::vector<double>& scales, double p, std::mt19937_64* rng) {
  if (!rng || p <= 0.0) return;
  scales.resize(y.a.size());
  std::bernoulli_distribution keep(1.0 - p);
  const double inv = 1.0 / (1.0 - p);
  for (size_t n = 0; n < y.a.size(); ++n) {
    const double s = keep(*rng) ? inv : 0.0;
    scales[n] = s;
    y.a[n] *= s;
  }
}

void check_tokens(const PriorModel& m, std::span<const TokenId> seq) {
  if (static_cast<int>(seq.size()) > m.config.max_seq_len)
    fail(ErrorCode::SequenceTooLong,
         "sequence length " + std::to_string(seq.size()) + " exceeds max_seq_len " +
             std::to_string(m.config.max_seq_len));
  for (TokenId t : seq)
    if (t < 0 || t >= m.vocab_size)
      fail(ErrorCode::VocabMismatch,
           "token id " + std::to_string(t) + " outside the model's vocabulary");
}

void seq_forward(const PriorModel& m, std::span<const TokenId> seq, SeqCache& c,
                 std::mt19937_64* drop_rng) {
  check_tokens(m, seq);
  const PriorConfig& cfg = m.config;
  const int L = static_cast<int>(seq.size());
  const int d = cfg.d_model;
  const int nh = cfg.num_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  c.x0 = Matrix(L, d);
  for (int i = 0; i < L; ++i) {
    const double* te = m.w.tok_emb.row(seq[i]);
    const double* pe = m.w.pos_emb.row(i);
    double* x = c.x0.row(i);
    for (int k = 0; k < d; ++k) x[k] = te[k] + pe[k];
  }

  c.blocks.assign(cfg.num_layers, BlockCache{});
  const Matrix* x = &c.x0;
  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerWeights& lw = m.w.layers[l];
    BlockCache& b = c.blocks[l];

    b.a1 = layer_norm_rows(*x, lw.ln1_g, lw.ln1_b, b.ln1);
    b.qkv = matmul(b.a1, lw.qkv_w);
    add_bias_rows(b.qkv, lw.qkv_b);

    b.attn_cat = Matrix(L, d);
    b.probs.assign(nh, Matrix(L, L));
    for (int h = 0; h < nh; ++h) {
      const int qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
      Matrix& P = b.probs[h];
      for (int i = 0; i < L; ++i) {
        double* prow = P.row(i);
        const double* qrow = b.qkv.row(i) + qo;
        for (int j = 0; j <= i; ++j) {
          const double* krow = b.qkv.row(j) + ko;
          double s = 0.0;
          for (int k = 0; k < dh; ++k) s += qrow[k] * krow[k];
          prow[j] = s * scale;
        }
        softmax_row(prow, i + 1);
        double* orow = b.attn_cat.row(i) + qo;
        for (int j = 0; j <= i; ++j) {
          const double p = prow[j];
          const double* vrow = b.qkv.row(j) + vo;
          for (int k = 0; k < dh; ++k) orow[k] += p * vrow[k];
        }
      }
    }
    Matrix y = matmul(b.attn_cat, lw.proj_w);
    add_bias_rows(y, lw.proj_b);
    apply_dropout(y, b.drop1, cfg.dropout, drop_rng);
    b.x_mid = *x;
    add_into(b.x_mid, y);

    b.a2 = layer_norm_rows(b.x_mid, lw.ln2_g, lw.ln2_b, b.ln2);
    b.h1 = matmul(b.a2, lw.fc1_w);
    add_bias_rows(b.h1, lw.fc1_b);
    b.r = b.h1;
    for (double& v : b.r.a) v = v > 0.0 ? v : 0.0;
    Matrix h2 = matmul(b.r, lw.fc2_w);
    add_bias_rows(h2, lw.fc2_b);
    apply_dropout(h2, b.drop2, cfg.dropout, drop_rng);
    b.x_out = b.x_mid;
    add_into(b.x_out, h2);
    x = &b.x_out;
  }

  c.a3 = layer_norm_rows(*x, m.w.lnf_g, m.w.lnf_b, c.lnf);
  c.logits = matmul(c.a3, m.w.head_w);
  add_bias_rows(c.logits, m.w.head_b);
}

void seq_backward(const PriorModel& m, std::span<const TokenId> seq, const SeqCache& c,
                  const Matrix& dlogits, PriorWeights& g) {
  const PriorConfig& cfg = m.config;
  const int L = static_cast<int>(seq.size());
  const int d = cfg.d_model;
  const int nh = cfg.num_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  add_matmul_tn(g.head_w, c.a3, dlogits);
  add_colsum(g.head_b, dlogits);
  Matrix da3 = matmul_nt(dlogits, m.w.head_w);

  Matrix dx(L, d);
  layer_norm_backward_rows(da3, c.lnf, m.w.lnf_g, g.lnf_g, g.lnf_b, dx);

  std::vector<double> dp(L), ds(L);
  for (int l = cfg.num_layers - 1; l >= 0; --l) {
    const LayerWeights& lw = m.w.layers[l];
    const BlockCache& b = c.blocks[l];
    LayerWeights& gl = g.layers[l];

    // MLP branch: x_out = x_mid + drop(fc2(relu(fc1(ln2(x_mid)))))
    Matrix dh2 = dx;
    if (!b.drop2.empty())
      for (size_t n = 0; n < dh2.a.size(); ++n) dh2.a[n] *= b.drop2[n];
    add_colsum(gl.fc2_b, dh2);
    add_matmul_tn(gl.fc2_w, b.r, dh2);
    Matrix dr = matmul_nt(dh2, lw.fc2_w);
    for (size_t n = 0; n < dr.a.size(); ++n)
      if (b.h1.a[n] <= 0.0) dr.a[n] = 0.0;
    add_colsum(gl.fc1_b, dr);
    add_matmul_tn(gl.fc1_w, b.a2, dr);
    Matrix da2 = matmul_nt(dr, lw.fc1_w);
    Matrix dx_mid = dx;  // residual path
    layer_norm_backward_rows(da2, b.ln2, lw.ln2_g, gl.ln2_g, gl.ln2_b, dx_mid);

    // attention branch: x_mid = x_in + drop(proj(attn(ln1(x_in))))
    Matrix dy = dx_mid;
    if (!b.drop1.empty())
      for (size_t n = 0; n < dy.a.size(); ++n) dy.a[n] *= b.drop1[n];
    add_colsum(gl.proj_b, dy);
    add_matmul_tn(gl.proj_w, b.attn_cat, dy);
    Matrix dcat = matmul_nt(dy, lw.proj_w);

    Matrix dqkv(L, 3 * d);
    for (int h = 0; h < nh; ++h) {
      const int qo = h * dh, ko = d + h * dh, vo = 2 * d + h * dh;
      const Matrix& P = b.probs[h];
      for (int i = 0; i < L; ++i) {
        const double* dout = dcat.row(i) + qo;
        for (int j = 0; j <= i; ++j) {
          const double* vrow = b.qkv.row(j) + vo;
          double s = 0.0;
          for (int k = 0; k < dh; ++k) s += dout[k] * vrow[k];
          dp[j] = s;
          const double pij = P(i, j);
          double* dvrow = dqkv.row(j) + vo;
          for (int k = 0; k < dh; ++k) dvrow[k] += pij * dout[k];
        }
        double dot = 0.0;
        for (int j = 0; j <= i; ++j) dot += dp[j] * P(i, j);
        for (int j = 0; j <= i; ++j) ds[j] = P(i, j) * (dp[j] - dot);
        double* dqrow = dqkv.row(i) + qo;
        const double* qrow = b.qkv.row(i) + qo;
        for (int j = 0; j <= i; ++j) {
          const double dsj = ds[j] * scale;
          const double* krow = b.qkv.row(j) + ko;
          double* dkrow = dqkv.row(j) + ko;
          for (int k = 0; k < dh; ++k) {
            dqrow[k] += dsj * krow[k];
            dkrow[k] += dsj * qrow[k];
          }
        }
      }
    }
    add_colsum(gl.qkv_b, dqkv);
    add_matmul_tn(gl.qkv_w, b.a1, dqkv);
    Matrix da1 = matmul_nt(dqkv, lw.qkv_w);
    Matrix dx_in = dx_mid;  // residual path
    layer_norm_backward_rows(da1, b.ln1, lw.ln1_g, gl.ln1_g, gl.ln1_b, dx_in);
    dx = std::move(dx_in);
  }

  for (int i = 0; i < L; ++i) {
    add_row(g.tok_emb.row(seq[i]), dx.row(i), d);
    add_row(g.pos_emb.row(i), dx.row(i), d);
  }
}

}  // namespace

// ============================================================================
//  Inference
// ============================================================================

std::vector<double> softmax_vector(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  softmax_row(p.data(), static_cast<int>(p.size()));
  return p;
}

std::vector<double> forward(const PriorModel& model, std::span<const TokenId> prefix) {
  if (prefix.empty() || prefix[0] != kBos)
    fail(ErrorCode::ConfigError, "forward prefix must begin with BOS");
  if (static_cast<int>(prefix.size()) >= model.config.max_seq_len)
    fail(ErrorCode::SequenceTooLong, "prefix leaves no room for a next token");
  SeqCache c;
  seq_forward(model, prefix, c, nullptr);
  std::vector<double> p(c.logits.row(prefix.size() - 1),
                        c.logits.row(prefix.size() - 1) + model.vocab_size);
  softmax_row(p.data(), model.vocab_size);
  return p;
}

Matrix forward_all(const PriorModel& model, std::span<const TokenId> tokens) {
  if (tokens.empty() || tokens[0] != kBos)
    fail(ErrorCode::ConfigError, "sequence must begin with BOS");
  SeqCache c;
  seq_forward(model, tokens, c, nullptr);
  Matrix probs = c.logits;
  for (int i = 0; i < probs.rows; ++i) softmax_row(probs.row(i), probs.cols);
  return probs;
}

DecoderState decoder_begin(const PriorModel& model) {
  DecoderState s;
  s.model = &model;
  s.length = 0;
  const int d = model.config.d_model;
  s.k_cache.assign(model.config.num_layers, Matrix(model.config.max_seq_len, d));
  s.v_cache.assign(model.config.num_layers, Matrix(model.config.max_seq_len, d));
  s.logits.assign(model.vocab_size, 0.0);
  return s;
}

const std::vector<double>& decoder_advance(DecoderState& state, TokenId token) {
  const PriorModel& m = *state.model;
  const PriorConfig& cfg = m.config;
  if (state.length >= cfg.max_seq_len)
    fail(ErrorCode::SequenceTooLong, "decoder ran past max_seq_len");
  if (token < 0 || token >= m.vocab_size)
    fail(ErrorCode::VocabMismatch,
         "token id " + std::to_string(token) + " outside the model's vocabulary");
  if (state.length == 0 && token != kBos)
    fail(ErrorCode::ConfigError, "decoding must begin with BOS");

  const int d = cfg.d_model;
  const int nh = cfg.num_heads;
  const int dh = d / nh;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const int pos = state.length;

  std::vector<double> x(d), a(d), xhat(d), qkv(3 * d), cat(d), h1(cfg.ffn_dim), h2(d);
  std::vector<double> probs(pos + 1);
  double inv_std = 0.0;
  {
    const double* te = m.w.tok_emb.row(token);
    const double* pe = m.w.pos_emb.row(pos);
    for (int k = 0; k < d; ++k) x[k] = te[k] + pe[k];
  }

  for (int l = 0; l < cfg.num_layers; ++l) {
    const LayerWeights& lw = m.w.layers[l];
    layer_norm_row(x.data(), lw.ln1_g.row(0), lw.ln1_b.row(0), d, a.data(), xhat.data(),
                   &inv_std);
    row_matvec(a.data(), lw.qkv_w, qkv.data());
    add_row(qkv.data(), lw.qkv_b.row(0), 3 * d);
    std::copy(qkv.begin() + d, qkv.begin() + 2 * d, state.k_cache[l].row(pos));
    std::copy(qkv.begin() + 2 * d, qkv.begin() + 3 * d, state.v_cache[l].row(pos));

    std::fill(cat.begin(), cat.end(), 0.0);
    for (int h = 0; h < nh; ++h) {
      const int qo = h * dh;
      const double* qrow = qkv.data() + qo;
      for (int j = 0; j <= pos; ++j) {
        const double* krow = state.k_cache[l].row(j) + qo;
        double s = 0.0;
        for (int k = 0; k < dh; ++k) s += qrow[k] * krow[k];
        probs[j] = s * scale;
      }
      softmax_row(probs.data(), pos + 1);
      double* orow = cat.data() + qo;
      for (int j = 0; j <= pos; ++j) {
        const double p = probs[j];
        const double* vrow = state.v_cache[l].row(j) + qo;
        for (int k = 0; k < dh; ++k) orow[k] += p * vrow[k];
      }
    }
    std::vector<double> y(d);
    row_matvec(cat.data(), lw.proj_w, y.data());
    add_row(y.data(), lw.proj_b.row(0), d);
    for (int k = 0; k < d; ++k) x[k] += y[k];

    layer_norm_row(x.data(), lw.ln2_g.row(0), lw.ln2_b.row(0), d, a.data(), xhat.data(),
                   &inv_std);
    row_matvec(a.data(), lw.fc1_w, h1.data());
    add_row(h1.data(), lw.fc1_b.row(0), cfg.ffn_dim);
    for (double& v : h1) v = v > 0.0 ? v : 0.0;
    row_matvec(h1.data(), lw.fc2_w, h2.data());
    add_row(h2.data(), lw.fc2_b.row(0), d);
    for (int k = 0; k < d; ++k) x[k] += h2[k];
  }

  layer_norm_row(x.data(), m.w.lnf_g.row(0), m.w.lnf_b.row(0), d, a.data(), xhat.data(),
                 &inv_std);
  row_matvec(a.data(), m.w.head_w, state.logits.data());
  add_row(state.logits.data(), m.w.head_b.row(0), m.vocab_size);
  ++state.length;
  return state.logits;
}

std::vector<TokenId> wrap_sequence(std::span<const TokenId> tokens, const Vocab& vocab,
                                   int max_seq_len) {
  std::vector<TokenId> seq;
  seq.reserve(tokens.size() + 2);
  seq.push_back(vocab.bos());
  seq.insert(seq.end(), tokens.begin(), tokens.end());
  seq.push_back(vocab.eos());
  if (static_cast<int>(seq.size()) > max_seq_len)
    fail(ErrorCode::SequenceTooLong,
         "template of " + std::to_string(tokens.size()) + " tokens does not fit max_seq_len " +
             std::to_string(max_seq_len));
  return seq;
}

double log_prob(const PriorModel& model, const PostfixTemplate& tmpl, const Vocab& vocab) {
  if (model.vocab_fingerprint != vocab.fingerprint())
    fail(ErrorCode::VocabMismatch, "model was trained with a different vocabulary");
  std::vector<TokenId> seq = wrap_sequence(tmpl.tokens, vocab, model.config.max_seq_len);
  Matrix probs = forward_all(model, std::span<const TokenId>(seq.data(), seq.size() - 1));
  double lp = 0.0;
  for (size_t pos = 0; pos + 1 < seq.size(); ++pos)
    lp += std::log(probs(static_cast<int>(pos), seq[pos + 1]));
  return lp;
}

// ============================================================================
//  Loss
// ============================================================================

namespace {

long count_targets(std::span<const std::vector<TokenId>> seqs) {
  long total = 0;
  for (const auto& seq : seqs)
    for (size_t pos = 0; pos + 1 < seq.size(); ++pos)
      if (seq[pos + 1] != kPad) ++total;
  return total;
}

}  // namespace

double ce_only(const PriorModel& model, std::span<const std::vector<TokenId>> seqs) {
  const long total = count_targets(seqs);
  if (total == 0) fail(ErrorCode::EmptyCorpus, "no target positions to score");
  double nll = 0.0;
  for (const auto& seq : seqs) {
    SeqCache c;
    seq_forward(model, seq, c, nullptr);
    for (size_t pos = 0; pos + 1 < seq.size(); ++pos) {
      const TokenId tgt = seq[pos + 1];
      if (tgt == kPad) continue;
      const double* lrow = c.logits.row(static_cast<int>(pos));
      double mx = lrow[0];
      for (int j = 1; j < model.vocab_size; ++j) mx = std::max(mx, lrow[j]);
      double sum = 0.0;
      for (int j = 0; j < model.vocab_size; ++j) sum += std::exp(lrow[j] - mx);
      nll += (mx + std::log(sum)) - lrow[tgt];
    }
  }
  return nll / total;
}

double ce_and_grads(const PriorModel& model, std::span<const std::vector<TokenId>> seqs,
                    PriorWeights& grads, std::mt19937_64* dropout_rng) {
  const long total = count_targets(seqs);
  if (total == 0) fail(ErrorCode::EmptyCorpus, "no target positions to score");
  const double inv_total = 1.0 / static_cast<double>(total);
  double nll = 0.0;
  std::vector<double> p(model.vocab_size);
  for (const auto& seq : seqs) {
    SeqCache c;
    seq_forward(model, seq, c, dropout_rng);
    const int L = static_cast<int>(seq.size());
    Matrix dlogits(L, model.vocab_size);
    for (int pos = 0; pos + 1 < L; ++pos) {
      const TokenId tgt = seq[pos + 1];
      if (tgt == kPad) continue;
      const double* lrow = c.logits.row(pos);
      std::copy(lrow, lrow + model.vocab_size, p.begin());
      softmax_row(p.data(), model.vocab_size);
      nll += -std::log(p[tgt]);
      double* drow = dlogits.row(pos);
      for (int j = 0; j < model.vocab_size; ++j) drow[j] = p[j] * inv_total;
      drow[tgt] -= inv_total;
    }
    seq_backward(model, seq, c, dlogits, grads);
  }
  return nll * inv_total;
}

// ============================================================================
//  Training
// ============================================================================

TrainResult train(const PriorConfig& config, std::span<const PostfixTemplate> corpus,
                  const Vocab& vocab) {
  config.validate();
  if (corpus.empty()) fail(ErrorCode::EmptyCorpus, "corpus has no templates");

  // split by hash of the token string so membership is stable across runs
  const auto holdout_cut =
      static_cast<uint64_t>(std::llround(config.holdout_fraction * 1000.0));
  std::vector<std::vector<TokenId>> train_seqs, held_seqs;
  for (const PostfixTemplate& tmpl : corpus) {
    std::vector<TokenId> seq = wrap_sequence(tmpl.tokens, vocab, config.max_seq_len);
    const uint64_t h = fnv1a64(vocab.tokens_to_string(tmpl.tokens));
    if (h % 1000 < holdout_cut)
      held_seqs.push_back(std::move(seq));
    else
      train_seqs.push_back(std::move(seq));
  }
  if (train_seqs.empty()) {
    train_seqs = std::move(held_seqs);
    held_seqs.clear();
  }

  TrainResult res;
  res.model = init_model(config, vocab);
  res.train_count = static_cast<int>(train_seqs.size());
  res.heldout_count = static_cast<int>(held_seqs.size());
  res.init_train_ce = ce_only(res.model, train_seqs);
  res.init_heldout_ce = held_seqs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                          : ce_only(res.model, held_seqs);

  PriorWeights grads = zero_like(res.model);
  PriorWeights adam_m = zero_like(res.model);
  PriorWeights adam_v = zero_like(res.model);
  auto wp = parameters(res.model.w);
  auto gp = parameters(grads);
  auto mp = parameters(adam_m);
  auto vp = parameters(adam_v);

  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kAdamEps = 1e-8;
  std::mt19937_64 shuffle_rng(derive_seed(config.seed, "prior.shuffle"));
  std::mt19937_64 drop_rng(derive_seed(config.seed, "prior.dropout"));
  std::mt19937_64* drop = config.dropout > 0.0 ? &drop_rng : nullptr;

  long step = 0;
  std::vector<size_t> order(train_seqs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (size_t start = 0; start < order.size(); start += config.batch_size) {
      const size_t stop = std::min(order.size(), start + config.batch_size);
      std::vector<std::vector<TokenId>> batch(stop - start);
      for (size_t i = start; i < stop; ++i) batch[i - start] = train_seqs[order[i]];

      for (auto& ref : gp) ref.value->zero();
      const double batch_ce = ce_and_grads(res.model, batch, grads, drop);
      if (!std::isfinite(batch_ce))
        fail(ErrorCode::NonFiniteLoss, "non-finite loss at epoch " + std::to_string(epoch) +
                                           ", step " + std::to_string(step + 1));

      double norm_sq = 0.0;
      for (auto& ref : gp)
        for (double v : ref.value->a) norm_sq += v * v;
      const double norm = std::sqrt(norm_sq);
      if (norm > config.grad_clip) {
        const double s = config.grad_clip / norm;
        for (auto& ref : gp)
          for (double& v : ref.value->a) v *= s;
      }

      ++step;
      const double warm = config.warmup_steps > 0
                              ? std::min(1.0, static_cast<double>(step) / config.warmup_steps)
                              : 1.0;
      const double lr = config.learning_rate * warm;
      const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(step));
      for (size_t pi = 0; pi < wp.size(); ++pi) {
        std::vector<double>& w = wp[pi].value->a;
        std::vector<double>& gv = gp[pi].value->a;
        std::vector<double>& mv = mp[pi].value->a;
        std::vector<double>& vv = vp[pi].value->a;
        for (size_t n = 0; n < w.size(); ++n) {
          mv[n] = kBeta1 * mv[n] + (1.0 - kBeta1) * gv[n];
          vv[n] = kBeta2 * vv[n] + (1.0 - kBeta2) * gv[n] * gv[n];
          w[n] -= lr * (mv[n] / bc1) / (std::sqrt(vv[n] / bc2) + kAdamEps);
        }
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_ce = ce_only(res.model, train_seqs);
    stats.heldout_ce = held_seqs.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : ce_only(res.model, held_seqs);
    if (!std::isfinite(stats.train_ce))
      fail(ErrorCode::NonFiniteLoss, "non-finite epoch loss at epoch " + std::to_string(epoch));
    res.history.push_back(stats);
  }
  return res;
}

// ============================================================================
//  Checkpoints
// ============================================================================

namespace {

constexpr char kMagic[8] = {'S', 'R', 'C', 'O', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCheckpointVersion = 1;

void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}
void put_u32(std::string& out, uint32_t v) { put_bytes(out, &v, sizeof v); }
void put_u64(std::string& out, uint64_t v) { put_bytes(out, &v, sizeof v); }
void put_i32(std::string& out, int32_t v) { put_bytes(out, &v, sizeof v); }
void put_f64(std::string& out, double v) { put_bytes(out, &v, sizeof v); }

struct Cursor {
  const char* p;
  size_t n;
  size_t off = 0;

  void need(size_t k) const {
    if (off + k > n) fail(ErrorCode::CorruptCheckpoint, "unexpected end of checkpoint data");
  }
  void get_bytes(void* dst, size_t k) {
    need(k);
    std::memcpy(dst, p + off, k);
    off += k;
  }
  uint32_t get_u32() { uint32_t v; get_bytes(&v, sizeof v); return v; }
  uint64_t get_u64() { uint64_t v; get_bytes(&v, sizeof v); return v; }
  int32_t get_i32() { int32_t v; get_bytes(&v, sizeof v); return v; }
  double get_f64() { double v; get_bytes(&v, sizeof v); return v; }
  std::string get_string() {
    const uint32_t len = get_u32();
    if (len > 4096) fail(ErrorCode::CorruptCheckpoint, "implausible string length");
    need(len);
    std::string s(p + off, len);
    off += len;
    return s;
  }
};

}  // namespace

void save_checkpoint(const PriorModel& model, const std::string& path) {
  std::string buf;
  put_bytes(buf, kMagic, sizeof kMagic);
  put_u32(buf, kCheckpointVersion);

  const PriorConfig& c = model.config;
  put_i32(buf, c.d_model);
  put_i32(buf, c.num_layers);
  put_i32(buf, c.num_heads);
  put_i32(buf, c.ffn_dim);
  put_i32(buf, c.max_seq_len);
  put_f64(buf, c.dropout);
  put_f64(buf, c.learning_rate);
  put_i32(buf, c.batch_size);
  put_i32(buf, c.epochs);
  put_i32(buf, c.warmup_steps);
  put_f64(buf, c.grad_clip);
  put_f64(buf, c.holdout_fraction);
  put_f64(buf, c.init_scale);
  put_u64(buf, c.seed);

  put_u64(buf, model.vocab_fingerprint);
  put_i32(buf, model.vocab_size);

  auto params = parameters(const_cast<PriorModel&>(model).w);
  put_u64(buf, params.size());
  for (const ParamRef& ref : params) {
    put_u32(buf, static_cast<uint32_t>(ref.name.size()));
    put_bytes(buf, ref.name.data(), ref.name.size());
    put_i32(buf, ref.value->rows);
    put_i32(buf, ref.value->cols);
    put_bytes(buf, ref.value->a.data(), ref.value->a.size() * sizeof(double));
  }

  put_u64(buf, fnv1a64_bytes(buf.data(), buf.size()));
  atomic_write_file(path, buf);
}

PriorModel load_checkpoint(const std::string& path, const Vocab& vocab) {
  const std::string buf = read_file(path);
  if (buf.size() < sizeof kMagic + sizeof(uint32_t) + sizeof(uint64_t))
    fail(ErrorCode::CorruptCheckpoint, "file too small to be a checkpoint");
  if (std::memcmp(buf.data(), kMagic, sizeof kMagic) != 0)
    fail(ErrorCode::CorruptCheckpoint, "bad magic; not a checkpoint file");

  Cursor cur{buf.data(), buf.size() - sizeof(uint64_t)};
  cur.off = sizeof kMagic;
  const uint32_t version = cur.get_u32();
  if (version != kCheckpointVersion)
    fail(ErrorCode::VersionMismatch, "checkpoint version " + std::to_string(version) +
                                         ", expected " + std::to_string(kCheckpointVersion));

  uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + buf.size() - sizeof(uint64_t), sizeof(uint64_t));
  if (fnv1a64_bytes(buf.data(), buf.size() - sizeof(uint64_t)) != stored)
    fail(ErrorCode::CorruptCheckpoint, "checksum mismatch");

  PriorConfig c;
  c.d_model = cur.get_i32();
  c.num_layers = cur.get_i32();
  c.num_heads = cur.get_i32();
  c.ffn_dim = cur.get_i32();
  c.max_seq_len = cur.get_i32();
  c.dropout = cur.get_f64();
  c.learning_rate = cur.get_f64();
  c.batch_size = cur.get_i32();
  c.epochs = cur.get_i32();
  c.warmup_steps = cur.get_i32();
  c.grad_clip = cur.get_f64();
  c.holdout_fraction = cur.get_f64();
  c.init_scale = cur.get_f64();
  c.seed = cur.get_u64();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorCode::CorruptCheckpoint, std::string("invalid stored config: ") + e.what());
  }

  const uint64_t fingerprint = cur.get_u64();
  const int32_t vocab_size = cur.get_i32();
  if (fingerprint != vocab.fingerprint() || vocab_size != vocab.size())
    fail(ErrorCode::VocabMismatch, "checkpoint was built with a different vocabulary");

  PriorModel m;
  m.config = c;
  m.vocab_fingerprint = fingerprint;
  m.vocab_size = vocab_size;
  m.w = make_weights(c, vocab_size);

  auto params = parameters(m.w);
  const uint64_t count = cur.get_u64();
  if (count != params.size())
    fail(ErrorCode::CorruptCheckpoint, "unexpected parameter count");
  for (ParamRef& ref : params) {
    const std::string name = cur.get_string();
    const int32_t rows = cur.get_i32();
    const int32_t cols = cur.get_i32();
    if (name != ref.name || rows != ref.value->rows || cols != ref.value->cols)
      fail(ErrorCode::CorruptCheckpoint, "parameter layout mismatch at " + ref.name);
    cur.get_bytes(ref.value->a.data(), ref.value->a.size() * sizeof(double));
  }
  if (cur.off != cur.n) fail(ErrorCode::CorruptCheckpoint, "trailing bytes after parameters");
  for (const ParamRef& ref : params)
    for (double v : ref.value->a)
      if (!std::isfinite(v)) fail(ErrorCode::CorruptCheckpoint, "non-finite weight in " + ref.name);
  return m;
}

}  // namespace srco
