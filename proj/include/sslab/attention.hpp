#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "sslab/error.hpp"
#include "sslab/matrix.hpp"
#include "sslab/rng.hpp"

namespace sslab {

enum class ScaleMode : std::uint8_t {
  per_term = 0,  // 1 / sqrt(T * d_head), T = number of active score terms
  global = 1,    // 1 / sqrt(d_head)
};

struct AttentionConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t max_rel_distance = 16;  // k; the relative table has 2k rows
  bool include_p2p = true;
  ScaleMode scale_mode = ScaleMode::per_term;

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t rel_table_size() const { return 2 * max_rel_distance; }
  std::size_t active_terms() const { return include_p2p ? 4 : 3; }

  double scale() const {
    const double dh = static_cast<double>(head_dim());
    if (scale_mode == ScaleMode::global) return 1.0 / std::sqrt(dh);
    return 1.0 / std::sqrt(static_cast<double>(active_terms()) * dh);
  }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw Error(ErrorKind::InvalidConfig, "d_model must be a positive multiple of n_heads");
    }
    if (max_rel_distance == 0) throw Error(ErrorKind::InvalidConfig, "max_rel_distance must be >= 1");
  }

  friend bool operator==(const AttentionConfig&, const AttentionConfig&) = default;
};

/// Clamped relative-position index of offset i - j into a table of 2k rows:
/// 0 for i - j <= -k, 2k - 1 for i - j >= k, otherwise i - j + k.
constexpr std::size_t relative_bucket(std::size_t i, std::size_t j, std::size_t k) {
  const auto delta = static_cast<long long>(i) - static_cast<long long>(j);
  const auto kk = static_cast<long long>(k);
  if (delta <= -kk) return 0;
  if (delta >= kk) return 2 * k - 1;
  return static_cast<std::size_t>(delta + kk);
}

/// Projections of one disentangled attention layer. `rel_embed` (2k x d_model)
/// holds the relative position vectors; inside a model it is shared by all
/// layers and left empty here.
struct AttentionParams {
  Matrix wq_c, wk_c, wv;  // content projections
  Matrix wq_r, wk_r;      // position projections
  Matrix wo;              // output projection
  Matrix rel_embed;

  static AttentionParams zeros(const AttentionConfig& cfg, bool with_rel_embed = true) {
    const std::size_t d = cfg.d_model;
    AttentionParams p;
    p.wq_c = p.wk_c = p.wv = p.wq_r = p.wk_r = p.wo = Matrix(d, d);
    if (with_rel_embed) p.rel_embed = Matrix(cfg.rel_table_size(), d);
    return p;
  }

  /// Visits the matrices in declaration order (rel_embed only when present).
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f("wq_c", self.wq_c);
    f("wk_c", self.wk_c);
    f("wv", self.wv);
    f("wq_r", self.wq_r);
    f("wk_r", self.wk_r);
    f("wo", self.wo);
    if (!self.rel_embed.empty()) f("rel_embed", self.rel_embed);
  }
  template <class F> void for_each(F&& f) { visit(*this, f); }
  template <class F> void for_each(F&& f) const { visit(*this, f); }

  friend bool operator==(const AttentionParams&, const AttentionParams&) = default;
};

/// Per-head scaled scores (masked columns hold -inf) and row probabilities.
struct ScoreMatrix {
  std::vector<Matrix> scores;
  std::vector<Matrix> probs;
};

/// Inverted dropout on the attention probabilities. rate == 0 disables it.
struct Dropout {
  double rate = 0.0;
  Rng* rng = nullptr;

  bool active() const { return rate > 0.0 && rng != nullptr; }
};

/// Everything the backward pass needs from a forward pass.
struct AttentionCache {
  Matrix input;
  std::vector<std::uint8_t> mask;
  Matrix qc, kc, v;  // L x d
  Matrix qr, kr;     // 2k x d, rows outside [bucket_lo, bucket_hi] are zero
  std::size_t bucket_lo = 0, bucket_hi = 0;
  ScoreMatrix scores;
  std::vector<Matrix> keep;     // per head dropout factors, 0 or 1/(1-rate); empty without dropout
  Matrix context;               // L x d, heads concatenated
};

struct AttentionGrads {
  AttentionParams params;  // same layout as the forward params; rel_embed always filled
  Matrix input;
};

/// Row softmax restricted to unmasked columns; masked entries get probability 0.
inline void masked_softmax(std::span<const double> scores, std::span<const std::uint8_t> mask,
                           std::span<double> out) {
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (mask[j]) top = std::max(top, scores[j]);
  }
  if (top == -std::numeric_limits<double>::infinity()) {
    throw Error(ErrorKind::AllMasked, "no unmasked column in attention row");
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    out[j] = mask[j] ? std::exp(scores[j] - top) : 0.0;
    sum += out[j];
  }
  for (auto& p : out) p /= sum;
}

namespace detail {

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

/// out.row(r) = a.row(r) * w for r in [lo, hi]; other rows zero.
inline void project_rows(const Matrix& a, const Matrix& w, std::size_t lo, std::size_t hi, Matrix& out) {
  out = Matrix(a.rows(), w.cols());
  const std::size_t k = a.cols(), m = w.cols();
  for (std::size_t i = lo; i <= hi; ++i) {
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) axpy(a(i, p), w.data() + p * m, orow, m);
  }
}

inline void check_inputs(const Matrix& h, const AttentionParams& params, const Matrix& rel_embed,
                         const AttentionConfig& cfg, std::span<const std::uint8_t> mask) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  if (h.rows() == 0) throw Error(ErrorKind::ShapeMismatch, "empty input sequence");
  require_shape(h, h.rows(), d, "hidden states");
  if (mask.size() != h.rows()) throw Error(ErrorKind::ShapeMismatch, "mask length differs from sequence length");
  require_shape(params.wq_c, d, d, "wq_c");
  require_shape(params.wk_c, d, d, "wk_c");
  require_shape(params.wv, d, d, "wv");
  require_shape(params.wq_r, d, d, "wq_r");
  require_shape(params.wk_r, d, d, "wk_r");
  require_shape(params.wo, d, d, "wo");
  require_shape(rel_embed, cfg.rel_table_size(), d, "rel_embed");
  if (std::none_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; })) {
    throw Error(ErrorKind::AllMasked, "every position is masked");
  }
}

inline Matrix row_slice(const Matrix& m, std::size_t first, std::size_t count) {
  Matrix out(count, m.cols());
  std::copy(m.data() + first * m.cols(), m.data() + (first + count) * m.cols(), out.data());
  return out;
}

/// Projections and per-head scores/probabilities; fills everything in `c`
/// up to (not including) the value mixing.
inline void compute_scores(const Matrix& h, const AttentionParams& params, const Matrix& rel_embed,
                           const AttentionConfig& cfg, std::span<const std::uint8_t> mask,
                           AttentionCache& c) {
  check_inputs(h, params, rel_embed, cfg, mask);
  const std::size_t len = h.rows();
  const std::size_t k = cfg.max_rel_distance;
  const std::size_t dh = cfg.head_dim();
  c.input = h;
  c.mask.assign(mask.begin(), mask.end());
  gemm(h, params.wq_c, c.qc);
  gemm(h, params.wk_c, c.kc);
  gemm(h, params.wv, c.v);
  c.bucket_lo = relative_bucket(0, len - 1, k);
  c.bucket_hi = relative_bucket(len - 1, 0, k);
  project_rows(rel_embed, params.wq_r, c.bucket_lo, c.bucket_hi, c.qr);
  project_rows(rel_embed, params.wk_r, c.bucket_lo, c.bucket_hi, c.kr);

  const double scale = cfg.scale();
  const double neg_inf = -std::numeric_limits<double>::infinity();
  c.scores.scores.assign(cfg.n_heads, Matrix(len, len));
  c.scores.probs.assign(cfg.n_heads, Matrix(len, len));
  for (std::size_t head = 0; head < cfg.n_heads; ++head) {
    const std::size_t o = head * dh;
    Matrix& s = c.scores.scores[head];
    for (std::size_t m = 0; m < len; ++m) {
      const double* qc_m = c.qc.data() + m * cfg.d_model + o;
      for (std::size_t n = 0; n < len; ++n) {
        if (!mask[n]) {
          s(m, n) = neg_inf;
          continue;
        }
        const std::size_t b_mn = relative_bucket(m, n, k);
        const std::size_t b_nm = relative_bucket(n, m, k);
        const double* kc_n = c.kc.data() + n * cfg.d_model + o;
        const double* kr_mn = c.kr.data() + b_mn * cfg.d_model + o;
        const double* qr_nm = c.qr.data() + b_nm * cfg.d_model + o;
        double total = dot(qc_m, kc_n, dh)     // content -> content
                       + dot(qc_m, kr_mn, dh)  // content -> position
                       + dot(qr_nm, kc_n, dh); // position -> content
        if (cfg.include_p2p) {
          const double* qr_mn = c.qr.data() + b_mn * cfg.d_model + o;
          const double* kr_nm = c.kr.data() + b_nm * cfg.d_model + o;
          total += dot(qr_mn, kr_nm, dh);       // position -> position
        }
        s(m, n) = total * scale;
      }
      masked_softmax(s.row(m), mask, c.scores.probs[head].row(m));
    }
  }
}

}  // namespace detail

/// Scaled disentangled scores and their row softmax, per head.
inline ScoreMatrix disentangled_scores(const Matrix& h, const AttentionParams& params,
                                       const AttentionConfig& cfg, std::span<const std::uint8_t> mask) {
  AttentionCache c;
  detail::compute_scores(h, params, params.rel_embed, cfg, mask, c);
  return std::move(c.scores);
}

/// Full layer: probabilities mix the value projections per head, heads are
/// concatenated and projected by wo. `rel_embed` overrides params.rel_embed so
/// a model can share one table across layers.
inline Matrix attention_forward(const Matrix& h, const AttentionParams& params, const Matrix& rel_embed,
                                const AttentionConfig& cfg, std::span<const std::uint8_t> mask,
                                AttentionCache& cache, Dropout dropout = {}) {
  detail::compute_scores(h, params, rel_embed, cfg, mask, cache);
  const std::size_t len = h.rows();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.head_dim();
  cache.keep.clear();
  cache.context = Matrix(len, d);
  for (std::size_t head = 0; head < cfg.n_heads; ++head) {
    const Matrix& probs = cache.scores.probs[head];
    const Matrix* keep = nullptr;
    if (dropout.active()) {
      Matrix factors(len, len);
      const double keep_scale = 1.0 / (1.0 - dropout.rate);
      for (auto& f : factors.values()) f = dropout.rng->uniform() < dropout.rate ? 0.0 : keep_scale;
      cache.keep.push_back(std::move(factors));
      keep = &cache.keep.back();
    }
    const std::size_t o = head * dh;
    for (std::size_t m = 0; m < len; ++m) {
      double* ctx = cache.context.data() + m * d + o;
      for (std::size_t n = 0; n < len; ++n) {
        const double a = keep ? probs(m, n) * (*keep)(m, n) : probs(m, n);
        if (a != 0.0) detail::axpy(a, cache.v.data() + n * d + o, ctx, dh);
      }
    }
  }
  Matrix out;
  gemm(cache.context, params.wo, out);
  return out;
}

struct AttentionResult {
  Matrix output;
  ScoreMatrix scores;
};

inline AttentionResult attention_forward(const Matrix& h, const AttentionParams& params,
                                         const AttentionConfig& cfg, std::span<const std::uint8_t> mask) {
  AttentionCache cache;
  Matrix out = attention_forward(h, params, params.rel_embed, cfg, mask, cache);
  return {std::move(out), std::move(cache.scores)};
}

/// Analytic gradients of a scalar loss given d(loss)/d(output).
inline AttentionGrads attention_backward(const Matrix& d_out, const AttentionCache& c,
                                         const AttentionParams& params, const Matrix& rel_embed,
                                         const AttentionConfig& cfg) {
  const std::size_t len = c.input.rows();
  const std::size_t d = cfg.d_model;
  const std::size_t dh = cfg.head_dim();
  const std::size_t k = cfg.max_rel_distance;
  require_shape(d_out, len, d, "upstream gradient");
  if (c.scores.probs.size() != cfg.n_heads) throw Error(ErrorKind::ShapeMismatch, "cache from another config");

  AttentionGrads g;
  g.params = AttentionParams::zeros(cfg, true);
  gemm_tn(c.context, d_out, g.params.wo);
  Matrix d_ctx;
  gemm_nt(d_out, params.wo, d_ctx);

  Matrix d_qc(len, d), d_kc(len, d), d_v(len, d);
  Matrix d_qr(cfg.rel_table_size(), d), d_kr(cfg.rel_table_size(), d);
  const double scale = cfg.scale();
  std::vector<double> d_probs(len), d_scores(len);
  for (std::size_t head = 0; head < cfg.n_heads; ++head) {
    const std::size_t o = head * dh;
    const Matrix& probs = c.scores.probs[head];
    const Matrix* keep = c.keep.empty() ? nullptr : &c.keep[head];
    for (std::size_t m = 0; m < len; ++m) {
      const double* dctx_m = d_ctx.data() + m * d + o;
      // through the value mixing
      for (std::size_t n = 0; n < len; ++n) {
        const double factor = keep ? (*keep)(m, n) : 1.0;
        const double a_mix = probs(m, n) * factor;
        if (a_mix != 0.0) detail::axpy(a_mix, dctx_m, d_v.data() + n * d + o, dh);
        d_probs[n] = factor * detail::dot(dctx_m, c.v.data() + n * d + o, dh);
      }
      // through the softmax
      double row_dot = 0.0;
      for (std::size_t n = 0; n < len; ++n) row_dot += probs(m, n) * d_probs[n];
      for (std::size_t n = 0; n < len; ++n) d_scores[n] = probs(m, n) * (d_probs[n] - row_dot) * scale;
      // through the four score terms
      const double* qc_m = c.qc.data() + m * d + o;
      double* dqc_m = d_qc.data() + m * d + o;
      for (std::size_t n = 0; n < len; ++n) {
        const double ds = d_scores[n];
        if (ds == 0.0) continue;
        const std::size_t b_mn = relative_bucket(m, n, k);
        const std::size_t b_nm = relative_bucket(n, m, k);
        const double* kc_n = c.kc.data() + n * d + o;
        detail::axpy(ds, kc_n, dqc_m, dh);
        detail::axpy(ds, c.kr.data() + b_mn * d + o, dqc_m, dh);
        detail::axpy(ds, qc_m, d_kc.data() + n * d + o, dh);
        detail::axpy(ds, c.qr.data() + b_nm * d + o, d_kc.data() + n * d + o, dh);
        detail::axpy(ds, qc_m, d_kr.data() + b_mn * d + o, dh);
        detail::axpy(ds, kc_n, d_qr.data() + b_nm * d + o, dh);
        if (cfg.include_p2p) {
          detail::axpy(ds, c.kr.data() + b_nm * d + o, d_qr.data() + b_mn * d + o, dh);
          detail::axpy(ds, c.qr.data() + b_mn * d + o, d_kr.data() + b_nm * d + o, dh);
        }
      }
    }
  }

  gemm_tn(c.input, d_qc, g.params.wq_c);
  gemm_tn(c.input, d_kc, g.params.wk_c);
  gemm_tn(c.input, d_v, g.params.wv);
  // only buckets reachable at this length carry gradient
  const std::size_t lo = c.bucket_lo, used = c.bucket_hi - c.bucket_lo + 1;
  const Matrix rel_used = detail::row_slice(rel_embed, lo, used);
  const Matrix d_qr_used = detail::row_slice(d_qr, lo, used);
  const Matrix d_kr_used = detail::row_slice(d_kr, lo, used);
  gemm_tn(rel_used, d_qr_used, g.params.wq_r);
  gemm_tn(rel_used, d_kr_used, g.params.wk_r);
  Matrix d_rel_used;
  gemm_nt(d_qr_used, params.wq_r, d_rel_used);
  gemm_nt(d_kr_used, params.wk_r, d_rel_used, true);
  std::copy(d_rel_used.values().begin(), d_rel_used.values().end(),
            g.params.rel_embed.data() + lo * d);
  gemm_nt(d_qc, params.wq_c, g.input);
  gemm_nt(d_kc, params.wk_c, g.input, true);
  gemm_nt(d_v, params.wv, g.input, true);
  return g;
}

inline AttentionGrads attention_backward(const Matrix& d_out, const AttentionCache& c,
                                         const AttentionParams& params, const AttentionConfig& cfg) {
  return attention_backward(d_out, c, params, params.rel_embed, cfg);
}

}  // namespace sslab
