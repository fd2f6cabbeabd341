#pragma once

#include <algorithm>

#include <bit>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sslab/attention.hpp"
#include "sslab/corpus.hpp"
#include "sslab/error.hpp"
#include "sslab/json_writer.hpp"
#include "sslab/matrix.hpp"
#include "sslab/rng.hpp"
#include "sslab/text.hpp"

namespace sslab {

struct ModelConfig {
  std::size_t layers = 6;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t ffn_dim = 256;
  std::size_t vocab_size = 0;  // 0 until a vocabulary is attached
  std::size_t max_len = 32;
  AttentionConfig attention{64, 4, 16, true, ScaleMode::per_term};
  double dropout_rate = 0.1;
  std::uint64_t seed = 42;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  double grad_clip_norm = 1.0;
  InputLayout input_layout = InputLayout::anchor_target_context;

  void validate() const {
    if (layers == 0 || d_model == 0 || ffn_dim == 0 || epochs == 0 || batch_size == 0) {
      throw Error(ErrorKind::InvalidConfig, "layers, d_model, ffn_dim, epochs, batch_size must be >= 1");
    }
    if (vocab_size < Vocabulary::kSpecialCount) {
      throw Error(ErrorKind::InvalidConfig, "vocab_size must cover the special tokens");
    }
    if (max_len < min_max_len(input_layout)) {
      throw Error(ErrorKind::MaxLenTooSmall, "max_len " + std::to_string(max_len));
    }
    if (attention.d_model != d_model || attention.n_heads != n_heads) {
      throw Error(ErrorKind::InvalidConfig, "attention config disagrees with d_model/n_heads");
    }
    attention.validate();
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
      throw Error(ErrorKind::InvalidConfig, "dropout_rate must be in [0, 1)");
    }
    if (!(learning_rate >= 0.0) || !(adam_eps > 0.0) || !(grad_clip_norm > 0.0)) {
      throw Error(ErrorKind::InvalidConfig, "optimizer settings out of range");
    }
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Desk-scale counterparts of the published model sizes: base and small keep
/// 64 hidden units with 12 and 6 layers; xsmall halves the hidden size and
/// keeps 12 layers. Vocabulary size is filled in once a vocabulary exists.
inline ModelConfig preset(std::string_view name) {
  ModelConfig cfg;
  if (name == "base") {
    cfg.layers = 12;
    cfg.d_model = 64;
    cfg.n_heads = 4;
  } else if (name == "small") {
    cfg.layers = 6;
    cfg.d_model = 64;
    cfg.n_heads = 4;
  } else if (name == "xsmall") {
    cfg.layers = 12;
    cfg.d_model = 32;
    cfg.n_heads = 2;
  } else {
    throw Error(ErrorKind::UnknownPreset, std::string(name));
  }
  cfg.ffn_dim = 4 * cfg.d_model;
  cfg.max_len = 32;
  cfg.attention = {cfg.d_model, cfg.n_heads, cfg.max_len / 2, true, ScaleMode::per_term};
  return cfg;
}

/// Layer index before which absolute position embeddings are added to the
/// hidden states: the last block, just ahead of the regression head.
inline std::size_t absolute_position_layer(const ModelConfig& cfg) { return cfg.layers - 1; }

struct LayerParams {
  Matrix ln1_gain, ln1_bias;
  AttentionParams attention;  // rel_embed lives in ModelParams
  Matrix ln2_gain, ln2_bias;
  Matrix ffn_w1, ffn_bias1, ffn_w2, ffn_bias2;

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
  Matrix token_embed;    // vocab x d
  Matrix abs_pos_embed;  // max_len x d
  Matrix rel_embed;      // 2k x d, shared by every layer
  std::vector<LayerParams> layers;
  Matrix pool_w, pool_bias;  // d x d, 1 x d
  Matrix out_w, out_bias;    // 1 x d, 1 x 1

  static ModelParams zeros(const ModelConfig& cfg) {
    const std::size_t d = cfg.d_model;
    ModelParams p;
    p.token_embed = Matrix(cfg.vocab_size, d);
    p.abs_pos_embed = Matrix(cfg.max_len, d);
    p.rel_embed = Matrix(cfg.attention.rel_table_size(), d);
    p.layers.resize(cfg.layers);
    for (auto& l : p.layers) {
      l.ln1_gain = l.ln1_bias = l.ln2_gain = l.ln2_bias = Matrix(1, d);
      l.attention = AttentionParams::zeros(cfg.attention, false);
      l.ffn_w1 = Matrix(d, cfg.ffn_dim);
      l.ffn_bias1 = Matrix(1, cfg.ffn_dim);
      l.ffn_w2 = Matrix(cfg.ffn_dim, d);
      l.ffn_bias2 = Matrix(1, d);
    }
    p.pool_w = Matrix(d, d);
    p.pool_bias = Matrix(1, d);
    p.out_w = Matrix(1, d);
    p.out_bias = Matrix(1, 1);
    return p;
  }

  /// Visits every matrix in declaration order; this order is the checkpoint layout.
  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("token_embed"), self.token_embed);
    f(std::string("abs_pos_embed"), self.abs_pos_embed);
    f(std::string("rel_embed"), self.rel_embed);
    for (std::size_t i = 0; i < self.layers.size(); ++i) {
      auto& l = self.layers[i];
      const std::string pre = "layer" + std::to_string(i) + ".";
      f(pre + "ln1_gain", l.ln1_gain);
      f(pre + "ln1_bias", l.ln1_bias);
      l.attention.for_each([&](const char* name, auto& m) { f(pre + name, m); });
      f(pre + "ln2_gain", l.ln2_gain);
      f(pre + "ln2_bias", l.ln2_bias);
      f(pre + "ffn_w1", l.ffn_w1);
      f(pre + "ffn_bias1", l.ffn_bias1);
      f(pre + "ffn_w2", l.ffn_w2);
      f(pre + "ffn_bias2", l.ffn_bias2);
    }
    f(std::string("pool_w"), self.pool_w);
    f(std::string("pool_bias"), self.pool_bias);
    f(std::string("out_w"), self.out_w);
    f(std::string("out_bias"), self.out_bias);
  }
  template <class F> void for_each(F&& f) { visit(*this, f); }
  template <class F> void for_each(F&& f) const { visit(*this, f); }

  std::vector<Matrix*> matrices() {
    std::vector<Matrix*> out;
    for_each([&](const std::string&, Matrix& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Matrix*> matrices() const {
    std::vector<const Matrix*> out;
    for_each([&](const std::string&, const Matrix& m) { out.push_back(&m); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (auto* m : matrices()) n += m->size();
    return n;
  }

  void set_zero() {
    for (auto* m : matrices()) m->fill(0.0);
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline constexpr double kInitStddev = 0.02;

/// Weights ~ N(0, 0.02^2) truncated at two standard deviations, drawn in
/// declaration order from the config seed; layer-norm gains 1, biases 0.
inline ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p = ModelParams::zeros(cfg);
  Rng rng(cfg.seed);
  p.for_each([&](const std::string& name, Matrix& m) {
    if (name.ends_with("gain")) {
      m.fill(1.0);
    } else if (name.find("bias") != std::string::npos) {
      m.fill(0.0);
    } else {
      for (auto& v : m.values()) v = kInitStddev * rng.truncated_normal(2.0);
    }
  });
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward

inline constexpr double kLayerNormEps = 1e-5;

struct LayerNormCache {
  Matrix xhat;
  std::vector<double> rstd;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& c) {
  const std::size_t n = x.rows(), d = x.cols();
  Matrix y(n, d);
  c.xhat = Matrix(n, d);
  c.rstd.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    double mean = 0.0;
    for (double v : x.row(r)) mean += v;
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (double v : x.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    c.rstd[r] = rstd;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x(r, j) - mean) * rstd;
      c.xhat(r, j) = xh;
      y(r, j) = gain(0, j) * xh + bias(0, j);
    }
  }
  return y;
}

/// Accumulates gain/bias gradients and adds the input gradient to `dx`.
inline void layer_norm_backward(const Matrix& dy, const LayerNormCache& c, const Matrix& gain,
                                Matrix& d_gain, Matrix& d_bias, Matrix& dx) {
  const std::size_t n = dy.rows(), d = dy.cols();
  std::vector<double> dxhat(d);
  for (std::size_t r = 0; r < n; ++r) {
    double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      d_gain(0, j) += dy(r, j) * c.xhat(r, j);
      d_bias(0, j) += dy(r, j);
      dxhat[j] = dy(r, j) * gain(0, j);
      mean_dxhat += dxhat[j];
      mean_dxhat_xhat += dxhat[j] * c.xhat(r, j);
    }
    mean_dxhat /= static_cast<double>(d);
    mean_dxhat_xhat /= static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      dx(r, j) += c.rstd[r] * (dxhat[j] - mean_dxhat - c.xhat(r, j) * mean_dxhat_xhat);
    }
  }
}

/// tanh approximation of GELU.
inline double gelu(double x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2 / pi)
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline double gelu_grad(double x) {
  constexpr double c = 0.7978845608028654;
  const double t = std::tanh(c * (x + 0.044715 * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x);
}

struct LayerCache {
  LayerNormCache ln1;
  AttentionCache attention;
  LayerNormCache ln2;
  Matrix ffn_in;   // ln2 output
  Matrix ffn_pre;  // before activation
  Matrix ffn_act;  // after activation and dropout
  Matrix ffn_keep; // dropout factors, empty without dropout
};

struct ForwardCache {
  std::vector<TokenId> ids;  // the unpadded prefix actually computed
  std::vector<std::uint8_t> mask;
  std::vector<LayerCache> layers;
  Matrix final_hidden;
  std::vector<double> pooled;
  double score = 0.0;
};

namespace detail {

inline void add_row_bias(Matrix& x, const Matrix& bias) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < x.cols(); ++j) x(r, j) += bias(0, j);
  }
}

inline void add_column_sums(const Matrix& x, Matrix& into) {
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t j = 0; j < x.cols(); ++j) into(0, j) += x(r, j);
  }
}

inline double logistic(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace detail

/// Predicted similarity in (0, 1). Dropout is applied only when `dropout_rng`
/// is given. Trailing masked positions are not computed: nothing unmasked
/// attends to them and only the CLS row feeds the head, so the result is
/// identical to running the full padded sequence.
inline double forward(const TokenSequence& tokens, const ModelParams& params, const ModelConfig& cfg,
                      ForwardCache* cache = nullptr, Rng* dropout_rng = nullptr) {
  if (tokens.ids.size() != cfg.max_len || tokens.attention_mask.size() != cfg.max_len) {
    throw Error(ErrorKind::ShapeMismatch, "token sequence length " + std::to_string(tokens.ids.size()) +
                                              " != max_len " + std::to_string(cfg.max_len));
  }
  require_shape(params.token_embed, cfg.vocab_size, cfg.d_model, "token_embed");
  if (params.layers.size() != cfg.layers) throw Error(ErrorKind::ShapeMismatch, "layer count");
  std::size_t len = 0;
  for (std::size_t i = 0; i < tokens.attention_mask.size(); ++i) {
    if (tokens.attention_mask[i]) len = i + 1;
  }
  if (len == 0) throw Error(ErrorKind::AllMasked, "empty token sequence");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.ids.assign(tokens.ids.begin(), tokens.ids.begin() + static_cast<std::ptrdiff_t>(len));
  c.mask.assign(tokens.attention_mask.begin(), tokens.attention_mask.begin() + static_cast<std::ptrdiff_t>(len));
  c.layers.assign(cfg.layers, {});

  const std::size_t d = cfg.d_model;
  Matrix x(len, d);
  for (std::size_t t = 0; t < len; ++t) {
    const auto id = c.ids[t];
    if (id < 0 || static_cast<std::size_t>(id) >= cfg.vocab_size) {
      throw Error(ErrorKind::ShapeMismatch, "token id " + std::to_string(id) + " outside vocabulary");
    }
    auto src = params.token_embed.row(static_cast<std::size_t>(id));
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }
  const bool train_mode = dropout_rng != nullptr && cfg.dropout_rate > 0.0;
  const Dropout attn_dropout{train_mode ? cfg.dropout_rate : 0.0, dropout_rng};
  const std::size_t inject_at = absolute_position_layer(cfg);

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerParams& lp = params.layers[l];
    LayerCache& lc = c.layers[l];
    if (l == inject_at) {
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < d; ++j) x(t, j) += params.abs_pos_embed(t, j);
      }
    }
    const Matrix a = layer_norm(x, lp.ln1_gain, lp.ln1_bias, lc.ln1);
    add_inplace(x, attention_forward(a, lp.attention, params.rel_embed, cfg.attention, c.mask,
                                     lc.attention, attn_dropout));
    lc.ffn_in = layer_norm(x, lp.ln2_gain, lp.ln2_bias, lc.ln2);
    gemm(lc.ffn_in, lp.ffn_w1, lc.ffn_pre);
    detail::add_row_bias(lc.ffn_pre, lp.ffn_bias1);
    lc.ffn_act = lc.ffn_pre;
    for (auto& v : lc.ffn_act.values()) v = gelu(v);
    lc.ffn_keep = Matrix();
    if (train_mode) {
      lc.ffn_keep = Matrix(len, cfg.ffn_dim);
      const double keep_scale = 1.0 / (1.0 - cfg.dropout_rate);
      auto act = lc.ffn_act.values();
      auto keep = lc.ffn_keep.values();
      for (std::size_t i = 0; i < act.size(); ++i) {
        keep[i] = dropout_rng->uniform() < cfg.dropout_rate ? 0.0 : keep_scale;
        act[i] *= keep[i];
      }
    }
    Matrix f;
    gemm(lc.ffn_act, lp.ffn_w2, f);
    detail::add_row_bias(f, lp.ffn_bias2);
    add_inplace(x, f);
  }

  c.pooled.assign(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double s = params.pool_bias(0, j);
    for (std::size_t i = 0; i < d; ++i) s += x(0, i) * params.pool_w(i, j);
    c.pooled[j] = std::tanh(s);
  }
  double logit = params.out_bias(0, 0);
  for (std::size_t j = 0; j < d; ++j) logit += params.out_w(0, j) * c.pooled[j];
  c.final_hidden = std::move(x);
  c.score = detail::logistic(logit);
  return c.score;
}

/// Adds d(loss)/d(params) to `grads` given d(loss)/d(score) for one sequence.
inline void backward(double d_score, const ForwardCache& c, const ModelParams& params,
                     const ModelConfig& cfg, ModelParams& grads) {
  const std::size_t d = cfg.d_model;
  const std::size_t len = c.ids.size();
  const double s = c.score;
  const double d_logit = d_score * s * (1.0 - s);

  std::vector<double> d_pre(d);
  for (std::size_t j = 0; j < d; ++j) {
    grads.out_w(0, j) += d_logit * c.pooled[j];
    const double d_pooled = d_logit * params.out_w(0, j);
    d_pre[j] = d_pooled * (1.0 - c.pooled[j] * c.pooled[j]);
    grads.pool_bias(0, j) += d_pre[j];
  }
  grads.out_bias(0, 0) += d_logit;
  Matrix dx(len, d);
  for (std::size_t i = 0; i < d; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      grads.pool_w(i, j) += c.final_hidden(0, i) * d_pre[j];
      acc += params.pool_w(i, j) * d_pre[j];
    }
    dx(0, i) = acc;
  }

  const std::size_t inject_at = absolute_position_layer(cfg);
  for (std::size_t li = cfg.layers; li-- > 0;) {
    const LayerParams& lp = params.layers[li];
    LayerParams& lg = grads.layers[li];
    const LayerCache& lc = c.layers[li];

    // feed-forward residual branch
    gemm_tn(lc.ffn_act, dx, lg.ffn_w2, true);
    detail::add_column_sums(dx, lg.ffn_bias2);
    Matrix d_act;
    gemm_nt(dx, lp.ffn_w2, d_act);
    auto da = d_act.values();
    auto pre = lc.ffn_pre.values();
    for (std::size_t i = 0; i < da.size(); ++i) {
      if (!lc.ffn_keep.empty()) da[i] *= lc.ffn_keep.values()[i];
      da[i] *= gelu_grad(pre[i]);
    }
    gemm_tn(lc.ffn_in, d_act, lg.ffn_w1, true);
    detail::add_column_sums(d_act, lg.ffn_bias1);
    Matrix d_ffn_in;
    gemm_nt(d_act, lp.ffn_w1, d_ffn_in);
    layer_norm_backward(d_ffn_in, lc.ln2, lp.ln2_gain, lg.ln2_gain, lg.ln2_bias, dx);

    // attention residual branch
    AttentionGrads ag = attention_backward(dx, lc.attention, lp.attention, params.rel_embed, cfg.attention);
    add_inplace(lg.attention.wq_c, ag.params.wq_c);
    add_inplace(lg.attention.wk_c, ag.params.wk_c);
    add_inplace(lg.attention.wv, ag.params.wv);
    add_inplace(lg.attention.wq_r, ag.params.wq_r);
    add_inplace(lg.attention.wk_r, ag.params.wk_r);
    add_inplace(lg.attention.wo, ag.params.wo);
    add_inplace(grads.rel_embed, ag.params.rel_embed);
    layer_norm_backward(ag.input, lc.ln1, lp.ln1_gain, lg.ln1_gain, lg.ln1_bias, dx);

    if (li == inject_at) {
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t j = 0; j < d; ++j) grads.abs_pos_embed(t, j) += dx(t, j);
      }
    }
  }
  for (std::size_t t = 0; t < len; ++t) {
    auto row = grads.token_embed.row(static_cast<std::size_t>(c.ids[t]));
    for (std::size_t j = 0; j < d; ++j) row[j] += dx(t, j);
  }
}

/// Mean squared error over a batch; when `grads` is given it is overwritten
/// with the gradient of that loss.
inline double batch_loss(std::span<const TokenSequence* const> inputs, std::span<const double> targets,
                         const ModelParams& params, const ModelConfig& cfg, ModelParams* grads = nullptr,
                         Rng* dropout_rng = nullptr) {
  if (inputs.size() != targets.size() || inputs.empty()) {
    throw Error(ErrorKind::ShapeMismatch, "batch inputs and targets differ in size");
  }
  if (grads) {
    if (grads->layers.size() != params.layers.size()) *grads = ModelParams::zeros(cfg);
    grads->set_zero();
  }
  const double inv_n = 1.0 / static_cast<double>(inputs.size());
  double loss = 0.0;
  ForwardCache cache;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double pred = forward(*inputs[i], params, cfg, grads ? &cache : nullptr, dropout_rng);
    const double err = pred - targets[i];
    loss += err * err;
    if (grads) backward(2.0 * err * inv_n, cache, params, cfg, *grads);
  }
  return loss * inv_n;
}

// ---------------------------------------------------------------------------
// Optimization

inline double global_norm(const ModelParams& g) {
  double s = 0.0;
  for (const auto* m : g.matrices()) {
    for (double v : m->values()) s += v * v;
  }
  return std::sqrt(s);
}

/// Rescales the gradient in place when its global L2 norm exceeds `max_norm`.
inline double clip_global_norm(ModelParams& g, double max_norm) {
  const double norm = global_norm(g);
  if (norm > max_norm) {
    const double f = max_norm / norm;
    for (auto* m : g.matrices()) {
      for (auto& v : m->values()) v *= f;
    }
  }
  return norm;
}

/// Adam with bias correction.
class Adam {
 public:
  Adam(const ModelConfig& cfg, const ModelParams& like)
      : lr_(cfg.learning_rate), beta1_(cfg.adam_beta1), beta2_(cfg.adam_beta2), eps_(cfg.adam_eps),
        m_(like), v_(like) {
    m_.set_zero();
    v_.set_zero();
  }

  void step(ModelParams& params, const ModelParams& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    auto ps = params.matrices();
    auto gs = grads.matrices();
    auto ms = m_.matrices();
    auto vs = v_.matrices();
    for (std::size_t k = 0; k < ps.size(); ++k) {
      auto p = ps[k]->values();
      auto g = gs[k]->values();
      auto m = ms[k]->values();
      auto v = vs[k]->values();
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        p[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  ModelParams m_, v_;
  std::size_t t_ = 0;
};

struct TrainTrace {
  std::vector<double> step_losses;              // batch MSE with dropout active
  std::vector<double> epoch_train_losses;       // mean of the epoch's step losses
  std::vector<double> epoch_validation_losses;  // evaluation-mode MSE; empty without validation data
  std::vector<double> epoch_seconds;
  std::size_t steps_per_epoch = 0;

  /// Mean step loss over the final epoch.
  double final_train_loss() const { return epoch_train_losses.empty() ? 0.0 : epoch_train_losses.back(); }
};

struct TrainHooks {
  /// Called after every optimizer step; returning false stops training early.
  std::function<bool(std::size_t step, const ModelParams& params)> after_step;
};

inline std::vector<double> predict(std::span<const TokenSequence> inputs, const ModelParams& params,
                                   const ModelConfig& cfg) {
  std::vector<double> out;
  out.reserve(inputs.size());
  for (const auto& x : inputs) out.push_back(forward(x, params, cfg));
  return out;
}

/// Evaluation-mode MSE over the selected examples.
inline double evaluate_mse(std::span<const TokenSequence> inputs, std::span<const double> targets,
                           std::span<const std::size_t> indices, const ModelParams& params,
                           const ModelConfig& cfg) {
  if (indices.empty()) return 0.0;
  double s = 0.0;
  for (auto i : indices) {
    const double e = forward(inputs[i], params, cfg) - targets[i];
    s += e * e;
  }
  return s / static_cast<double>(indices.size());
}

/// Mini-batch Adam on MSE over pre-encoded inputs. Batches come from a seeded
/// reshuffle of `train` every epoch; gradients are clipped to the configured
/// global norm. `validation` may be empty.
inline TrainTrace train_encoded(std::span<const TokenSequence> inputs, std::span<const double> targets,
                                std::span<const std::size_t> train, std::span<const std::size_t> validation,
                                const ModelConfig& cfg, ModelParams& params, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorKind::EmptySplit, "no training examples");
  if (inputs.size() != targets.size()) throw Error(ErrorKind::ShapeMismatch, "inputs vs targets");

  Rng shuffle_rng(cfg.seed ^ 0x5bd1e995ULL);
  Rng dropout_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  Adam adam(cfg, params);
  ModelParams grads = ModelParams::zeros(cfg);
  std::vector<std::size_t> order(train.begin(), train.end());
  std::vector<std::size_t> batch_idx;
  std::vector<const TokenSequence*> batch_in;
  std::vector<double> batch_y;

  TrainTrace trace;
  trace.steps_per_epoch = (order.size() + cfg.batch_size - 1) / cfg.batch_size;
  std::size_t step = 0;
  bool stop = false;
  for (std::size_t epoch = 0; epoch < cfg.epochs && !stop; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    for (std::size_t start = 0; start < order.size() && !stop; start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      // sum in index order so a batch's loss does not depend on the shuffle
      batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start),
                       order.begin() + static_cast<std::ptrdiff_t>(end));
      std::sort(batch_idx.begin(), batch_idx.end());
      batch_in.clear();
      batch_y.clear();
      for (std::size_t i : batch_idx) {
        batch_in.push_back(&inputs[i]);
        batch_y.push_back(targets[i]);
      }
      const double loss = batch_loss(batch_in, batch_y, params, cfg, &grads, &dropout_rng);
      if (!std::isfinite(loss) || !std::isfinite(global_norm(grads))) {
        throw Error(ErrorKind::NonFiniteLoss, "epoch " + std::to_string(epoch) + " step " +
                                                  std::to_string(step) + ": loss " + std::to_string(loss));
      }
      clip_global_norm(grads, cfg.grad_clip_norm);
      adam.step(params, grads);
      trace.step_losses.push_back(loss);
      epoch_sum += loss;
      ++epoch_steps;
      ++step;
      if (hooks.after_step && !hooks.after_step(step, params)) stop = true;
    }
    trace.epoch_train_losses.push_back(epoch_sum / static_cast<double>(epoch_steps));
    if (!validation.empty()) {
      trace.epoch_validation_losses.push_back(evaluate_mse(inputs, targets, validation, params, cfg));
    }
    trace.epoch_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  }
  return trace;
}

struct TextOptions {
  std::size_t min_freq = 1;
  std::size_t max_vocab = 30000;
};

struct TrainResult {
  ModelConfig config;  // with vocab_size set from the vocabulary
  Vocabulary vocab;
  ModelParams params;
  TrainTrace trace;
};

inline std::vector<TokenSequence> encode_all(const Dataset& d, const Vocabulary& v, const ModelConfig& cfg) {
  std::vector<TokenSequence> out;
  out.reserve(d.size());
  for (const auto& r : d.records) out.push_back(encode(r, v, cfg.max_len, cfg.input_layout));
  return out;
}

/// Builds the vocabulary from the training records only, initializes from the
/// config seed and trains.
inline TrainResult train(const Dataset& d, std::span<const std::size_t> train_idx,
                         std::span<const std::size_t> val_idx, const ModelConfig& base_cfg,
                         const TextOptions& text = {}, const TrainHooks& hooks = {}) {
  if (train_idx.empty() || val_idx.empty()) throw Error(ErrorKind::EmptySplit, "train and validation must be non-empty");
  std::vector<std::uint8_t> seen(d.size(), 0);
  for (auto i : train_idx) {
    if (i >= d.size()) throw Error(ErrorKind::InvalidConfig, "train index out of range");
    seen[i] = 1;
  }
  for (auto i : val_idx) {
    if (i >= d.size()) throw Error(ErrorKind::InvalidConfig, "validation index out of range");
    if (seen[i]) throw Error(ErrorKind::InvalidConfig, "train and validation overlap at " + std::to_string(i));
  }
  TrainResult res;
  res.vocab = build_vocab(d, train_idx, text.min_freq, text.max_vocab);
  res.config = base_cfg;
  res.config.vocab_size = res.vocab.size();
  res.params = init_params(res.config);
  const auto inputs = encode_all(d, res.vocab, res.config);
  std::vector<double> targets;
  targets.reserve(d.size());
  for (const auto& r : d.records) targets.push_back(r.score);
  res.trace = train_encoded(inputs, targets, train_idx, val_idx, res.config, res.params, hooks);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SSLB1", config block, then every matrix in declaration order
// as little-endian IEEE-754 binary64.

inline constexpr std::string_view kCheckpointMagic = "SSLB1";

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void raw(std::string_view s) { buf_.append(s); }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(data_[pos_++])) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw Error(ErrorKind::ShapeMismatch, "checkpoint truncated");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const ModelParams& params, const ModelConfig& cfg) {
  detail::ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(static_cast<std::uint32_t>(cfg.layers));
  w.u32(static_cast<std::uint32_t>(cfg.d_model));
  w.u32(static_cast<std::uint32_t>(cfg.n_heads));
  w.u32(static_cast<std::uint32_t>(cfg.ffn_dim));
  w.u32(static_cast<std::uint32_t>(cfg.vocab_size));
  w.u32(static_cast<std::uint32_t>(cfg.max_len));
  w.u32(static_cast<std::uint32_t>(cfg.attention.max_rel_distance));
  w.u8(cfg.attention.include_p2p ? 1 : 0);
  w.u8(static_cast<std::uint8_t>(cfg.attention.scale_mode));
  w.u8(static_cast<std::uint8_t>(cfg.input_layout));
  w.f64(cfg.dropout_rate);
  w.u64(cfg.seed);
  w.f64(cfg.learning_rate);
  w.f64(cfg.adam_beta1);
  w.f64(cfg.adam_beta2);
  w.f64(cfg.adam_eps);
  w.u32(static_cast<std::uint32_t>(cfg.epochs));
  w.u32(static_cast<std::uint32_t>(cfg.batch_size));
  w.f64(cfg.grad_clip_norm);
  params.for_each([&](const std::string& name, const Matrix& m) {
    (void)name;
    for (double v : m.values()) w.f64(v);
  });
  return w.bytes();
}

struct Checkpoint {
  ModelParams params;
  ModelConfig config;
};

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  if (!bytes.starts_with(kCheckpointMagic)) throw Error(ErrorKind::BadMagic, "not a checkpoint");
  detail::ByteReader r(bytes.substr(kCheckpointMagic.size()));
  ModelConfig cfg;
  cfg.layers = r.u32();
  cfg.d_model = r.u32();
  cfg.n_heads = r.u32();
  cfg.ffn_dim = r.u32();
  cfg.vocab_size = r.u32();
  cfg.max_len = r.u32();
  cfg.attention.d_model = cfg.d_model;
  cfg.attention.n_heads = cfg.n_heads;
  cfg.attention.max_rel_distance = r.u32();
  const auto p2p = r.u8();
  const auto scale = r.u8();
  const auto layout = r.u8();
  if (p2p > 1 || scale > 1 || layout > 1) throw Error(ErrorKind::ShapeMismatch, "bad enum in config block");
  cfg.attention.include_p2p = p2p == 1;
  cfg.attention.scale_mode = static_cast<ScaleMode>(scale);
  cfg.input_layout = static_cast<InputLayout>(layout);
  cfg.dropout_rate = r.f64();
  cfg.seed = r.u64();
  cfg.learning_rate = r.f64();
  cfg.adam_beta1 = r.f64();
  cfg.adam_beta2 = r.f64();
  cfg.adam_eps = r.f64();
  cfg.epochs = r.u32();
  cfg.batch_size = r.u32();
  cfg.grad_clip_norm = r.f64();
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::ShapeMismatch, "invalid config block: " + e.detail());
  }
  // size check before allocating anything config-sized
  const long double d = static_cast<long double>(cfg.d_model);
  const long double per_layer = 4 * d + 6 * d * d + 2 * d * static_cast<long double>(cfg.ffn_dim) +
                                static_cast<long double>(cfg.ffn_dim) + d;
  const long double expected = d * (static_cast<long double>(cfg.vocab_size) + cfg.max_len +
                                    cfg.attention.rel_table_size()) +
                               per_layer * cfg.layers + d * d + 2 * d + 1;
  if (expected * 8 != static_cast<long double>(r.remaining())) {
    throw Error(ErrorKind::ShapeMismatch, "payload has " + std::to_string(r.remaining()) +
                                              " bytes, config implies " +
                                              std::to_string(static_cast<unsigned long long>(expected * 8)));
  }
  Checkpoint ck{ModelParams::zeros(cfg), cfg};
  ck.params.for_each([&](const std::string&, Matrix& m) {
    for (auto& v : m.values()) v = r.f64();
  });
  return ck;
}

inline void save_checkpoint(const ModelParams& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  io::write_text(path, serialize_checkpoint(params, cfg));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_text(path));
}

inline nlohmann::json config_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["layers"] = cfg.layers;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["ffn_dim"] = cfg.ffn_dim;
  j["vocab_size"] = cfg.vocab_size;
  j["max_len"] = cfg.max_len;
  j["attention"] = {{"max_rel_distance", cfg.attention.max_rel_distance},
                    {"include_p2p", cfg.attention.include_p2p},
                    {"scale_mode", cfg.attention.scale_mode == ScaleMode::global ? "global" : "per_term"}};
  j["dropout_rate"] = cfg.dropout_rate;
  j["seed"] = cfg.seed;
  j["learning_rate"] = cfg.learning_rate;
  j["adam_beta1"] = cfg.adam_beta1;
  j["adam_beta2"] = cfg.adam_beta2;
  j["adam_eps"] = cfg.adam_eps;
  j["epochs"] = cfg.epochs;
  j["batch_size"] = cfg.batch_size;
  j["grad_clip_norm"] = cfg.grad_clip_norm;
  j["input_layout"] = std::string(to_string(cfg.input_layout));
  return j;
}

}  // namespace sslab
