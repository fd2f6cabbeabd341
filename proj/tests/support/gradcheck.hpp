#pragma once

// Finite-difference drivers: perturb every parameter entry and compare with
// the analytic gradient.

#include <algorithm>
#include <cstdint>
#include <utility>
#include <vector>

#include "support/instances.hpp"
#include "support/oracles.hpp"

namespace instances {

/// Attention layer: checks every entry of every parameter and of H; returns the worst relative error.
inline double gradient_check(Rng& rng, const AttentionConfig& cfg, std::size_t len, double dropout_rate) {
  auto p = random_params(rng, cfg, 0.5);
  auto h = random_matrix(rng, len, cfg.d_model, 1.0);
  const auto upstream = random_matrix(rng, len, cfg.d_model, 1.0);
  std::vector<std::uint8_t> mask(len, 1);
  if (len > 2) mask[len - 1] = 0;
  const std::uint64_t drop_seed = rng.next_u64();

  auto loss = [&] {
    AttentionCache c;
    Rng drop(drop_seed);
    const auto out = attention_forward(h, p, p.rel_embed, cfg, mask, c, {dropout_rate, &drop});
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out.values()[i] * upstream.values()[i];
    return s;
  };
  AttentionCache c;
  Rng drop(drop_seed);
  attention_forward(h, p, p.rel_embed, cfg, mask, c, {dropout_rate, &drop});
  const auto g = attention_backward(upstream, c, p, cfg);

  double worst = 0;
  std::vector<std::pair<Matrix*, const Matrix*>> pairs{
      {&p.wq_c, &g.params.wq_c}, {&p.wk_c, &g.params.wk_c}, {&p.wv, &g.params.wv},
      {&p.wq_r, &g.params.wq_r}, {&p.wk_r, &g.params.wk_r}, {&p.wo, &g.params.wo},
      {&p.rel_embed, &g.params.rel_embed}, {&h, &g.input}};
  for (auto [param, grad] : pairs) {
    for (std::size_t i = 0; i < param->size(); ++i) {
      const double numeric = oracle::central_difference(param->values()[i], loss);
      worst = std::max(worst, oracle::relative_error(grad->values()[i], numeric));
    }
  }
  return worst;
}

/// End-to-end model MSE over a 3-sequence batch; returns the worst relative error.
inline double worst_gradient_error(const ModelConfig& cfg, std::uint64_t seed, double dropout_rate) {
  auto p = spread_params(cfg, seed, 0.3);
  Rng rng(seed + 100);
  std::vector<TokenSequence> xs;
  std::vector<double> ys;
  for (int i = 0; i < 3; ++i) {
    xs.push_back(random_sequence(rng, cfg.max_len, cfg.vocab_size, 2 + rng.below(cfg.max_len - 1)));
    ys.push_back(rng.uniform());
  }
  std::vector<const TokenSequence*> ptrs;
  for (const auto& x : xs) ptrs.push_back(&x);
  auto run_cfg = cfg;
  run_cfg.dropout_rate = dropout_rate;
  auto loss = [&] {
    Rng drop(seed);
    return batch_loss(ptrs, ys, p, run_cfg, nullptr, dropout_rate > 0 ? &drop : nullptr);
  };
  ModelParams grads;
  Rng drop(seed);
  batch_loss(ptrs, ys, p, run_cfg, &grads, dropout_rate > 0 ? &drop : nullptr);

  double worst = 0;
  auto params = p.matrices();
  auto gs = grads.matrices();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k]->size(); ++i) {
      const double numeric = oracle::central_difference(params[k]->values()[i], loss);
      worst = std::max(worst, oracle::relative_error(gs[k]->values()[i], numeric));
    }
  }
  return worst;
}

}  // namespace instances
