#pragma once

// Single pre-LN decoder block:
//
//   h   = x + Attn(Norm1(x))
//   out = h + Mlp(Norm2(h))
//
// evaluated two ways. run_conventional normalizes, then multiplies.
// run_fused folds the normalization parameters into the following weights
// offline and applies the normalizer after each product.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>
#include <vector>

#include "opfuse/error.hpp"
#include "opfuse/fusion.hpp"
#include "opfuse/norms.hpp"
#include "opfuse/random.hpp"
#include "opfuse/tensor.hpp"

namespace opfuse {

enum class BlockVariant { standard_gelu, llama_swiglu };

inline std::string_view to_string(BlockVariant v) {
  return v == BlockVariant::standard_gelu ? "standard-gelu" : "llama-swiglu";
}

inline BlockVariant parse_block_variant(std::string_view s) {
  if (s == "standard-gelu") return BlockVariant::standard_gelu;
  if (s == "llama-swiglu") return BlockVariant::llama_swiglu;
  throw ConfigError("unknown block variant '" + std::string(s) + "'");
}

struct BlockConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 0;
  std::size_t seq_len = 0;
  std::size_t mlp_hidden = 0;
  BlockVariant variant = BlockVariant::standard_gelu;
  double epsilon_ln = 1e-5;

  std::size_t d_head() const { return d_model / n_heads; }

  void validate() const {
    if (d_model == 0 || n_heads == 0 || seq_len == 0 || mlp_hidden == 0)
      throw ConfigError("block: all dimensions must be >= 1");
    if (d_model % n_heads != 0) throw ConfigError("block: d_model must be divisible by n_heads");
    if (!(epsilon_ln >= 0.0) || !std::isfinite(epsilon_ln)) throw ConfigError("block: epsilon_ln must be >= 0");
    if (variant == BlockVariant::standard_gelu && epsilon_ln == 0.0)
      throw ConfigError("block: standard-gelu layernorm needs epsilon_ln > 0");
  }

  friend bool operator==(const BlockConfig&, const BlockConfig&) = default;
};

struct StandardBlockParams {
  LayerNormParams ln1;
  LayerNormParams ln2;
  Matrix fc1;  // d_model x mlp_hidden
  Matrix fc2;  // mlp_hidden x d_model
};

struct LlamaBlockParams {
  RmsNormParams ln1;
  RmsNormParams ln2;
  LlamaMlpWeights mlp;
};

struct BlockWeights {
  Matrix w_q, w_k, w_v, w_o;
  std::variant<StandardBlockParams, LlamaBlockParams> params;

  void validate(const BlockConfig& cfg) const;
};

// Folded ("compile-time") form of BlockWeights for the fused path.
struct FusedStandardParams {
  FoldedLinear q, k, v;
  FoldedLinear fc1;
  Matrix fc2;
  double epsilon1, epsilon2;
};

struct FusedLlamaParams {
  RmsFoldedLinear q, k, v;
  RmsFoldedLinear gate, up;
  Matrix down;
  double epsilon1, epsilon2;
};

struct FusedBlockWeights {
  Matrix w_o;
  std::variant<FusedStandardParams, FusedLlamaParams> params;
};

// GELU, tanh approximation: 0.5 z (1 + tanh(sqrt(2/pi) (z + 0.044715 z^3))).
inline double gelu_tanh(double z) {
  constexpr double kSqrt2OverPi = 0.79788456080286535588;
  constexpr double kCubic = 0.044715;
  return 0.5 * z * (1.0 + std::tanh(kSqrt2OverPi * (z + kCubic * z * z * z)));
}

namespace detail {

inline void require_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) throw InvalidInput(std::string("block weights: bad shape for ") + what);
}

template <class RowFn>
Matrix map_rows(const Matrix& x, RowFn&& fn) {
  std::vector<RowVector> rows;
  rows.reserve(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) rows.push_back(fn(x.row(r)));
  return Matrix::from_rows(rows);
}

// Scaled dot-product logits for one query against every key of one head.
inline RowVector attention_logits(const Matrix& q_head, const Matrix& k_head_t, std::size_t query,
                                  double inv_sqrt_dh) {
  const auto raw = matmul(q_head.row(query), k_head_t);
  std::vector<double> s(raw.size());
  for (std::size_t j = 0; j < s.size(); ++j) s[j] = raw[j] * inv_sqrt_dh;
  return RowVector(std::move(s));
}

// Per-head attention. combine(logits, v_head) returns softmax(logits) * v_head.
template <class Combine>
Matrix attention(const BlockConfig& cfg, const Matrix& q, const Matrix& k, const Matrix& v, Combine&& combine) {
  const std::size_t seq = q.rows(), dh = cfg.d_head();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> out(seq * cfg.d_model);
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    const auto qh = q.column_block(h * dh, dh);
    const auto kh_t = k.column_block(h * dh, dh).transpose();
    const auto vh = v.column_block(h * dh, dh);
    for (std::size_t i = 0; i < seq; ++i) {
      const auto y = combine(attention_logits(qh, kh_t, i, inv_sqrt_dh), vh);
      for (std::size_t c = 0; c < dh; ++c) out[i * cfg.d_model + h * dh + c] = y[c];
    }
  }
  return Matrix(seq, cfg.d_model, std::move(out));
}

inline void require_input(const BlockConfig& cfg, const Matrix& x) {
  if (x.cols() != cfg.d_model) throw InvalidInput("block input: columns must equal d_model");
  if (x.rows() == 0) throw InvalidInput("block input: no rows");
}

}  // namespace detail

inline void BlockWeights::validate(const BlockConfig& cfg) const {
  cfg.validate();
  const std::size_t d = cfg.d_model, h = cfg.mlp_hidden;
  detail::require_shape(w_q, d, d, "w_q");
  detail::require_shape(w_k, d, d, "w_k");
  detail::require_shape(w_v, d, d, "w_v");
  detail::require_shape(w_o, d, d, "w_o");
  if (cfg.variant == BlockVariant::standard_gelu) {
    const auto* p = std::get_if<StandardBlockParams>(&params);
    if (!p) throw InvalidInput("block weights: variant is standard-gelu but parameters are llama");
    p->ln1.validate(d);
    p->ln2.validate(d);
    detail::require_shape(p->fc1, d, h, "fc1");
    detail::require_shape(p->fc2, h, d, "fc2");
  } else {
    const auto* p = std::get_if<LlamaBlockParams>(&params);
    if (!p) throw InvalidInput("block weights: variant is llama-swiglu but parameters are standard");
    p->ln1.validate(d);
    p->ln2.validate(d);
    p->mlp.validate(d);
    if (p->mlp.w_gate.cols() != h) throw InvalidInput("block weights: gate/up hidden size != mlp_hidden");
  }
}

// Random weights with 1/sqrt(fan_in) scaling, gamma in [0.5, 1.5] and beta
// in [-0.5, 0.5]. Norm epsilons come from cfg.epsilon_ln.
inline BlockWeights random_block_weights(const BlockConfig& cfg, Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model, h = cfg.mlp_hidden;
  const double a_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double a_h = 1.0 / std::sqrt(static_cast<double>(h));
  auto w_q = rng.matrix(d, d, -a_d, a_d);
  auto w_k = rng.matrix(d, d, -a_d, a_d);
  auto w_v = rng.matrix(d, d, -a_d, a_d);
  auto w_o = rng.matrix(d, d, -a_d, a_d);
  if (cfg.variant == BlockVariant::standard_gelu) {
    LayerNormParams ln1{rng.row(d, 0.5, 1.5), rng.row(d, -0.5, 0.5), cfg.epsilon_ln};
    LayerNormParams ln2{rng.row(d, 0.5, 1.5), rng.row(d, -0.5, 0.5), cfg.epsilon_ln};
    auto fc1 = rng.matrix(d, h, -a_d, a_d);
    auto fc2 = rng.matrix(h, d, -a_h, a_h);
    return {std::move(w_q), std::move(w_k), std::move(w_v), std::move(w_o),
            StandardBlockParams{std::move(ln1), std::move(ln2), std::move(fc1), std::move(fc2)}};
  }
  RmsNormParams ln1{rng.row(d, 0.5, 1.5), cfg.epsilon_ln};
  RmsNormParams ln2{rng.row(d, 0.5, 1.5), cfg.epsilon_ln};
  auto gate = rng.matrix(d, h, -a_d, a_d);
  auto up = rng.matrix(d, h, -a_d, a_d);
  auto down = rng.matrix(h, d, -a_h, a_h);
  return {std::move(w_q), std::move(w_k), std::move(w_v), std::move(w_o),
          LlamaBlockParams{std::move(ln1), std::move(ln2), LlamaMlpWeights{std::move(gate), std::move(up), std::move(down)}}};
}

// Every weight, gamma and beta zero. Both paths must return x unchanged.
inline BlockWeights zero_block_weights(const BlockConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.d_model, h = cfg.mlp_hidden;
  const auto z = [](std::size_t r, std::size_t c) { return Matrix::zeros(r, c); };
  if (cfg.variant == BlockVariant::standard_gelu) {
    LayerNormParams ln{RowVector::zeros(d), RowVector::zeros(d), cfg.epsilon_ln};
    return {z(d, d), z(d, d), z(d, d), z(d, d), StandardBlockParams{ln, ln, z(d, h), z(h, d)}};
  }
  RmsNormParams ln{RowVector::zeros(d), cfg.epsilon_ln};
  return {z(d, d), z(d, d), z(d, d), z(d, d), LlamaBlockParams{ln, ln, LlamaMlpWeights{z(d, h), z(d, h), z(h, d)}}};
}

inline Matrix run_conventional(const BlockConfig& cfg, const BlockWeights& w, const Matrix& x) {
  w.validate(cfg);
  detail::require_input(cfg, x);

  const auto norm1 = [&](const RowVector& r) {
    return std::visit([&](const auto& p) -> RowVector {
      if constexpr (std::is_same_v<std::decay_t<decltype(p)>, StandardBlockParams>) return layernorm(r, p.ln1);
      else return rmsnorm(r, p.ln1);
    }, w.params);
  };
  const auto h1 = detail::map_rows(x, norm1);
  const auto q = matmul(h1, w.w_q);
  const auto k = matmul(h1, w.w_k);
  const auto v = matmul(h1, w.w_v);
  const auto attn = detail::attention(cfg, q, k, v, [](const RowVector& logits, const Matrix& vh) {
    return matmul(softmax_stable(logits), vh);
  });
  const auto resid = add(x, matmul(attn, w.w_o));

  const auto mlp = std::visit([&](const auto& p) -> Matrix {
    if constexpr (std::is_same_v<std::decay_t<decltype(p)>, StandardBlockParams>) {
      return detail::map_rows(resid, [&](const RowVector& r) {
        const auto pre = matmul(layernorm(r, p.ln2), p.fc1);
        std::vector<double> act(pre.size());
        for (std::size_t i = 0; i < act.size(); ++i) act[i] = gelu_tanh(pre[i]);
        return matmul(RowVector(std::move(act)), p.fc2);
      });
    } else {
      return detail::map_rows(resid, [&](const RowVector& r) { return swiglu_mlp(rmsnorm(r, p.ln2), p.mlp); });
    }
  }, w.params);
  return add(resid, mlp);
}

// Offline folding of every normalization into the weights that follow it.
// Q, K and V each get their own fold of the shared Norm1 parameters.
inline FusedBlockWeights fold_block(const BlockConfig& cfg, const BlockWeights& w) {
  w.validate(cfg);
  return std::visit([&](const auto& p) -> FusedBlockWeights {
    if constexpr (std::is_same_v<std::decay_t<decltype(p)>, StandardBlockParams>) {
      return {w.w_o, FusedStandardParams{fold_layernorm_linear(p.ln1, w.w_q), fold_layernorm_linear(p.ln1, w.w_k),
                                         fold_layernorm_linear(p.ln1, w.w_v), fold_layernorm_linear(p.ln2, p.fc1),
                                         p.fc2, p.ln1.epsilon, p.ln2.epsilon}};
    } else {
      return {w.w_o, FusedLlamaParams{fold_rmsnorm_linear(p.ln1, w.w_q), fold_rmsnorm_linear(p.ln1, w.w_k),
                                      fold_rmsnorm_linear(p.ln1, w.w_v), fold_rmsnorm_linear(p.ln2, p.mlp.w_gate),
                                      fold_rmsnorm_linear(p.ln2, p.mlp.w_up), p.mlp.w_down, p.ln1.epsilon,
                                      p.ln2.epsilon}};
    }
  }, w.params);
}

inline void validate_fused(const BlockConfig& cfg, const FusedBlockWeights& fw) {
  cfg.validate();
  const std::size_t d = cfg.d_model, h = cfg.mlp_hidden;
  detail::require_shape(fw.w_o, d, d, "w_o");
  if (cfg.variant == BlockVariant::standard_gelu) {
    const auto* p = std::get_if<FusedStandardParams>(&fw.params);
    if (!p) throw InvalidInput("folded weights: variant mismatch");
    for (const auto* fl : {&p->q, &p->k, &p->v}) {
      detail::require_shape(fl->folded_weight, d, d, "folded q/k/v");
      if (fl->folded_bias.size() != d) throw InvalidInput("folded weights: bad bias length");
    }
    detail::require_shape(p->fc1.folded_weight, d, h, "folded fc1");
    if (p->fc1.folded_bias.size() != h) throw InvalidInput("folded weights: bad fc1 bias length");
    detail::require_shape(p->fc2, h, d, "fc2");
  } else {
    const auto* p = std::get_if<FusedLlamaParams>(&fw.params);
    if (!p) throw InvalidInput("folded weights: variant mismatch");
    for (const auto* rf : {&p->q, &p->k, &p->v}) detail::require_shape(rf->folded_weight, d, d, "folded q/k/v");
    detail::require_shape(p->gate.folded_weight, d, h, "folded gate");
    detail::require_shape(p->up.folded_weight, d, h, "folded up");
    detail::require_shape(p->down, h, d, "down");
  }
}

inline Matrix run_fused_folded(const BlockConfig& cfg, const FusedBlockWeights& fw, const Matrix& x) {
  validate_fused(cfg, fw);
  detail::require_input(cfg, x);

  const auto fused_softmax = [](const RowVector& logits, const Matrix& vh) { return fused_softmax_matmul(logits, vh); };

  return std::visit([&](const auto& p) -> Matrix {
    if constexpr (std::is_same_v<std::decay_t<decltype(p)>, FusedStandardParams>) {
      const auto proj = [&](const FoldedLinear& fl) {
        return detail::map_rows(x, [&](const RowVector& r) { return fused_layernorm_matmul(r, fl, p.epsilon1); });
      };
      const auto attn = detail::attention(cfg, proj(p.q), proj(p.k), proj(p.v), fused_softmax);
      const auto resid = add(x, matmul(attn, fw.w_o));
      const auto mlp = detail::map_rows(resid, [&](const RowVector& r) {
        const auto pre = fused_layernorm_matmul(r, p.fc1, p.epsilon2);
        std::vector<double> act(pre.size());
        for (std::size_t i = 0; i < act.size(); ++i) act[i] = gelu_tanh(pre[i]);
        return matmul(RowVector(std::move(act)), p.fc2);
      });
      return add(resid, mlp);
    } else {
      const auto proj = [&](const RmsFoldedLinear& rf) {
        return detail::map_rows(x, [&](const RowVector& r) { return fused_rmsnorm_matmul(r, rf, p.epsilon1); });
      };
      const auto attn = detail::attention(cfg, proj(p.q), proj(p.k), proj(p.v), fused_softmax);
      const auto resid = add(x, matmul(attn, fw.w_o));
      const auto mlp = detail::map_rows(resid, [&](const RowVector& r) {
        return fused_rmsnorm_llama_mlp(r, p.gate, p.up, p.down, p.epsilon2);
      });
      return add(resid, mlp);
    }
  }, fw.params);
}

inline Matrix run_fused(const BlockConfig& cfg, const BlockWeights& w, const Matrix& x) {
  return run_fused_folded(cfg, fold_block(cfg, w), x);
}

}  // namespace opfuse
