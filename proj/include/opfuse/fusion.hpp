#pragma once

// Deferred normalization.
//
// A normalization followed by a linear layer, norm(x) * F, is rewritten so
// that the scalar normalizer (the collective reduction over x) is applied
// after the matrix product instead of before it:
//
//   layernorm(x) * F = (1 / sqrt(var(x) + eps)) * (x * W) + beta * F,
//       W = (I - E/n) * diag(gamma) * F          (folded offline)
//   softmax(x) * V  = (1 / sum_i e^{x_i - max}) * ([e^{x_i - max}] * V)
//   rmsnorm(x) * F  = (1 / rms(x)) * (x * diag(gamma) * F)
//
// In every fused routine below the reduction and the matrix product read
// only x (or the numerators) and never each other's output; they meet in
// the final scale. That data independence is what lets a scheduler run the
// reduction on the vector engine while the matrix engine does the product.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <vector>

#include "opfuse/error.hpp"
#include "opfuse/norms.hpp"
#include "opfuse/tensor.hpp"

namespace opfuse {

template <std::floating_point T>
struct BasicFoldedLinear {
  BasicMatrix<T> folded_weight;   // (I - E/n) * diag(gamma) * F, n x m
  BasicRowVector<T> folded_bias;  // beta * F, length m
};

template <std::floating_point T>
struct BasicRmsFoldedLinear {
  BasicMatrix<T> folded_weight;  // diag(gamma) * F
};

template <std::floating_point T>
struct BasicLlamaMlpWeights {
  BasicMatrix<T> w_gate;  // n x h
  BasicMatrix<T> w_up;    // n x h
  BasicMatrix<T> w_down;  // h x n

  void validate(std::size_t n) const {
    detail::require(w_gate.rows() == n && w_up.rows() == n, "LlamaMlpWeights: gate/up rows must equal n");
    detail::require(w_gate.cols() == w_up.cols(), "LlamaMlpWeights: gate/up hidden sizes differ");
    detail::require(w_down.rows() == w_gate.cols() && w_down.cols() == n,
                    "LlamaMlpWeights: down projection must be h x n");
  }
};

using FoldedLinear = BasicFoldedLinear<double>;
using RmsFoldedLinear = BasicRmsFoldedLinear<double>;
using LlamaMlpWeights = BasicLlamaMlpWeights<double>;

template <std::floating_point T>
T silu(T z) {
  return z / (T{1} + std::exp(-z));
}

template <std::floating_point T>
BasicFoldedLinear<T> fold_layernorm_linear(const BasicLayerNormParams<T>& p, const BasicMatrix<T>& f) {
  detail::require(f.rows() == p.gamma.size(), "fold_layernorm_linear: F rows must equal gamma length");
  detail::require(p.beta.size() == p.gamma.size(), "fold_layernorm_linear: beta length mismatch");
  const std::size_t n = f.rows(), m = f.cols();

  // diag(gamma) * F, then subtract each column's mean: (I - E/n) applied on the left.
  std::vector<T> w(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) w[i * m + j] = p.gamma[i] * f(i, j);
  std::vector<T> col_mean(m, T{0});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) col_mean[j] += w[i * m + j];
  for (std::size_t j = 0; j < m; ++j) col_mean[j] /= static_cast<T>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) w[i * m + j] -= col_mean[j];

  return {BasicMatrix<T>(n, m, std::move(w)), matmul(p.beta, f)};
}

template <std::floating_point T>
BasicRowVector<T> fused_layernorm_matmul(const BasicRowVector<T>& x, const BasicFoldedLinear<T>& fl,
                                         T epsilon) {
  detail::require(x.size() == fl.folded_weight.rows(), "fused_layernorm_matmul: x length != weight rows");
  detail::require(epsilon > T{0}, "fused_layernorm_matmul: epsilon must be > 0");
  // Collective: variance reduction over x.
  const T inv_denom = T{1} / std::sqrt(moments(x).variance + epsilon);
  // Matrix engine: x * W, independent of the reduction.
  const auto partial = matmul(x, fl.folded_weight);
  return scale_add(partial, inv_denom, fl.folded_bias);
}

template <std::floating_point T>
BasicRowVector<T> fused_softmax_matmul(const BasicRowVector<T>& x, const BasicMatrix<T>& v) {
  detail::require(x.size() == v.rows(), "fused_softmax_matmul: x length != V rows");
  // The numerators are element-wise; only their sum is collective.
  const auto parts = softmax_numerators(x);
  const auto partial = matmul(parts.numerators, v);
  return divide(partial, parts.denominator);
}

template <std::floating_point T>
BasicRmsFoldedLinear<T> fold_rmsnorm_linear(const BasicRmsNormParams<T>& p, const BasicMatrix<T>& f) {
  detail::require(f.rows() == p.gamma.size(), "fold_rmsnorm_linear: F rows must equal gamma length");
  const std::size_t n = f.rows(), m = f.cols();
  std::vector<T> w(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) w[i * m + j] = p.gamma[i] * f(i, j);
  return {BasicMatrix<T>(n, m, std::move(w))};
}

// rmsnorm(x) * F with the 1/rms factor deferred past the product.
template <std::floating_point T>
BasicRowVector<T> fused_rmsnorm_matmul(const BasicRowVector<T>& x, const BasicRmsFoldedLinear<T>& rf,
                                       T epsilon) {
  detail::require(x.size() == rf.folded_weight.rows(), "fused_rmsnorm_matmul: x length != weight rows");
  const T r = rms_denominator(x, epsilon);
  const auto partial = matmul(x, rf.folded_weight);
  return divide(partial, r);
}

// Conventional Llama MLP on an already-normalized row: silu(h*Wg) . (h*Wu) * Wd.
template <std::floating_point T>
BasicRowVector<T> swiglu_mlp(const BasicRowVector<T>& h, const BasicLlamaMlpWeights<T>& w) {
  w.validate(h.size());
  const auto g = matmul(h, w.w_gate);
  const auto u = matmul(h, w.w_up);
  std::vector<T> act(g.size());
  for (std::size_t i = 0; i < act.size(); ++i) act[i] = silu(g[i]) * u[i];
  return matmul(BasicRowVector<T>(std::move(act)), w.w_down);
}

// RMSNorm followed by the gated MLP. 1/r cannot move past silu, so it is
// applied to the gate and up products right after they come off the matrix
// engine; both products overlap the r reduction, the down projection does not.
template <std::floating_point T>
BasicRowVector<T> fused_rmsnorm_llama_mlp(const BasicRowVector<T>& x, const BasicRmsFoldedLinear<T>& gate_folded,
                                          const BasicRmsFoldedLinear<T>& up_folded, const BasicMatrix<T>& w_down,
                                          T epsilon) {
  const std::size_t n = x.size();
  detail::require(gate_folded.folded_weight.rows() == n && up_folded.folded_weight.rows() == n,
                  "fused_rmsnorm_llama_mlp: folded weights must have n rows");
  detail::require(gate_folded.folded_weight.cols() == up_folded.folded_weight.cols(),
                  "fused_rmsnorm_llama_mlp: gate/up hidden sizes differ");
  detail::require(w_down.rows() == gate_folded.folded_weight.cols() && w_down.cols() == n,
                  "fused_rmsnorm_llama_mlp: down projection must be h x n");

  const T r = rms_denominator(x, epsilon);
  const auto p_gate = matmul(x, gate_folded.folded_weight);
  const auto p_up = matmul(x, up_folded.folded_weight);

  std::vector<T> act(p_gate.size());
  for (std::size_t i = 0; i < act.size(); ++i) act[i] = silu(p_gate[i] / r) * (p_up[i] / r);
  return matmul(BasicRowVector<T>(std::move(act)), w_down);
}

}  // namespace opfuse
