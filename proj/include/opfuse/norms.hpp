#pragma once

// Reference (unfused) normalizations and their split into an element-wise
// part and a collective reduction.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <vector>

#include "opfuse/error.hpp"
#include "opfuse/tensor.hpp"

namespace opfuse {

template <std::floating_point T>
struct BasicLayerNormParams {
  BasicRowVector<T> gamma;
  BasicRowVector<T> beta;
  T epsilon;

  void validate(std::size_t n) const {
    detail::require(gamma.size() == n && beta.size() == n,
                    "LayerNormParams: gamma/beta length must equal feature dimension");
    detail::require(epsilon > T{0} && std::isfinite(epsilon), "LayerNormParams: epsilon must be > 0");
  }
};

// epsilon defaults to zero, i.e. the plain root-mean-square. Production
// Llama checkpoints use a small positive value; set it explicitly.
template <std::floating_point T>
struct BasicRmsNormParams {
  BasicRowVector<T> gamma;
  T epsilon = T{0};

  void validate(std::size_t n) const {
    detail::require(gamma.size() == n, "RmsNormParams: gamma length must equal feature dimension");
    detail::require(epsilon >= T{0} && std::isfinite(epsilon), "RmsNormParams: epsilon must be >= 0");
  }
};

template <std::floating_point T>
struct BasicMomentStats {
  T mean;
  T variance;  // population variance, divisor n
};

template <std::floating_point T>
struct BasicSoftmaxParts {
  BasicRowVector<T> numerators;  // exp(x_i - max(x))
  T denominator;                 // sum of numerators
};

using LayerNormParams = BasicLayerNormParams<double>;
using RmsNormParams = BasicRmsNormParams<double>;
using MomentStats = BasicMomentStats<double>;
using SoftmaxParts = BasicSoftmaxParts<double>;

template <std::floating_point T>
BasicMomentStats<T> moments(const BasicRowVector<T>& x) {
  const auto n = static_cast<T>(x.size());
  T sum = 0;
  for (const T v : x.values()) sum += v;
  const T mean = sum / n;
  T sq = 0;
  for (const T v : x.values()) sq += (v - mean) * (v - mean);
  return {mean, sq / n};
}

template <std::floating_point T>
BasicRowVector<T> layernorm(const BasicRowVector<T>& x, const BasicLayerNormParams<T>& p) {
  p.validate(x.size());
  const auto stats = moments(x);
  const T denom = std::sqrt(stats.variance + p.epsilon);
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    y[i] = (x[i] - stats.mean) / denom * p.gamma[i] + p.beta[i];
  return BasicRowVector<T>(std::move(y));
}

// sqrt(x.x^T / n + epsilon): the collective part of RMSNorm.
template <std::floating_point T>
T rms_denominator(const BasicRowVector<T>& x, T epsilon) {
  T sq = 0;
  for (const T v : x.values()) sq += v * v;
  const T r = std::sqrt(sq / static_cast<T>(x.size()) + epsilon);
  detail::require(r > T{0}, "rmsnorm: zero-norm input with epsilon == 0");
  return r;
}

template <std::floating_point T>
BasicRowVector<T> rmsnorm(const BasicRowVector<T>& x, const BasicRmsNormParams<T>& p) {
  p.validate(x.size());
  const T r = rms_denominator(x, p.epsilon);
  std::vector<T> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] / r * p.gamma[i];
  return BasicRowVector<T>(std::move(y));
}

template <std::floating_point T>
BasicSoftmaxParts<T> softmax_numerators(const BasicRowVector<T>& x) {
  const T peak = *std::max_element(x.values().begin(), x.values().end());
  std::vector<T> num(x.size());
  T denom = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num[i] = std::exp(x[i] - peak);
    denom += num[i];
  }
  return {BasicRowVector<T>(std::move(num)), denom};
}

template <std::floating_point T>
BasicRowVector<T> softmax_stable(const BasicRowVector<T>& x) {
  const auto parts = softmax_numerators(x);
  return divide(parts.numerators, parts.denominator);
}

}  // namespace opfuse
