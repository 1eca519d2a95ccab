// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "dst/error.hpp"
#include "dst/layers.hpp"

namespace dst {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment accumulators, one pair per parameter.
template <class T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::size_t t = 0;

  AdamState() = default;
  AdamState(AdamConfig c, std::span<Parameter<T>* const> params) : config(c) {
    for (const auto* p : params) {
      m.emplace_back(p->value.size(), T(0));
      v.emplace_back(p->value.size(), T(0));
    }
  }
};

/// One Adam update from the gradients stored in each parameter. A non-finite
/// gradient aborts before any parameter is touched.
template <class T>
void adam_step(std::span<Parameter<T>* const> params, AdamState<T>& state) {
  if (params.size() != state.m.size()) {
    throw DimensionError("optimizer state tracks " + std::to_string(state.m.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  for (const auto* p : params) {
    if (p->grad.size() != p->value.size()) {
      throw DimensionError("gradient of " + p->name + " does not match its value");
    }
    for (T g : p->grad) {
      if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter " + p->name);
    }
  }
  ++state.t;
  const AdamConfig& c = state.config;
  const T b1 = static_cast<T>(c.beta1);
  const T b2 = static_cast<T>(c.beta2);
  const T correction1 = static_cast<T>(1.0 - std::pow(c.beta1, static_cast<double>(state.t)));
  const T correction2 = static_cast<T>(1.0 - std::pow(c.beta2, static_cast<double>(state.t)));
  const T lr = static_cast<T>(c.learning_rate);
  const T eps = static_cast<T>(c.epsilon);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& theta = params[k]->value.data;
    const auto& g = params[k]->grad;
    auto& m = state.m[k];
    auto& v = state.v[k];
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T m_hat = m[i] / correction1;
      const T v_hat = v[i] / correction2;
      theta[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
  }
}

/// Rescales all gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
template <class T>
double clip_global_norm(std::span<Parameter<T>* const> params, double max_norm) {
  double sq = 0.0;
  for (const auto* p : params)
    for (T g : p->grad) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto* p : params)
      for (T& g : p->grad) g *= f;
  }
  return norm;
}

}  // namespace dst
