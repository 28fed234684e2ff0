#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hsm/errors.hpp"
#include "hsm/tensor.hpp"

namespace hsm {

struct AdamWConfig {
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// First and second moments, one pair per parameter in the optimizer's order.
template <typename S>
struct AdamWState {
  long long step = 0;
  std::vector<Matrix<S>> m;
  std::vector<Matrix<S>> v;
};

template <typename S>
AdamWState<S> make_adamw_state(std::span<Parameter<S>* const> params) {
  AdamWState<S> st;
  for (const auto* p : params) {
    st.m.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
    st.v.push_back(Matrix<S>::Zero(p->value.rows(), p->value.cols()));
  }
  return st;
}

template <typename S>
double global_grad_norm(std::span<Parameter<S>* const> params) {
  double sq = 0.0;
  for (const auto* p : params) sq += p->grad.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

// Scales every gradient so the global L2 norm is at most max_norm. Returns the
// norm before clipping.
template <typename S>
double clip_grad_norm(std::span<Parameter<S>* const> params, double max_norm) {
  const double norm = global_grad_norm(params);
  if (std::isfinite(norm) && norm > max_norm) {
    const S factor = static_cast<S>(max_norm / (norm + 1e-6));
    for (auto* p : params) p->grad *= factor;
  }
  return norm;
}

// Decoupled weight decay (only on parameters flagged `decay`), bias-corrected
// moments. A non-finite gradient aborts the step before anything is touched.
template <typename S>
void adamw_step(std::span<Parameter<S>* const> params, AdamWState<S>& st, const AdamWConfig& cfg) {
  if (st.m.size() != params.size() || st.v.size() != params.size()) {
    throw ParameterError("optimizer state holds " + std::to_string(st.m.size()) + " slots for " +
                         std::to_string(params.size()) + " parameters");
  }
  for (const auto* p : params) {
    if (!all_finite(p->grad)) throw NumericError("non-finite gradient in " + p->name);
  }
  ++st.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(st.step));
  const S b1 = static_cast<S>(cfg.beta1);
  const S b2 = static_cast<S>(cfg.beta2);
  const S step_size = static_cast<S>(cfg.lr / bc1);
  const S inv_sqrt_bc2 = static_cast<S>(1.0 / std::sqrt(bc2));
  const S eps = static_cast<S>(cfg.eps);
  const S shrink = static_cast<S>(1.0 - cfg.lr * cfg.weight_decay);
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = *params[i];
    if (p.value.rows() != st.m[i].rows() || p.value.cols() != st.m[i].cols()) {
      throw ShapeMismatchError("optimizer state for " + p.name + " is " + shape_string(st.m[i]) + ", parameter is " +
                               shape_string(p.value));
    }
    auto m = st.m[i].array();
    auto v = st.v[i].array();
    const auto g = p.grad.array();
    m = b1 * m + (S(1) - b1) * g;
    v = b2 * v + (S(1) - b2) * g.square();
    if (p.decay && cfg.weight_decay != 0.0) p.value *= shrink;
    p.value.array() -= step_size * m / (v.sqrt() * inv_sqrt_bc2 + eps);
  }
}

}  // namespace hsm
