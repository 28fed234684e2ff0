#pragma once

// Central finite-difference oracle for tape gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>

#include "hsm/tensor.hpp"

namespace hsm {

template <typename S>
using TensorFunction = std::function<Var<S>(Tape<S>&, const Var<S>&)>;

template <typename S>
using LossFunction = std::function<Var<S>(Tape<S>&)>;

template <typename S>
struct GradCheckResult {
  S max_rel_error = 0;
  std::string worst_parameter;
  Index worst_index = -1;
  Index checked = 0;
};

namespace detail {

template <typename S>
S relative_error(S analytic, S numeric) {
  const S scale = std::max({std::abs(analytic), std::abs(numeric), Tolerance<S>::rel_floor});
  return std::abs(analytic - numeric) / scale;
}

template <typename S>
S scalar_of(const Var<S>& v) {
  if (v.rows() != 1 || v.cols() != 1) throw DimensionError("gradient check needs a scalar function");
  return v.value()(0, 0);
}

}  // namespace detail

// max over elements of |analytic - numeric| / max(|analytic|, |numeric|, floor)
// with central differences, for a scalar function of one tensor.
template <typename S>
S finite_difference_check(const TensorFunction<S>& f, const Matrix<S>& x, S h = Tolerance<S>::fd_step) {
  Matrix<S> analytic;
  {
    Tape<S> tape;
    Var<S> xv = tape.variable(x);
    Var<S> out = f(tape, xv);
    detail::scalar_of(out);
    tape.backward(out);
    analytic = xv.grad().size() ? xv.grad() : Matrix<S>::Zero(x.rows(), x.cols());
  }
  auto eval = [&f](const Matrix<S>& at) {
    Tape<S> tape(false);
    return detail::scalar_of(f(tape, tape.constant(at)));
  };
  S worst = 0;
  Matrix<S> probe = x;
  for (Index i = 0; i < x.size(); ++i) {
    const S orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const S up = eval(probe);
    probe.data()[i] = orig - h;
    const S down = eval(probe);
    probe.data()[i] = orig;
    worst = std::max(worst, detail::relative_error(analytic.data()[i], (up - down) / (S(2) * h)));
  }
  return worst;
}

// Same check over every element of a set of parameters. `loss` must read the
// parameters through Tape::parameter().
template <typename S>
GradCheckResult<S> check_parameter_gradients(const LossFunction<S>& loss, std::span<Parameter<S>* const> params,
                                             S h = Tolerance<S>::fd_step) {
  for (auto* p : params) p->zero_grad();
  {
    Tape<S> tape;
    Var<S> out = loss(tape);
    detail::scalar_of(out);
    tape.backward(out);
  }
  auto eval = [&loss]() {
    Tape<S> tape(false);
    return detail::scalar_of(loss(tape));
  };
  GradCheckResult<S> result;
  for (auto* p : params) {
    for (Index i = 0; i < p->value.size(); ++i) {
      S& slot = p->value.data()[i];
      const S orig = slot;
      slot = orig + h;
      const S up = eval();
      slot = orig - h;
      const S down = eval();
      slot = orig;
      const S err = detail::relative_error(p->grad.data()[i], (up - down) / (S(2) * h));
      ++result.checked;
      if (err > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = err;
        result.worst_parameter = p->name;
        result.worst_index = i;
      }
    }
  }
  for (auto* p : params) p->zero_grad();
  return result;
}

}  // namespace hsm
