#pragma once

// Dense real matrices with a record-on-execute reverse-mode tape.
//
// Every tensor in the library has rank <= 2: sequences are [T x dim] row
// blocks, vectors are [1 x n] rows and scalars are [1 x 1]. A batch of B
// sequences of length T is stacked into [B*T x dim].

#include <Eigen/Core>

#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hsm/errors.hpp"

namespace hsm {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(Index rows, Index cols) {
  std::ostringstream os;
  os << "[" << rows << "x" << cols << "]";
  return os.str();
}

template <typename Derived>
std::string shape_string(const Eigen::DenseBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

// Gradient-check tolerances differ per precision; finite differences are
// only meaningful at 64-bit.
template <typename Scalar>
struct Tolerance;

template <>
struct Tolerance<double> {
  static constexpr double fd_step = 1e-5;
  static constexpr double grad_rel = 1e-4;
  static constexpr double exact = 1e-12;
  // Below this magnitude gradient errors are judged in absolute terms.
  static constexpr double rel_floor = 1e-4;
};

template <>
struct Tolerance<float> {
  static constexpr float fd_step = 1e-2f;
  static constexpr float grad_rel = 5e-2f;
  static constexpr float exact = 1e-5f;
  static constexpr float rel_floor = 1e-2f;
};

// A named trainable tensor. `grad` accumulates across backward passes until
// zero_grad() is called.
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool decay = true;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v, bool d = true)
      : name(std::move(n)), value(std::move(v)), decay(d) {
    grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
  }

  Index size() const { return value.size(); }
  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
template <typename Scalar>
class Var {
 public:
  Var() = default;
  Var(Tape<Scalar>* tape, int id) : tape_(tape), id_(id) {}

  const Matrix<Scalar>& value() const { return tape_->value(*this); }
  // Gradient after Tape::backward(); zero-sized if nothing flowed here.
  const Matrix<Scalar>& grad() const { return tape_->grad(*this); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad(*this); }

  Tape<Scalar>* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Scalar>* tape_ = nullptr;
  int id_ = -1;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  // Receives the gradient of the node's output; accumulates into parents
  // through Tape::accumulate().
  using BackwardFn = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  // With grad_enabled == false parameters enter as constants and no backward
  // closures are kept (inference mode).
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value) { return push(std::move(value), false); }

  // Leaf whose gradient is kept on the tape, readable via Var::grad().
  Var<Scalar> variable(Mat value) { return push(std::move(value), grad_enabled_); }

  // Leaf bound to a Parameter: the value is read in place and the gradient is
  // added to Parameter::grad by backward().
  Var<Scalar> parameter(Parameter<Scalar>& p) {
    Node n;
    n.ref = &p.value;
    n.param = grad_enabled_ ? &p : nullptr;
    n.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  // Records the result of an operation. The backward function is kept only if
  // some parent requires a gradient.
  Var<Scalar> record(Mat value, std::initializer_list<Var<Scalar>> parents, BackwardFn fn) {
    return record(std::move(value), std::vector<Var<Scalar>>(parents), std::move(fn));
  }

  Var<Scalar> record(Mat value, const std::vector<Var<Scalar>>& parents, BackwardFn fn) {
    bool needs = false;
    for (const auto& p : parents) {
      check_owned(p);
      needs = needs || requires_grad(p);
    }
    Var<Scalar> out = push(std::move(value), needs);
    if (needs) nodes_.back().backward = std::move(fn);
    return out;
  }

  const Mat& value(const Var<Scalar>& v) const {
    const Node& n = nodes_.at(static_cast<size_t>(v.id()));
    return n.ref ? *n.ref : n.value;
  }

  const Mat& grad(const Var<Scalar>& v) const { return nodes_.at(static_cast<size_t>(v.id())).grad; }

  bool requires_grad(const Var<Scalar>& v) const {
    return nodes_.at(static_cast<size_t>(v.id())).requires_grad;
  }

  // Adds `delta` to the gradient of `v`; no-op for nodes without gradient.
  template <typename Derived>
  void accumulate(const Var<Scalar>& v, const Eigen::MatrixBase<Derived>& delta) {
    Node& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = delta;
    } else {
      n.grad.noalias() += delta;
    }
  }

  // Mutable gradient buffer (zero-initialised) for ops that scatter into it.
  Mat* grad_buffer(const Var<Scalar>& v) {
    Node& n = nodes_[static_cast<size_t>(v.id())];
    if (!n.requires_grad) return nullptr;
    if (n.grad.size() == 0) {
      const Mat& val = n.ref ? *n.ref : n.value;
      n.grad = Mat::Zero(val.rows(), val.cols());
    }
    return &n.grad;
  }

  // Reverse sweep from a scalar. Tape order is a topological order, so a
  // single backwards pass over the nodes suffices. A tape can be swept once.
  void backward(const Var<Scalar>& loss) {
    check_owned(loss);
    const Mat& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1) {
      throw DimensionError("backward() needs a scalar loss, got " + shape_string(lv));
    }
    if (swept_) throw Error("backward() called twice on the same tape");
    swept_ = true;
    if (!requires_grad(loss)) return;
    nodes_[static_cast<size_t>(loss.id())].grad = Mat::Ones(1, 1);
    for (int i = loss.id(); i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.requires_grad || n.grad.size() == 0) continue;
      if (n.backward) {
        n.backward(*this, n.grad);
      }
      if (n.param) n.param->grad += n.grad;
    }
  }

  size_t size() const { return nodes_.size(); }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool requires_grad = false;
    BackwardFn backward;
    Parameter<Scalar>* param = nullptr;
  };

  Var<Scalar> push(Mat value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var<Scalar>(this, static_cast<int>(nodes_.size()) - 1);
  }

  void check_owned(const Var<Scalar>& v) const {
    if (v.tape() != this || v.id() < 0 || static_cast<size_t>(v.id()) >= nodes_.size()) {
      throw Error("variable does not belong to this tape");
    }
  }

  std::deque<Node> nodes_;  // stable references across push_back
  bool grad_enabled_ = true;
  bool swept_ = false;
};

}  // namespace hsm
