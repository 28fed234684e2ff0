#pragma once

// Token mixers. Every mixer maps a stack of sequences [B*T x dim] to the same
// shape, and output row t of a sequence depends only on its rows <= t.

#include <memory>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hsm/mixer_spec.hpp"
#include "hsm/ops.hpp"
#include "hsm/tensor.hpp"

namespace hsm {

// Draws N(0, stddev^2) in double precision so float and double models built
// from one seed hold the same (rounded) values.
template <typename S>
Matrix<S> init_normal(Index rows, Index cols, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<S> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

inline constexpr double kInitStd = 0.02;
inline constexpr double kInitBlend = 0.5;

// ---------------------------------------------------------------------------
// Expression-level mixing functions.

template <typename S>
Var<S> shift_sequence(const Var<S>& x, Index shift, Index time) {
  return shift_rows(x, shift, time);
}

template <typename S>
Var<S> shift_sequence(const Var<S>& x, Index shift) {
  return shift_rows(x, shift, x.rows());
}

// x W^T + b, i.e. W acting on each row as a column vector. W is [out x in].
template <typename S>
Var<S> linear(const Var<S>& x, const Var<S>& weight, const Var<S>& bias) {
  return add_row(matmul_nt(x, weight), bias);
}

// y = a x + b x_shifted with [1x1] a and b.
template <typename S>
Var<S> mix_scalar_ab(const Var<S>& x, const Var<S>& xs, const Var<S>& a, const Var<S>& b) {
  return add(scale_by(x, a), scale_by(xs, b));
}

// y = a ⊙ x + b ⊙ x_shifted with [1 x d] a and b.
template <typename S>
Var<S> mix_vector_ab(const Var<S>& x, const Var<S>& xs, const Var<S>& a, const Var<S>& b) {
  return add(mul_row(x, a), mul_row(xs, b));
}

// y = A x + B x_shifted + bias per row.
template <typename S>
Var<S> mix_matrix_ab(const Var<S>& x, const Var<S>& xs, const Var<S>& A, const Var<S>& B, const Var<S>& bias) {
  if (A.rows() != A.cols() || B.rows() != B.cols() || A.cols() != x.cols() || B.cols() != xs.cols()) {
    throw DimensionError("mix_matrix_ab: A " + shape_string(A.value()) + " and B " + shape_string(B.value()) +
                         " must be square and match input width " + std::to_string(x.cols()));
  }
  return add_row(add(matmul_nt(x, A), matmul_nt(xs, B)), bias);
}

// gate ⊙ x + (1 - gate) ⊙ x_shifted
template <typename S>
Var<S> gate_blend(const Var<S>& gate, const Var<S>& x, const Var<S>& xs) {
  return add(mul(gate, x), mul(affine(gate, S(-1), S(1)), xs));
}

template <typename S>
struct MlpVars {
  Var<S> w1, b1, w2, b2;
};

// Linear -> ReLU -> Linear.
template <typename S>
Var<S> mlp(const Var<S>& x, const MlpVars<S>& p) {
  return linear(relu(linear(x, p.w1, p.b1)), p.w2, p.b2);
}

// gate = tanh(mlp(x)), gate blend; the gate sees x only.
template <typename S>
Var<S> mix_gated_single(const Var<S>& x, const Var<S>& xs, const MlpVars<S>& p) {
  return gate_blend(tanh(mlp(x, p)), x, xs);
}

// gate = tanh(L(concat(x, x_shifted))), gate blend. L maps 2d -> d.
template <typename S>
Var<S> mix_gated_double(const Var<S>& x, const Var<S>& xs, const Var<S>& weight, const Var<S>& bias) {
  return gate_blend(tanh(linear(concat_cols(x, xs), weight, bias)), x, xs);
}

// y = mlp(concat(x, x_shifted)) with Linear(2h -> h) -> ReLU -> Linear(h -> h).
template <typename S>
Var<S> mix_fusion(const Var<S>& x, const Var<S>& xs, const MlpVars<S>& p) {
  return mlp(concat_cols(x, xs), p);
}

template <typename S>
struct AttentionVars {
  Var<S> wq, bq, wk, bk, wv, bv, wo, bo;
};

// Multihead causal softmax attention with input projections and output projection.
template <typename S>
Var<S> dense_attention(const Var<S>& x, const AttentionVars<S>& p, Index heads, Index time) {
  const Var<S> q = linear(x, p.wq, p.bq);
  const Var<S> k = linear(x, p.wk, p.bk);
  const Var<S> v = linear(x, p.wv, p.bv);
  return linear(causal_attention(q, k, v, time, heads), p.wo, p.bo);
}

// Splits features into spec.heads contiguous groups; head h mixes its slice
// with its delayed copy (shift spec.shift_for_head(h)) through
// head_fn(h, x_h, x_h_shifted); results are concatenated in head order.
template <typename S, typename HeadFn>
Var<S> mix_multihead_hsm(const Var<S>& x, const MixerSpec& spec, Index time, HeadFn&& head_fn) {
  spec.validate(static_cast<int>(x.cols()));
  if (!is_hsm(spec.kind)) throw ConfigError("mix_multihead_hsm needs an HSM mixer kind");
  if (spec.heads == 1) return head_fn(0, x, shift_sequence(x, spec.shift_for_head(0), time));
  const Index hd = x.cols() / spec.heads;
  std::vector<Var<S>> outs;
  outs.reserve(static_cast<size_t>(spec.heads));
  for (int h = 0; h < spec.heads; ++h) {
    const Var<S> xh = slice_cols(x, h * hd, hd);
    outs.push_back(head_fn(h, xh, shift_sequence(xh, spec.shift_for_head(h), time)));
  }
  return concat_cols(outs);
}

// ---------------------------------------------------------------------------
// Mixer layers owning their parameters.

template <typename S>
class Mixer {
 public:
  Mixer(MixerSpec spec, Index dim, std::string prefix) : spec_(std::move(spec)), dim_(dim), prefix_(std::move(prefix)) {
    spec_.validate(static_cast<int>(dim));
  }
  virtual ~Mixer() = default;
  Mixer(const Mixer&) = delete;
  Mixer& operator=(const Mixer&) = delete;

  // x is [B*T x dim] holding B sequences of length `time`.
  virtual Var<S> forward(Tape<S>& tape, const Var<S>& x, Index time) = 0;

  const MixerSpec& spec() const { return spec_; }
  Index dim() const { return dim_; }

  std::vector<Parameter<S>*> parameters() {
    std::vector<Parameter<S>*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

 protected:
  Parameter<S>& add_param(const std::string& name, Matrix<S> value) {
    const bool decay = value.rows() > 1 && value.cols() > 1;
    params_.push_back(std::make_unique<Parameter<S>>(prefix_ + name, std::move(value), decay));
    return *params_.back();
  }

  Parameter<S>& add_weight(const std::string& name, Index out, Index in, Rng& rng) {
    return add_param(name, init_normal<S>(out, in, kInitStd, rng));
  }

  Parameter<S>& add_bias(const std::string& name, Index n) { return add_param(name, Matrix<S>::Zero(1, n)); }

  MixerSpec spec_;
  Index dim_;
  std::string prefix_;
  std::vector<std::unique_ptr<Parameter<S>>> params_;
};

template <typename S>
class DenseAttentionMixer final : public Mixer<S> {
 public:
  DenseAttentionMixer(const MixerSpec& spec, Index dim, const std::string& prefix, Rng& rng)
      : Mixer<S>(spec, dim, prefix) {
    for (const char* n : {"q", "k", "v", "o"}) {
      w_.push_back(&this->add_weight(std::string(n) + ".weight", dim, dim, rng));
      b_.push_back(&this->add_bias(std::string(n) + ".bias", dim));
    }
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x, Index time) override {
    AttentionVars<S> p{tape.parameter(*w_[0]), tape.parameter(*b_[0]), tape.parameter(*w_[1]),
                       tape.parameter(*b_[1]), tape.parameter(*w_[2]), tape.parameter(*b_[2]),
                       tape.parameter(*w_[3]), tape.parameter(*b_[3])};
    return dense_attention(x, p, this->spec_.heads, time);
  }

 private:
  std::vector<Parameter<S>*> w_, b_;
};

template <typename S>
class ScalarABMixer final : public Mixer<S> {
 public:
  ScalarABMixer(const MixerSpec& spec, Index dim, const std::string& prefix)
      : Mixer<S>(spec, dim, prefix) {
    for (int h = 0; h < spec.heads; ++h) {
      const std::string hp = spec.heads == 1 ? "" : "head" + std::to_string(h) + ".";
      a_.push_back(&this->add_param(hp + "a", Matrix<S>::Constant(1, 1, static_cast<S>(kInitBlend))));
      b_.push_back(&this->add_param(hp + "b", Matrix<S>::Constant(1, 1, static_cast<S>(kInitBlend))));
    }
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x, Index time) override {
    return mix_multihead_hsm(x, this->spec_, time, [&](int h, const Var<S>& xh, const Var<S>& xs) {
      return mix_scalar_ab(xh, xs, tape.parameter(*a_[h]), tape.parameter(*b_[h]));
    });
  }

  Parameter<S>& a(int head = 0) { return *a_.at(head); }
  Parameter<S>& b(int head = 0) { return *b_.at(head); }

 private:
  std::vector<Parameter<S>*> a_, b_;
};

template <typename S>
class VectorABMixer final : public Mixer<S> {
 public:
  VectorABMixer(const MixerSpec& spec, Index dim, const std::string& prefix)
      : Mixer<S>(spec, dim, prefix),
        a_(this->add_param("a", Matrix<S>::Constant(1, dim, static_cast<S>(kInitBlend)))),
        b_(this->add_param("b", Matrix<S>::Constant(1, dim, static_cast<S>(kInitBlend)))) {}

  Var<S> forward(Tape<S>& tape, const Var<S>& x, Index time) override {
    return mix_vector_ab(x, shift_sequence(x, this->spec_.shifts.front(), time), tape.parameter(a_),
                         tape.parameter(b_));
  }

  Parameter<S>& a() { return a_; }
  Parameter<S>& b() { return b_; }

 private:
  Parameter<S>& a_;
  Parameter<S>& b_;
};

template <typename S>
class MatrixABMixer final : public Mixer<S> {
 public:
  MatrixABMixer(const MixerSpec& spec, Index dim, const std::string& prefix, Rng& rng)
      : Mixer<S>(spec, dim, prefix),
        a_(this->add_weight("A", dim, dim, rng)),
        b_(this->add_weight("B", dim, dim, rng)),
        bias_(this->add_bias("bias", dim)) {}

  Var<S> forward(Tape<S>& tape, const Var<S>& x, Index time) override {
    return mix_matrix_ab(x, shift_sequence(x, this->spec_.shifts.front(), time), tape.parameter(a_),
                         tape.parameter(b_), tape.parameter(bias_));
  }

 private:
  Parameter<S>& a_;
  Parameter<S>& b_;
  Parameter<S>& bias_;
};

template <typename S>
class GatedSingleMixer final : public Mixer<S> {
 public:
  GatedSingleMixer(const MixerSpec& spec, Index dim, const std::string& prefix, Rng& rng)
      : Mixer<S>(spec, dim, prefix),
        w1_(this->add_weight("mlp.fc1.weight", dim, dim, rng)),
        b1_(this->add_bias("mlp.fc1.bias", dim)),
        w2_(this->add_weight("mlp.fc2.weight", dim, dim, rng)),
        b2_(this->add_bias("mlp.fc2.bias", dim)) {}

  Var<S> forward(Tape<S>& tape, const Var<S>& x, Index time) override {
    MlpVars<S> p{tape.parameter(w1_), tape.parameter(b1_), tape.parameter(w2_), tape.parameter(b2_)};
    return mix_gated_single(x, shift_sequence(x, this->spec_.shifts.front(), time), p);
  }

 private:
  Parameter<S>& w1_;
  Parameter<S>& b1_;
  Parameter<S>& w2_;
  Parameter<S>& b2_;
};

template <typename S>
class GatedDoubleMixer final : public Mixer<S> {
 public:
  GatedDoubleMixer(const MixerSpec& spec, Index dim, const std::string& prefix, Rng& rng)
      : Mixer<S>(spec, dim, prefix) {
    const Index hd = dim / spec.heads;
    for (int h = 0; h < spec.heads; ++h) {
      const std::string hp = spec.heads == 1 ? "" : "head" + std::to_string(h) + ".";
      w_.push_back(&this->add_weight(hp + "gate.weight", hd, 2 * hd, rng));
      b_.push_back(&this->add_bias(hp + "gate.bias", hd));
    }
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x, Index time) override {
    return mix_multihead_hsm(x, this->spec_, time, [&](int h, const Var<S>& xh, const Var<S>& xs) {
      return mix_gated_double(xh, xs, tape.parameter(*w_[h]), tape.parameter(*b_[h]));
    });
  }

 private:
  std::vector<Parameter<S>*> w_, b_;
};

template <typename S>
class FusionMixer final : public Mixer<S> {
 public:
  FusionMixer(const MixerSpec& spec, Index dim, const std::string& prefix, Rng& rng)
      : Mixer<S>(spec, dim, prefix) {
    const Index hd = dim / spec.heads;
    for (int h = 0; h < spec.heads; ++h) {
      const std::string hp = spec.heads == 1 ? "" : "head" + std::to_string(h) + ".";
      Head head;
      head.w1 = &this->add_weight(hp + "fc1.weight", hd, 2 * hd, rng);
      head.b1 = &this->add_bias(hp + "fc1.bias", hd);
      head.w2 = &this->add_weight(hp + "fc2.weight", hd, hd, rng);
      head.b2 = &this->add_bias(hp + "fc2.bias", hd);
      heads_.push_back(head);
    }
  }

  Var<S> forward(Tape<S>& tape, const Var<S>& x, Index time) override {
    return mix_multihead_hsm(x, this->spec_, time, [&](int h, const Var<S>& xh, const Var<S>& xs) {
      const Head& hp = heads_[static_cast<size_t>(h)];
      MlpVars<S> p{tape.parameter(*hp.w1), tape.parameter(*hp.b1), tape.parameter(*hp.w2), tape.parameter(*hp.b2)};
      return mix_fusion(xh, xs, p);
    });
  }

 private:
  struct Head {
    Parameter<S>* w1;
    Parameter<S>* b1;
    Parameter<S>* w2;
    Parameter<S>* b2;
  };
  std::vector<Head> heads_;
};

template <typename S>
std::unique_ptr<Mixer<S>> make_mixer(const MixerSpec& spec, Index dim, const std::string& prefix, Rng& rng) {
  spec.validate(static_cast<int>(dim));
  switch (spec.kind) {
    case MixerKind::DenseAttention: return std::make_unique<DenseAttentionMixer<S>>(spec, dim, prefix, rng);
    case MixerKind::ScalarAB: return std::make_unique<ScalarABMixer<S>>(spec, dim, prefix);
    case MixerKind::VectorAB: return std::make_unique<VectorABMixer<S>>(spec, dim, prefix);
    case MixerKind::MatrixAB: return std::make_unique<MatrixABMixer<S>>(spec, dim, prefix, rng);
    case MixerKind::GatedSingle: return std::make_unique<GatedSingleMixer<S>>(spec, dim, prefix, rng);
    case MixerKind::GatedDouble: return std::make_unique<GatedDoubleMixer<S>>(spec, dim, prefix, rng);
    case MixerKind::Fusion: return std::make_unique<FusionMixer<S>>(spec, dim, prefix, rng);
  }
  throw ConfigError("unknown mixer kind");
}

}  // namespace hsm
