#pragma once

// Differentiable operations on tape variables. Each op computes its value
// eagerly and records a closure that maps the output gradient onto its inputs.

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hsm/errors.hpp"
#include "hsm/tensor.hpp"

namespace hsm {

using Rng = std::mt19937_64;

// Independent stream for (seed, purpose tags...), e.g. derive_rng(seed, {kStreamShuffle, epoch}).
inline Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> tags) {
  std::vector<std::uint32_t> words{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32)};
  for (auto t : tags) {
    words.push_back(static_cast<std::uint32_t>(t));
    words.push_back(static_cast<std::uint32_t>(t >> 32));
  }
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Marks a position excluded from cross-entropy and accuracy.
inline constexpr int kIgnoreTarget = -1;

namespace detail {

template <typename S>
void require_same_shape(const char* op, const Var<S>& a, const Var<S>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shapes differ: " + shape_string(a.value()) + " vs " +
                         shape_string(b.value()));
  }
}

template <typename S>
void require_row_vector(const char* op, const Var<S>& x, const Var<S>& r) {
  if (r.rows() != 1 || r.cols() != x.cols()) {
    throw DimensionError(std::string(op) + ": expected [1x" + std::to_string(x.cols()) + "] row, got " +
                         shape_string(r.value()));
  }
}

template <typename S>
void require_sequences(const char* op, const Var<S>& x, Index time) {
  if (time <= 0 || x.rows() % time != 0) {
    throw DimensionError(std::string(op) + ": " + std::to_string(x.rows()) +
                         " rows are not a whole number of sequences of length " + std::to_string(time));
  }
}

}  // namespace detail

template <typename S>
Var<S> matmul(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions differ: " + shape_string(a.value()) + " x " +
                         shape_string(b.value()));
  }
  Matrix<S> out;
  out.noalias() = a.value() * b.value();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
    if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
  });
}

// a * b^T, without materialising the transpose.
template <typename S>
Var<S> matmul_nt(const Var<S>& a, const Var<S>& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ: " + shape_string(a.value()) + " x " +
                         shape_string(b.value()) + "^T");
  }
  Matrix<S> out;
  out.noalias() = a.value() * b.value().transpose();
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (a.requires_grad()) t.accumulate(a, g * b.value());
    if (b.requires_grad()) t.accumulate(b, g.transpose() * a.value());
  });
}

template <typename S>
Var<S> add(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape("add", a, b);
  return a.tape()->record(a.value() + b.value(), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <typename S>
Var<S> sub(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape("sub", a, b);
  return a.tape()->record(a.value() - b.value(), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

// Elementwise product.
template <typename S>
Var<S> mul(const Var<S>& a, const Var<S>& b) {
  detail::require_same_shape("mul", a, b);
  Matrix<S> out = a.value().cwiseProduct(b.value());
  return a.tape()->record(std::move(out), {a, b}, [a, b](Tape<S>& t, const Matrix<S>& g) {
    if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
    if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
  });
}

// alpha * x + beta, with constant alpha and beta.
template <typename S>
Var<S> affine(const Var<S>& x, S alpha, S beta) {
  Matrix<S> out = (alpha * x.value().array() + beta).matrix();
  return x.tape()->record(std::move(out), {x},
                          [x, alpha](Tape<S>& t, const Matrix<S>& g) { t.accumulate(x, alpha * g); });
}

template <typename S>
Var<S> scale(const Var<S>& x, S alpha) {
  return affine(x, alpha, S(0));
}

// x + row, broadcasting a [1 x n] row over every row of x.
template <typename S>
Var<S> add_row(const Var<S>& x, const Var<S>& row) {
  detail::require_row_vector("add_row", x, row);
  Matrix<S> out = x.value();
  out.rowwise() += row.value().row(0);
  return x.tape()->record(std::move(out), {x, row}, [x, row](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(x, g);
    if (row.requires_grad()) t.accumulate(row, g.colwise().sum());
  });
}

// x ⊙ row, broadcasting a [1 x n] row over every row of x.
template <typename S>
Var<S> mul_row(const Var<S>& x, const Var<S>& row) {
  detail::require_row_vector("mul_row", x, row);
  Matrix<S> out = x.value().array().rowwise() * row.value().row(0).array();
  return x.tape()->record(std::move(out), {x, row}, [x, row](Tape<S>& t, const Matrix<S>& g) {
    if (x.requires_grad()) t.accumulate(x, (g.array().rowwise() * row.value().row(0).array()).matrix());
    if (row.requires_grad()) t.accumulate(row, g.cwiseProduct(x.value()).colwise().sum());
  });
}

// s * x for a [1 x 1] variable s.
template <typename S>
Var<S> scale_by(const Var<S>& x, const Var<S>& s) {
  if (s.rows() != 1 || s.cols() != 1) {
    throw DimensionError("scale_by: expected [1x1] scalar, got " + shape_string(s.value()));
  }
  Matrix<S> out = s.value()(0, 0) * x.value();
  return x.tape()->record(std::move(out), {x, s}, [x, s](Tape<S>& t, const Matrix<S>& g) {
    if (x.requires_grad()) t.accumulate(x, s.value()(0, 0) * g);
    if (s.requires_grad()) {
      Matrix<S> ds(1, 1);
      ds(0, 0) = g.cwiseProduct(x.value()).sum();
      t.accumulate(s, ds);
    }
  });
}

template <typename S>
Var<S> relu(const Var<S>& x) {
  Matrix<S> out = x.value().cwiseMax(S(0));
  return x.tape()->record(std::move(out), {x}, [x](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(x, (x.value().array() > S(0)).select(g.array(), S(0)).matrix());
  });
}

template <typename S>
Var<S> tanh(const Var<S>& x) {
  Matrix<S> out = x.value().array().tanh().matrix();
  Matrix<S> y = out;
  return x.tape()->record(std::move(out), {x}, [x, y = std::move(y)](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(x, (g.array() * (S(1) - y.array().square())).matrix());
  });
}

// GELU, tanh approximation (GPT-2).
template <typename S>
Var<S> gelu(const Var<S>& x) {
  const S c = static_cast<S>(std::sqrt(2.0 / M_PI));
  const S k = static_cast<S>(0.044715);
  const auto xa = x.value().array();
  Matrix<S> out = (S(0.5) * xa * (S(1) + (c * (xa + k * xa.cube())).tanh())).matrix();
  return x.tape()->record(std::move(out), {x}, [x, c, k](Tape<S>& t, const Matrix<S>& g) {
    const auto v = x.value().array();
    const auto u = (c * (v + k * v.cube())).tanh();
    const auto du = c * (S(1) + S(3) * k * v.square());
    const auto d = S(0.5) * (S(1) + u) + S(0.5) * v * (S(1) - u.square()) * du;
    t.accumulate(x, (g.array() * d).matrix());
  });
}

template <typename S>
Var<S> sum(const Var<S>& x) {
  Matrix<S> out(1, 1);
  out(0, 0) = x.value().sum();
  return x.tape()->record(std::move(out), {x}, [x](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(x, Matrix<S>::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

template <typename S>
Var<S> mean(const Var<S>& x) {
  return scale(sum(x), S(1) / static_cast<S>(x.value().size()));
}

// Row-wise softmax. Masked entries (mask == false) are exactly zero; every row
// must keep at least one entry.
template <typename S>
Var<S> softmax_rows(const Var<S>& x, const std::optional<BoolMatrix>& mask = std::nullopt) {
  const Matrix<S>& xv = x.value();
  if (mask && (mask->rows() != xv.rows() || mask->cols() != xv.cols())) {
    throw DimensionError("softmax_rows: mask " + shape_string(*mask) + " does not match input " +
                         shape_string(xv));
  }
  Matrix<S> out = Matrix<S>::Zero(xv.rows(), xv.cols());
  for (Index i = 0; i < xv.rows(); ++i) {
    S row_max = -std::numeric_limits<S>::infinity();
    bool any = false;
    for (Index j = 0; j < xv.cols(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      any = true;
      row_max = std::max(row_max, xv(i, j));
    }
    if (!any) throw ParameterError("softmax_rows: row " + std::to_string(i) + " is fully masked");
    S total = 0;
    for (Index j = 0; j < xv.cols(); ++j) {
      if (mask && !(*mask)(i, j)) continue;
      out(i, j) = std::exp(xv(i, j) - row_max);
      total += out(i, j);
    }
    out.row(i) /= total;
  }
  Matrix<S> y = out;
  return x.tape()->record(std::move(out), {x}, [x, y = std::move(y)](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S> gy = g.cwiseProduct(y);
    Eigen::Matrix<S, Eigen::Dynamic, 1> dots = gy.rowwise().sum();
    Matrix<S> dx = gy - (y.array().colwise() * dots.array()).matrix();
    t.accumulate(x, dx);
  });
}

// Normalises each row to zero mean / unit variance, then applies gain and shift.
template <typename S>
Var<S> layer_norm(const Var<S>& x, const Var<S>& gain, const Var<S>& shift, S eps) {
  if (!(eps > S(0))) throw ParameterError("layer_norm: eps must be positive");
  detail::require_row_vector("layer_norm", x, gain);
  detail::require_row_vector("layer_norm", x, shift);
  const Matrix<S>& xv = x.value();
  const Index n = xv.cols();
  Eigen::Matrix<S, Eigen::Dynamic, 1> mu = xv.rowwise().mean();
  Matrix<S> xhat = xv.colwise() - mu;
  Eigen::Matrix<S, Eigen::Dynamic, 1> rstd =
      ((xhat.array().square().rowwise().sum() / static_cast<S>(n)) + eps).rsqrt().matrix();
  xhat.array().colwise() *= rstd.array();
  Matrix<S> out = xhat.array().rowwise() * gain.value().row(0).array();
  out.rowwise() += shift.value().row(0);
  return x.tape()->record(
      std::move(out), {x, gain, shift},
      [x, gain, shift, xhat = std::move(xhat), rstd = std::move(rstd), n](Tape<S>& t, const Matrix<S>& g) {
        if (gain.requires_grad()) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (shift.requires_grad()) t.accumulate(shift, g.colwise().sum());
        if (!x.requires_grad()) return;
        Matrix<S> dxhat = g.array().rowwise() * gain.value().row(0).array();
        Eigen::Matrix<S, Eigen::Dynamic, 1> m1 = dxhat.rowwise().mean();
        Eigen::Matrix<S, Eigen::Dynamic, 1> m2 = dxhat.cwiseProduct(xhat).rowwise().mean();
        Matrix<S> dx = dxhat.colwise() - m1;
        dx -= (xhat.array().colwise() * m2.array()).matrix();
        dx.array().colwise() *= rstd.array();
        t.accumulate(x, dx);
      });
}

// Mean over non-ignored rows of -log softmax(logits)[target].
template <typename S>
Var<S> cross_entropy(const Var<S>& logits, std::span<const int> targets) {
  const Matrix<S>& lv = logits.value();
  if (static_cast<Index>(targets.size()) != lv.rows()) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(lv.rows()) + " positions");
  }
  const Index vocab = lv.cols();
  Matrix<S> probs(lv.rows(), vocab);
  S total = 0;
  Index count = 0;
  for (Index i = 0; i < lv.rows(); ++i) {
    const int tgt = targets[static_cast<size_t>(i)];
    if (tgt == kIgnoreTarget) {
      probs.row(i).setZero();
      continue;
    }
    if (tgt < 0 || tgt >= vocab) {
      throw IndexError("cross_entropy: target id " + std::to_string(tgt) + " out of range for vocab " +
                       std::to_string(vocab));
    }
    const S row_max = lv.row(i).maxCoeff();
    probs.row(i) = (lv.row(i).array() - row_max).exp().matrix();
    const S z = probs.row(i).sum();
    probs.row(i) /= z;
    total += -(lv(i, tgt) - row_max - std::log(z));
    ++count;
  }
  Matrix<S> out(1, 1);
  out(0, 0) = count > 0 ? total / static_cast<S>(count) : S(0);
  std::vector<int> tg(targets.begin(), targets.end());
  return logits.tape()->record(
      std::move(out), {logits},
      [logits, probs = std::move(probs), tg = std::move(tg), count](Tape<S>& t, const Matrix<S>& g) {
        if (count == 0) return;
        Matrix<S> d = probs;
        for (Index i = 0; i < d.rows(); ++i) {
          const int tgt = tg[static_cast<size_t>(i)];
          if (tgt != kIgnoreTarget) d(i, tgt) -= S(1);
        }
        d *= g(0, 0) / static_cast<S>(count);
        t.accumulate(logits, d);
      });
}

// Delays every sequence (blocks of `time` rows) by `shift` rows; the first
// `shift` rows of each sequence become zero. Row t never depends on rows > t.
template <typename S>
Var<S> shift_rows(const Var<S>& x, Index shift, Index time) {
  if (shift <= 0) throw ParameterError("shift must be >= 1, got " + std::to_string(shift));
  detail::require_sequences("shift_rows", x, time);
  const Matrix<S>& xv = x.value();
  const Index batch = xv.rows() / time;
  Matrix<S> out = Matrix<S>::Zero(xv.rows(), xv.cols());
  if (shift < time) {
    for (Index b = 0; b < batch; ++b) {
      out.middleRows(b * time + shift, time - shift) = xv.middleRows(b * time, time - shift);
    }
  }
  return x.tape()->record(std::move(out), {x}, [x, shift, time, batch](Tape<S>& t, const Matrix<S>& g) {
    if (shift >= time) return;
    Matrix<S>* dx = t.grad_buffer(x);
    for (Index b = 0; b < batch; ++b) {
      dx->middleRows(b * time, time - shift) += g.middleRows(b * time + shift, time - shift);
    }
  });
}

template <typename S>
Var<S> slice_cols(const Var<S>& x, Index start, Index width) {
  if (start < 0 || width <= 0 || start + width > x.cols()) {
    throw DimensionError("slice_cols: columns [" + std::to_string(start) + ", " + std::to_string(start + width) +
                         ") outside " + shape_string(x.value()));
  }
  Matrix<S> out = x.value().middleCols(start, width);
  return x.tape()->record(std::move(out), {x}, [x, start, width](Tape<S>& t, const Matrix<S>& g) {
    t.grad_buffer(x)->middleCols(start, width) += g;
  });
}

template <typename S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix<S> out(rows, cols);
  Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return parts.front().tape()->record(std::move(out), parts, [parts](Tape<S>& t, const Matrix<S>& g) {
    Index c = 0;
    for (const auto& p : parts) {
      if (p.requires_grad()) t.accumulate(p, g.middleCols(c, p.cols()));
      c += p.cols();
    }
  });
}

template <typename S>
Var<S> concat_cols(const Var<S>& a, const Var<S>& b) {
  return concat_cols(std::vector<Var<S>>{a, b});
}

// Row lookup: out[i] = table[ids[i]].
template <typename S>
Var<S> gather_rows(const Var<S>& table, std::span<const int> ids) {
  const Matrix<S>& tv = table.value();
  Matrix<S> out(static_cast<Index>(ids.size()), tv.cols());
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= tv.rows()) {
      throw IndexError("id " + std::to_string(ids[i]) + " out of range [0, " + std::to_string(tv.rows()) + ")");
    }
    out.row(static_cast<Index>(i)) = tv.row(ids[i]);
  }
  std::vector<int> idv(ids.begin(), ids.end());
  return table.tape()->record(std::move(out), {table}, [table, idv = std::move(idv)](Tape<S>& t, const Matrix<S>& g) {
    Matrix<S>* dt = t.grad_buffer(table);
    for (size_t i = 0; i < idv.size(); ++i) dt->row(idv[i]) += g.row(static_cast<Index>(i));
  });
}

// Inverted dropout: zeroes entries with probability p and scales survivors by
// 1/(1-p). Identity when p == 0.
template <typename S>
Var<S> dropout(const Var<S>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ParameterError("dropout rate must be in [0, 1)");
  if (p == 0.0) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  std::bernoulli_distribution keep(1.0 - p);
  Matrix<S> mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? keep_scale : S(0);
  Matrix<S> out = x.value().cwiseProduct(mask);
  return x.tape()->record(std::move(out), {x}, [x, mask = std::move(mask)](Tape<S>& t, const Matrix<S>& g) {
    t.accumulate(x, g.cwiseProduct(mask));
  });
}

// Multihead causal softmax attention core. q, k, v are [B*T x dim]; each head
// owns a contiguous dim/heads column block. Scores are scaled by
// 1/sqrt(head_dim) and position t attends to positions <= t of its own
// sequence only.
template <typename S>
Var<S> causal_attention(const Var<S>& q, const Var<S>& k, const Var<S>& v, Index time, Index heads) {
  detail::require_same_shape("causal_attention", q, k);
  detail::require_same_shape("causal_attention", q, v);
  detail::require_sequences("causal_attention", q, time);
  const Index dim = q.cols();
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(dim) + " not divisible by heads " + std::to_string(heads));
  }
  const Index hd = dim / heads;
  const Index batch = q.rows() / time;
  const S scale = S(1) / std::sqrt(static_cast<S>(hd));
  const Matrix<S>& qv = q.value();
  const Matrix<S>& kv = k.value();
  const Matrix<S>& vv = v.value();

  auto probs = std::make_shared<std::vector<Matrix<S>>>(static_cast<size_t>(batch * heads));
  Matrix<S> out(q.rows(), dim);
  Matrix<S> scores(time, time);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < heads; ++h) {
      const auto qh = qv.block(b * time, h * hd, time, hd);
      const auto kh = kv.block(b * time, h * hd, time, hd);
      const auto vh = vv.block(b * time, h * hd, time, hd);
      scores.noalias() = qh * kh.transpose();
      Matrix<S>& p = (*probs)[static_cast<size_t>(b * heads + h)];
      p.setZero(time, time);
      for (Index i = 0; i < time; ++i) {
        auto row = scores.row(i).head(i + 1);
        const S m = row.maxCoeff();
        auto pr = p.row(i).head(i + 1);
        pr = ((row.array() - m) * scale).exp().matrix();
        pr /= pr.sum();
      }
      out.block(b * time, h * hd, time, hd).noalias() = p * vh;
    }
  }
  return q.tape()->record(std::move(out), {q, k, v},
                          [q, k, v, probs, time, heads, hd, batch, scale](Tape<S>& t, const Matrix<S>& g) {
                            Matrix<S>* dq = t.grad_buffer(q);
                            Matrix<S>* dk = t.grad_buffer(k);
                            Matrix<S>* dv = t.grad_buffer(v);
                            const Matrix<S>& qv = q.value();
                            const Matrix<S>& kv = k.value();
                            const Matrix<S>& vv = v.value();
                            Matrix<S> dp(time, time);
                            for (Index b = 0; b < batch; ++b) {
                              for (Index h = 0; h < heads; ++h) {
                                const Matrix<S>& p = (*probs)[static_cast<size_t>(b * heads + h)];
                                const auto gh = g.block(b * time, h * hd, time, hd);
                                const auto vh = vv.block(b * time, h * hd, time, hd);
                                if (dv) dv->block(b * time, h * hd, time, hd).noalias() += p.transpose() * gh;
                                dp.noalias() = gh * vh.transpose();
                                Eigen::Matrix<S, Eigen::Dynamic, 1> dots = dp.cwiseProduct(p).rowwise().sum();
                                dp = (p.array() * (dp.array().colwise() - dots.array())).matrix() * scale;
                                if (dq) dq->block(b * time, h * hd, time, hd).noalias() +=
                                    dp * kv.block(b * time, h * hd, time, hd);
                                if (dk) dk->block(b * time, h * hd, time, hd).noalias() +=
                                    dp.transpose() * qv.block(b * time, h * hd, time, hd);
                              }
                            }
                          });
}

}  // namespace hsm
