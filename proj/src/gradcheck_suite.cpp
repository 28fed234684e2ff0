#include "hsm/gradcheck_suite.hpp"

#include <functional>
#include <memory>
#include <utility>

#include "hsm/errors.hpp"
#include "hsm/gradcheck.hpp"
#include "hsm/mixers.hpp"
#include "hsm/model.hpp"
#include "hsm/ops.hpp"

namespace hsm {

namespace {

using S = double;
using M = Matrix<S>;
using P = Parameter<S>;

constexpr Index kTime = 6;
constexpr Index kBatch = 2;
constexpr Index kDim = 8;

// Identity forward, gradient scaled by 1.01 on the way back.
Var<S> faulty_identity(const Var<S>& x) {
  return x.tape()->record(x.value(), {x}, [x](Tape<S>& t, const M& g) { t.accumulate(x, S(1.01) * g); });
}

struct Case {
  std::string name;
  // Builds the parameters and returns the scalar loss reading them.
  std::function<std::pair<std::vector<std::shared_ptr<P>>, std::function<Var<S>(Tape<S>&)>>(bool fault)> build;
};

Var<S> maybe_fault(const Var<S>& v, bool fault) { return fault ? faulty_identity(v) : v; }

std::shared_ptr<P> random_param(const std::string& name, Index rows, Index cols, Rng& rng, double stdev = 1.0) {
  return std::make_shared<P>(name, init_normal<S>(rows, cols, stdev, rng));
}

// sum(y ⊙ R): every output element gets an independent unit-scale weight.
Var<S> weighted_sum(const Var<S>& y, const M& r) {
  Tape<S>& t = *y.tape();
  return sum(mul(y, t.constant(r)));
}

// Unary or n-ary op check: inputs become parameters, loss = weighted sum.
Case op_case(std::string name, std::vector<std::pair<Index, Index>> shapes,
             std::function<Var<S>(Tape<S>&, const std::vector<Var<S>>&)> op, std::uint64_t seed) {
  return {std::move(name), [shapes, op, seed](bool fault) {
            Rng rng(seed);
            std::vector<std::shared_ptr<P>> ps;
            for (size_t i = 0; i < shapes.size(); ++i) {
              ps.push_back(random_param("in" + std::to_string(i), shapes[i].first, shapes[i].second, rng));
            }
            auto r = std::make_shared<M>();
            auto fn = [ps, op, r, fault, seed](Tape<S>& t) {
              std::vector<Var<S>> in;
              for (auto& p : ps) in.push_back(t.parameter(*p));
              Var<S> y = maybe_fault(op(t, in), fault);
              if (y.rows() == 1 && y.cols() == 1) return y;
              if (r->size() == 0) {
                Rng rr(seed + 1);
                *r = init_normal<S>(y.rows(), y.cols(), 1.0, rr);
              }
              return weighted_sum(y, *r);
            };
            return std::make_pair(ps, std::function<Var<S>(Tape<S>&)>(fn));
          }};
}

std::vector<Case> op_cases() {
  std::vector<Case> cs;
  const Index n = kBatch * kTime;
  cs.push_back(op_case("op/matmul", {{4, 5}, {5, 3}}, [](Tape<S>&, const auto& v) { return matmul(v[0], v[1]); }, 11));
  cs.push_back(op_case("op/matmul_nt", {{4, 5}, {3, 5}}, [](Tape<S>&, const auto& v) { return matmul_nt(v[0], v[1]); }, 12));
  cs.push_back(op_case("op/mul", {{4, 5}, {4, 5}}, [](Tape<S>&, const auto& v) { return mul(v[0], v[1]); }, 13));
  cs.push_back(op_case("op/add_row", {{4, 5}, {1, 5}}, [](Tape<S>&, const auto& v) { return add_row(v[0], v[1]); }, 14));
  cs.push_back(op_case("op/mul_row", {{4, 5}, {1, 5}}, [](Tape<S>&, const auto& v) { return mul_row(v[0], v[1]); }, 15));
  cs.push_back(op_case("op/scale_by", {{4, 5}, {1, 1}}, [](Tape<S>&, const auto& v) { return scale_by(v[0], v[1]); }, 16));
  cs.push_back(op_case("op/relu", {{4, 5}}, [](Tape<S>&, const auto& v) { return relu(v[0]); }, 17));
  cs.push_back(op_case("op/tanh", {{4, 5}}, [](Tape<S>&, const auto& v) { return hsm::tanh(v[0]); }, 18));
  cs.push_back(op_case("op/gelu", {{4, 5}}, [](Tape<S>&, const auto& v) { return gelu(v[0]); }, 19));
  cs.push_back(op_case("op/softmax_rows", {{4, 4}}, [](Tape<S>&, const auto& v) {
    BoolMatrix mask = BoolMatrix::Constant(4, 4, true);
    for (Index i = 0; i < 4; ++i) {
      for (Index j = i + 1; j < 4; ++j) mask(i, j) = false;
    }
    return softmax_rows(v[0], mask);
  }, 20));
  cs.push_back(op_case("op/layer_norm", {{4, 6}, {1, 6}, {1, 6}}, [](Tape<S>&, const auto& v) {
    return layer_norm(v[0], v[1], v[2], S(1e-5));
  }, 21));
  cs.push_back(op_case("op/cross_entropy", {{5, 7}}, [](Tape<S>&, const auto& v) {
    static const std::vector<int> targets{3, 0, kIgnoreTarget, 6, 2};
    return cross_entropy(v[0], std::span<const int>(targets));
  }, 22));
  cs.push_back(op_case("op/shift_rows", {{n, 3}}, [](Tape<S>&, const auto& v) { return shift_rows(v[0], 2, kTime); }, 23));
  cs.push_back(op_case("op/slice_concat", {{4, 6}, {4, 2}}, [](Tape<S>&, const auto& v) {
    return concat_cols(slice_cols(v[0], 1, 3), v[1]);
  }, 24));
  cs.push_back(op_case("op/gather_rows", {{7, 3}}, [](Tape<S>&, const auto& v) {
    static const std::vector<int> ids{1, 4, 4, 0, 6, 1};
    return gather_rows(v[0], std::span<const int>(ids));
  }, 25));
  cs.push_back(op_case("op/dropout", {{4, 5}}, [](Tape<S>&, const auto& v) {
    Rng rng(99);
    return dropout(v[0], 0.3, rng);
  }, 26));
  cs.push_back(op_case("op/causal_attention", {{n, kDim}, {n, kDim}, {n, kDim}}, [](Tape<S>&, const auto& v) {
    return causal_attention(v[0], v[1], v[2], kTime, 2);
  }, 27));
  return cs;
}

struct NamedSpec {
  std::string name;
  MixerSpec spec;
};

// The seven HSM variants and dense attention, with shifts chosen so that both
// in-range and zero-padded positions are exercised at T = 6.
std::vector<NamedSpec> mixer_specs() {
  return {
      {"dense_attention", {MixerKind::DenseAttention, 2, {}}},
      {"scalar_ab", {MixerKind::ScalarAB, 1, {2}}},
      {"vector_ab", {MixerKind::VectorAB, 1, {1}}},
      {"matrix_ab", {MixerKind::MatrixAB, 1, {3}}},
      {"gated_single", {MixerKind::GatedSingle, 1, {1}}},
      {"gated_double", {MixerKind::GatedDouble, 2, {1, 4}}},
      {"fusion", {MixerKind::Fusion, 2, {2, 1}}},
      {"scalar_ab_multihead", {MixerKind::ScalarAB, 4, {1, 2, 4, 8}}},
  };
}

void redraw(std::span<P* const> params, Rng& rng, double stdev) {
  for (auto* p : params) p->value = init_normal<S>(p->value.rows(), p->value.cols(), stdev, rng);
}

Case mixer_case(const NamedSpec& ns) {
  return {"mixer/" + ns.name, [ns](bool fault) {
            Rng rng(31);
            auto mixer = std::shared_ptr<Mixer<S>>(make_mixer<S>(ns.spec, kDim, "", rng));
            redraw(mixer->parameters(), rng, 0.5);
            auto x = random_param("input", kBatch * kTime, kDim, rng);
            auto r = std::make_shared<M>(init_normal<S>(kBatch * kTime, kDim, 1.0, rng));
            // Keep the mixer alive through the aliasing shared_ptrs below.
            std::vector<std::shared_ptr<P>> ps{x};
            for (auto* p : mixer->parameters()) ps.push_back(std::shared_ptr<P>(mixer, p));
            auto fn = [mixer, x, r, fault](Tape<S>& t) {
              return weighted_sum(maybe_fault(mixer->forward(t, t.parameter(*x), kTime), fault), *r);
            };
            return std::make_pair(ps, std::function<Var<S>(Tape<S>&)>(fn));
          }};
}

ModelConfig micro_config(const MixerSpec& spec) {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.context = 8;
  cfg.vocab = 11;
  cfg.ffn_hidden = 12;
  cfg.dropout = 0.0;
  MixerSpec second = spec;
  if (!second.shifts.empty()) {
    for (auto& s : second.shifts) s *= 2;
  }
  cfg.layers = {spec, second};
  return cfg;
}

Case model_case(const std::string& name, const ModelConfig& cfg) {
  return {"model/" + name, [cfg](bool fault) {
            auto model = std::make_shared<Model<S>>(cfg, 5);
            Rng rng(41);
            redraw(model->parameters(), rng, 0.3);
            auto tokens = std::make_shared<std::vector<int>>();
            auto targets = std::make_shared<std::vector<int>>();
            for (int i = 0; i < 2 * cfg.context; ++i) {
              tokens->push_back(static_cast<int>(rng() % static_cast<unsigned>(cfg.vocab)));
              targets->push_back(static_cast<int>(rng() % static_cast<unsigned>(cfg.vocab)));
            }
            targets->back() = kIgnoreTarget;
            std::vector<std::shared_ptr<P>> ps;
            for (auto* p : model->parameters()) ps.push_back(std::shared_ptr<P>(model, p));
            auto fn = [model, tokens, targets, fault, cfg](Tape<S>& t) {
              const auto logits = model->forward(t, *tokens, cfg.context, false);
              return cross_entropy(maybe_fault(logits, fault), std::span<const int>(*targets));
            };
            return std::make_pair(ps, std::function<Var<S>(Tape<S>&)>(fn));
          }};
}

std::vector<Case> all_cases() {
  auto cs = op_cases();
  for (const auto& ns : mixer_specs()) cs.push_back(mixer_case(ns));
  for (const auto& ns : mixer_specs()) cs.push_back(model_case(ns.name, micro_config(ns.spec)));
  ModelConfig hybrid = micro_config({MixerKind::ScalarAB, 1, {1}});
  hybrid.layers[1] = {MixerKind::DenseAttention, 2, {}};
  cs.push_back(model_case("hybrid", hybrid));
  return cs;
}

bool selected(const std::string& entry, const std::string& target) {
  if (target == "all" || target == entry) return true;
  if (target == "ops") return entry.rfind("op/", 0) == 0;
  if (target == "mixers") return entry.rfind("mixer/", 0) == 0;
  if (target == "models") return entry.rfind("model/", 0) == 0;
  return entry == "mixer/" + target || entry == "model/" + target;
}

}  // namespace

std::vector<std::string> gradcheck_entry_names() {
  std::vector<std::string> out;
  for (const auto& c : all_cases()) out.push_back(c.name);
  return out;
}

std::vector<GradCheckEntry> run_gradcheck(const std::string& target, const GradCheckSuiteOptions& opt) {
  std::vector<GradCheckEntry> out;
  for (const auto& c : all_cases()) {
    if (!selected(c.name, target)) continue;
    auto [owned, loss] = c.build(opt.inject_fault);
    std::vector<P*> params;
    for (auto& p : owned) params.push_back(p.get());
    const auto r = check_parameter_gradients<S>(loss, params);
    out.push_back({c.name, r.max_rel_error, r.worst_parameter, static_cast<long long>(r.worst_index),
                   static_cast<long long>(r.checked), r.max_rel_error < opt.tolerance});
  }
  if (out.empty()) throw UsageError("no gradient check matches '" + target + "'");
  return out;
}

}  // namespace hsm
