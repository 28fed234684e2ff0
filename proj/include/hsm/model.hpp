#pragma once

// Decoder-only language model: token + learned position embeddings, pre-LN
// blocks (mixer, then GELU FFN, each with a residual), final LN and logits
// through the transposed token embedding.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hsm/mixers.hpp"
#include "hsm/model_config.hpp"
#include "hsm/ops.hpp"

namespace hsm {

template <typename S>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    const Index d = cfg_.dim;
    wte_ = &register_param("wte", init_normal<S>(cfg_.vocab, d, kInitStd, rng));
    wpe_ = &register_param("wpe", init_normal<S>(cfg_.context, d, kInitStd, rng));
    for (size_t l = 0; l < cfg_.layers.size(); ++l) {
      const std::string prefix = "layers." + std::to_string(l) + ".";
      Block b;
      b.ln1_gain = &register_param(prefix + "ln1.gain", Matrix<S>::Ones(1, d));
      b.ln1_shift = &register_param(prefix + "ln1.shift", Matrix<S>::Zero(1, d));
      b.mixer = make_mixer<S>(cfg_.layers[l], d, prefix + "mixer.", rng);
      for (auto* p : b.mixer->parameters()) order_.push_back(p);
      b.ln2_gain = &register_param(prefix + "ln2.gain", Matrix<S>::Ones(1, d));
      b.ln2_shift = &register_param(prefix + "ln2.shift", Matrix<S>::Zero(1, d));
      b.fc1_w = &register_param(prefix + "ffn.fc1.weight", init_normal<S>(cfg_.ffn_hidden, d, kInitStd, rng));
      b.fc1_b = &register_param(prefix + "ffn.fc1.bias", Matrix<S>::Zero(1, cfg_.ffn_hidden));
      b.fc2_w = &register_param(prefix + "ffn.fc2.weight", init_normal<S>(d, cfg_.ffn_hidden, kInitStd, rng));
      b.fc2_b = &register_param(prefix + "ffn.fc2.bias", Matrix<S>::Zero(1, d));
      blocks_.push_back(std::move(b));
    }
    lnf_gain_ = &register_param("ln_f.gain", Matrix<S>::Ones(1, d));
    lnf_shift_ = &register_param("ln_f.shift", Matrix<S>::Zero(1, d));
  }

  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }

  // Logits [B*T x vocab] for B sequences of length `time` stored row-major in
  // `tokens`. Dropout is applied only when `train` is set (rng required).
  Var<S> forward(Tape<S>& tape, std::span<const int> tokens, Index time, bool train, Rng* rng = nullptr) {
    if (time < 1 || time > cfg_.context) {
      throw DimensionError("sequence length " + std::to_string(time) + " outside [1, " +
                           std::to_string(cfg_.context) + "]");
    }
    if (tokens.empty() || static_cast<Index>(tokens.size()) % time != 0) {
      throw DimensionError(std::to_string(tokens.size()) + " tokens is not a whole number of length-" +
                           std::to_string(time) + " sequences");
    }
    if (train && cfg_.dropout > 0.0 && rng == nullptr) throw ParameterError("train-mode forward needs an rng");
    const double p = train ? cfg_.dropout : 0.0;
    auto drop = [&](const Var<S>& v) { return p > 0.0 ? dropout(v, p, *rng) : v; };
    const S eps = static_cast<S>(cfg_.ln_eps);

    std::vector<int> positions(tokens.size());
    for (size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<int>(i % static_cast<size_t>(time));

    const Var<S> wte = tape.parameter(*wte_);
    Var<S> h = add(gather_rows(wte, tokens), gather_rows(tape.parameter(*wpe_), std::span<const int>(positions)));
    h = drop(h);
    for (auto& b : blocks_) {
      const Var<S> a = layer_norm(h, tape.parameter(*b.ln1_gain), tape.parameter(*b.ln1_shift), eps);
      h = add(h, drop(b.mixer->forward(tape, a, time)));
      const Var<S> f = layer_norm(h, tape.parameter(*b.ln2_gain), tape.parameter(*b.ln2_shift), eps);
      const Var<S> hidden = gelu(linear(f, tape.parameter(*b.fc1_w), tape.parameter(*b.fc1_b)));
      h = add(h, drop(linear(hidden, tape.parameter(*b.fc2_w), tape.parameter(*b.fc2_b))));
    }
    h = layer_norm(h, tape.parameter(*lnf_gain_), tape.parameter(*lnf_shift_), eps);
    return matmul_nt(h, wte);
  }

  // Eval-mode logits [T x vocab] for one sequence.
  Matrix<S> logits(std::span<const int> tokens) {
    Tape<S> tape(false);
    return forward(tape, tokens, static_cast<Index>(tokens.size()), false).value();
  }

  // Every trainable tensor once, in a fixed order (the checkpoint order).
  const std::vector<Parameter<S>*>& parameters() const { return order_; }

  Parameter<S>* find(const std::string& name) const {
    for (auto* p : order_) {
      if (p->name == name) return p;
    }
    return nullptr;
  }

  long long count_params() const {
    long long n = 0;
    for (const auto* p : order_) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : order_) p->zero_grad();
  }

  Parameter<S>& token_embedding() { return *wte_; }
  Mixer<S>& mixer(size_t layer) { return *blocks_.at(layer).mixer; }
  size_t num_layers() const { return blocks_.size(); }

 private:
  struct Block {
    Parameter<S>* ln1_gain = nullptr;
    Parameter<S>* ln1_shift = nullptr;
    std::unique_ptr<Mixer<S>> mixer;
    Parameter<S>* ln2_gain = nullptr;
    Parameter<S>* ln2_shift = nullptr;
    Parameter<S>* fc1_w = nullptr;
    Parameter<S>* fc1_b = nullptr;
    Parameter<S>* fc2_w = nullptr;
    Parameter<S>* fc2_b = nullptr;
  };

  Parameter<S>& register_param(const std::string& name, Matrix<S> value) {
    const bool decay = value.rows() > 1 && value.cols() > 1;
    owned_.push_back(std::make_unique<Parameter<S>>(name, std::move(value), decay));
    order_.push_back(owned_.back().get());
    return *owned_.back();
  }

  ModelConfig cfg_;
  std::vector<std::unique_ptr<Parameter<S>>> owned_;
  std::vector<Parameter<S>*> order_;
  std::vector<Block> blocks_;
  Parameter<S>* wte_ = nullptr;
  Parameter<S>* wpe_ = nullptr;
  Parameter<S>* lnf_gain_ = nullptr;
  Parameter<S>* lnf_shift_ = nullptr;
};

template <typename S>
Model<S> build_model(const ModelConfig& cfg, std::uint64_t seed) {
  return Model<S>(cfg, seed);
}

template <typename S>
long long count_params(const Model<S>& model) {
  return model.count_params();
}

}  // namespace hsm
