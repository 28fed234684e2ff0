#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hsm/errors.hpp"
#include "hsm/model.hpp"
#include "hsm/ops.hpp"
#include "hsm/tokenizer.hpp"
#include "hsm/training.hpp"

namespace hsm {

// temperature 0 picks the argmax (lowest index on ties); otherwise samples
// from softmax(logits / temperature).
template <typename Derived>
int sample_from_logits(const Eigen::DenseBase<Derived>& logits, double temperature, Rng& rng) {
  if (!(temperature >= 0.0)) throw ParameterError("temperature must be >= 0");
  if (logits.size() == 0) throw DimensionError("cannot sample from empty logits");
  if (temperature == 0.0) return static_cast<int>(argmax_row(logits));
  const auto z = (logits.derived().template cast<double>().array() / temperature).eval();
  const double m = z.maxCoeff();
  if (!std::isfinite(m)) throw NumericError("logits are not finite");
  std::vector<double> w(static_cast<size_t>(z.size()));
  for (Index i = 0; i < z.size(); ++i) w[static_cast<size_t>(i)] = std::exp(z(i) - m);
  return std::discrete_distribution<int>(w.begin(), w.end())(rng);
}

struct GenerateOptions {
  int max_new = 100;
  double temperature = 1.0;
  std::uint64_t seed = 0;
  // Stop early when this token id is produced (-1: never).
  int stop_token = -1;
};

// Token ids of prompt + completion. Once the sequence is longer than the
// context window only the most recent `context` tokens are fed back in.
template <typename S>
std::vector<int> generate_ids(Model<S>& model, std::vector<int> ids, const GenerateOptions& opt) {
  if (ids.empty()) throw ParameterError("prompt encodes to no tokens");
  if (opt.max_new < 0) throw ParameterError("max_new must be >= 0");
  const auto ctx = static_cast<size_t>(model.config().context);
  Rng rng(opt.seed);
  for (int i = 0; i < opt.max_new; ++i) {
    const size_t start = ids.size() > ctx ? ids.size() - ctx : 0;
    const auto window = std::span<const int>(ids).subspan(start);
    const Matrix<S> logits = model.logits(window);
    const int next = sample_from_logits(logits.row(logits.rows() - 1), opt.temperature, rng);
    ids.push_back(next);
    if (next == opt.stop_token) break;
  }
  return ids;
}

// Prompt text followed by the decoded completion. The prompt is echoed
// verbatim; only the generated ids go through the decoder.
template <typename S>
std::string generate(Model<S>& model, const Vocab& vocab, const std::string& prompt, const GenerateOptions& opt) {
  auto ids = encode(prompt, vocab);
  if (ids.empty()) throw ParameterError("prompt encodes to no tokens");
  for (int id : ids) {
    if (id >= model.config().vocab) {
      throw IndexError("token id " + std::to_string(id) + " exceeds model vocabulary " +
                       std::to_string(model.config().vocab));
    }
  }
  const size_t n_prompt = ids.size();
  const auto all = generate_ids(model, std::move(ids), opt);
  return prompt + decode(std::span<const int>(all).subspan(n_prompt), vocab);
}

}  // namespace hsm
