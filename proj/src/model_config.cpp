#include "hsm/model_config.hpp"

#include <cmath>
#include <limits>

#include "hsm/errors.hpp"

namespace hsm {

std::vector<std::string> ModelConfig::violations() const {
  std::vector<std::string> out;
  if (dim < 1) out.push_back("dim must be >= 1");
  if (context < 1) out.push_back("context must be >= 1");
  if (vocab < 1) out.push_back("vocab must be >= 1");
  if (ffn_hidden < 1) out.push_back("ffn_hidden must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) out.push_back("dropout must be in [0, 1)");
  if (!(ln_eps > 0.0)) out.push_back("ln_eps must be positive");
  if (dim >= 1) {
    for (size_t l = 0; l < layers.size(); ++l) {
      for (const auto& v : layers[l].violations(dim)) out.push_back("layer " + std::to_string(l) + ": " + v);
    }
  }
  return out;
}

void ModelConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid model config:";
  for (const auto& s : v) msg += "\n  " + s;
  throw ConfigError(msg);
}

void to_json(nlohmann::json& j, const ModelConfig& cfg) {
  j = nlohmann::json{{"dim", cfg.dim},           {"context", cfg.context}, {"vocab", cfg.vocab},
                     {"ffn_hidden", cfg.ffn_hidden}, {"dropout", cfg.dropout}, {"ln_eps", cfg.ln_eps},
                     {"layers", cfg.layers}};
}

void from_json(const nlohmann::json& j, ModelConfig& cfg) {
  try {
    ModelConfig d;
    cfg.dim = j.value("dim", d.dim);
    cfg.context = j.value("context", d.context);
    cfg.vocab = j.value("vocab", d.vocab);
    cfg.ffn_hidden = j.value("ffn_hidden", d.ffn_hidden);
    cfg.dropout = j.value("dropout", d.dropout);
    cfg.ln_eps = j.value("ln_eps", d.ln_eps);
    cfg.layers = j.value("layers", std::vector<MixerSpec>{});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

long long params_per_ffn_unit(const ModelConfig& cfg) {
  return static_cast<long long>(cfg.layers.size()) * (2LL * cfg.dim + 1);
}

long long census(const ModelConfig& cfg) {
  const long long d = cfg.dim;
  const long long f = cfg.ffn_hidden;
  long long total = static_cast<long long>(cfg.vocab) * d + static_cast<long long>(cfg.context) * d;
  for (const auto& spec : cfg.layers) {
    total += 2 * (2 * d);                  // two layer norms
    total += mixer_param_count(spec, d);
    total += (d * f + f) + (f * d + d);    // FFN
  }
  total += 2 * d;  // final layer norm
  return total;
}

int balance_ffn_dim(const ModelConfig& cfg, long long target) {
  cfg.validate();
  const long long unit = params_per_ffn_unit(cfg);
  ModelConfig probe = cfg;
  probe.ffn_hidden = 1;
  const long long at_one = census(probe);
  if (unit == 0) {
    if (at_one == target) return cfg.ffn_hidden;
    throw ConfigError("target " + std::to_string(target) + " unreachable: a stack without layers always has " +
                      std::to_string(at_one) + " parameters");
  }
  if (target < at_one) {
    throw ConfigError("target " + std::to_string(target) + " unreachable: achievable range is [" +
                      std::to_string(at_one) + ", inf) in steps of " + std::to_string(unit));
  }
  const long long base = at_one - unit;
  const double exact = static_cast<double>(target - base) / static_cast<double>(unit);
  const long long centre = static_cast<long long>(std::floor(exact));
  long long best = -1;
  long long best_gap = std::numeric_limits<long long>::max();
  for (long long f = centre - 2; f <= centre + 3; ++f) {
    if (f < 1 || f > std::numeric_limits<int>::max()) continue;
    const long long gap = std::llabs(base + unit * f - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = f;
    }
  }
  return static_cast<int>(best);
}

}  // namespace hsm
