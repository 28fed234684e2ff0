#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsm/mixer_spec.hpp"

namespace hsm {

// Decoder stack description. Reference values: dim 256, context 128, vocab
// 5000, ffn_hidden 512, seven layers, eight attention heads.
struct ModelConfig {
  int dim = 256;
  int context = 128;
  int vocab = 5000;
  int ffn_hidden = 512;
  double dropout = 0.1;
  double ln_eps = 1e-5;
  std::vector<MixerSpec> layers;

  std::vector<std::string> violations() const;
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// Closed-form count of trainable parameters (tied embedding counted once).
long long census(const ModelConfig& cfg);

// Parameters added per extra FFN hidden unit across the whole stack.
long long params_per_ffn_unit(const ModelConfig& cfg);

// The ffn_hidden whose census is closest to `target` (ties go to the smaller
// width). Throws ConfigError when the target cannot be met with ffn_hidden >= 1.
int balance_ffn_dim(const ModelConfig& cfg, long long target);

}  // namespace hsm
