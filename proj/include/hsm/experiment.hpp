#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsm/model_config.hpp"

namespace hsm {

inline constexpr long long kReferenceParamTarget = 5'100'000;

struct TrainConfig {
  int batch_size = 256;
  double learning_rate = 0.002;
  int epochs = 20;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 1234;
  std::optional<double> grad_clip = 1.0;
  double val_fraction = 0.10;
  // Sequences per forward/backward pass; gradients are accumulated over the
  // micro-batches of one batch before the optimizer step.
  int micro_batch = 16;

  std::vector<std::string> violations() const;
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

// A named model + training setup, the unit the CLI runs.
struct ExperimentConfig {
  std::string name;
  ModelConfig model;
  TrainConfig train;
  // When set, ffn_hidden is the balanced width for this parameter budget.
  std::optional<long long> target_params;
};

void to_json(nlohmann::json& j, const ExperimentConfig& cfg);
void from_json(const nlohmann::json& j, ExperimentConfig& cfg);

ExperimentConfig load_experiment(const std::filesystem::path& path);
void save_experiment(const ExperimentConfig& cfg, const std::filesystem::path& path);

// gpt_reference, hsm_ab, hsm_ab_vector, hsm_AB, hsm_gated_single,
// hsm_gated_double, hsm_fusion, hsm_ab_multihead, hsm_ab_multihead_ext,
// hybrid_06, hybrid_multihead_06.
const std::vector<std::string>& preset_names();

// Reference dimensions with the named mixer layout and ffn_hidden balanced
// to kReferenceParamTarget.
ExperimentConfig make_preset(const std::string& name);

}  // namespace hsm
