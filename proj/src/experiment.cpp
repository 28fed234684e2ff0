#include "hsm/experiment.hpp"

#include <fstream>
#include <sstream>

#include "hsm/errors.hpp"

namespace hsm {

std::vector<std::string> TrainConfig::violations() const {
  std::vector<std::string> out;
  if (batch_size < 1) out.push_back("batch_size must be >= 1");
  if (!(learning_rate > 0)) out.push_back("learning_rate must be positive");
  if (epochs < 1) out.push_back("epochs must be >= 1");
  if (weight_decay < 0) out.push_back("weight_decay must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) out.push_back("betas must be in [0, 1)");
  if (!(eps > 0)) out.push_back("eps must be positive");
  if (grad_clip && !(*grad_clip > 0)) out.push_back("grad_clip must be positive when set");
  if (!(val_fraction > 0 && val_fraction < 1)) out.push_back("val_fraction must be in (0, 1)");
  if (micro_batch < 1) out.push_back("micro_batch must be >= 1");
  return out;
}

void TrainConfig::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid train config:";
  for (const auto& s : v) msg += "\n  " + s;
  throw ConfigError(msg);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"weight_decay", c.weight_decay},
                     {"betas", {c.beta1, c.beta2}},
                     {"eps", c.eps},
                     {"seed", c.seed},
                     {"grad_clip", c.grad_clip ? nlohmann::json(*c.grad_clip) : nlohmann::json(nullptr)},
                     {"val_fraction", c.val_fraction},
                     {"micro_batch", c.micro_batch}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    TrainConfig d;
    c.batch_size = j.value("batch_size", d.batch_size);
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.epochs = j.value("epochs", d.epochs);
    c.weight_decay = j.value("weight_decay", d.weight_decay);
    if (j.contains("betas")) {
      const auto& b = j.at("betas");
      if (!b.is_array() || b.size() != 2) throw ConfigError("betas must be a two-element array");
      c.beta1 = b[0].get<double>();
      c.beta2 = b[1].get<double>();
    }
    c.eps = j.value("eps", d.eps);
    c.seed = j.value("seed", d.seed);
    if (j.contains("grad_clip")) {
      c.grad_clip = j["grad_clip"].is_null() ? std::nullopt : std::optional<double>(j["grad_clip"].get<double>());
    }
    c.val_fraction = j.value("val_fraction", d.val_fraction);
    c.micro_batch = j.value("micro_batch", d.micro_batch);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed train config: ") + e.what());
  }
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = nlohmann::json{{"name", c.name}, {"model", c.model}, {"train", c.train}};
  if (c.target_params) j["target_params"] = *c.target_params;
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  try {
    c.name = j.value("name", std::string{});
    c.model = j.at("model").get<ModelConfig>();
    c.train = j.contains("train") ? j.at("train").get<TrainConfig>() : TrainConfig{};
    c.target_params = j.contains("target_params") ? std::optional<long long>(j["target_params"].get<long long>())
                                                  : std::nullopt;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed experiment config: ") + e.what());
  }
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  auto cfg = j.get<ExperimentConfig>();
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

void save_experiment(const ExperimentConfig& cfg, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << nlohmann::json(cfg).dump(2) << "\n";
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {
      "gpt_reference",    "hsm_ab",     "hsm_ab_vector",    "hsm_AB",     "hsm_gated_single",   "hsm_gated_double",
      "hsm_fusion",       "hsm_ab_multihead", "hsm_ab_multihead_ext", "hybrid_06", "hybrid_multihead_06"};
  return names;
}

ExperimentConfig make_preset(const std::string& name) {
  constexpr int kLayers = 7;
  constexpr int kHeads = 8;
  const MixerSpec attention{MixerKind::DenseAttention, kHeads, {}};

  ExperimentConfig e;
  e.name = name;
  std::vector<MixerSpec> layers;
  if (name == "gpt_reference") {
    layers.assign(kLayers, attention);
  } else if (name == "hsm_ab") {
    layers = ShiftSchedule::hierarchical(MixerKind::ScalarAB, kLayers).per_layer;
  } else if (name == "hsm_ab_vector") {
    layers = ShiftSchedule::hierarchical(MixerKind::VectorAB, kLayers).per_layer;
  } else if (name == "hsm_AB") {
    layers = ShiftSchedule::hierarchical(MixerKind::MatrixAB, kLayers).per_layer;
  } else if (name == "hsm_gated_single") {
    layers = ShiftSchedule::hierarchical(MixerKind::GatedSingle, kLayers).per_layer;
  } else if (name == "hsm_gated_double") {
    layers = ShiftSchedule::hierarchical(MixerKind::GatedDouble, kLayers, kHeads).per_layer;
  } else if (name == "hsm_fusion") {
    layers = ShiftSchedule::hierarchical(MixerKind::Fusion, kLayers, kHeads).per_layer;
  } else if (name == "hsm_ab_multihead") {
    layers = ShiftSchedule::per_head(MixerKind::ScalarAB, kLayers, kHeads).per_layer;
  } else if (name == "hsm_ab_multihead_ext") {
    layers = ShiftSchedule::rotating(MixerKind::ScalarAB, kLayers, kHeads).per_layer;
  } else if (name == "hybrid_06" || name == "hybrid_multihead_06") {
    const auto hsm = name == "hybrid_06" ? ShiftSchedule::hierarchical(MixerKind::ScalarAB, kLayers)
                                         : ShiftSchedule::per_head(MixerKind::ScalarAB, kLayers, kHeads);
    layers.assign(kLayers, attention);
    layers[0] = hsm.per_layer[0];
    layers[kLayers - 1] = hsm.per_layer[kLayers - 1];
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  e.model.layers = std::move(layers);
  e.target_params = kReferenceParamTarget;
  e.model.ffn_hidden = balance_ffn_dim(e.model, kReferenceParamTarget);
  return e;
}

}  // namespace hsm
