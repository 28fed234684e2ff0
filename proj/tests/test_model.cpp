#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "hsm/checkpoint.hpp"
#include "hsm/experiment.hpp"
#include "hsm/model.hpp"
#include "test_util.hpp"

namespace hsm {
namespace {

using M = Matrix<double>;

ModelConfig tiny_config(std::vector<MixerSpec> layers, int ffn = 6) {
  ModelConfig cfg;
  cfg.dim = 8;
  cfg.context = 6;
  cfg.vocab = 13;
  cfg.ffn_hidden = ffn;
  cfg.dropout = 0.0;
  cfg.layers = std::move(layers);
  return cfg;
}

ModelConfig reference_gpt() {
  ModelConfig cfg;
  cfg.layers.assign(7, MixerSpec{MixerKind::DenseAttention, 8, {}});
  return cfg;
}

std::vector<int> tokens_for(const ModelConfig& cfg, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<int> t(static_cast<size_t>(n));
  for (auto& v : t) v = static_cast<int>(rng() % static_cast<unsigned>(cfg.vocab));
  return t;
}

TEST(BuildModel, SameSeedGivesIdenticalParameters) {
  const auto cfg = tiny_config({{MixerKind::DenseAttention, 2, {}}, {MixerKind::Fusion, 2, {1, 2}}});
  Model<double> a(cfg, 9), b(cfg, 9), c(cfg, 10);
  bool any_diff = false;
  for (size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i]->value, b.parameters()[i]->value);
    any_diff = any_diff || a.parameters()[i]->value != c.parameters()[i]->value;
  }
  EXPECT_TRUE(any_diff);
}

TEST(BuildModel, InvalidConfigListsEveryViolation) {
  auto cfg = tiny_config({{MixerKind::DenseAttention, 3, {}}});
  cfg.vocab = 0;
  try {
    Model<double> m(cfg, 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("vocab"), std::string::npos) << msg;
    EXPECT_NE(msg.find("heads"), std::string::npos) << msg;
  }
}

TEST(BuildModel, FloatAndDoubleStartFromTheSameDraws) {
  const auto cfg = tiny_config({{MixerKind::MatrixAB, 1, {1}}});
  Model<double> d(cfg, 4);
  Model<float> f(cfg, 4);
  for (size_t i = 0; i < d.parameters().size(); ++i) {
    EXPECT_EQ(d.parameters()[i]->value.cast<float>(), f.parameters()[i]->value);
  }
}

TEST(Census, ReferenceGpt) {
  const auto cfg = reference_gpt();
  EXPECT_EQ(census(cfg), 5'003'008);
  // Within 2% of the 5.1 M reported for the reference configuration.
  EXPECT_NEAR(static_cast<double>(census(cfg)), 5.1e6, 0.02 * 5.1e6);
}

TEST(Census, EmptyStackByHand) {
  ModelConfig cfg;
  cfg.dim = 4;
  cfg.context = 3;
  cfg.vocab = 10;
  cfg.ffn_hidden = 1;
  cfg.layers = {};
  // 10*4 token + 3*4 position + 2*4 final layer norm.
  EXPECT_EQ(census(cfg), 60);
  Model<double> m(cfg, 1);
  EXPECT_EQ(m.count_params(), 60);
  const auto logits = m.logits(std::vector<int>{1, 2, 3});
  EXPECT_EQ(logits.rows(), 3);
  EXPECT_EQ(logits.cols(), 10);
  EXPECT_TRUE(all_finite(logits));
}

TEST(Census, OneScalarLayerAddsMixerFfnAndNorms) {
  ModelConfig cfg;
  cfg.dim = 4;
  cfg.context = 3;
  cfg.vocab = 10;
  cfg.ffn_hidden = 5;
  const long long base = census(cfg);
  cfg.layers = {{MixerKind::ScalarAB, 1, {1}}};
  // a, b + FFN (4*5 + 5 + 5*4 + 4) + two layer norms (4 * 4).
  EXPECT_EQ(census(cfg) - base, 67);
}

TEST(Census, MatchesInstantiatedModels) {
  for (const auto& name : preset_names()) {
    auto cfg = make_preset(name).model;
    cfg.vocab = 300;
    cfg.context = 16;
    Model<float> m(cfg, 1);
    EXPECT_EQ(m.count_params(), census(cfg)) << name;
    EXPECT_EQ(count_params(m), m.count_params());
  }
}

TEST(BalanceFfn, FixedPointAndDirection) {
  auto cfg = reference_gpt();
  EXPECT_EQ(balance_ffn_dim(cfg, census(cfg)), 512);
  auto hsm = cfg;
  hsm.layers.assign(7, MixerSpec{MixerKind::ScalarAB, 1, {1}});
  EXPECT_GT(balance_ffn_dim(hsm, census(cfg)), 512);
}

TEST(BalanceFfn, UnreachableTargetReportsRange) {
  auto cfg = reference_gpt();
  try {
    balance_ffn_dim(cfg, 1000);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("achievable range"), std::string::npos) << e.what();
  }
}

TEST(Presets, BalancedCountsAndWidths) {
  struct Want {
    const char* name;
    int ffn;
    long long params;
  };
  // Closed-form census scan over ffn_hidden for each layer assignment.
  const Want want[] = {
      {"gpt_reference", 539, 5'099'965},   {"hsm_ab", 1052, 5'099'986},         {"hsm_ab_vector", 1051, 5'099'965},
      {"hsm_AB", 796, 5'099'972},          {"hsm_gated_single", 796, 5'101'764}, {"hsm_gated_double", 1020, 5'101'540},
      {"hsm_fusion", 1003, 5'099'629},     {"hsm_ab_multihead", 1052, 5'100'084}, {"hsm_ab_multihead_ext", 1052, 5'100'084},
      {"hybrid_06", 686, 5'101'510},       {"hybrid_multihead_06", 686, 5'101'538},
  };
  ASSERT_EQ(preset_names().size(), std::size(want));
  for (const auto& w : want) {
    const auto p = make_preset(w.name);
    EXPECT_EQ(p.model.ffn_hidden, w.ffn) << w.name;
    EXPECT_EQ(census(p.model), w.params) << w.name;
    EXPECT_EQ(p.model.layers.size(), 7u) << w.name;
  }
  EXPECT_THROW(make_preset("gpt_huge"), ConfigError);
}

TEST(Presets, LayerAssignments) {
  const auto hybrid = make_preset("hybrid_06").model;
  EXPECT_EQ(hybrid.layers[0].kind, MixerKind::ScalarAB);
  EXPECT_EQ(hybrid.layers[6].kind, MixerKind::ScalarAB);
  for (int l = 1; l < 6; ++l) EXPECT_EQ(hybrid.layers[l].kind, MixerKind::DenseAttention);
  EXPECT_EQ(hybrid.layers[6].shifts, std::vector<int>{64});

  const auto ext = make_preset("hsm_ab_multihead_ext").model;
  EXPECT_EQ(ext.layers[1].shifts, (std::vector<int>{2, 4, 8, 16, 32, 64, 128, 1}));
  const auto mh = make_preset("hsm_ab_multihead").model;
  EXPECT_EQ(mh.layers[1].shifts, (std::vector<int>{1, 2, 4, 8, 16, 32, 64, 128}));
}

TEST(ExperimentConfig, JsonRoundTripAndValidation) {
  test::TempDir dir;
  auto p = make_preset("hsm_gated_double");
  p.train.grad_clip.reset();
  save_experiment(p, dir / "cfg.json");
  const auto back = load_experiment(dir / "cfg.json");
  EXPECT_EQ(back.model, p.model);
  EXPECT_EQ(back.train, p.train);
  EXPECT_EQ(back.name, p.name);

  test::write_file(dir / "bad.json", R"({"name":"x","model":{"dim":256,"context":128,"vocab":5000,"ffn_hidden":0,
    "layers":[{"kind":"scalar_ab","heads":1,"shifts":[1]}]},"train":{"batch_size":0}})");
  EXPECT_THROW(load_experiment(dir / "bad.json"), ConfigError);
}

TEST(Forward, ShapeDeterminismAndErrors) {
  const auto cfg = tiny_config({{MixerKind::DenseAttention, 2, {}}, {MixerKind::ScalarAB, 1, {2}}});
  Model<double> m(cfg, 3);
  const auto tokens = tokens_for(cfg, 2 * 5, 1);
  Tape<double> t1(false), t2(false);
  const M a = m.forward(t1, tokens, 5, false).value();
  const M b = m.forward(t2, tokens, 5, false).value();
  EXPECT_EQ(a.rows(), 10);
  EXPECT_EQ(a.cols(), cfg.vocab);
  EXPECT_EQ(a, b);

  Tape<double> t3(false);
  EXPECT_THROW(m.forward(t3, tokens_for(cfg, 7, 1), 7, false), DimensionError);
  std::vector<int> bad = tokens;
  bad[3] = cfg.vocab;
  EXPECT_THROW(m.forward(t3, bad, 5, false), IndexError);
}

TEST(Forward, BatchedRowsEqualSeparateSequences) {
  const auto cfg = tiny_config({{MixerKind::DenseAttention, 2, {}}, {MixerKind::GatedDouble, 2, {1, 2}}});
  Model<double> m(cfg, 3);
  const auto tokens = tokens_for(cfg, 3 * 6, 2);
  Tape<double> t(false);
  const M all = m.forward(t, tokens, 6, false).value();
  for (int s = 0; s < 3; ++s) {
    const M one = m.logits(std::span<const int>(tokens).subspan(static_cast<size_t>(s) * 6, 6));
    EXPECT_LT((all.middleRows(s * 6, 6) - one).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Forward, EmbeddingIsTiedToOutput) {
  auto cfg = tiny_config({});
  Model<double> m(cfg, 3);
  EXPECT_EQ(m.find("lm_head.weight"), nullptr);
  // Changing one embedding row changes that token's logit column everywhere.
  const std::vector<int> tokens{1, 2, 3};
  const M before = m.logits(tokens);
  m.token_embedding().value.row(7).setConstant(0.5);
  const M after = m.logits(tokens);
  EXPECT_NE(before.col(7), after.col(7));
  EXPECT_EQ(before.col(6), after.col(6));
}

TEST(Forward, TrainModeNeedsRngAndDropsUnits) {
  auto cfg = tiny_config({{MixerKind::ScalarAB, 1, {1}}});
  cfg.dropout = 0.5;
  Model<double> m(cfg, 3);
  const auto tokens = tokens_for(cfg, 6, 3);
  Tape<double> t(false);
  EXPECT_THROW(m.forward(t, tokens, 6, true), ParameterError);
  Rng rng(1);
  const M train = m.forward(t, tokens, 6, true, &rng).value();
  EXPECT_NE(train, m.logits(tokens));
}

class CheckpointTest : public ::testing::Test {
 protected:
  test::TempDir dir;
  ModelConfig cfg = tiny_config({{MixerKind::ScalarAB, 1, {1}}, {MixerKind::DenseAttention, 2, {}}});
};

TEST_F(CheckpointTest, RoundTripPreservesForwardAndState) {
  Model<double> m(cfg, 5);
  AdamWState<double> st = make_adamw_state(std::span<Parameter<double>* const>(m.parameters()));
  st.step = 3;
  st.m[0].setConstant(0.25);
  const nlohmann::json meta{{"epoch", 4}};
  save_checkpoint(m, dir / "a.ckpt", meta, &st);

  nlohmann::json meta_back;
  std::optional<AdamWState<double>> st_back;
  Model<double> loaded = load_checkpoint<double>(dir / "a.ckpt", &meta_back, &st_back);
  const auto tokens = tokens_for(cfg, 6, 4);
  EXPECT_EQ(loaded.logits(tokens), m.logits(tokens));
  EXPECT_EQ(meta_back, meta);
  ASSERT_TRUE(st_back.has_value());
  EXPECT_EQ(st_back->step, 3);
  EXPECT_EQ(st_back->m[0], st.m[0]);
  EXPECT_EQ(st_back->v[1], st.v[1]);

  Model<double> other(cfg, 99);
  AdamWState<double> st2;
  EXPECT_EQ(load_checkpoint_into(other, dir / "a.ckpt", &st2), meta);
  EXPECT_EQ(other.logits(tokens), m.logits(tokens));
}

TEST_F(CheckpointTest, VersionMismatch) {
  Model<double> m(cfg, 5);
  save_checkpoint(m, dir / "a.ckpt");
  std::string bytes = test::read_file(dir / "a.ckpt");
  bytes[8] = 7;  // version field follows the 8-byte magic
  test::write_file(dir / "a.ckpt", bytes);
  EXPECT_THROW(load_checkpoint<double>(dir / "a.ckpt"), VersionMismatchError);
}

TEST_F(CheckpointTest, EditedDimIsShapeMismatch) {
  Model<double> m(cfg, 5);
  save_checkpoint(m, dir / "a.ckpt");
  std::string bytes = test::read_file(dir / "a.ckpt");
  const auto at = bytes.find("\"dim\":8");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 6] = '6';
  test::write_file(dir / "a.ckpt", bytes);
  EXPECT_THROW(load_checkpoint<double>(dir / "a.ckpt"), ShapeMismatchError);
}

TEST_F(CheckpointTest, TruncatedFile) {
  Model<double> m(cfg, 5);
  save_checkpoint(m, dir / "a.ckpt");
  const std::string bytes = test::read_file(dir / "a.ckpt");
  for (size_t keep : {size_t{4}, size_t{30}, bytes.size() / 2, bytes.size() - 3}) {
    test::write_file(dir / "cut.ckpt", bytes.substr(0, keep));
    EXPECT_THROW(load_checkpoint<double>(dir / "cut.ckpt"), TruncatedFileError) << keep;
  }
}

TEST_F(CheckpointTest, ConfigMismatchAcrossMixerKinds) {
  Model<double> hsm_model(cfg, 5);
  save_checkpoint(hsm_model, dir / "a.ckpt");
  auto dense_cfg = cfg;
  dense_cfg.layers[0] = {MixerKind::DenseAttention, 2, {}};
  Model<double> dense(dense_cfg, 5);
  EXPECT_THROW(load_checkpoint_into(dense, dir / "a.ckpt"), ConfigMismatchError);
}

TEST_F(CheckpointTest, CrossPrecisionLoadAndMissingFile) {
  Model<double> m(cfg, 5);
  save_checkpoint(m, dir / "a.ckpt");
  Model<float> f = load_checkpoint<float>(dir / "a.ckpt");
  for (size_t i = 0; i < m.parameters().size(); ++i) {
    EXPECT_EQ(f.parameters()[i]->value, m.parameters()[i]->value.cast<float>());
  }
  EXPECT_THROW(load_checkpoint<double>(dir / "missing.ckpt"), IoError);
  test::write_file(dir / "junk.ckpt", "definitely not a checkpoint file");
  EXPECT_THROW(load_checkpoint<double>(dir / "junk.ckpt"), CheckpointError);
}

}  // namespace
}  // namespace hsm
