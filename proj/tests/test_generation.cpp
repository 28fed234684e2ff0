#include <cmath>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "hsm/generation.hpp"
#include "hsm/tokenizer.hpp"
#include "hsm/toy_corpus.hpp"

namespace hsm {
namespace {

using V = Eigen::RowVectorXd;

TEST(Sample, ZeroTemperatureIsArgmax) {
  Rng rng(1);
  EXPECT_EQ(sample_from_logits(V{{1.0, 5.0, 2.0}}, 0.0, rng), 1);
  EXPECT_EQ(sample_from_logits(V{{3.0, 7.0, 7.0, 1.0}}, 0.0, rng), 1);
}

TEST(Sample, ThreeToOneOddsWithinThreeSigma) {
  Rng rng(2);
  const V logits{{std::log(3.0), 0.0}};
  const int n = 10000;
  int zeros = 0;
  for (int i = 0; i < n; ++i) zeros += sample_from_logits(logits, 1.0, rng) == 0 ? 1 : 0;
  const double sigma = std::sqrt(n * 0.75 * 0.25);
  EXPECT_NEAR(zeros, 0.75 * n, 3.0 * sigma);
}

TEST(Sample, HighTemperatureIsUniform) {
  Rng rng(3);
  const V logits{{0.0, 1.0, 2.0, 3.0, 4.0}};
  const int n = 10000;
  std::vector<int> counts(5, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<size_t>(sample_from_logits(logits, 1e6, rng))];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - n / 5.0) * (c - n / 5.0) / (n / 5.0);
  // 99.9th percentile of chi-square with 4 degrees of freedom.
  EXPECT_LT(chi2, 18.467);
}

TEST(Sample, InvalidInputs) {
  Rng rng(4);
  EXPECT_THROW(sample_from_logits(V{{1.0, 2.0}}, -0.5, rng), ParameterError);
  EXPECT_THROW(sample_from_logits(V(0), 1.0, rng), DimensionError);
}

ModelConfig gen_config(int vocab) {
  ModelConfig cfg;
  cfg.dim = 32;
  cfg.context = 16;
  cfg.vocab = vocab;
  cfg.ffn_hidden = 64;
  cfg.dropout = 0.0;
  cfg.layers = {{MixerKind::DenseAttention, 2, {}}, {MixerKind::DenseAttention, 2, {}}};
  return cfg;
}

class GenerateTest : public ::testing::Test {
 protected:
  void SetUp() override {
    story = make_toy_stories({.stories = 1, .min_sentences = 4, .max_sentences = 4, .seed = 5}).front();
    const std::vector<std::string> corpus{story};
    vocab = train_bpe(corpus, 320).vocab;
  }
  std::string story;
  Vocab vocab;
};

TEST_F(GenerateTest, ZeroNewTokensReturnsPrompt) {
  Model<float> m(gen_config(vocab.size()), 1);
  EXPECT_EQ(generate(m, vocab, "Once upon", {.max_new = 0}), "Once upon");
}

TEST_F(GenerateTest, DeterministicPerSeedAndPromptEchoed) {
  Model<float> m(gen_config(vocab.size()), 1);
  const GenerateOptions opt{.max_new = 40, .temperature = 1.0, .seed = 9};
  const std::string a = generate(m, vocab, "Once upon a time", opt);
  EXPECT_EQ(a, generate(m, vocab, "Once upon a time", opt));
  EXPECT_EQ(a.rfind("Once upon a time", 0), 0u);
  auto other = opt;
  other.seed = 10;
  EXPECT_NE(a, generate(m, vocab, "Once upon a time", other));
}

TEST_F(GenerateTest, SlidesPastTheContextWindow) {
  Model<float> m(gen_config(vocab.size()), 1);
  const auto ids = generate_ids(m, encode("The", vocab), {.max_new = 50, .temperature = 0.8, .seed = 1});
  EXPECT_EQ(ids.size(), encode("The", vocab).size() + 50);
}

TEST_F(GenerateTest, StopTokenEndsGeneration) {
  Model<float> m(gen_config(vocab.size()), 1);
  const auto prompt = encode("The", vocab);
  const auto greedy = generate_ids(m, prompt, {.max_new = 5, .temperature = 0.0});
  const int first = greedy[prompt.size()];
  const auto stopped = generate_ids(m, prompt, {.max_new = 5, .temperature = 0.0, .stop_token = first});
  EXPECT_EQ(stopped.size(), prompt.size() + 1);
}

TEST_F(GenerateTest, EmptyPromptAndForeignIdsAreRejected) {
  Model<float> m(gen_config(vocab.size()), 1);
  EXPECT_THROW(generate(m, vocab, "", {}), ParameterError);
  Model<float> small(gen_config(258), 1);
  EXPECT_THROW(generate(small, vocab, story.substr(0, 40), {}), IndexError);
}

TEST_F(GenerateTest, MemorisedStoryIsReproducedVerbatim) {
  const auto ids = encode(story, vocab);
  ASSERT_GT(ids.size(), 40u);
  Model<float> m(gen_config(vocab.size()), 7);
  DataSplit data;
  data.train.assign(16, ids);
  data.val = {ids};
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.micro_batch = 16;
  cfg.learning_rate = 0.01;
  cfg.weight_decay = 0.0;
  cfg.epochs = 150;
  cfg.seed = 3;
  const auto r = train(m, data, cfg);
  ASSERT_GT(r.history.back().val_accuracy, 0.99);

  const size_t k = 8;
  const std::vector<int> prompt(ids.begin(), ids.begin() + k);
  const auto out = generate_ids(m, prompt, {.max_new = static_cast<int>(ids.size() - k), .temperature = 0.0});
  EXPECT_EQ(out, ids);
  EXPECT_EQ(decode(out, vocab), story);
}

}  // namespace
}  // namespace hsm
