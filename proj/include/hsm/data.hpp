#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "hsm/tokenizer.hpp"

namespace hsm {

struct Corpus {
  std::vector<std::string> stories;
  std::string source;
};

enum class CorpusFormat { Auto, PlainLines, JsonLines };

CorpusFormat corpus_format_from_string(const std::string& name);

// One story per line; JSON lines take the "text" field. Blank records are
// dropped. Auto picks JSON lines for .jsonl/.json files or when the first
// non-blank line starts with '{'.
Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format = CorpusFormat::Auto);

using TokenizedStory = std::vector<int>;

struct DatasetStats {
  long long stories = 0;         // after loading
  long long tokens = 0;          // over all loaded stories
  long long filtered = 0;        // shorter than the context window
  long long train_stories = 0;
  long long val_stories = 0;
  long long train_tokens = 0;
  long long val_tokens = 0;
  int context = 0;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const DatasetStats& s);

struct DataSplit {
  std::vector<TokenizedStory> train;
  std::vector<TokenizedStory> val;
  DatasetStats stats;
};

std::vector<TokenizedStory> tokenize_corpus(const Corpus& corpus, const Vocab& vocab);

// Drops stories with fewer than `context` tokens, then shuffles with `seed`
// and moves round(n * val_fraction) stories (at least one, at most n - 1) to
// the validation side.
DataSplit filter_and_split(std::vector<TokenizedStory> stories, int context, double val_fraction, std::uint64_t seed);
DataSplit filter_and_split(const Corpus& corpus, const Vocab& vocab, int context, double val_fraction,
                           std::uint64_t seed);

// `rows` windows of `cols` tokens, row-major. targets[i][t] is the token after
// inputs[i][t], or kIgnoreTarget past the end of a story of exactly `cols` tokens.
struct Batch {
  int rows = 0;
  int cols = 0;
  std::vector<int> inputs;
  std::vector<int> targets;

  std::span<const int> input_row(int i) const { return {inputs.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)}; }
  std::span<const int> target_row(int i) const { return {targets.data() + static_cast<size_t>(i) * cols, static_cast<size_t>(cols)}; }
};

// Copies the `context`-token window starting at `offset` and its targets.
void fill_window(const TokenizedStory& story, int context, std::size_t offset, int* inputs, int* targets);

// Training batches for one epoch. Story order and window offsets come from
// (seed, epoch) only, so a given epoch can be regenerated independently.
std::vector<Batch> epoch_batches(std::span<const TokenizedStory> split, int context, int batch_size, std::uint64_t seed,
                                 int epoch);

// Fixed windows at offset 0 in split order.
std::vector<Batch> validation_batches(std::span<const TokenizedStory> split, int context, int batch_size);

}  // namespace hsm
