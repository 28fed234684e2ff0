#include "hsm/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "hsm/errors.hpp"
#include "hsm/ops.hpp"

namespace hsm {

namespace {

constexpr std::uint64_t kStreamSplit = 0x5350;
constexpr std::uint64_t kStreamEpoch = 0x4550;

bool is_blank(const std::string& s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

CorpusFormat corpus_format_from_string(const std::string& name) {
  if (name == "auto") return CorpusFormat::Auto;
  if (name == "plain" || name == "lines") return CorpusFormat::PlainLines;
  if (name == "jsonl" || name == "json-lines") return CorpusFormat::JsonLines;
  throw UsageError("unknown corpus format '" + name + "' (expected auto, plain or jsonl)");
}

Corpus load_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
  }

  if (format == CorpusFormat::Auto) {
    const auto ext = path.extension().string();
    format = CorpusFormat::PlainLines;
    if (ext == ".jsonl" || ext == ".json") {
      format = CorpusFormat::JsonLines;
    } else {
      for (const auto& l : lines) {
        if (is_blank(l)) continue;
        if (l[l.find_first_not_of(" \t")] == '{') format = CorpusFormat::JsonLines;
        break;
      }
    }
  }

  Corpus c;
  c.source = path.string();
  for (size_t i = 0; i < lines.size(); ++i) {
    if (is_blank(lines[i])) continue;
    if (format == CorpusFormat::PlainLines) {
      c.stories.push_back(std::move(lines[i]));
      continue;
    }
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      const auto& text = j.at("text");
      if (!text.is_string()) throw ParseError("\"text\" is not a string");
      std::string s = text.get<std::string>();
      if (!is_blank(s)) c.stories.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    } catch (const ParseError& e) {
      throw ParseError(path.string() + ":" + std::to_string(i + 1) + ": " + e.what());
    }
  }
  if (c.stories.empty()) throw EmptyDatasetError(path.string() + " contains no stories");
  return c;
}

void to_json(nlohmann::json& j, const DatasetStats& s) {
  j = nlohmann::json{{"stories", s.stories},           {"tokens", s.tokens},
                     {"filtered", s.filtered},         {"train_stories", s.train_stories},
                     {"val_stories", s.val_stories},   {"train_tokens", s.train_tokens},
                     {"val_tokens", s.val_tokens},     {"context", s.context},
                     {"seed", s.seed}};
}

std::vector<TokenizedStory> tokenize_corpus(const Corpus& corpus, const Vocab& vocab) {
  std::vector<TokenizedStory> out;
  out.reserve(corpus.stories.size());
  for (const auto& s : corpus.stories) out.push_back(encode(s, vocab));
  return out;
}

DataSplit filter_and_split(std::vector<TokenizedStory> stories, int context, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ParameterError("val_fraction must be in (0, 1)");
  if (context < 1) throw ParameterError("context must be >= 1");
  DataSplit split;
  auto& st = split.stats;
  st.context = context;
  st.seed = seed;
  st.stories = static_cast<long long>(stories.size());
  for (const auto& s : stories) st.tokens += static_cast<long long>(s.size());

  std::vector<TokenizedStory> kept;
  for (auto& s : stories) {
    if (static_cast<int>(s.size()) >= context) kept.push_back(std::move(s));
  }
  st.filtered = st.stories - static_cast<long long>(kept.size());
  if (kept.size() < 2) {
    throw EmptyDatasetError(std::to_string(kept.size()) + " of " + std::to_string(st.stories) +
                            " stories have at least " + std::to_string(context) +
                            " tokens; a train/validation split needs two");
  }

  auto rng = derive_rng(seed, {kStreamSplit});
  std::shuffle(kept.begin(), kept.end(), rng);
  const auto n = static_cast<long long>(kept.size());
  const long long n_val = std::clamp<long long>(std::llround(static_cast<double>(n) * val_fraction), 1, n - 1);
  split.val.assign(std::make_move_iterator(kept.begin()), std::make_move_iterator(kept.begin() + n_val));
  split.train.assign(std::make_move_iterator(kept.begin() + n_val), std::make_move_iterator(kept.end()));
  st.val_stories = n_val;
  st.train_stories = n - n_val;
  for (const auto& s : split.train) st.train_tokens += static_cast<long long>(s.size());
  for (const auto& s : split.val) st.val_tokens += static_cast<long long>(s.size());
  return split;
}

DataSplit filter_and_split(const Corpus& corpus, const Vocab& vocab, int context, double val_fraction,
                           std::uint64_t seed) {
  return filter_and_split(tokenize_corpus(corpus, vocab), context, val_fraction, seed);
}

void fill_window(const TokenizedStory& story, int context, std::size_t offset, int* inputs, int* targets) {
  const auto c = static_cast<std::size_t>(context);
  if (story.size() < c) {
    throw ParameterError("story of " + std::to_string(story.size()) + " tokens is shorter than the context");
  }
  if (offset + c > story.size()) throw IndexError("window offset " + std::to_string(offset) + " out of range");
  for (std::size_t t = 0; t < c; ++t) {
    inputs[t] = story[offset + t];
    targets[t] = offset + t + 1 < story.size() ? story[offset + t + 1] : kIgnoreTarget;
  }
}

namespace {

std::vector<Batch> make_batches(std::span<const TokenizedStory> split, const std::vector<std::size_t>& order,
                                const std::vector<std::size_t>& offsets, int context, int batch_size) {
  if (batch_size < 1) throw ParameterError("batch_size must be >= 1");
  std::vector<Batch> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    Batch b;
    b.rows = static_cast<int>(end - start);
    b.cols = context;
    b.inputs.resize(static_cast<std::size_t>(b.rows) * static_cast<std::size_t>(context));
    b.targets.resize(b.inputs.size());
    for (std::size_t i = start; i < end; ++i) {
      const auto row = (i - start) * static_cast<std::size_t>(context);
      fill_window(split[order[i]], context, offsets[i], b.inputs.data() + row, b.targets.data() + row);
    }
    out.push_back(std::move(b));
  }
  return out;
}

}  // namespace

std::vector<Batch> epoch_batches(std::span<const TokenizedStory> split, int context, int batch_size, std::uint64_t seed,
                                 int epoch) {
  if (split.empty()) throw EmptyDatasetError("no stories to batch");
  auto rng = derive_rng(seed, {kStreamEpoch, static_cast<std::uint64_t>(epoch)});
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> offsets(order.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto len = split[order[i]].size();
    const auto window = static_cast<std::size_t>(context) + 1;
    if (len > window) offsets[i] = std::uniform_int_distribution<std::size_t>(0, len - window)(rng);
  }
  return make_batches(split, order, offsets, context, batch_size);
}

std::vector<Batch> validation_batches(std::span<const TokenizedStory> split, int context, int batch_size) {
  if (split.empty()) throw EmptyDatasetError("no stories to batch");
  std::vector<std::size_t> order(split.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  return make_batches(split, order, std::vector<std::size_t>(order.size(), 0), context, batch_size);
}

}  // namespace hsm
