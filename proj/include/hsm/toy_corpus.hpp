#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace hsm {

struct ToyCorpusConfig {
  int stories = 1000;
  int min_sentences = 12;
  int max_sentences = 20;
  std::uint64_t seed = 7;
};

// Small children's-story generator: a cast (name, animal, place, toy) is drawn
// per story and reused across templated sentences, so later tokens depend on
// earlier ones. Deterministic for a given config.
std::vector<std::string> make_toy_stories(const ToyCorpusConfig& cfg);

}  // namespace hsm
