#include "hsm/toy_corpus.hpp"

#include <array>
#include <random>
#include <string_view>

#include "hsm/errors.hpp"
#include "hsm/ops.hpp"

namespace hsm {

namespace {

constexpr std::array<std::string_view, 16> kNames = {"Lily", "Tom",  "Mia",  "Ben", "Sue",  "Max", "Anna", "Sam",
                                                     "Lucy", "Tim",  "Zoe",  "Jack", "Emma", "Leo", "Ella", "Finn"};
constexpr std::array<std::string_view, 12> kAnimals = {"cat", "dog",  "bird", "frog",  "bunny", "duck",
                                                       "fox", "bear", "fish", "mouse", "puppy", "owl"};
constexpr std::array<std::string_view, 10> kPlaces = {"park", "garden", "forest", "beach", "farm",
                                                      "house", "pond",  "hill",   "town",  "school"};
constexpr std::array<std::string_view, 12> kThings = {"ball", "kite", "box",  "hat",  "cake", "book",
                                                      "drum", "boat", "doll", "cup",  "shoe", "car"};
constexpr std::array<std::string_view, 10> kColors = {"red",  "blue",   "green", "yellow", "pink",
                                                      "big",  "little", "shiny", "soft",   "old"};
constexpr std::array<std::string_view, 8> kFeelings = {"happy", "sad", "scared", "tired", "excited", "proud", "sleepy", "kind"};
constexpr std::array<std::string_view, 10> kVerbs = {"play", "run", "jump", "sing", "dance",
                                                     "swim", "read", "draw", "hide", "climb"};

// {N} name, {A} animal, {P} place, {T} thing, {C} colour, {F} feeling, {V} verb,
// {M} friend's name.
constexpr std::array<std::string_view, 24> kMiddle = {
    "One day, {N} went to the {P} with the {A}.",
    "{N} saw a {C} {T} near the {P}.",
    "The {A} wanted to {V} with the {T}.",
    "{N} said, \"Let us {V} together!\"",
    "The {A} was {F} and wagged its tail.",
    "{N} and {M} liked to {V} in the {P}.",
    "{M} asked, \"Can I have the {C} {T}?\"",
    "{N} shared the {T} with {M}.",
    "They played all day in the {P}.",
    "Then the {A} ran away with the {T}.",
    "{N} felt {F} and looked for the {A}.",
    "{N} looked under the {C} tree and found the {A}.",
    "The sun was warm and the sky was {C}.",
    "{M} helped {N} find the {T}.",
    "The {A} said, \"I am {F} today.\"",
    "{N} gave the {A} a hug.",
    "At the {P}, {N} met a {C} {A}.",
    "{N} did not want to {V} alone.",
    "The {T} was {C} and very nice.",
    "{M} and {N} laughed and laughed.",
    "It started to rain, so {N} and the {A} went home.",
    "Mom said, \"{N}, it is time to eat.\"",
    "{N} put the {T} in a {C} box.",
    "The {A} liked to {V} every morning.",
};

constexpr std::array<std::string_view, 4> kOpening = {
    "Once upon a time, there was a little {A} named {N}.",
    "Once upon a time, there was a {F} girl named {N}.",
    "Once upon a time, there was a boy named {N} who had a {C} {T}.",
    "One day, a little {A} named {N} lived near a {P}.",
};

constexpr std::array<std::string_view, 4> kEnding = {
    "From that day on, {N} and the {A} were best friends.",
    "{N} was {F} and went to sleep.",
    "The end.",
    "{N} learned to always share with friends.",
};

template <size_t K>
std::string_view pick(const std::array<std::string_view, K>& pool, Rng& rng) {
  return pool[std::uniform_int_distribution<size_t>(0, K - 1)(rng)];
}

struct Cast {
  std::string_view name, friend_name, animal, place, thing, color, feeling, verb;
};

void expand(std::string_view tmpl, const Cast& cast, std::string& out) {
  for (size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl[i] == '{' && i + 2 < tmpl.size() && tmpl[i + 2] == '}') {
      switch (tmpl[i + 1]) {
        case 'N': out += cast.name; break;
        case 'M': out += cast.friend_name; break;
        case 'A': out += cast.animal; break;
        case 'P': out += cast.place; break;
        case 'T': out += cast.thing; break;
        case 'C': out += cast.color; break;
        case 'F': out += cast.feeling; break;
        case 'V': out += cast.verb; break;
        default: out += tmpl.substr(i, 3);
      }
      i += 2;
    } else {
      out += tmpl[i];
    }
  }
}

}  // namespace

std::vector<std::string> make_toy_stories(const ToyCorpusConfig& cfg) {
  if (cfg.stories < 1) throw ParameterError("stories must be >= 1");
  if (cfg.min_sentences < 1 || cfg.max_sentences < cfg.min_sentences) {
    throw ParameterError("need 1 <= min_sentences <= max_sentences");
  }
  Rng rng = derive_rng(cfg.seed, {0x544f59});
  std::vector<std::string> out;
  out.reserve(static_cast<size_t>(cfg.stories));
  for (int s = 0; s < cfg.stories; ++s) {
    Cast cast{pick(kNames, rng), pick(kNames, rng), pick(kAnimals, rng), pick(kPlaces, rng),
              pick(kThings, rng), pick(kColors, rng), pick(kFeelings, rng), pick(kVerbs, rng)};
    while (cast.friend_name == cast.name) cast.friend_name = pick(kNames, rng);
    const int n = std::uniform_int_distribution<int>(cfg.min_sentences, cfg.max_sentences)(rng);
    std::string story;
    expand(pick(kOpening, rng), cast, story);
    for (int i = 0; i < n; ++i) {
      story += ' ';
      // Occasionally the colour or verb changes mid-story.
      if (std::uniform_int_distribution<int>(0, 5)(rng) == 0) cast.color = pick(kColors, rng);
      if (std::uniform_int_distribution<int>(0, 5)(rng) == 0) cast.verb = pick(kVerbs, rng);
      expand(pick(kMiddle, rng), cast, story);
    }
    story += ' ';
    expand(pick(kEnding, rng), cast, story);
    out.push_back(std::move(story));
  }
  return out;
}

}  // namespace hsm
