#pragma once

// Byte-level BPE: 256 byte tokens, then merges learned greedily by pair
// frequency. No pre-tokenisation; whitespace is ordinary bytes.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace hsm {

inline constexpr int kByteTokens = 256;
inline constexpr const char* kEndOfText = "<|endoftext|>";

struct Merge {
  int left = 0;
  int right = 0;
  int result = 0;
};

class Vocab {
 public:
  // The 256 single-byte tokens and nothing else.
  Vocab();

  // Appends a merge rule; returns the id of the merged token (an existing id
  // if that byte string is already a token).
  int add_merge(int left, int right);
  int add_special(const std::string& text);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<Merge>& merges() const { return merges_; }
  const std::vector<std::string>& specials() const { return specials_; }

  // Raw bytes of a token; throws IndexError for unknown ids.
  const std::string& token(int id) const;
  // -1 when the byte string is not a token.
  int id_of(const std::string& bytes) const;
  bool is_special(int id) const { return id >= first_special_ && first_special_ >= 0; }

  // Merge lookup used by the encoder: rank (training order) and result id.
  const std::unordered_map<std::uint64_t, std::pair<int, int>>& ranks() const { return ranks_; }

  friend bool operator==(const Vocab& a, const Vocab& b) {
    return a.tokens_ == b.tokens_ && a.specials_ == b.specials_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> token_to_id_;
  std::vector<Merge> merges_;
  std::unordered_map<std::uint64_t, std::pair<int, int>> ranks_;
  std::vector<std::string> specials_;
  int first_special_ = -1;
};

struct BpeTrainResult {
  Vocab vocab;
  int requested_size = 0;
  bool stopped_early = false;  // corpus exhausted before requested_size
};

// Greedy BPE: repeatedly merges the most frequent adjacent pair (ties go to
// the lexicographically smallest (left, right) byte-string pair) until the
// vocabulary reaches vocab_size or no adjacent pair is left. Pairs never span
// documents.
BpeTrainResult train_bpe(std::span<const std::string> corpus, int vocab_size, bool end_of_text = false);

std::vector<int> encode(std::string_view text, const Vocab& vocab);

// Concatenated token bytes, with invalid UTF-8 replaced by U+FFFD.
std::string decode(std::span<const int> ids, const Vocab& vocab);
std::string decode_bytes(std::span<const int> ids, const Vocab& vocab);

std::string sanitize_utf8(std::string_view bytes);

// {"version":1,"vocab_size":N,"merges":[["l","r"],...],"specials":[...]}.
// Token bytes are written through the GPT-2 byte-to-unicode table so every
// merge string is printable UTF-8.
std::string vocab_to_json(const Vocab& vocab);
Vocab vocab_from_json(std::string_view json_text);
void save_vocab(const Vocab& vocab, const std::filesystem::path& path);
Vocab load_vocab(const std::filesystem::path& path);

std::string bytes_to_printable(std::string_view bytes);
std::string printable_to_bytes(std::string_view text);

}  // namespace hsm
