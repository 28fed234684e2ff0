#include "hsm/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <queue>
#include <sstream>
#include <unordered_set>

#include <json.hpp>

#include "hsm/errors.hpp"

namespace hsm {
namespace {

std::uint64_t pair_key(int left, int right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) | static_cast<std::uint32_t>(right);
}

int key_left(std::uint64_t key) { return static_cast<int>(key >> 32); }
int key_right(std::uint64_t key) { return static_cast<int>(key & 0xffffffffu); }

// GPT-2 byte <-> code point table.
const std::array<char32_t, 256>& byte_to_codepoint() {
  static const std::array<char32_t, 256> table = [] {
    std::array<char32_t, 256> t{};
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) t[b] = direct[b] ? static_cast<char32_t>(b) : next++;
    return t;
  }();
  return table;
}

void append_utf8(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

// Length of the valid UTF-8 sequence starting at s[i], or 0 if invalid.
size_t utf8_sequence_length(std::string_view s, size_t i, char32_t* cp_out = nullptr) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  size_t len = 0;
  char32_t cp = 0;
  char32_t min_cp = 0;
  if (b0 < 0x80) {
    if (cp_out) *cp_out = b0;
    return 1;
  } else if ((b0 & 0xE0) == 0xC0) {
    len = 2, cp = b0 & 0x1F, min_cp = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3, cp = b0 & 0x0F, min_cp = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4, cp = b0 & 0x07, min_cp = 0x10000;
  } else {
    return 0;
  }
  if (i + len > s.size()) return 0;
  for (size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min_cp || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  if (cp_out) *cp_out = cp;
  return len;
}

struct Candidate {
  std::int64_t count;
  int left;
  int right;
};

}  // namespace

Vocab::Vocab() {
  tokens_.reserve(kByteTokens);
  for (int b = 0; b < kByteTokens; ++b) {
    tokens_.emplace_back(1, static_cast<char>(b));
    token_to_id_.emplace(tokens_.back(), b);
  }
}

int Vocab::add_merge(int left, int right) {
  if (!specials_.empty()) throw Error("merges must be added before special tokens");
  const std::string merged = token(left) + token(right);
  int id = id_of(merged);
  if (id < 0) {
    id = size();
    tokens_.push_back(merged);
    token_to_id_.emplace(merged, id);
  }
  ranks_.emplace(pair_key(left, right), std::make_pair(static_cast<int>(merges_.size()), id));
  merges_.push_back({left, right, id});
  return id;
}

int Vocab::add_special(const std::string& text) {
  if (id_of(text) >= 0) throw ParameterError("special token collides with an existing token: " + text);
  const int id = size();
  if (first_special_ < 0) first_special_ = id;
  tokens_.push_back(text);
  token_to_id_.emplace(text, id);
  specials_.push_back(text);
  return id;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw IndexError("token id " + std::to_string(id) + " out of range [0, " + std::to_string(size()) + ")");
  }
  return tokens_[static_cast<size_t>(id)];
}

int Vocab::id_of(const std::string& bytes) const {
  auto it = token_to_id_.find(bytes);
  return it == token_to_id_.end() ? -1 : it->second;
}

BpeTrainResult train_bpe(std::span<const std::string> corpus, int vocab_size, bool end_of_text) {
  if (vocab_size < kByteTokens) {
    throw ParameterError("vocab_size must be at least " + std::to_string(kByteTokens));
  }
  if (corpus.empty()) throw EmptyDatasetError("cannot train a tokenizer on an empty corpus");
  BpeTrainResult result;
  result.requested_size = vocab_size;
  Vocab& vocab = result.vocab;
  const int merge_target = vocab_size - (end_of_text ? 1 : 0);

  std::vector<std::vector<int>> seqs;
  seqs.reserve(corpus.size());
  for (const auto& doc : corpus) {
    std::vector<int> s(doc.size());
    std::transform(doc.begin(), doc.end(), s.begin(), [](char c) { return static_cast<unsigned char>(c); });
    seqs.push_back(std::move(s));
  }

  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_map<std::uint64_t, std::unordered_set<std::uint32_t>> where;
  for (std::uint32_t si = 0; si < seqs.size(); ++si) {
    const auto& s = seqs[si];
    for (size_t i = 0; i + 1 < s.size(); ++i) {
      const auto k = pair_key(s[i], s[i + 1]);
      ++counts[k];
      where[k].insert(si);
    }
  }

  auto before = [&vocab](const Candidate& a, const Candidate& b) {
    // priority_queue pops the maximum: higher count first, then smaller pair.
    if (a.count != b.count) return a.count < b.count;
    const std::string& al = vocab.token(a.left);
    const std::string& bl = vocab.token(b.left);
    if (al != bl) return al > bl;
    return vocab.token(a.right) > vocab.token(b.right);
  };
  std::priority_queue<Candidate, std::vector<Candidate>, decltype(before)> heap(before);
  for (const auto& [k, c] : counts) heap.push({c, key_left(k), key_right(k)});

  std::unordered_set<std::uint64_t> touched;
  while (vocab.size() < merge_target && !heap.empty()) {
    const Candidate top = heap.top();
    heap.pop();
    const auto key = pair_key(top.left, top.right);
    const auto it = counts.find(key);
    const std::int64_t current = it == counts.end() ? 0 : it->second;
    if (current <= 0) continue;
    if (current != top.count) {
      heap.push({current, top.left, top.right});
      continue;
    }

    const int l = top.left;
    const int r = top.right;
    const int m = vocab.add_merge(l, r);
    touched.clear();
    auto bump = [&](int a, int b, std::int64_t delta, std::uint32_t si) {
      const auto k = pair_key(a, b);
      counts[k] += delta;
      touched.insert(k);
      if (delta > 0) where[k].insert(si);
    };

    std::vector<std::uint32_t> affected(where[key].begin(), where[key].end());
    std::sort(affected.begin(), affected.end());
    for (const auto si : affected) {
      auto& s = seqs[si];
      std::vector<int> out;
      out.reserve(s.size());
      const size_t n = s.size();
      size_t i = 0;
      while (i < n) {
        if (i + 1 < n && s[i] == l && s[i + 1] == r) {
          if (i > 0) {
            bump(s[i - 1], l, -1, si);
            bump(out.back(), m, +1, si);
          }
          const bool next_merges = i + 3 < n && s[i + 2] == l && s[i + 3] == r;
          if (i + 2 < n && !next_merges) {
            bump(r, s[i + 2], -1, si);
            bump(m, s[i + 2], +1, si);
          }
          out.push_back(m);
          i += 2;
        } else {
          out.push_back(s[i]);
          ++i;
        }
      }
      s = std::move(out);
    }
    counts.erase(key);
    where.erase(key);
    touched.erase(key);
    std::vector<std::uint64_t> changed(touched.begin(), touched.end());
    std::sort(changed.begin(), changed.end());
    for (const auto k : changed) {
      const auto c = counts[k];
      if (c > 0) heap.push({c, key_left(k), key_right(k)});
    }
  }
  result.stopped_early = vocab.size() < merge_target;
  if (end_of_text) vocab.add_special(kEndOfText);
  return result;
}

std::vector<int> encode(std::string_view text, const Vocab& vocab) {
  const size_t n = text.size();
  if (n == 0) return {};
  std::vector<int> sym(n);
  std::vector<int> prev(n);
  std::vector<int> next(n);
  std::vector<bool> alive(n, true);
  for (size_t i = 0; i < n; ++i) {
    sym[i] = static_cast<unsigned char>(text[i]);
    prev[i] = static_cast<int>(i) - 1;
    next[i] = i + 1 < n ? static_cast<int>(i + 1) : -1;
  }
  const auto& ranks = vocab.ranks();
  // (rank, position, left id, right id); smallest rank first, then leftmost.
  using Entry = std::array<int, 4>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> heap;
  auto offer = [&](int pos) {
    if (pos < 0 || next[pos] < 0) return;
    const auto it = ranks.find(pair_key(sym[pos], sym[next[pos]]));
    if (it != ranks.end()) heap.push({it->second.first, pos, sym[pos], sym[next[pos]]});
  };
  for (size_t i = 0; i + 1 < n; ++i) offer(static_cast<int>(i));
  while (!heap.empty()) {
    const Entry e = heap.top();
    heap.pop();
    const int pos = e[1];
    if (!alive[pos] || sym[pos] != e[2]) continue;
    const int nx = next[pos];
    if (nx < 0 || sym[nx] != e[3]) continue;
    sym[pos] = ranks.at(pair_key(e[2], e[3])).second;
    alive[nx] = false;
    next[pos] = next[nx];
    if (next[nx] >= 0) prev[next[nx]] = pos;
    offer(prev[pos]);
    offer(pos);
  }
  std::vector<int> ids;
  for (int p = 0; p >= 0; p = next[p]) ids.push_back(sym[p]);
  return ids;
}

std::string decode_bytes(std::span<const int> ids, const Vocab& vocab) {
  std::string out;
  for (const int id : ids) out += vocab.token(id);
  return out;
}

std::string decode(std::span<const int> ids, const Vocab& vocab) { return sanitize_utf8(decode_bytes(ids, vocab)); }

std::string sanitize_utf8(std::string_view bytes) {
  std::string out;
  out.reserve(bytes.size());
  size_t i = 0;
  while (i < bytes.size()) {
    const size_t len = utf8_sequence_length(bytes, i);
    if (len == 0) {
      out += "\xEF\xBF\xBD";
      ++i;
    } else {
      out.append(bytes.substr(i, len));
      i += len;
    }
  }
  return out;
}

std::string bytes_to_printable(std::string_view bytes) {
  const auto& table = byte_to_codepoint();
  std::string out;
  for (const char c : bytes) append_utf8(out, table[static_cast<unsigned char>(c)]);
  return out;
}

std::string printable_to_bytes(std::string_view text) {
  static const std::unordered_map<char32_t, unsigned char> inverse = [] {
    std::unordered_map<char32_t, unsigned char> m;
    const auto& table = byte_to_codepoint();
    for (int b = 0; b < 256; ++b) m.emplace(table[b], static_cast<unsigned char>(b));
    return m;
  }();
  std::string out;
  size_t i = 0;
  while (i < text.size()) {
    char32_t cp = 0;
    const size_t len = utf8_sequence_length(text, i, &cp);
    if (len == 0) throw ParseError("merge string is not valid UTF-8");
    const auto it = inverse.find(cp);
    if (it == inverse.end()) throw ParseError("merge string contains a code point outside the byte table");
    out.push_back(static_cast<char>(it->second));
    i += len;
  }
  return out;
}

std::string vocab_to_json(const Vocab& vocab) {
  nlohmann::ordered_json j;
  j["version"] = 1;
  j["vocab_size"] = vocab.size();
  auto merges = nlohmann::ordered_json::array();
  for (const auto& m : vocab.merges()) {
    merges.push_back({bytes_to_printable(vocab.token(m.left)), bytes_to_printable(vocab.token(m.right))});
  }
  j["merges"] = std::move(merges);
  j["specials"] = vocab.specials();
  return j.dump() + "\n";
}

Vocab vocab_from_json(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("vocab file is not valid JSON: ") + e.what());
  }
  if (!j.contains("version") || j["version"] != 1) throw ParseError("unsupported vocab file version");
  Vocab vocab;
  try {
    for (const auto& pair : j.at("merges")) {
      if (!pair.is_array() || pair.size() != 2) throw ParseError("merge entries must be [left, right] pairs");
      const int l = vocab.id_of(printable_to_bytes(pair[0].get<std::string>()));
      const int r = vocab.id_of(printable_to_bytes(pair[1].get<std::string>()));
      if (l < 0 || r < 0) throw ParseError("merge refers to a token that does not exist yet");
      vocab.add_merge(l, r);
    }
    if (j.contains("specials")) {
      for (const auto& s : j["specials"]) vocab.add_special(s.get<std::string>());
    }
    if (j.at("vocab_size").get<int>() != vocab.size()) {
      throw ParseError("vocab_size " + std::to_string(j["vocab_size"].get<int>()) + " does not match the " +
                       std::to_string(vocab.size()) + " tokens implied by the merges");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed vocab file: ") + e.what());
  }
  return vocab;
}

void save_vocab(const Vocab& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << vocab_to_json(vocab);
}

Vocab load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocab file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return vocab_from_json(ss.str());
}

}  // namespace hsm
