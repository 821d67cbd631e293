#include "cap/tokenizer.hpp"

#include <array>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "cap/errors.hpp"
#include "cap/unicode.hpp"
#include "json.hpp"

namespace cap {

namespace {

// GPT-2's reversible byte -> printable code point table.
const std::array<char32_t, 256>& byte_to_unicode() {
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

std::string bytes_to_symbols(std::string_view bytes) {
  std::string out;
  for (unsigned char b : bytes) unicode::append_utf8(out, byte_to_unicode()[b]);
  return out;
}

std::string symbols_to_bytes(std::string_view symbols) {
  static const auto reverse = [] {
    std::unordered_map<char32_t, unsigned char> r;
    for (int b = 0; b < 256; ++b) r[byte_to_unicode()[b]] = static_cast<unsigned char>(b);
    return r;
  }();
  std::string out;
  for (std::size_t pos = 0; pos < symbols.size();) {
    const auto d = unicode::decode(symbols, pos);
    auto it = reverse.find(d.cp);
    if (!d.valid || it == reverse.end()) throw LoadError("vocabulary entry outside the byte alphabet");
    out += static_cast<char>(it->second);
    pos += d.length;
  }
  return out;
}

enum class CharClass { Space, Letter, Number, Other };

CharClass classify(char32_t cp) {
  if (unicode::is_space(cp)) return CharClass::Space;
  if (unicode::is_letter(cp)) return CharClass::Letter;
  if (unicode::is_number(cp)) return CharClass::Number;
  return CharClass::Other;
}

struct Char {
  std::size_t offset;
  CharClass cls;
  char32_t cp;
};

std::string fnv_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::vector<ByteSpan> pretokenize(std::string_view text) {
  std::vector<Char> chars;
  for (std::size_t pos = 0; pos < text.size();) {
    const auto d = unicode::decode(text, pos);
    chars.push_back({pos, d.valid ? classify(d.cp) : CharClass::Other, d.cp});
    pos += d.length;
  }
  const std::size_t n = chars.size();
  auto cp_at = [&](std::size_t i) { return i < n ? chars[i].cp : U'\0'; };
  auto cls_at = [&](std::size_t i, CharClass c) { return i < n && chars[i].cls == c; };
  auto run_of = [&](std::size_t i, auto pred) {
    while (i < n && pred(chars[i].cls)) ++i;
    return i;
  };

  std::vector<ByteSpan> pieces;
  std::size_t i = 0;
  while (i < n) {
    std::size_t end = i;
    if (cp_at(i) == U'\'') {
      const char32_t a = cp_at(i + 1), b = cp_at(i + 2);
      if (a == U's' || a == U't' || a == U'm' || a == U'd') {
        end = i + 2;
      } else if ((a == U'r' && b == U'e') || (a == U'v' && b == U'e') || (a == U'l' && b == U'l')) {
        end = i + 3;
      }
    }
    if (end == i) {
      const std::size_t j = cp_at(i) == U' ' ? i + 1 : i;
      if (cls_at(j, CharClass::Letter)) {
        end = run_of(j, [](CharClass c) { return c == CharClass::Letter; });
      } else if (cls_at(j, CharClass::Number)) {
        end = run_of(j, [](CharClass c) { return c == CharClass::Number; });
      } else if (cls_at(j, CharClass::Other)) {
        end = run_of(j, [](CharClass c) { return c == CharClass::Other; });
      }
    }
    if (end == i) {
      // \s+(?!\S) backtracks to leave one space before a non-space; else \s+.
      const std::size_t run = run_of(i, [](CharClass c) { return c == CharClass::Space; });
      end = (run < n && run - i >= 2) ? run - 1 : run;
    }
    pieces.push_back({chars[i].offset, end < n ? chars[end].offset : text.size()});
    i = end;
  }
  return pieces;
}

BpeTokenizer BpeTokenizer::from_tables(std::unordered_map<std::string, TokenId> vocab,
                                       const std::vector<std::pair<std::string, std::string>>& merges) {
  BpeTokenizer t;
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto mix = [&h](std::string_view s) {
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
    h = (h ^ 0xFF) * 0x100000001b3ull;
  };
  t.id_bytes_.resize(vocab.size());
  std::vector<bool> seen(vocab.size(), false);
  for (const auto& [symbols, id] : vocab) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocab.size() || seen[id]) {
      throw LoadError("vocabulary ids must be a permutation of 0.." + std::to_string(vocab.size() - 1));
    }
    seen[id] = true;
    t.id_bytes_[id] = symbols_to_bytes(symbols);
  }
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    mix(bytes_to_symbols(t.id_bytes_[id]));
  }
  for (int b = 0; b < 256; ++b) {
    if (!vocab.count(bytes_to_symbols(std::string(1, static_cast<char>(b))))) {
      throw LoadError("vocabulary is missing the single-byte token for byte " + std::to_string(b));
    }
  }
  for (std::size_t r = 0; r < merges.size(); ++r) {
    std::string key = merges[r].first + " " + merges[r].second;
    mix(key);
    t.ranks_.emplace(std::move(key), r);
  }
  t.encoder_ = std::move(vocab);
  t.checksum_ = fnv_hex(h);
  return t;
}

BpeTokenizer BpeTokenizer::load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt) {
  std::ifstream vin(vocab_json);
  if (!vin) throw LoadError("cannot open vocabulary " + vocab_json.string());
  std::unordered_map<std::string, TokenId> vocab;
  try {
    const auto j = nlohmann::json::parse(vin);
    for (const auto& [symbols, id] : j.items()) vocab.emplace(symbols, id.get<TokenId>());
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("malformed vocabulary " + vocab_json.string() + ": " + e.what());
  }

  std::ifstream min(merges_txt);
  if (!min) throw LoadError("cannot open merges " + merges_txt.string());
  std::vector<std::pair<std::string, std::string>> merges;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(min, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.starts_with("#version")) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos || line.find(' ', sp + 1) != std::string::npos) {
      throw LoadError(merges_txt.string() + ":" + std::to_string(lineno) + ": expected two symbols");
    }
    merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
  }
  return from_tables(std::move(vocab), merges);
}

void BpeTokenizer::bpe(std::string_view piece, std::size_t base, TokenizedText& out) const {
  struct Symbol {
    std::string text;  // byte-alphabet symbols
    std::size_t bytes;
  };
  std::vector<Symbol> word;
  for (unsigned char b : piece) {
    std::string s;
    unicode::append_utf8(s, byte_to_unicode()[b]);
    word.push_back({std::move(s), 1});
  }

  while (word.size() > 1) {
    std::size_t best_rank = std::numeric_limits<std::size_t>::max();
    std::string best_left, best_right;
    for (std::size_t k = 0; k + 1 < word.size(); ++k) {
      auto it = ranks_.find(word[k].text + " " + word[k + 1].text);
      if (it != ranks_.end() && it->second < best_rank) {
        best_rank = it->second;
        best_left = word[k].text;
        best_right = word[k + 1].text;
      }
    }
    if (best_rank == std::numeric_limits<std::size_t>::max()) break;
    std::vector<Symbol> merged;
    for (std::size_t k = 0; k < word.size();) {
      if (k + 1 < word.size() && word[k].text == best_left && word[k + 1].text == best_right) {
        merged.push_back({word[k].text + word[k + 1].text, word[k].bytes + word[k + 1].bytes});
        k += 2;
      } else {
        merged.push_back(std::move(word[k]));
        k += 1;
      }
    }
    word = std::move(merged);
  }

  std::size_t pos = base;
  for (const Symbol& s : word) {
    auto it = encoder_.find(s.text);
    if (it == encoder_.end()) throw LoadError("BPE produced a symbol missing from the vocabulary");
    out.ids.push_back(it->second);
    out.offsets.push_back({pos, pos + s.bytes});
    pos += s.bytes;
  }
}

TokenizedText BpeTokenizer::encode(std::string_view text) const {
  TokenizedText out;
  out.text = std::string(text);
  for (const ByteSpan& piece : pretokenize(text)) {
    bpe(text.substr(piece.start, piece.end - piece.start), piece.start, out);
  }
  return out;
}

std::string BpeTokenizer::decode(std::span<const TokenId> ids) const {
  std::string out;
  for (TokenId id : ids) out += token_bytes(id);
  return out;
}

const std::string& BpeTokenizer::token_bytes(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_bytes_.size()) {
    throw InputError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return id_bytes_[id];
}

std::optional<TokenId> BpeTokenizer::single_token(std::string_view text) const {
  const TokenizedText t = encode(text);
  if (t.ids.size() != 1) return std::nullopt;
  return t.ids.front();
}

}  // namespace cap
