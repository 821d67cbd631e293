#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cap/model.hpp"

namespace cap {

/// Half-open byte interval [start, end) into a UTF-8 string.
struct ByteSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  friend bool operator==(const ByteSpan&, const ByteSpan&) = default;
};

struct TokenizedText {
  std::string text;
  std::vector<TokenId> ids;
  std::vector<ByteSpan> offsets;  // one per token, tiling text

  std::size_t size() const { return ids.size(); }
};

/// GPT-2 byte-level BPE. Immutable after construction; every method is const
/// and safe to call concurrently.
class BpeTokenizer {
 public:
  /// vocab: token string -> id, in the byte-to-unicode alphabet.
  /// merges: ranked pairs, highest priority first.
  static BpeTokenizer from_tables(std::unordered_map<std::string, TokenId> vocab,
                                  const std::vector<std::pair<std::string, std::string>>& merges);
  /// Standard GPT-2 distribution files (vocab.json, merges.txt).
  static BpeTokenizer load(const std::filesystem::path& vocab_json, const std::filesystem::path& merges_txt);

  TokenizedText encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;
  /// Raw bytes of one token.
  const std::string& token_bytes(TokenId id) const;

  /// The id if text encodes to exactly one token.
  std::optional<TokenId> single_token(std::string_view text) const;

  std::size_t vocab_size() const { return id_bytes_.size(); }
  /// FNV-1a 64 digest of the vocabulary and merge tables.
  const std::string& checksum() const { return checksum_; }

 private:
  void bpe(std::string_view piece, std::size_t base, TokenizedText& out) const;

  std::unordered_map<std::string, TokenId> encoder_;
  std::vector<std::string> id_bytes_;
  std::unordered_map<std::string, std::size_t> ranks_;  // "left right" -> rank
  std::string checksum_;
};

/// Pre-tokenizer of GPT-2: the pieces BPE runs on, as byte spans of text.
std::vector<ByteSpan> pretokenize(std::string_view text);

}  // namespace cap
