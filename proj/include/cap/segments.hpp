#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cap/segment_ranges.hpp"
#include "cap/tokenizer.hpp"

namespace cap {

struct WordSegmentOptions {
  /// Merge punctuation-only tokens into the word they sit in instead of
  /// leaving them as singletons.
  bool attach_punctuation = false;
};

/// One range per whitespace-delimited word that spans two or more tokens.
/// A token belongs to the word of its first non-whitespace byte.
SegmentRanges word_ranges(const TokenizedText& tok, const WordSegmentOptions& options = {});

/// Constituent span in code-point offsets, half-open.
struct PhraseSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  std::string label;

  friend bool operator==(const PhraseSpan&, const PhraseSpan&) = default;
};

using PhraseSpanFile = std::map<std::string, std::vector<PhraseSpan>>;

struct PhraseAlignment {
  SegmentRanges ranges;
  std::vector<std::string> warnings;
};

/// Maps each span to the smallest token range covering it. Spans that cut a
/// token are widened to whole tokens (warning); widened ranges that collide are
/// merged (warning); single-token ranges are dropped. Unsorted or overlapping
/// spans, and spans past the end of the text, raise InputError.
PhraseAlignment phrase_ranges(const TokenizedText& tok, const std::vector<PhraseSpan>& spans);

/// JSON Lines: {"id": ..., "spans": [[start, end, "LABEL"], ...]} per record.
/// A leading {"meta": {...}} line naming the parser is skipped.
PhraseSpanFile load_phrase_spans(const std::filesystem::path& path);

}  // namespace cap
