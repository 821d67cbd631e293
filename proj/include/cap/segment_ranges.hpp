#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace cap {

/// Inclusive token-index range [first, last] forming one constituent.
struct TokenRange {
  std::size_t first = 0;
  std::size_t last = 0;

  std::size_t length() const { return last - first + 1; }
  friend bool operator==(const TokenRange&, const TokenRange&) = default;
};

enum class Granularity { Word, Phrase };

std::string to_string(Granularity g);
Granularity parse_granularity(const std::string& name);

/// Ordered, disjoint constituent ranges over a K-token sequence. Tokens not
/// covered by any range are implicit singleton groups.
struct SegmentRanges {
  std::vector<TokenRange> ranges;
  Granularity granularity = Granularity::Word;

  /// Throws InputError unless ranges are sorted, disjoint, and end before K.
  void validate(std::size_t sequence_length) const;

  friend bool operator==(const SegmentRanges&, const SegmentRanges&) = default;
};

/// Every token its own range: the identity grouping.
SegmentRanges singleton_ranges(std::size_t sequence_length, Granularity g = Granularity::Word);

}  // namespace cap
