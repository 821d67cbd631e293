#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cap/parallel.hpp"
#include "cap/segment_ranges.hpp"
#include "cap/tensor.hpp"

namespace cap {

/// Aggregation applied over the positions of one group.
enum class Protocol { Sum, Mean, Max };

std::string to_string(Protocol p);
Protocol parse_protocol(const std::string& name);

/// The full list of groups (explicit ranges plus implicit singletons) in token order.
class GroupLayout {
 public:
  GroupLayout(std::size_t sequence_length, const SegmentRanges& ranges);

  std::size_t input_length() const { return input_length_; }
  std::size_t size() const { return groups_.size(); }
  const TokenRange& operator[](std::size_t g) const { return groups_[g]; }
  const std::vector<TokenRange>& groups() const { return groups_; }

 private:
  std::size_t input_length_;
  std::vector<TokenRange> groups_;
};

/// Grouped sequence length G = K - sum(e_i - s_i). Validates the ranges.
std::size_t group_dim(std::size_t sequence_length, const SegmentRanges& ranges);

/// [B, K, H] -> [B, G, H]. Summation runs in ascending token order; Mean divides
/// the finished sum once by the group length.
Tensor pool_1d(const Tensor& x, const SegmentRanges& ranges, Protocol protocol, Backend backend = Backend::Parallel);

/// [B, Ha, K, K] -> [B, Ha, G, G]; entry (i, j) aggregates the block of query
/// rows of group i and key columns of group j (rows outer, columns inner).
Tensor pool_2d(const Tensor& pattern, const SegmentRanges& ranges, Protocol protocol,
               Backend backend = Backend::Parallel);

/// Row-stochastic variant of pool_2d: keys summed, queries averaged. Rows that
/// were probability distributions stay probability distributions.
Tensor pool_2d_row_stochastic(const Tensor& pattern, const SegmentRanges& ranges,
                              Backend backend = Backend::Parallel);

}  // namespace cap
