#include "cap/pooling.hpp"

#include <algorithm>

#include "cap/errors.hpp"

namespace cap {

std::string to_string(Granularity g) { return g == Granularity::Word ? "word" : "phrase"; }

Granularity parse_granularity(const std::string& name) {
  if (name == "word") return Granularity::Word;
  if (name == "phrase") return Granularity::Phrase;
  throw InputError("unknown granularity '" + name + "' (expected word or phrase)");
}

void SegmentRanges::validate(std::size_t sequence_length) const {
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    const TokenRange& r = ranges[i];
    if (r.first > r.last) {
      throw InputError("segment range " + std::to_string(i) + " has start " + std::to_string(r.first) +
                       " after end " + std::to_string(r.last));
    }
    if (r.last >= sequence_length) {
      throw InputError("segment range (" + std::to_string(r.first) + ", " + std::to_string(r.last) +
                       ") exceeds sequence length " + std::to_string(sequence_length));
    }
    if (i > 0 && ranges[i - 1].last >= r.first) {
      throw InputError("segment ranges " + std::to_string(i - 1) + " and " + std::to_string(i) +
                       " overlap or are out of order");
    }
  }
}

SegmentRanges singleton_ranges(std::size_t sequence_length, Granularity g) {
  SegmentRanges out{{}, g};
  out.ranges.reserve(sequence_length);
  for (std::size_t t = 0; t < sequence_length; ++t) out.ranges.push_back({t, t});
  return out;
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::Sum: return "sum";
    case Protocol::Mean: return "mean";
    case Protocol::Max: return "max";
  }
  return "?";
}

Protocol parse_protocol(const std::string& name) {
  if (name == "sum") return Protocol::Sum;
  if (name == "mean") return Protocol::Mean;
  if (name == "max") return Protocol::Max;
  throw InputError("unknown protocol '" + name + "' (expected sum, mean or max)");
}

GroupLayout::GroupLayout(std::size_t sequence_length, const SegmentRanges& ranges)
    : input_length_(sequence_length) {
  ranges.validate(sequence_length);
  std::size_t next = 0;
  for (const TokenRange& r : ranges.ranges) {
    for (; next < r.first; ++next) groups_.push_back({next, next});
    groups_.push_back(r);
    next = r.last + 1;
  }
  for (; next < sequence_length; ++next) groups_.push_back({next, next});
}

std::size_t group_dim(std::size_t sequence_length, const SegmentRanges& ranges) {
  ranges.validate(sequence_length);
  std::size_t collapsed = 0;
  for (const TokenRange& r : ranges.ranges) collapsed += r.last - r.first;
  return sequence_length - collapsed;
}

namespace {

inline float combine(Protocol p, float acc, float v) { return p == Protocol::Max ? std::max(acc, v) : acc + v; }

// One output row: the group's rows of a [K, H] slice reduced into out[H].
void pool_group_1d(const float* x, std::size_t width, const TokenRange& g, Protocol p, float* out) {
  std::copy_n(x + g.first * width, width, out);
  for (std::size_t t = g.first + 1; t <= g.last; ++t) {
    const float* row = x + t * width;
    for (std::size_t c = 0; c < width; ++c) out[c] = combine(p, out[c], row[c]);
  }
  if (p == Protocol::Mean && g.length() > 1) {
    const float n = static_cast<float>(g.length());
    for (std::size_t c = 0; c < width; ++c) out[c] /= n;
  }
}

float pool_block_2d(const float* m, std::size_t k, const TokenRange& gi, const TokenRange& gj, Protocol p) {
  float acc = m[gi.first * k + gj.first];
  for (std::size_t t = gi.first; t <= gi.last; ++t) {
    for (std::size_t u = (t == gi.first ? gj.first + 1 : gj.first); u <= gj.last; ++u) {
      acc = combine(p, acc, m[t * k + u]);
    }
  }
  if (p == Protocol::Mean && gi.length() * gj.length() > 1) acc /= static_cast<float>(gi.length() * gj.length());
  return acc;
}

float row_stochastic_block(const float* m, std::size_t k, const TokenRange& gi, const TokenRange& gj) {
  float acc = 0.0f;
  for (std::size_t t = gi.first; t <= gi.last; ++t) {
    float row = m[t * k + gj.first];
    for (std::size_t u = gj.first + 1; u <= gj.last; ++u) row += m[t * k + u];
    acc = (t == gi.first) ? row : acc + row;
  }
  return gi.length() > 1 ? acc / static_cast<float>(gi.length()) : acc;
}

void check_1d(const Tensor& x) {
  if (x.rank() != 3) throw ContractError("pool_1d expects [B, K, H], got " + to_string(x.shape()));
}

void check_2d(const Tensor& p) {
  if (p.rank() != 4 || p.dim(2) != p.dim(3)) {
    throw ContractError("pool_2d expects [B, Ha, K, K], got " + to_string(p.shape()));
  }
}

template <typename BlockFn>
Tensor pool_2d_impl(const Tensor& pattern, const SegmentRanges& ranges, Backend backend, BlockFn block) {
  check_2d(pattern);
  const std::size_t k = pattern.dim(2);
  const GroupLayout layout(k, ranges);
  const std::size_t g = layout.size(), planes = pattern.dim(0) * pattern.dim(1);
  Tensor out({pattern.dim(0), pattern.dim(1), g, g});
  auto cell = [&](std::size_t idx) {
    const std::size_t plane = idx / (g * g), i = (idx / g) % g, j = idx % g;
    out[idx] = block(pattern.data() + plane * k * k, k, layout[i], layout[j]);
  };
  const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(planes * g * g);
  if (backend == Backend::Serial) {
    for (std::ptrdiff_t idx = 0; idx < total; ++idx) cell(static_cast<std::size_t>(idx));
  } else {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t idx = 0; idx < total; ++idx) cell(static_cast<std::size_t>(idx));
  }
  return out;
}

}  // namespace

Tensor pool_1d(const Tensor& x, const SegmentRanges& ranges, Protocol protocol, Backend backend) {
  check_1d(x);
  const std::size_t batch = x.dim(0), k = x.dim(1), width = x.dim(2);
  const GroupLayout layout(k, ranges);
  const std::size_t g = layout.size();
  Tensor out({batch, g, width});
  auto row = [&](std::size_t idx) {
    const std::size_t b = idx / g, j = idx % g;
    pool_group_1d(x.data() + b * k * width, width, layout[j], protocol, out.data() + idx * width);
  };
  const std::ptrdiff_t total = static_cast<std::ptrdiff_t>(batch * g);
  if (backend == Backend::Serial) {
    for (std::ptrdiff_t idx = 0; idx < total; ++idx) row(static_cast<std::size_t>(idx));
  } else {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t idx = 0; idx < total; ++idx) row(static_cast<std::size_t>(idx));
  }
  return out;
}

Tensor pool_2d(const Tensor& pattern, const SegmentRanges& ranges, Protocol protocol, Backend backend) {
  return pool_2d_impl(pattern, ranges, backend,
                      [protocol](const float* m, std::size_t k, const TokenRange& gi, const TokenRange& gj) {
                        return pool_block_2d(m, k, gi, gj, protocol);
                      });
}

Tensor pool_2d_row_stochastic(const Tensor& pattern, const SegmentRanges& ranges, Backend backend) {
  return pool_2d_impl(pattern, ranges, backend, row_stochastic_block);
}

}  // namespace cap
