#include <algorithm>
#include <random>

#include "cap/errors.hpp"
#include "cap/pooling.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cap;
namespace oracle = cap::testing::oracle;
using cap::testing::random_ranges;
using cap::testing::random_tensor;

namespace {

const Protocol kProtocols[] = {Protocol::Sum, Protocol::Mean, Protocol::Max};

SegmentRanges ranges_of(std::vector<TokenRange> r) { return SegmentRanges{std::move(r), Granularity::Word}; }

// [N, K, K] with the last two axes swapped.
Tensor transpose_last(const Tensor& t) {
  const std::size_t n = t.dim(0), r = t.dim(1), c = t.dim(2);
  Tensor out({n, c, r});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < r; ++a)
      for (std::size_t b = 0; b < c; ++b) out[(i * c + b) * r + a] = t[(i * r + a) * c + b];
  return out;
}

}  // namespace

TEST_CASE("group_dim") {
  CHECK(group_dim(10, ranges_of({{2, 4}, {7, 8}})) == 7);
  CHECK(group_dim(5, ranges_of({})) == 5);
  CHECK(group_dim(6, ranges_of({{0, 5}})) == 1);
  CHECK_THROWS_AS(group_dim(5, ranges_of({{3, 5}})), InputError);
  CHECK_THROWS_AS(group_dim(8, ranges_of({{1, 3}, {3, 4}})), InputError);
  CHECK_THROWS_AS(group_dim(8, ranges_of({{4, 5}, {1, 2}})), InputError);
  CHECK_THROWS_AS(group_dim(8, ranges_of({{4, 3}})), InputError);
}

TEST_CASE("group layout lists implicit singletons in token order") {
  const GroupLayout layout(6, ranges_of({{1, 2}, {4, 5}}));
  REQUIRE(layout.size() == 4);
  CHECK(layout[0] == TokenRange{0, 0});
  CHECK(layout[1] == TokenRange{1, 2});
  CHECK(layout[2] == TokenRange{3, 3});
  CHECK(layout[3] == TokenRange{4, 5});
}

TEST_CASE("pool_1d hand examples") {
  const Tensor x({1, 2, 1}, std::vector<float>{1, 3});
  const auto r = ranges_of({{0, 1}});
  CHECK(pool_1d(x, r, Protocol::Mean)[0] == 2.0f);
  CHECK(pool_1d(x, r, Protocol::Sum)[0] == 4.0f);
  CHECK(pool_1d(x, r, Protocol::Max)[0] == 3.0f);
}

TEST_CASE("pool_2d hand examples") {
  const Tensor ones({1, 1, 4, 4}, 1.0f);
  const auto r = ranges_of({{0, 1}, {2, 3}});
  const Tensor sum = pool_2d(ones, r, Protocol::Sum);
  const Tensor mean = pool_2d(ones, r, Protocol::Mean);
  CHECK(sum.shape() == Shape{1, 1, 2, 2});
  for (float v : sum.values()) CHECK(v == 4.0f);
  for (float v : mean.values()) CHECK(v == 1.0f);
}

TEST_CASE("pooling matches the brute-force oracle exactly") {
  std::mt19937 rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const bool integer = trial % 2 == 0;
    const std::size_t k = 1 + rng() % 12;
    const SegmentRanges r = random_ranges(rng, k);
    const Tensor x = random_tensor(rng, {2, k, 4}, integer);
    const Tensor p = random_tensor(rng, {1, 2, k, k}, integer);
    for (Protocol proto : kProtocols) {
      CHECK(pool_1d(x, r, proto) == oracle::pool_1d(x, r, proto));
      CHECK(pool_2d(p, r, proto) == oracle::pool_2d(p, r, proto));
      CHECK(pool_1d(x, r, proto, Backend::Serial) == pool_1d(x, r, proto, Backend::Parallel));
      CHECK(pool_2d(p, r, proto, Backend::Serial) == pool_2d(p, r, proto, Backend::Parallel));
    }
  }
}

TEST_CASE("output length follows G = K - sum(e - s)") {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 64;
    const SegmentRanges r = random_ranges(rng, k);
    std::size_t collapsed = 0;
    for (const auto& range : r.ranges) collapsed += range.last - range.first;
    const std::size_t g = pool_1d(Tensor({1, k, 1}), r, Protocol::Sum).dim(1);
    CHECK(g == k - collapsed);
    CHECK(g == group_dim(k, r));
    CHECK(g >= 1);
    CHECK(g <= k);
  }
}

TEST_CASE("mean is the sum divided by the group length") {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng() % 10;
    const SegmentRanges r = random_ranges(rng, k);
    const GroupLayout layout(k, r);
    const Tensor x = random_tensor(rng, {1, k, 3}, trial % 2 == 0);
    const Tensor sum = pool_1d(x, r, Protocol::Sum);
    const Tensor mean = pool_1d(x, r, Protocol::Mean);
    for (std::size_t g = 0; g < layout.size(); ++g) {
      const float n = static_cast<float>(layout[g].length());
      for (std::size_t f = 0; f < 3; ++f) {
        const float s = sum[g * 3 + f], m = mean[g * 3 + f];
        CHECK(m == s / n);
        CHECK(m * n == doctest::Approx(s).epsilon(1e-6).scale(1.0));
      }
    }
  }
}

TEST_CASE("pooling is invariant to permutations inside a group") {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + rng() % 10;
    const SegmentRanges r = random_ranges(rng, k, false);
    if (r.ranges.empty()) continue;
    const Tensor x = random_tensor(rng, {1, k, 3}, true);
    Tensor shuffled = x;
    for (const auto& range : r.ranges) {
      std::vector<std::size_t> order;
      for (std::size_t t = range.first; t <= range.last; ++t) order.push_back(t);
      std::shuffle(order.begin(), order.end(), rng);
      for (std::size_t i = 0; i < order.size(); ++i)
        for (std::size_t f = 0; f < 3; ++f) shuffled[(range.first + i) * 3 + f] = x[order[i] * 3 + f];
    }
    for (Protocol proto : kProtocols) CHECK(pool_1d(x, r, proto) == pool_1d(shuffled, r, proto));
  }
}

TEST_CASE("2D sum pooling factors into 1D sums over queries then keys") {
  std::mt19937 rng(23);
  for (int trial = 0; trial < 40; ++trial) {
    const bool integer = trial % 2 == 0;
    const std::size_t k = 1 + rng() % 10;
    const SegmentRanges r = random_ranges(rng, k);
    const Tensor p = random_tensor(rng, {1, 2, k, k}, integer);
    const Tensor queries = pool_1d(p.reshaped({2, k, k}), r, Protocol::Sum);
    const Tensor both = transpose_last(pool_1d(transpose_last(queries), r, Protocol::Sum));
    const std::size_t g = group_dim(k, r);
    const Tensor direct = pool_2d(p, r, Protocol::Sum);
    if (integer) {
      CHECK(direct == both.reshaped({1, 2, g, g}));
    } else {
      CHECK(max_abs_diff(direct, both.reshaped({1, 2, g, g})) < 1e-5f);
    }
  }
}

TEST_CASE("row mass under key and query grouping") {
  std::mt19937 rng(29);
  const std::size_t k = 7;
  Tensor p({1, 1, k, k});
  for (std::size_t i = 0; i < k; ++i) {
    float total = 0;
    for (std::size_t j = 0; j <= i; ++j) total += (p[i * k + j] = 1.0f + static_cast<float>(rng() % 5));
    for (std::size_t j = 0; j <= i; ++j) p[i * k + j] /= total;
  }
  const SegmentRanges r = ranges_of({{1, 3}, {5, 6}});
  const GroupLayout layout(k, r);

  // Keys only: every query row keeps mass 1.
  const Tensor keys = transpose_last(pool_1d(transpose_last(p.reshaped({1, k, k})), r, Protocol::Sum));
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0;
    for (std::size_t j = 0; j < layout.size(); ++j) row += keys[i * layout.size() + j];
    CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
  }

  // Queries and keys: row mass scales with the query group's length.
  const Tensor both = pool_2d(p, r, Protocol::Sum);
  const Tensor stochastic = pool_2d_row_stochastic(p, r);
  for (std::size_t i = 0; i < layout.size(); ++i) {
    double row = 0, row_s = 0;
    for (std::size_t j = 0; j < layout.size(); ++j) {
      row += both[i * layout.size() + j];
      row_s += stochastic[i * layout.size() + j];
    }
    CHECK(row == doctest::Approx(static_cast<double>(layout[i].length())).epsilon(1e-6));
    CHECK(row_s == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("singleton ranges are the identity") {
  std::mt19937 rng(31);
  const Tensor x = random_tensor(rng, {2, 6, 5}, false);
  const Tensor p = random_tensor(rng, {1, 3, 6, 6}, false);
  for (const SegmentRanges& r : {singleton_ranges(6), ranges_of({})}) {
    for (Protocol proto : kProtocols) {
      CHECK(pool_1d(x, r, proto) == x);
      CHECK(pool_2d(p, r, proto) == p);
    }
    CHECK(pool_2d_row_stochastic(p, r) == p);
  }
}

TEST_CASE("pooling rejects bad shapes") {
  CHECK_THROWS_AS(pool_1d(Tensor({4, 3}), ranges_of({}), Protocol::Sum), ContractError);
  CHECK_THROWS_AS(pool_2d(Tensor({1, 1, 4, 3}), ranges_of({}), Protocol::Sum), ContractError);
  CHECK_THROWS_AS(pool_1d(Tensor({1, 4, 3}), ranges_of({{2, 4}}), Protocol::Sum), InputError);
}

TEST_CASE("protocol and granularity names") {
  for (Protocol p : kProtocols) CHECK(parse_protocol(to_string(p)) == p);
  CHECK(parse_granularity("phrase") == Granularity::Phrase);
  CHECK_THROWS_AS(parse_protocol("median"), InputError);
  CHECK_THROWS_AS(parse_granularity("clause"), InputError);
}
