#include <fstream>
#include <random>

#include "cap/errors.hpp"
#include "cap/pooling.hpp"
#include "cap/segments.hpp"
#include "doctest.h"
#include "json.hpp"
#include "test_support.hpp"

using namespace cap;
using cap::testing::gpt2_tokenizer;

namespace {

TokenizedText enc(std::string_view s) { return gpt2_tokenizer().encode(s); }

std::vector<TokenRange> words(std::string_view s, bool attach = false) {
  return word_ranges(enc(s), {attach}).ranges;
}

}  // namespace

TEST_CASE("single-token words produce no ranges") {
  CHECK(words("the cat sat on the mat").empty());
  const TokenizedText t = enc("hello world");
  CHECK(t.size() == 2);
  CHECK(group_dim(t.size(), word_ranges(t)) == 2);
}

TEST_CASE("multi-token words become ranges") {
  CHECK(words("unbelievably fast") == std::vector<TokenRange>{{0, 3}});
  CHECK(words("mammal") == std::vector<TokenRange>{{0, 2}});
  CHECK(words("a domesticated carnivorous mammal is called a") == std::vector<TokenRange>{{1, 2}, {3, 4}});
}

TEST_CASE("word ranges agree with the fixture generator") {
  std::ifstream in(cap::testing::fixture("tiny_gpt2/crosscheck.json"));
  const auto j = nlohmann::json::parse(in);
  for (const auto& rec : j["records"]) {
    const TokenizedText t = enc(rec["prompt"].get<std::string>());
    CHECK(t.ids == rec["ids"].get<std::vector<TokenId>>());
    std::vector<TokenRange> expected;
    for (const auto& r : rec["word_ranges"]) expected.push_back({r[0].get<std::size_t>(), r[1].get<std::size_t>()});
    const SegmentRanges got = word_ranges(t);
    CHECK(got.ranges == expected);
    CHECK(group_dim(t.size(), got) == rec["group_count"].get<std::size_t>());
  }
}

TEST_CASE("punctuation stays singleton unless attached") {
  CHECK(words("mammal.") == std::vector<TokenRange>{{0, 2}});
  CHECK(words("mammal.", true) == std::vector<TokenRange>{{0, 3}});
  CHECK(words("\"cat\" is a type of").empty());
  CHECK(words("\"cat\" is a type of", true) == std::vector<TokenRange>{{0, 2}});
  // "-" splits the run inside one whitespace-delimited word.
  CHECK(words("well-known") == std::vector<TokenRange>{});
}

TEST_CASE("whitespace tokens break runs and trailing whitespace is irrelevant") {
  CHECK(words("mammal  mammal") == std::vector<TokenRange>{{0, 2}});
  std::mt19937 rng(5);
  const std::vector<std::string> vocab{"mammal", "cat", "unbelievably", "x", "über", "dog's", "(zebra)", "42nd"};
  for (int i = 0; i < 300; ++i) {
    std::string text;
    const std::size_t n = 1 + rng() % 6;
    for (std::size_t w = 0; w < n; ++w) text += (w ? " " : "") + vocab[rng() % vocab.size()];
    const std::string padded = text + std::string(1 + rng() % 3, rng() % 2 ? ' ' : '\n');
    CAPTURE(text);
    CHECK(words(text) == words(padded));
    CHECK_NOTHROW(word_ranges(enc(padded)).validate(enc(padded).size()));
  }
}

TEST_CASE("phrase spans align to token ranges") {
  // tokens: a | domestic | ated | car | niv | orous | mammal | is | called | a
  const TokenizedText t = enc("a domesticated carnivorous mammal is called a");
  REQUIRE(t.size() == 9);

  SUBCASE("aligned") {
    const auto r = phrase_ranges(t, {{0, 33, "NP"}, {34, 45, "VP"}});
    CHECK(r.ranges.ranges == std::vector<TokenRange>{{0, 5}, {6, 8}});
    CHECK(r.warnings.empty());
    CHECK(r.ranges.granularity == Granularity::Phrase);
  }
  SUBCASE("span ending mid-token widens with a warning") {
    const auto r = phrase_ranges(t, {{2, 10, "X"}});
    CHECK(r.ranges.ranges == std::vector<TokenRange>{{1, 2}});
    CHECK(r.warnings.size() == 1);
  }
  SUBCASE("whole sentence") {
    const auto r = phrase_ranges(t, {{0, 45, "S"}});
    CHECK(r.ranges.ranges == std::vector<TokenRange>{{0, 8}});
    CHECK(group_dim(t.size(), r.ranges) == 1);
  }
  SUBCASE("single-token spans are dropped") {
    const auto r = phrase_ranges(t, {{0, 1, "DT"}, {27, 33, "NN"}});
    CHECK(r.ranges.ranges.empty());
    CHECK(r.warnings.empty());
  }
  SUBCASE("spans sharing a widened token merge") {
    const auto r = phrase_ranges(t, {{2, 6, "A"}, {6, 14, "B"}});
    CHECK(r.ranges.ranges == std::vector<TokenRange>{{1, 2}});
    CHECK(r.warnings.size() == 3);
  }
  SUBCASE("input errors") {
    CHECK_THROWS_AS(phrase_ranges(t, {{0, 10, "A"}, {5, 20, "B"}}), InputError);
    CHECK_THROWS_AS(phrase_ranges(t, {{10, 5, "A"}}), InputError);
    CHECK_THROWS_AS(phrase_ranges(t, {{0, 99, "A"}}), InputError);
  }
}

TEST_CASE("phrase alignment is monotone in the span") {
  const TokenizedText t = enc("the quick brown fox jumps over the lazy dog");
  const std::size_t n = t.text.size();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t e = s + 1; e <= n; ++e) {
      const auto inner = phrase_ranges(t, {{s, e, "X"}}).ranges.ranges;
      const auto outer = phrase_ranges(t, {{s > 0 ? s - 1 : 0, std::min(n, e + 1), "X"}}).ranges.ranges;
      if (inner.empty()) continue;
      REQUIRE(outer.size() == 1);
      CHECK(outer[0].first <= inner[0].first);
      CHECK(outer[0].last >= inner[0].last);
    }
  }
}

TEST_CASE("span offsets count code points") {
  const TokenizedText t = enc("über carnivorous");
  const auto r = phrase_ranges(t, {{5, 16, "NN"}});
  CHECK(r.warnings.empty());
  REQUIRE(r.ranges.ranges.size() == 1);
  CHECK(r.ranges.ranges[0].last == t.size() - 1);
  CHECK(t.offsets[r.ranges.ranges[0].first].start == 5);
  CHECK(r.ranges.ranges[0].length() == 2);
}

TEST_CASE("span file loading") {
  const auto dir = cap::testing::scratch_dir("spans");
  {
    std::ofstream f(dir / "ok.jsonl");
    f << R"({"id": "IDM-dog.n.01", "spans": [[0, 5, "NP"], [6, 10, "VP"]]})" << "\n\n";
    f << R"({"id": "x", "spans": []})" << "\n";
  }
  const PhraseSpanFile file = load_phrase_spans(dir / "ok.jsonl");
  CHECK(file.size() == 2);
  CHECK(file.at("IDM-dog.n.01") == std::vector<PhraseSpan>{{0, 5, "NP"}, {6, 10, "VP"}});
  {
    std::ofstream f(dir / "bad.jsonl");
    f << R"({"id": "a", "spans": [[0]]})" << "\n";
  }
  CHECK_THROWS_AS(load_phrase_spans(dir / "bad.jsonl"), InputError);
  CHECK_THROWS_AS(load_phrase_spans(dir / "none.jsonl"), LoadError);
}
