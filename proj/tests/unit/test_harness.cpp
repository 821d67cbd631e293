#include <cmath>
#include <fstream>
#include <set>

#include "cap/errors.hpp"
#include "cap/harness.hpp"
#include "cap/parallel.hpp"
#include "doctest.h"
#include "test_support.hpp"

using namespace cap;
using cap::testing::fixture;
using cap::testing::gpt2_tokenizer;

namespace {

const Model& tiny_model() {
  static const Model m =
      load_model(fixture("tiny_gpt2/model.safetensors"), load_model_config(fixture("tiny_gpt2/config.json")));
  return m;
}

std::vector<TaskItem> tiny_items(Task task) {
  auto items = load_dataset(fixture("tiny_eval.jsonl"));
  attach_spans(items, load_phrase_spans(fixture("tiny_eval_spans.jsonl")));
  return filter_tasks(items, {task});
}

TaskItem item(Task task, std::string source, std::string target, std::string id = "x") {
  return TaskItem{std::move(id), task, std::move(source), std::move(target), std::nullopt};
}

// Constant logits whose argmax is the given token.
Model fixed_answer_model(TokenId answer) {
  ModelConfig c = cap::testing::synthetic_config(50257);
  TensorMap m = cap::testing::synthetic_tensors(c, 77);
  m["ln_f.weight"] = Tensor({c.d_model}, 0.0f);
  Tensor bias({c.d_model}, 0.0f);
  bias[0] = 1.0f;
  m["ln_f.bias"] = bias;
  Tensor& wte = m["wte.weight"];
  for (std::size_t v = 0; v < c.vocab_size; ++v) wte.at(v, 0) = 0.0f;
  wte.at(static_cast<std::size_t>(answer), 0) = 1.0f;
  return Model::from_tensors(c, m);
}

std::string long_text() {
  std::string s = "dog";
  for (int i = 0; i < 80; ++i) s += " dog";
  return s;
}

}  // namespace

TEST_CASE("prompt templates") {
  CHECK(build_prompt(item(Task::IDM, "a domesticated carnivorous mammal", "dog")) ==
        "a domesticated carnivorous mammal is called a");
  CHECK(build_prompt(item(Task::SP, "happy", "joyful")) == "\"happy\" is a synonym of");
  CHECK(build_prompt(item(Task::HP, "cat", "animal")) == "\"cat\" is a type of");
  CHECK(parse_task("hp") == Task::HP);
  CHECK_THROWS_AS(parse_task("QA"), InputError);
}

TEST_CASE("phrase spans shift into prompt coordinates") {
  TaskItem it = item(Task::HP, "cat", "animal");
  it.phrase_spans = std::vector<PhraseSpan>{{0, 3, "NP"}};
  CHECK(prompt_spans(it) == std::vector<PhraseSpan>{{1, 4, "NP"}});
  it.task = Task::IDM;
  CHECK(prompt_spans(it) == std::vector<PhraseSpan>{{0, 3, "NP"}});
}

TEST_CASE("layer position mapping") {
  CHECK(layer_index_for(100, 12) == 11);
  CHECK(layer_index_for(1, 12) == 0);
  CHECK(layer_index_for(25, 12) == 2);
  CHECK_THROWS_AS(layer_index_for(0, 12), ConfigError);
  CHECK_THROWS_AS(layer_index_for(100.5, 12), ConfigError);
  // Integer re-derivation: round-half-up of p * n / 100, clamped to [1, n].
  for (std::size_t n : {12u, 24u, 36u}) {
    for (std::size_t p = 1; p <= 100; ++p) {
      const std::size_t rounded = (p * n * 2 + 100) / 200;
      const std::size_t expected = std::min(std::max<std::size_t>(rounded, 1), n) - 1;
      CHECK(layer_index_for(static_cast<double>(p), n) == expected);
    }
  }
}

TEST_CASE("dataset loading") {
  const auto dir = cap::testing::scratch_dir("dataset");
  {
    std::ofstream f(dir / "ok.jsonl");
    f << R"({"id": "a", "task": "IDM", "source_text": "x y", "target": "z"})" << "\n";
    f << R"({"id": "b", "task": "SP", "source_text": "x", "target": "w"})" << "\n";
  }
  CHECK(load_dataset(dir / "ok.jsonl").size() == 2);
  {
    std::ofstream f(dir / "bad.jsonl");
    f << R"({"id": "a", "task": "XX", "source_text": "x", "target": "z"})" << "\n";
  }
  CHECK_THROWS_AS(load_dataset(dir / "bad.jsonl"), InputError);
  {
    std::ofstream f(dir / "two_words.jsonl");
    f << R"({"id": "a", "task": "IDM", "source_text": "x", "target": "ice cream"})" << "\n";
  }
  CHECK_THROWS_AS(load_dataset(dir / "two_words.jsonl"), InputError);
  CHECK_THROWS_AS(load_dataset(dir / "missing.jsonl"), LoadError);
}

TEST_CASE("sampling is deterministic and order preserving") {
  const auto items = load_dataset(cap::testing::source_dir() / "data" / "wordnet" / "sp.test.jsonl");
  const auto a = sample_items(items, 50, 3), b = sample_items(items, 50, 3), c = sample_items(items, 50, 4);
  REQUIRE(a.size() == 50);
  std::vector<std::string> ids_a, ids_b, ids_c;
  for (const auto& it : a) ids_a.push_back(it.id);
  for (const auto& it : b) ids_b.push_back(it.id);
  for (const auto& it : c) ids_c.push_back(it.id);
  CHECK(ids_a == ids_b);
  CHECK(ids_a != ids_c);
  CHECK(sample_items(items, 0, 1).size() == items.size());
}

TEST_CASE("baseline with a model that always answers the same token") {
  const TokenId dog = *gpt2_tokenizer().single_token(" dog");
  const Model m = fixed_answer_model(dog);

  SUBCASE("every item correct") {
    const std::vector<TaskItem> items{item(Task::IDM, "a barking pet", "dog", "1"),
                                      item(Task::HP, "puppy", "dog", "2")};
    const BaselineResult b = run_baseline(m, gpt2_tokenizer(), items);
    CHECK(b.accuracy == 1.0);
    CHECK(b.subset.size() == 2);
  }
  SUBCASE("varied targets keep only the constant answer") {
    const std::vector<TaskItem> items{
        item(Task::IDM, "a barking pet", "dog", "1"),     item(Task::IDM, "a purring pet", "cat", "2"),
        item(Task::SP, "hound", "dog", "3"),              item(Task::SP, "glad", "happy", "4"),
        item(Task::HP, "poodle", "carnivorous", "5"),     item(Task::HP, long_text(), "dog", "6")};
    const BaselineResult b = run_baseline(m, gpt2_tokenizer(), items);
    CHECK(b.n_items == 6);
    CHECK(b.n_multi_token_target == 1);
    CHECK(b.n_too_long == 1);
    CHECK(b.n_evaluated == 4);
    CHECK(b.n_correct == 2);
    CHECK(b.accuracy == 0.5);
    REQUIRE(b.subset.size() == 2);
    CHECK(b.subset[0].index == 0);
    CHECK(b.subset[1].index == 2);
    CHECK(b.subset[0].target == dog);
    CHECK(b.n_evaluated + b.n_multi_token_target + b.n_too_long == b.n_items);
  }
  SUBCASE("empty dataset") { CHECK_THROWS_AS(run_baseline(m, gpt2_tokenizer(), {}), InputError); }
}

TEST_CASE("transparent grouping keeps every baseline answer") {
  const auto items = tiny_items(Task::IDM);
  const BaselineResult b = run_baseline(tiny_model(), gpt2_tokenizer(), items);
  REQUIRE(b.subset.size() >= 5);
  for (const PreparedItem& p : b.subset) CHECK(p.index < items.size());

  // Phrase spans that cover single tokens collapse nothing.
  std::vector<TaskItem> single = items;
  for (TaskItem& it : single) it.phrase_spans = std::vector<PhraseSpan>{{0, 1, "DT"}};
  for (Protocol p : {Protocol::Sum, Protocol::Mean, Protocol::Max}) {
    for (double pos : {1.0, 50.0, 100.0}) {
      const EvalCell cell = run_cap_cell(tiny_model(), single, b, {pos, p, Granularity::Phrase});
      CHECK_FALSE(cell.failed);
      CHECK(cell.a_c == 1.0);
      CHECK(cell.delta_a == 0.0);
      CHECK(cell.n_examples == b.subset.size());
    }
  }
}

TEST_CASE("cells satisfy the accuracy identity and sweeps equal single cells") {
  for (Task task : {Task::IDM, Task::SP, Task::HP}) {
    const auto items = tiny_items(task);
    const BaselineResult b = run_baseline(tiny_model(), gpt2_tokenizer(), items);
    REQUIRE_FALSE(b.subset.empty());
    SweepGrid grid{{1, 25, 75, 100}, {Protocol::Sum, Protocol::Mean, Protocol::Max}, {Granularity::Word}};
    const auto cells = sweep(tiny_model(), items, b, grid);
    REQUIRE(cells.size() == 12);
    std::size_t k = 0;
    for (double pos : grid.positions) {
      for (Protocol p : grid.protocols) {
        const EvalCell& c = cells[k++];
        CHECK(c.task == task);
        CHECK(c.spec.layer_position == pos);
        CHECK(c.spec.protocol == p);
        CHECK_FALSE(c.failed);
        CHECK(c.a_c >= 0.0);
        CHECK(c.a_c <= 1.0);
        CHECK(std::abs(c.delta_a - (c.a_o - c.a_c) * 100.0) < 1e-9);
        CHECK(c.n_correct <= c.n_examples);
        const EvalCell single = run_cap_cell(tiny_model(), items, b, c.spec);
        CHECK(single.n_correct == c.n_correct);
        CHECK(single.a_c == c.a_c);
        CHECK(single.layer_index == c.layer_index);
      }
    }
    const auto averages = protocol_averages(cells);
    CHECK(averages.size() == 4);
    for (const auto& a : averages) {
      double sum = 0;
      for (const auto& c : cells)
        if (c.spec.layer_position == a.layer_position) sum += c.a_c;
      CHECK(a.mean_a_c == doctest::Approx(sum / 3));
    }
  }
}

TEST_CASE("hooks change some answers") {
  const auto items = tiny_items(Task::HP);
  const BaselineResult b = run_baseline(tiny_model(), gpt2_tokenizer(), items);
  std::size_t changed = 0;
  for (Protocol p : {Protocol::Sum, Protocol::Mean, Protocol::Max}) {
    changed += b.subset.size() - run_cap_cell(tiny_model(), items, b, {1.0, p, Granularity::Word}).n_correct;
  }
  CHECK(changed > 0);
}

TEST_CASE("failing cells do not abort the grid") {
  const auto items = tiny_items(Task::SP);
  const BaselineResult b = run_baseline(tiny_model(), gpt2_tokenizer(), items);
  SweepGrid grid{{0.0, 100.0}, {Protocol::Mean}, {Granularity::Word}};
  const auto cells = sweep(tiny_model(), items, b, grid);
  REQUIRE(cells.size() == 2);
  CHECK(cells[0].failed);
  CHECK_FALSE(cells[0].message.empty());
  CHECK_FALSE(cells[1].failed);

  std::vector<TaskItem> no_spans = items;
  for (auto& it : no_spans) it.phrase_spans.reset();
  const EvalCell phrase = run_cap_cell(tiny_model(), no_spans, b, {50.0, Protocol::Sum, Granularity::Phrase});
  CHECK(phrase.failed);
  CHECK(phrase.n_unsegmented == b.subset.size());
  CHECK(std::abs(phrase.delta_a - (phrase.a_o - phrase.a_c) * 100.0) < 1e-9);

  CHECK_THROWS_AS(sweep(tiny_model(), items, b, SweepGrid{{}, {Protocol::Sum}, {Granularity::Word}}), ConfigError);
}

TEST_CASE("phrase cells use the span file") {
  const auto items = tiny_items(Task::IDM);
  const BaselineResult b = run_baseline(tiny_model(), gpt2_tokenizer(), items);
  const EvalCell cell = run_cap_cell(tiny_model(), items, b, {50.0, Protocol::Mean, Granularity::Phrase});
  CHECK_FALSE(cell.failed);
  CHECK(cell.n_examples == b.subset.size());
}

TEST_CASE("results do not depend on the thread count") {
  const auto items = tiny_items(Task::IDM);
  const int before = num_threads();
  set_num_threads(1);
  const BaselineResult b1 = run_baseline(tiny_model(), gpt2_tokenizer(), items);
  const EvalCell c1 = run_cap_cell(tiny_model(), items, b1, {25.0, Protocol::Max, Granularity::Word});
  set_num_threads(4);
  const BaselineResult b4 = run_baseline(tiny_model(), gpt2_tokenizer(), items);
  const EvalCell c4 = run_cap_cell(tiny_model(), items, b4, {25.0, Protocol::Max, Granularity::Word});
  set_num_threads(before);
  CHECK(b1.n_correct == b4.n_correct);
  CHECK(c1.n_correct == c4.n_correct);
}

TEST_CASE("reduction statistics") {
  SUBCASE("single-token words reduce nothing") {
    const std::vector<TaskItem> items{item(Task::IDM, "the cat sat on the mat", "x"),
                                      item(Task::IDM, "a dog", "y")};
    const ReductionStats s = reduction_stats(items, gpt2_tokenizer(), Granularity::Word);
    CHECK(s.n_items == 2);
    CHECK(s.mean == 0.0);
    CHECK(s.std == 0.0);
  }
  SUBCASE("hand computed") {
    // "mammal is called a": K = 6, G = 4 -> 33.33%; "a dog is called a": 0%.
    const std::vector<TaskItem> items{item(Task::IDM, "mammal", "x"), item(Task::IDM, "a dog", "y")};
    const ReductionStats s = reduction_stats(items, gpt2_tokenizer(), Granularity::Word);
    const double r = 2.0 / 6.0 * 100.0;
    CHECK(s.mean == doctest::Approx(r / 2));
    CHECK(s.std == doctest::Approx(r / 2));
  }
  SUBCASE("phrase granularity skips items without spans") {
    std::vector<TaskItem> items{item(Task::HP, "carnivorous", "x"), item(Task::HP, "cat", "y")};
    items[0].phrase_spans = std::vector<PhraseSpan>{{0, 11, "NP"}};
    const ReductionStats s = reduction_stats(items, gpt2_tokenizer(), Granularity::Phrase);
    CHECK(s.n_items == 1);
    CHECK(s.n_skipped == 1);
    CHECK(s.mean > 0.0);
  }
}
