#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "cap/model.hpp"
#include "cap/pooling.hpp"
#include "cap/segments.hpp"
#include "cap/tasks.hpp"
#include "cap/tokenizer.hpp"

namespace cap {

struct PreparedItem {
  std::size_t index = 0;  // position in the evaluated item list
  TokenizedText prompt;
  TokenId target = 0;
};

struct BaselineResult {
  std::size_t n_items = 0;
  std::size_t n_multi_token_target = 0;  // " " + target is not one token
  std::size_t n_too_long = 0;            // prompt exceeds max_positions
  std::size_t n_evaluated = 0;
  std::size_t n_correct = 0;
  double accuracy = 0.0;  // n_correct / n_evaluated
  std::vector<PreparedItem> subset;
};

/// Evaluates every item with the unhooked model and keeps the correctly
/// predicted ones. Items are evaluated concurrently. Throws InputError on an
/// empty item list.
BaselineResult run_baseline(const Model& model, const BpeTokenizer& tokenizer, const std::vector<TaskItem>& items);

struct HookSpec {
  double layer_position = 100.0;
  Protocol protocol = Protocol::Mean;
  Granularity granularity = Granularity::Word;
  Component component = Component::ResidPost;
  bool row_stochastic = false;
  WordSegmentOptions word;
};

struct EvalCell {
  Task task = Task::IDM;
  HookSpec spec;
  std::size_t layer_index = 0;
  std::size_t n_examples = 0;
  std::size_t n_correct = 0;
  std::size_t n_unsegmented = 0;  // phrase cells: subset items without spans
  std::size_t n_span_warnings = 0;
  double a_o = 0.0;      // accuracy of the unhooked model on the cell's items
  double a_c = 0.0;      // accuracy with the hook installed
  double delta_a = 0.0;  // (a_o - a_c) in percentage points
  bool failed = false;
  std::string message;
};

/// (a_o - a_c) in percentage points.
double accuracy_drop(double a_o, double a_c);

/// Segment ranges for one prompt. Phrase granularity returns no value when the
/// item carries no spans.
std::optional<PhraseAlignment> segment_prompt(const TaskItem& item, const TokenizedText& prompt,
                                              Granularity granularity, const WordSegmentOptions& word = {});

/// Re-evaluates the baseline subset with a CAP hook, segmenting each prompt
/// afresh. Failures mark the cell failed instead of throwing.
EvalCell run_cap_cell(const Model& model, const std::vector<TaskItem>& items, const BaselineResult& baseline,
                      const HookSpec& spec);

struct SweepGrid {
  std::vector<double> positions;
  std::vector<Protocol> protocols;
  std::vector<Granularity> granularities;
  Component component = Component::ResidPost;
  bool row_stochastic = false;
  WordSegmentOptions word;
};

/// One cell per (granularity, position, protocol), in that nesting order.
std::vector<EvalCell> sweep(const Model& model, const std::vector<TaskItem>& items, const BaselineResult& baseline,
                            const SweepGrid& grid);

/// A_c averaged over the protocols of one (granularity, position) pair.
struct ProtocolAverage {
  Task task = Task::IDM;
  Granularity granularity = Granularity::Word;
  double layer_position = 0.0;
  std::size_t layer_index = 0;
  std::size_t n_protocols = 0;
  double mean_a_c = 0.0;
};

std::vector<ProtocolAverage> protocol_averages(const std::vector<EvalCell>& cells);

struct ReductionStats {
  std::size_t n_items = 0;
  std::size_t n_skipped = 0;  // phrase granularity: items without spans
  double mean = 0.0;          // percent
  double std = 0.0;           // population standard deviation, percent
};

/// Per-prompt (K - G) / K * 100 over the items' prompts.
ReductionStats reduction_stats(const std::vector<TaskItem>& items, const BpeTokenizer& tokenizer,
                               Granularity granularity, const WordSegmentOptions& word = {});

}  // namespace cap
