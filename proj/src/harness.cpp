#include "cap/harness.hpp"

#include <cmath>
#include <map>

#include "cap/cap_hook.hpp"
#include "cap/errors.hpp"

namespace cap {

BaselineResult run_baseline(const Model& model, const BpeTokenizer& tokenizer, const std::vector<TaskItem>& items) {
  if (items.empty()) throw InputError("baseline: empty dataset");
  const std::size_t n = items.size();
  BaselineResult result;
  result.n_items = n;

  std::vector<PreparedItem> prepared(n);
  enum Status : unsigned char { MultiToken, TooLong, Wrong, Correct };
  std::vector<Status> status(n, Wrong);
  std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const auto target = tokenizer.single_token(" " + items[i].target);
      if (!target) {
        status[i] = MultiToken;
        continue;
      }
      prepared[i] = {i, tokenizer.encode(build_prompt(items[i])), *target};
      if (prepared[i].prompt.size() > model.config().max_positions) {
        status[i] = TooLong;
        continue;
      }
      const TokenId predicted = predict_next(model, prepared[i].prompt.ids, nullptr, Backend::Serial);
      status[i] = predicted == *target ? Correct : Wrong;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw Error("baseline item " + items[i].id + ": " + errors[i]);
    switch (status[i]) {
      case MultiToken: ++result.n_multi_token_target; break;
      case TooLong: ++result.n_too_long; break;
      case Wrong: ++result.n_evaluated; break;
      case Correct:
        ++result.n_evaluated;
        ++result.n_correct;
        result.subset.push_back(std::move(prepared[i]));
        break;
    }
  }
  result.accuracy = result.n_evaluated ? static_cast<double>(result.n_correct) / result.n_evaluated : 0.0;
  return result;
}

double accuracy_drop(double a_o, double a_c) { return (a_o - a_c) * 100.0; }

std::optional<PhraseAlignment> segment_prompt(const TaskItem& item, const TokenizedText& prompt,
                                              Granularity granularity, const WordSegmentOptions& word) {
  if (granularity == Granularity::Word) return PhraseAlignment{word_ranges(prompt, word), {}};
  if (!item.phrase_spans) return std::nullopt;
  return phrase_ranges(prompt, prompt_spans(item));
}

EvalCell run_cap_cell(const Model& model, const std::vector<TaskItem>& items, const BaselineResult& baseline,
                      const HookSpec& spec) {
  EvalCell cell;
  cell.spec = spec;
  if (!items.empty()) cell.task = items.front().task;
  try {
    cell.layer_index = layer_index_for(spec.layer_position, model.config().n_layers);
  } catch (const Error& e) {
    cell.failed = true;
    cell.message = e.what();
    return cell;
  }
  const HookSite site{cell.layer_index, spec.component};

  const std::size_t n = baseline.subset.size();
  enum Status : unsigned char { Unsegmented, Wrong, Correct, Failed };
  std::vector<Status> status(n, Wrong);
  std::vector<std::size_t> warnings(n, 0);
  std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic, 1)
  for (std::size_t i = 0; i < n; ++i) {
    const PreparedItem& p = baseline.subset[i];
    try {
      auto alignment = segment_prompt(items.at(p.index), p.prompt, spec.granularity, spec.word);
      if (!alignment) {
        status[i] = Unsegmented;
        continue;
      }
      warnings[i] = alignment->warnings.size();
      const CapHook hook = CapHook::for_site(site, spec.protocol, std::move(alignment->ranges), spec.row_stochastic);
      const HookedForward hooked = install(model, hook, p.prompt.size(), Backend::Serial);
      status[i] = hooked.predict_next(p.prompt.ids) == p.target ? Correct : Wrong;
    } catch (const std::exception& e) {
      status[i] = Failed;
      errors[i] = e.what();
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    cell.n_span_warnings += warnings[i];
    switch (status[i]) {
      case Unsegmented: ++cell.n_unsegmented; break;
      case Correct: ++cell.n_correct; [[fallthrough]];
      case Wrong: ++cell.n_examples; break;
      case Failed:
        if (!cell.failed) cell.message = "item " + items.at(baseline.subset[i].index).id + ": " + errors[i];
        cell.failed = true;
        break;
    }
  }
  if (cell.failed) {
    cell.n_examples = cell.n_correct = 0;
    return cell;
  }
  if (cell.n_examples == 0) {
    cell.failed = true;
    cell.message = n == 0 ? "empty baseline subset" : "no baseline item has phrase spans";
    return cell;
  }
  // Every subset item was answered correctly without the hook.
  cell.a_o = 1.0;
  cell.a_c = static_cast<double>(cell.n_correct) / static_cast<double>(cell.n_examples);
  cell.delta_a = accuracy_drop(cell.a_o, cell.a_c);
  return cell;
}

std::vector<EvalCell> sweep(const Model& model, const std::vector<TaskItem>& items, const BaselineResult& baseline,
                            const SweepGrid& grid) {
  if (grid.positions.empty() || grid.protocols.empty() || grid.granularities.empty()) {
    throw ConfigError("sweep: every grid axis needs at least one value");
  }
  std::vector<EvalCell> cells;
  for (Granularity g : grid.granularities) {
    for (double position : grid.positions) {
      for (Protocol protocol : grid.protocols) {
        HookSpec spec{position, protocol, g, grid.component, grid.row_stochastic, grid.word};
        cells.push_back(run_cap_cell(model, items, baseline, spec));
      }
    }
  }
  return cells;
}

std::vector<ProtocolAverage> protocol_averages(const std::vector<EvalCell>& cells) {
  std::vector<ProtocolAverage> out;
  std::map<std::tuple<int, int, double>, std::size_t> slot;
  for (const EvalCell& c : cells) {
    if (c.failed) continue;
    const auto key = std::make_tuple(static_cast<int>(c.task), static_cast<int>(c.spec.granularity),
                                     c.spec.layer_position);
    auto [it, inserted] = slot.emplace(key, out.size());
    if (inserted) out.push_back({c.task, c.spec.granularity, c.spec.layer_position, c.layer_index, 0, 0.0});
    ProtocolAverage& avg = out[it->second];
    avg.mean_a_c += c.a_c;
    ++avg.n_protocols;
  }
  for (ProtocolAverage& avg : out) avg.mean_a_c /= static_cast<double>(avg.n_protocols);
  return out;
}

ReductionStats reduction_stats(const std::vector<TaskItem>& items, const BpeTokenizer& tokenizer,
                               Granularity granularity, const WordSegmentOptions& word) {
  const std::size_t n = items.size();
  std::vector<double> reduction(n, 0.0);
  std::vector<char> skipped(n, 0);
  std::vector<std::string> errors(n);

#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < n; ++i) {
    try {
      const TokenizedText prompt = tokenizer.encode(build_prompt(items[i]));
      const auto alignment = segment_prompt(items[i], prompt, granularity, word);
      if (!alignment) {
        skipped[i] = 1;
        continue;
      }
      const double k = static_cast<double>(prompt.size());
      const double g = static_cast<double>(group_dim(prompt.size(), alignment->ranges));
      reduction[i] = (k - g) / k * 100.0;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  }

  ReductionStats stats;
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!errors[i].empty()) throw Error("reduction stats, item " + items[i].id + ": " + errors[i]);
    if (skipped[i]) {
      ++stats.n_skipped;
      continue;
    }
    ++stats.n_items;
    sum += reduction[i];
  }
  if (stats.n_items == 0) return stats;
  stats.mean = sum / static_cast<double>(stats.n_items);
  double sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!skipped[i]) sq += (reduction[i] - stats.mean) * (reduction[i] - stats.mean);
  }
  stats.std = std::sqrt(sq / static_cast<double>(stats.n_items));
  return stats;
}

}  // namespace cap
