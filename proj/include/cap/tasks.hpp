#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cap/segments.hpp"

namespace cap {

/// IDM: definition -> term. SP: word -> synonym. HP: word -> hypernym.
enum class Task { IDM, SP, HP };

std::string to_string(Task t);
Task parse_task(const std::string& name);

struct TaskItem {
  std::string id;
  Task task = Task::IDM;
  std::string source_text;
  std::string target;
  std::optional<std::vector<PhraseSpan>> phrase_spans;  // offsets into source_text
};

/// JSON Lines, one {"id","task","source_text","target"} object per line.
std::vector<TaskItem> load_dataset(const std::filesystem::path& path);

/// Attaches spans by id; returns the number of items that received spans.
std::size_t attach_spans(std::vector<TaskItem>& items, const PhraseSpanFile& spans);

/// FNV-1a 64 of the file bytes, as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

/// Keeps items of the listed tasks, in file order.
std::vector<TaskItem> filter_tasks(const std::vector<TaskItem>& items, const std::vector<Task>& tasks);

/// Deterministic sample of at most n items (file order preserved); n == 0 keeps all.
std::vector<TaskItem> sample_items(const std::vector<TaskItem>& items, std::size_t n, std::uint64_t seed);

std::string build_prompt(const TaskItem& item);

/// Code points of the prompt that precede source_text.
std::size_t prompt_source_offset(Task task);

/// Phrase spans shifted from source_text into prompt coordinates.
std::vector<PhraseSpan> prompt_spans(const TaskItem& item);

/// 0-based layer for a depth percentage in (0, 100]:
/// clamp(round(position / 100 * n_layers), 1, n_layers) - 1.
std::size_t layer_index_for(double position_pct, std::size_t n_layers);

}  // namespace cap
