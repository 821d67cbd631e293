#include "cap/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <random>

#include "cap/errors.hpp"
#include "json.hpp"

namespace cap {

std::string to_string(Task t) {
  switch (t) {
    case Task::IDM: return "IDM";
    case Task::SP: return "SP";
    case Task::HP: return "HP";
  }
  return "?";
}

Task parse_task(const std::string& name) {
  std::string upper = name;
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "IDM") return Task::IDM;
  if (upper == "SP") return Task::SP;
  if (upper == "HP") return Task::HP;
  throw InputError("unknown task '" + name + "'");
}

std::vector<TaskItem> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open dataset " + path.string());
  std::vector<TaskItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const auto j = nlohmann::json::parse(line);
      TaskItem item;
      item.id = j.at("id").is_string() ? j.at("id").get<std::string>() : j.at("id").dump();
      item.task = parse_task(j.at("task").get<std::string>());
      item.source_text = j.at("source_text").get<std::string>();
      item.target = j.at("target").get<std::string>();
      if (item.target.empty()) throw InputError(where + ": empty target");
      if (item.target.find_first_of(" \t\r\n") != std::string::npos) {
        throw InputError(where + ": target must be a single word");
      }
      items.push_back(std::move(item));
    } catch (const nlohmann::json::exception& e) {
      throw InputError(where + ": " + e.what());
    } catch (const InputError& e) {
      throw InputError(where + ": " + e.what());
    }
  }
  return items;
}

std::size_t attach_spans(std::vector<TaskItem>& items, const PhraseSpanFile& spans) {
  std::size_t attached = 0;
  for (TaskItem& item : items) {
    auto it = spans.find(item.id);
    if (it == spans.end()) continue;
    item.phrase_spans = it->second;
    ++attached;
  }
  return attached;
}

std::string file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (auto it = std::istreambuf_iterator<char>(in); it != std::istreambuf_iterator<char>(); ++it) {
    h = (h ^ static_cast<unsigned char>(*it)) * 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<TaskItem> filter_tasks(const std::vector<TaskItem>& items, const std::vector<Task>& tasks) {
  std::vector<TaskItem> out;
  std::copy_if(items.begin(), items.end(), std::back_inserter(out), [&](const TaskItem& item) {
    return std::find(tasks.begin(), tasks.end(), item.task) != tasks.end();
  });
  return out;
}

std::vector<TaskItem> sample_items(const std::vector<TaskItem>& items, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= items.size()) return items;
  std::vector<std::size_t> order(items.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  // Fisher-Yates driven directly by the engine so the sample is identical across standard libraries.
  std::mt19937_64 rng(seed);
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);
  order.resize(n);
  std::sort(order.begin(), order.end());
  std::vector<TaskItem> out;
  for (std::size_t i : order) out.push_back(items[i]);
  return out;
}

std::string build_prompt(const TaskItem& item) {
  switch (item.task) {
    case Task::IDM: return item.source_text + " is called a";
    case Task::SP: return "\"" + item.source_text + "\" is a synonym of";
    case Task::HP: return "\"" + item.source_text + "\" is a type of";
  }
  throw InputError("unknown task for item " + item.id);
}

std::size_t prompt_source_offset(Task task) { return task == Task::IDM ? 0 : 1; }

std::vector<PhraseSpan> prompt_spans(const TaskItem& item) {
  std::vector<PhraseSpan> spans = item.phrase_spans.value_or(std::vector<PhraseSpan>{});
  const std::size_t shift = prompt_source_offset(item.task);
  for (PhraseSpan& s : spans) {
    s.start += shift;
    s.end += shift;
  }
  return spans;
}

std::size_t layer_index_for(double position_pct, std::size_t n_layers) {
  if (!(position_pct > 0.0) || position_pct > 100.0) {
    throw ConfigError("layer position must be in (0, 100], got " + std::to_string(position_pct));
  }
  if (n_layers == 0) throw ConfigError("model has no layers");
  const double scaled = std::round(position_pct / 100.0 * static_cast<double>(n_layers));
  const double clamped = std::clamp(scaled, 1.0, static_cast<double>(n_layers));
  return static_cast<std::size_t>(clamped) - 1;
}

}  // namespace cap
