#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "cap/harness.hpp"

namespace cap {

inline constexpr int kReportSchemaVersion = 1;

struct RunConfig {
  std::filesystem::path weights;
  std::filesystem::path model_config;
  std::filesystem::path vocab;
  std::filesystem::path merges;
  std::filesystem::path dataset;
  std::optional<std::filesystem::path> spans;
  std::vector<Task> tasks{Task::IDM};
  std::vector<double> positions{1.0, 25.0, 50.0, 75.0, 100.0};
  std::vector<Protocol> protocols{Protocol::Sum, Protocol::Mean, Protocol::Max};
  std::vector<Granularity> granularities{Granularity::Word};
  Component component = Component::ResidPost;
  std::filesystem::path output_dir = "cap_out";
  std::uint64_t seed = 0;
  std::size_t max_items = 0;  // per task; 0 = all
  bool row_stochastic = false;
  bool attach_punctuation = false;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Throws ConfigError on unknown keys, bad values or an invalid shape.
RunConfig parse_run_config(std::string_view json_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string serialize_run_config(const RunConfig& config);

/// Grid and value checks; with check_files, every referenced input must exist.
void validate_run_config(const RunConfig& config, bool check_files = true);

struct TaskReport {
  Task task = Task::IDM;
  std::size_t n_items = 0;
  BaselineResult baseline;
  std::vector<EvalCell> cells;
  std::vector<ProtocolAverage> averages;
  std::vector<std::pair<Granularity, ReductionStats>> reduction;
};

struct RunReport {
  RunConfig config;
  std::string model_checksum;
  ModelConfig model;
  std::string tokenizer_checksum;
  std::string dataset_digest;
  std::size_t n_items_loaded = 0;
  std::size_t n_items_with_spans = 0;
  std::vector<TaskReport> tasks;
  std::vector<std::string> warnings;
};

/// Loads everything the config names, runs baseline and sweep per task.
RunReport execute_run(const RunConfig& config);

void write_results_csv(std::ostream& out, const RunReport& report);
void write_summary_json(std::ostream& out, const RunReport& report);
void write_plot_data(std::ostream& out, const RunReport& report);

struct RunArtifacts {
  std::filesystem::path results_csv;
  std::filesystem::path summary_json;
  std::filesystem::path plot_data;
};

/// Writes results.csv, summary.json and plot_data.csv into config.output_dir.
RunArtifacts write_artifacts(const RunReport& report);

/// Shortest decimal that round-trips the double.
std::string format_number(double value);

}  // namespace cap
