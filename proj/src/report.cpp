#include "cap/report.hpp"

#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "cap/errors.hpp"
#include "json.hpp"

namespace cap {

using ojson = nlohmann::ordered_json;

std::string format_number(double value) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, r.ptr);
}

// ----------------------------------------------------------------- config

namespace {

const std::set<std::string> kConfigKeys = {
    "weights",   "model_config", "vocab",       "merges",         "dataset",        "spans",
    "tasks",     "positions",    "protocols",   "granularities",  "component",      "output_dir",
    "seed",      "max_items",    "row_stochastic_patterns", "attach_punctuation",
};

template <typename T, typename Parse>
std::vector<T> parse_list(const nlohmann::json& j, const char* key, Parse parse) {
  if (!j.is_array()) throw ConfigError(std::string("run config: '") + key + "' must be a list");
  std::vector<T> out;
  for (const auto& v : j) out.push_back(parse(v.get<std::string>()));
  return out;
}

ojson config_json(const RunConfig& c) {
  ojson j;
  j["weights"] = c.weights.string();
  j["model_config"] = c.model_config.string();
  j["vocab"] = c.vocab.string();
  j["merges"] = c.merges.string();
  j["dataset"] = c.dataset.string();
  j["spans"] = c.spans ? ojson(c.spans->string()) : ojson(nullptr);
  j["tasks"] = ojson::array();
  for (Task t : c.tasks) j["tasks"].push_back(to_string(t));
  j["positions"] = c.positions;
  j["protocols"] = ojson::array();
  for (Protocol p : c.protocols) j["protocols"].push_back(to_string(p));
  j["granularities"] = ojson::array();
  for (Granularity g : c.granularities) j["granularities"].push_back(to_string(g));
  j["component"] = to_string(c.component);
  j["output_dir"] = c.output_dir.string();
  j["seed"] = c.seed;
  j["max_items"] = c.max_items;
  j["row_stochastic_patterns"] = c.row_stochastic;
  j["attach_punctuation"] = c.attach_punctuation;
  return j;
}

}  // namespace

RunConfig parse_run_config(std::string_view json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kConfigKeys.count(key)) throw ConfigError("run config: unknown key '" + key + "'");
  }
  RunConfig c;
  try {
    auto path = [&](const char* key, std::filesystem::path& out) {
      if (j.contains(key)) out = j[key].get<std::string>();
    };
    path("weights", c.weights);
    path("model_config", c.model_config);
    path("vocab", c.vocab);
    path("merges", c.merges);
    path("dataset", c.dataset);
    path("output_dir", c.output_dir);
    if (j.contains("spans") && !j["spans"].is_null()) c.spans = j["spans"].get<std::string>();
    if (j.contains("tasks")) c.tasks = parse_list<Task>(j["tasks"], "tasks", parse_task);
    if (j.contains("positions")) c.positions = j["positions"].get<std::vector<double>>();
    if (j.contains("protocols")) c.protocols = parse_list<Protocol>(j["protocols"], "protocols", parse_protocol);
    if (j.contains("granularities")) {
      c.granularities = parse_list<Granularity>(j["granularities"], "granularities", parse_granularity);
    }
    if (j.contains("component")) c.component = parse_component(j["component"].get<std::string>());
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("max_items")) c.max_items = j["max_items"].get<std::size_t>();
    if (j.contains("row_stochastic_patterns")) c.row_stochastic = j["row_stochastic_patterns"].get<bool>();
    if (j.contains("attach_punctuation")) c.attach_punctuation = j["attach_punctuation"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  } catch (const InputError& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  validate_run_config(c, false);
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open run config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_run_config(buffer.str());
}

std::string serialize_run_config(const RunConfig& config) { return config_json(config).dump(2) + "\n"; }

void validate_run_config(const RunConfig& c, bool check_files) {
  if (c.tasks.empty()) throw ConfigError("run config: tasks is empty");
  if (c.positions.empty()) throw ConfigError("run config: positions is empty");
  if (c.protocols.empty()) throw ConfigError("run config: protocols is empty");
  if (c.granularities.empty()) throw ConfigError("run config: granularities is empty");
  for (double p : c.positions) {
    if (!(p > 0.0) || p > 100.0) throw ConfigError("run config: position " + format_number(p) + " outside (0, 100]");
  }
  if (c.output_dir.empty()) throw ConfigError("run config: output_dir is empty");
  const bool wants_phrase =
      std::find(c.granularities.begin(), c.granularities.end(), Granularity::Phrase) != c.granularities.end();
  if (wants_phrase && !c.spans) throw ConfigError("run config: phrase granularity needs a spans file");
  if (!check_files) return;
  auto require = [](const std::filesystem::path& p, const char* what) {
    if (p.empty()) throw ConfigError(std::string("run config: ") + what + " path is missing");
    if (!std::filesystem::is_regular_file(p)) {
      throw ConfigError(std::string("run config: ") + what + " '" + p.string() + "' does not exist");
    }
  };
  require(c.weights, "weights");
  require(c.model_config, "model_config");
  require(c.vocab, "vocab");
  require(c.merges, "merges");
  require(c.dataset, "dataset");
  if (c.spans) require(*c.spans, "spans");
}

// ----------------------------------------------------------------- running

RunReport execute_run(const RunConfig& config) {
  validate_run_config(config, true);
  RunReport report;
  report.config = config;

  const ModelConfig model_config = load_model_config(config.model_config);
  const BpeTokenizer tokenizer = BpeTokenizer::load(config.vocab, config.merges);
  check_vocab_compatible(model_config, tokenizer.vocab_size());
  const Model model = load_model(config.weights, model_config);
  report.model = model_config;
  report.model_checksum = model.checksum();
  report.tokenizer_checksum = tokenizer.checksum();
  report.dataset_digest = file_digest(config.dataset);

  std::vector<TaskItem> items = load_dataset(config.dataset);
  report.n_items_loaded = items.size();
  if (config.spans) report.n_items_with_spans = attach_spans(items, load_phrase_spans(*config.spans));

  SweepGrid grid{config.positions, config.protocols, config.granularities, config.component, config.row_stochastic,
                 WordSegmentOptions{config.attach_punctuation}};
  for (Task task : config.tasks) {
    TaskReport tr;
    tr.task = task;
    const std::vector<TaskItem> task_items = sample_items(filter_tasks(items, {task}), config.max_items, config.seed);
    tr.n_items = task_items.size();
    if (task_items.empty()) {
      report.warnings.push_back(to_string(task) + ": no items in the dataset");
      report.tasks.push_back(std::move(tr));
      continue;
    }
    tr.baseline = run_baseline(model, tokenizer, task_items);
    if (tr.baseline.n_multi_token_target) {
      report.warnings.push_back(to_string(task) + ": " + std::to_string(tr.baseline.n_multi_token_target) +
                                " items skipped, target is not a single token");
    }
    if (tr.baseline.n_too_long) {
      report.warnings.push_back(to_string(task) + ": " + std::to_string(tr.baseline.n_too_long) +
                                " items skipped, prompt longer than max_positions");
    }
    tr.cells = sweep(model, task_items, tr.baseline, grid);
    tr.averages = protocol_averages(tr.cells);
    for (const EvalCell& c : tr.cells) {
      const std::string name = to_string(task) + " " + to_string(c.spec.granularity) + " " +
                               to_string(c.spec.protocol) + " @" + format_number(c.spec.layer_position) + "%";
      if (c.failed) report.warnings.push_back(name + ": cell failed: " + c.message);
      if (c.n_span_warnings) {
        report.warnings.push_back(name + ": " + std::to_string(c.n_span_warnings) + " span alignment warnings");
      }
      if (c.n_unsegmented) {
        report.warnings.push_back(name + ": " + std::to_string(c.n_unsegmented) + " items without phrase spans");
      }
    }
    for (Granularity g : config.granularities) {
      tr.reduction.emplace_back(g, reduction_stats(task_items, tokenizer, g, grid.word));
    }
    report.tasks.push_back(std::move(tr));
  }
  return report;
}

// ----------------------------------------------------------------- writers

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

ojson cell_json(const EvalCell& c) {
  ojson j;
  j["task"] = to_string(c.task);
  j["granularity"] = to_string(c.spec.granularity);
  j["protocol"] = to_string(c.spec.protocol);
  j["component"] = to_string(c.spec.component);
  j["layer_position"] = c.spec.layer_position;
  j["layer_index"] = c.layer_index;
  j["n_examples"] = c.n_examples;
  j["n_correct"] = c.n_correct;
  j["n_unsegmented"] = c.n_unsegmented;
  j["n_span_warnings"] = c.n_span_warnings;
  j["a_o"] = c.a_o;
  j["a_c"] = c.a_c;
  j["delta_a"] = c.delta_a;
  j["status"] = c.failed ? "failed" : "ok";
  j["message"] = c.message;
  return j;
}

}  // namespace

void write_results_csv(std::ostream& out, const RunReport& report) {
  out << "schema_version,task,granularity,protocol,component,layer_position,layer_index,n_examples,n_correct,"
         "n_unsegmented,a_o,a_c,delta_a,status,message\n";
  for (const TaskReport& tr : report.tasks) {
    for (const EvalCell& c : tr.cells) {
      out << kReportSchemaVersion << ',' << to_string(c.task) << ',' << to_string(c.spec.granularity) << ','
          << to_string(c.spec.protocol) << ',' << to_string(c.spec.component) << ','
          << format_number(c.spec.layer_position) << ',' << c.layer_index << ',' << c.n_examples << ','
          << c.n_correct << ',' << c.n_unsegmented << ',' << format_number(c.a_o) << ',' << format_number(c.a_c)
          << ',' << format_number(c.delta_a) << ',' << (c.failed ? "failed" : "ok") << ',' << csv_field(c.message)
          << '\n';
    }
  }
}

void write_plot_data(std::ostream& out, const RunReport& report) {
  out << "schema_version,task,granularity,layer_position,layer_index,n_protocols,mean_grouped_accuracy\n";
  for (const TaskReport& tr : report.tasks) {
    for (const ProtocolAverage& a : tr.averages) {
      out << kReportSchemaVersion << ',' << to_string(a.task) << ',' << to_string(a.granularity) << ','
          << format_number(a.layer_position) << ',' << a.layer_index << ',' << a.n_protocols << ','
          << format_number(a.mean_a_c) << '\n';
    }
  }
}

void write_summary_json(std::ostream& out, const RunReport& report) {
  ojson j;
  j["schema_version"] = kReportSchemaVersion;
  j["code_version"] = CAP_VERSION;
  j["config"] = config_json(report.config);
  j["model"] = {{"checksum", report.model_checksum}, {"config", ojson::parse(serialize_model_config(report.model))}};
  j["tokenizer"] = {{"checksum", report.tokenizer_checksum}};
  j["dataset"] = {{"digest", report.dataset_digest},
                  {"n_items_loaded", report.n_items_loaded},
                  {"n_items_with_spans", report.n_items_with_spans}};
  j["hook_site"] = {{"component", to_string(report.config.component)},
                    {"note", "the component behind the reference accuracy tables is unspecified; "
                             "resid_post is the default and other sites are exposed for comparison"}};

  ojson layer_map = ojson::array();
  for (double p : report.config.positions) {
    layer_map.push_back({{"layer_position", p},
                         {"layer_index", layer_index_for(p, report.model.n_layers)},
                         {"rule", "clamp(round(position / 100 * n_layers), 1, n_layers) - 1"}});
  }
  j["layer_map"] = layer_map;

  ojson tasks = ojson::array();
  for (const TaskReport& tr : report.tasks) {
    ojson t;
    t["task"] = to_string(tr.task);
    t["n_items"] = tr.n_items;
    const BaselineResult& b = tr.baseline;
    t["baseline"] = {{"n_items", b.n_items},
                     {"n_multi_token_target", b.n_multi_token_target},
                     {"n_too_long", b.n_too_long},
                     {"n_evaluated", b.n_evaluated},
                     {"n_correct", b.n_correct},
                     {"accuracy", b.accuracy},
                     {"subset_size", b.subset.size()}};
    t["cells"] = ojson::array();
    for (const EvalCell& c : tr.cells) t["cells"].push_back(cell_json(c));
    t["protocol_averaged_a_c"] = ojson::array();
    for (const ProtocolAverage& a : tr.averages) {
      t["protocol_averaged_a_c"].push_back({{"granularity", to_string(a.granularity)},
                                            {"layer_position", a.layer_position},
                                            {"layer_index", a.layer_index},
                                            {"n_protocols", a.n_protocols},
                                            {"mean_a_c", a.mean_a_c}});
    }
    t["reduction"] = ojson::array();
    for (const auto& [g, r] : tr.reduction) {
      t["reduction"].push_back({{"granularity", to_string(g)},
                                {"n_items", r.n_items},
                                {"n_skipped", r.n_skipped},
                                {"mean_pct", r.mean},
                                {"std_pct", r.std}});
    }
    tasks.push_back(t);
  }
  j["tasks"] = tasks;
  j["reduction_reference"] = {
      {"word_mean_pct", {{"IDM", 3}, {"HP", 27}}},
      {"drift_tolerance_pp", {{"IDM", 2}, {"HP", 5}}},
      {"note", "datasets are regenerated from WordNet, so reduction means may drift from the reference corpus; "
               "a mean within the tolerance counts as agreement"}};
  j["warnings"] = report.warnings;
  out << j.dump(2) << '\n';
}

RunArtifacts write_artifacts(const RunReport& report) {
  const std::filesystem::path dir = report.config.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create output directory " + dir.string() + ": " + ec.message());
  RunArtifacts paths{dir / "results.csv", dir / "summary.json", dir / "plot_data.csv"};
  auto emit = [](const std::filesystem::path& p, auto writer) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cannot write " + p.string());
    writer(out);
    if (!out) throw Error("write failed for " + p.string());
  };
  emit(paths.results_csv, [&](std::ostream& o) { write_results_csv(o, report); });
  emit(paths.summary_json, [&](std::ostream& o) { write_summary_json(o, report); });
  emit(paths.plot_data, [&](std::ostream& o) { write_plot_data(o, report); });
  return paths;
}

}  // namespace cap
