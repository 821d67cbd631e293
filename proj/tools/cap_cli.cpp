#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "cap/errors.hpp"
#include "cap/harness.hpp"
#include "cap/parallel.hpp"
#include "cap/report.hpp"
#include "cap/segments.hpp"
#include "cap/tokenizer.hpp"
#include "json.hpp"

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;

// Flags that mirror RunConfig; anything given on the command line overrides the config file.
struct RunFlags {
  std::string config;
  std::string weights, model_config, vocab, merges, dataset, spans, component, output_dir;
  std::vector<std::string> tasks, protocols, granularities;
  std::vector<double> positions;
  std::uint64_t seed = 0;
  std::size_t max_items = 0;
  bool row_stochastic = false;
  bool attach_punctuation = false;

  CLI::App* app = nullptr;

  void add_to(CLI::App* sub) {
    app = sub;
    sub->add_option("-c,--config", config, "Run config JSON");
    sub->add_option("--weights", weights, "Model weights (.safetensors)");
    sub->add_option("--model-config", model_config, "Model config JSON");
    sub->add_option("--vocab", vocab, "Tokenizer vocab.json (default data/gpt2/vocab.json)");
    sub->add_option("--merges", merges, "Tokenizer merges.txt (default data/gpt2/merges.txt)");
    sub->add_option("--dataset", dataset, "Task dataset (JSON Lines)");
    sub->add_option("--spans", spans, "Phrase span file (JSON Lines)");
    sub->add_option("--tasks", tasks, "IDM, SP, HP");
    sub->add_option("--positions", positions, "Layer positions in (0, 100]");
    sub->add_option("--protocols", protocols, "sum, mean, max");
    sub->add_option("--granularities", granularities, "word, phrase");
    sub->add_option("--component", component, "attn_out, mlp_out, resid_post, attn_pattern");
    sub->add_option("-o,--output-dir", output_dir, "Directory for results.csv, summary.json, plot_data.csv");
    sub->add_option("--seed", seed, "Sampling seed for --max-items");
    sub->add_option("--max-items", max_items, "Items per task, 0 for all");
    sub->add_flag("--row-stochastic-patterns", row_stochastic, "Keep pooled attention rows stochastic");
    sub->add_flag("--attach-punctuation", attach_punctuation, "Group punctuation tokens with their word");
  }

  bool has(const char* name) const { return app->get_option(name)->count() > 0; }

  cap::RunConfig resolve() const {
    cap::RunConfig c = config.empty() ? cap::RunConfig{} : cap::load_run_config(config);
    if (has("--weights")) c.weights = weights;
    if (has("--model-config")) c.model_config = model_config;
    if (has("--vocab")) c.vocab = vocab;
    if (has("--merges")) c.merges = merges;
    if (c.vocab.empty()) c.vocab = "data/gpt2/vocab.json";
    if (c.merges.empty()) c.merges = "data/gpt2/merges.txt";
    if (has("--dataset")) c.dataset = dataset;
    if (has("--spans")) c.spans = spans;
    if (has("--output-dir")) c.output_dir = output_dir;
    if (has("--seed")) c.seed = seed;
    if (has("--max-items")) c.max_items = max_items;
    if (has("--row-stochastic-patterns")) c.row_stochastic = row_stochastic;
    if (has("--attach-punctuation")) c.attach_punctuation = attach_punctuation;
    if (has("--positions")) c.positions = positions;
    try {
      if (has("--tasks")) {
        c.tasks.clear();
        for (const auto& t : tasks) c.tasks.push_back(cap::parse_task(t));
      }
      if (has("--protocols")) {
        c.protocols.clear();
        for (const auto& p : protocols) c.protocols.push_back(cap::parse_protocol(p));
      }
      if (has("--granularities")) {
        c.granularities.clear();
        for (const auto& g : granularities) c.granularities.push_back(cap::parse_granularity(g));
      }
      if (has("--component")) c.component = cap::parse_component(component);
    } catch (const cap::InputError& e) {
      throw cap::ConfigError(e.what());
    }
    cap::validate_run_config(c, true);
    return c;
  }
};

std::string escape_piece(const std::string& bytes) {
  std::string out;
  for (unsigned char c : bytes) {
    if (c == '"' || c == '\\') {
      out += '\\';
      out += static_cast<char>(c);
    } else if (c >= 0x20 && c < 0x7F) {
      out += static_cast<char>(c);
    } else {
      char buf[5];
      std::snprintf(buf, sizeof buf, "\\x%02x", c);
      out += buf;
    }
  }
  return out;
}

void print_cells(const cap::RunReport& report) {
  for (const auto& tr : report.tasks) {
    std::cout << cap::to_string(tr.task) << ": baseline " << tr.baseline.n_correct << "/" << tr.baseline.n_evaluated
              << " correct (A_o " << cap::format_number(tr.baseline.accuracy * 100.0) << "%)\n";
    for (const auto& c : tr.cells) {
      std::cout << "  " << cap::to_string(c.spec.granularity) << " " << cap::to_string(c.spec.protocol) << " @"
                << cap::format_number(c.spec.layer_position) << "% (layer " << c.layer_index << "): ";
      if (c.failed) {
        std::cout << "FAILED " << c.message << "\n";
      } else {
        std::cout << "A_c " << c.n_correct << "/" << c.n_examples << ", dA " << cap::format_number(c.delta_a)
                  << " pp\n";
      }
    }
  }
}

int cmd_run(const RunFlags& flags) {
  const cap::RunConfig config = flags.resolve();
  const cap::RunReport report = cap::execute_run(config);
  const cap::RunArtifacts paths = cap::write_artifacts(report);
  print_cells(report);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "wrote " << paths.results_csv.string() << ", " << paths.summary_json.string() << ", "
            << paths.plot_data.string() << "\n";
  return 0;
}

int cmd_baseline(const RunFlags& flags) {
  const cap::RunConfig config = flags.resolve();
  const cap::ModelConfig model_config = cap::load_model_config(config.model_config);
  const cap::BpeTokenizer tokenizer = cap::BpeTokenizer::load(config.vocab, config.merges);
  cap::check_vocab_compatible(model_config, tokenizer.vocab_size());
  const cap::Model model = cap::load_model(config.weights, model_config);
  const auto items = cap::load_dataset(config.dataset);
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (cap::Task task : config.tasks) {
    const auto task_items = cap::sample_items(cap::filter_tasks(items, {task}), config.max_items, config.seed);
    if (task_items.empty()) continue;
    const cap::BaselineResult b = cap::run_baseline(model, tokenizer, task_items);
    nlohmann::ordered_json subset = nlohmann::ordered_json::array();
    for (const auto& p : b.subset) subset.push_back(task_items[p.index].id);
    out.push_back({{"task", cap::to_string(task)},
                   {"n_items", b.n_items},
                   {"n_multi_token_target", b.n_multi_token_target},
                   {"n_too_long", b.n_too_long},
                   {"n_evaluated", b.n_evaluated},
                   {"n_correct", b.n_correct},
                   {"accuracy", b.accuracy},
                   {"subset", subset}});
  }
  std::cout << out.dump(2) << "\n";
  return 0;
}

struct SegmentFlags {
  std::string text_file;
  std::string vocab = "data/gpt2/vocab.json";
  std::string merges = "data/gpt2/merges.txt";
  bool attach_punctuation = false;
};

int cmd_segment(const SegmentFlags& flags) {
  const cap::BpeTokenizer tokenizer = cap::BpeTokenizer::load(flags.vocab, flags.merges);
  std::ifstream in(flags.text_file);
  if (!in) throw cap::ConfigError("cannot open " + flags.text_file);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const cap::TokenizedText tok = tokenizer.encode(line);
    const cap::SegmentRanges ranges = cap::word_ranges(tok, {flags.attach_punctuation});
    std::cout << "line " << lineno << ": K=" << tok.size() << " G=" << cap::group_dim(tok.size(), ranges) << "\n";
    std::cout << "  tokens:";
    for (std::size_t t = 0; t < tok.size(); ++t) {
      std::cout << " [" << t << "]\"" << escape_piece(tokenizer.token_bytes(tok.ids[t])) << "\"";
    }
    std::cout << "\n  ranges:";
    if (ranges.ranges.empty()) std::cout << " none";
    for (const auto& r : ranges.ranges) std::cout << " (" << r.first << "," << r.last << ")";
    std::cout << "\n";
  }
  return 0;
}

struct ReductionFlags {
  std::string dataset, spans;
  std::string vocab = "data/gpt2/vocab.json";
  std::string merges = "data/gpt2/merges.txt";
  std::vector<std::string> tasks{"IDM", "SP", "HP"};
  std::string granularity = "word";
  bool attach_punctuation = false;
};

int cmd_reduction(const ReductionFlags& flags) {
  const cap::BpeTokenizer tokenizer = cap::BpeTokenizer::load(flags.vocab, flags.merges);
  auto items = cap::load_dataset(flags.dataset);
  if (!flags.spans.empty()) cap::attach_spans(items, cap::load_phrase_spans(flags.spans));
  const cap::Granularity g = cap::parse_granularity(flags.granularity);
  for (const auto& name : flags.tasks) {
    const cap::Task task = cap::parse_task(name);
    const auto task_items = cap::filter_tasks(items, {task});
    if (task_items.empty()) continue;
    const cap::ReductionStats s = cap::reduction_stats(task_items, tokenizer, g, {flags.attach_punctuation});
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-4s %-6s n=%zu skipped=%zu reduction=%.2f +/- %.2f %%\n",
                  cap::to_string(task).c_str(), cap::to_string(g).c_str(), s.n_items, s.n_skipped, s.mean, s.std);
    std::cout << buf;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constituent-aware pooling for GPT-2-family models"};
  app.set_version_flag("--version", CAP_VERSION);
  app.require_subcommand(1);

  RunFlags run_flags, baseline_flags;
  auto* run = app.add_subcommand("run", "Baseline plus CAP sweep; writes CSV, JSON and plot data");
  run_flags.add_to(run);
  auto* baseline = app.add_subcommand("baseline", "Evaluate the unhooked model and list the correct subset");
  baseline_flags.add_to(baseline);

  SegmentFlags seg;
  auto* segment = app.add_subcommand("segment", "Print token pieces and word ranges per line");
  segment->add_option("text_file", seg.text_file, "Text file, one input per line")->required();
  segment->add_option("--vocab", seg.vocab, "Tokenizer vocab.json")->capture_default_str();
  segment->add_option("--merges", seg.merges, "Tokenizer merges.txt")->capture_default_str();
  segment->add_flag("--attach-punctuation", seg.attach_punctuation, "Group punctuation tokens with their word");

  ReductionFlags red;
  auto* reduction = app.add_subcommand("reduction-stats", "Mean and std of sequence reduction per task");
  reduction->add_option("--dataset", red.dataset, "Task dataset (JSON Lines)")->required();
  reduction->add_option("--spans", red.spans, "Phrase span file, needed for --granularity phrase");
  reduction->add_option("--vocab", red.vocab, "Tokenizer vocab.json")->capture_default_str();
  reduction->add_option("--merges", red.merges, "Tokenizer merges.txt")->capture_default_str();
  reduction->add_option("--tasks", red.tasks, "IDM, SP, HP")->capture_default_str();
  reduction->add_option("--granularity", red.granularity, "word or phrase")->capture_default_str();
  reduction->add_flag("--attach-punctuation", red.attach_punctuation, "Group punctuation tokens with their word");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    cap::configure_threads_from_env();
    if (*run) return cmd_run(run_flags);
    if (*baseline) return cmd_baseline(baseline_flags);
    if (*segment) return cmd_segment(seg);
    if (*reduction) return cmd_reduction(red);
  } catch (const cap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
