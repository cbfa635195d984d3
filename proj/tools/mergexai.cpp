// Command-line driver for the merge saliency pipeline.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mergexai/config.hpp"
#include "mergexai/error.hpp"
#include "mergexai/pipeline.hpp"

namespace {

using namespace mergexai;

struct Args {
  std::string config;
  std::string out;
  std::size_t threads = 1;
  std::string stage;
  std::optional<std::uint64_t> seed_override;
  bool no_cache = false;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Args& args, bool needs_config) {
  auto* c = cmd->add_option("--config", args.config, "pipeline config (JSON)");
  if (needs_config) c->required();
  cmd->add_option("--out", args.out, "artifact directory")->required();
  cmd->add_option("--threads", args.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--seed-override", args.seed_override, "replace the master seed");
  cmd->add_flag("-v,--verbose", args.verbose, "print stage progress to stderr");
}

PipelineConfig resolve(const Args& args) {
  PipelineConfig config = load_config(args.config);
  if (args.seed_override) override_seed(config, *args.seed_override);
  return config;
}

int dispatch(CLI::App& app, const Args& args) {
  pipeline::RunOptions options;
  options.out_dir = args.out;
  options.threads = args.threads;
  options.verbose = args.verbose;

  const std::string cmd = app.get_subcommands().front()->get_name();
  if (cmd == "report" && args.config.empty()) {
    const std::string text = pipeline::build_report(options.out_dir);
    std::ofstream(options.out_dir / "report.md", std::ios::binary) << text;
    std::cout << text;
    return 0;
  }

  const PipelineConfig config = resolve(args);
  if (cmd == "run") {
    options.resume = !args.no_cache;
    pipeline::Stage last = pipeline::Stage::kReport;
    if (!args.stage.empty()) {
      const auto s = pipeline::stage_from_name(args.stage);
      if (!s) throw ConfigError("unknown stage '" + args.stage + "'");
      last = *s;
    }
    pipeline::run_pipeline(config, options, last);
    return 0;
  }

  if (cmd == "ingest" && config.source != DataSource::kCsv)
    throw ConfigError("'ingest' needs data.source = \"csv\"; use 'synth' for generated data");
  if (cmd == "synth" && config.source != DataSource::kSynth)
    throw ConfigError("'synth' needs data.source = \"synth\"");
  options.resume = false;
  pipeline::run_stage(config, *pipeline::stage_from_name(cmd), options);
  if (cmd == "report") {
    std::ifstream in(options.out_dir / "report.md");
    std::cout << in.rdbuf();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Merge decision saliency pipeline: LSTM, exact Shapley values, KL/MI curves"};
  app.require_subcommand(1);
  Args args;

  const std::pair<const char*, const char*> commands[] = {
      {"ingest", "extract merge demonstrations from a trajectory CSV"},
      {"synth", "generate a synthetic dataset with a known saliency schedule"},
      {"train", "train the LSTM on the training split"},
      {"eval", "score the model on the test split"},
      {"explain", "exact Shapley values for every demonstration and moment"},
      {"quantify", "KL and MI curves over the decision process"},
      {"report", "markdown summary of an artifact directory"},
      {"run", "all stages in order, reusing cached artifacts"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* cmd = app.add_subcommand(name, help);
    add_common(cmd, args, std::string(name) != "report");
    if (std::string(name) == "run") {
      cmd->add_option("--stage", args.stage, "stop after this stage");
      cmd->add_flag("--no-cache", args.no_cache, "recompute every stage");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    return dispatch(app, args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << '\n';
    return 4;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 1;
  }
}
