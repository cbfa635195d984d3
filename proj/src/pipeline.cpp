#include "mergexai/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mergexai/error.hpp"
#include "mergexai/metrics.hpp"
#include "mergexai/parallel.hpp"
#include "mergexai/random.hpp"
#include "mergexai/text.hpp"

namespace mergexai::pipeline {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::kData: return "data";
    case Stage::kTrain: return "train";
    case Stage::kEval: return "eval";
    case Stage::kExplain: return "explain";
    case Stage::kQuantify: return "quantify";
    case Stage::kReport: return "report";
  }
  return "?";
}

std::optional<Stage> stage_from_name(std::string_view name) {
  if (name == "ingest" || name == "synth") return Stage::kData;
  for (Stage s : kAllStages)
    if (stage_name(s) == name) return s;
  return std::nullopt;
}

namespace {

constexpr const char* kAligned = "aligned.csv";
constexpr const char* kSplit = "split.json";
constexpr const char* kTruth = "truth.json";
constexpr const char* kModel = "model.json";
constexpr const char* kTrainLog = "train_log.csv";
constexpr const char* kMetrics = "metrics.json";
constexpr const char* kSaliency = "saliency.csv";
constexpr const char* kSummary = "summary.csv";
constexpr const char* kRetrainCheck = "retrain_check.csv";
constexpr const char* kCurves = "curves.csv";
constexpr const char* kCurvesJson = "curves.json";
constexpr const char* kConfig = "config.json";
constexpr const char* kReport = "report.md";
constexpr const char* kManifest = "manifest.json";

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("missing artifact file '" + p.filename().string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << content;
  if (!out) throw DataError("write failed for '" + p.string() + "'");
}

json parse_artifact(const fs::path& p) {
  try {
    return json::parse(read_text(p));
  } catch (const json::exception& e) {
    throw DataError("'" + p.filename().string() + "' is not valid JSON: " + e.what());
  }
}

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

std::string file_hash(const fs::path& p) { return hex(fnv1a64(read_text(p))); }

std::vector<AlignedDemonstration> load_aligned(const fs::path& dir) {
  std::istringstream in(read_text(dir / kAligned));
  return read_aligned_csv(in);
}

DatasetSplit load_split(const fs::path& dir) {
  const json j = parse_artifact(dir / kSplit);
  DatasetSplit s;
  try {
    s.train = j.at("train").get<std::vector<int>>();
    s.test = j.at("test").get<std::vector<int>>();
    s.seed = j.at("seed").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw DataError(std::string("split.json is malformed: ") + e.what());
  }
  return s;
}

lstm::ModelArtifact load_model(const fs::path& dir) { return lstm::deserialize_model(read_text(dir / kModel)); }

std::vector<AlignedDemonstration> select(const std::vector<AlignedDemonstration>& all,
                                         const std::vector<int>& ids) {
  std::map<int, const AlignedDemonstration*> by_id;
  for (const auto& d : all) by_id[d.demo_id] = &d;
  std::vector<AlignedDemonstration> out;
  out.reserve(ids.size());
  for (int id : ids) {
    const auto it = by_id.find(id);
    if (it == by_id.end())
      throw DataError("split refers to demo " + std::to_string(id) + " missing from aligned.csv");
    out.push_back(*it->second);
  }
  return out;
}

std::size_t nearest_grid_index(double alpha_percent, std::size_t grid) {
  return static_cast<std::size_t>(std::lround(alpha_percent / 100.0 * static_cast<double>(grid - 1)));
}

// --- stages -------------------------------------------------------------

void stage_data(const PipelineConfig& c, const fs::path& dir) {
  std::vector<MergeDemonstration> demos;
  if (c.source == DataSource::kSynth) {
    demos = synth::generate_synthetic_dataset(c.synth);
    write_text(dir / kTruth, synth::truth_json(c.synth));
  } else {
    std::ifstream in(c.csv_path, std::ios::binary);
    if (!in) throw DataError("cannot open trajectory CSV '" + c.csv_path.string() + "'");
    const TrackMap tracks = parse_tracks(in, c.geometry);
    demos = extract_merge_demonstrations(tracks, c.geometry, c.extract);
  }
  if (demos.size() < 2)
    throw DataError("only " + std::to_string(demos.size()) + " merge demonstrations found");
  std::vector<AlignedDemonstration> aligned;
  std::vector<int> ids;
  json durations = json::array();
  for (const auto& d : demos) {
    aligned.push_back(align_to_grid(d, c.grid_resolution));
    ids.push_back(d.demo_id);
    durations.push_back({{"demo_id", d.demo_id}, {"ego_track_id", d.ego_track_id},
                         {"frames", d.frames.size()}, {"duration_s", d.duration_s()}});
  }
  std::ostringstream csv;
  write_aligned_csv(csv, aligned);
  write_text(dir / kAligned, csv.str());

  const DatasetSplit split = split_dataset(ids, c.split_ratio, c.seeds.split_seed());
  json j;
  j["seed"] = split.seed;
  j["ratio"] = c.split_ratio;
  j["n_demos"] = ids.size();
  j["train"] = split.train;
  j["test"] = split.test;
  j["demos"] = durations;
  write_text(dir / kSplit, j.dump(2) + "\n");
}

void stage_train(const PipelineConfig& c, const fs::path& dir, std::size_t threads, bool verbose) {
  const auto all = load_aligned(dir);
  const auto train = select(all, load_split(dir).train);
  lstm::TrainConfig tc = c.train;
  tc.threads = threads;
  const lstm::TrainResult result = lstm::train(train, tc);
  write_text(dir / kModel, lstm::serialize_model(result.net, tc));
  std::ostringstream log;
  log << "epoch,train_mse\n";
  for (std::size_t e = 0; e < result.loss_history.size(); ++e)
    log << e + 1 << ',' << text::format_double(result.loss_history[e]) << '\n';
  write_text(dir / kTrainLog, log.str());
  if (verbose && !result.loss_history.empty())
    std::cerr << "train: final epoch mse " << result.loss_history.back() << '\n';
}

void stage_eval(const fs::path& dir, std::size_t threads) {
  const auto all = load_aligned(dir);
  const DatasetSplit split = load_split(dir);
  const auto test = select(all, split.test);
  const lstm::ModelArtifact model = load_model(dir);
  const auto& tc = model.config;

  std::vector<metrics::DemoMetrics> per_demo(test.size());
  parallel_for(test.size(), threads, [&](std::size_t d) {
    const auto& demo = test[d];
    const std::size_t first = tc.pad_start ? 0 : tc.window - 1;
    std::vector<double> pred, truth;
    for (std::size_t a = first; a < demo.grid.size(); ++a) {
      pred.push_back(lstm::predict_raw(model.net, lstm::raw_window(demo, a, tc.window, tc.inputs)));
      truth.push_back(demo.grid[a][tc.output]);
    }
    if (pred.empty()) throw DataError("demo " + std::to_string(demo.demo_id) + " is shorter than the window");
    per_demo[d] = metrics::demo_metrics(demo.demo_id, pred, truth);
  });
  const metrics::Aggregate agg = metrics::aggregate(per_demo);

  json j;
  j["seed"] = tc.seed;
  j["split"] = "test";
  j["output"] = std::string(feature_name(tc.output));
  std::vector<std::string> inputs;
  for (Feature f : tc.inputs) inputs.emplace_back(feature_name(f));
  j["inputs"] = inputs;
  j["config"] = json::parse(read_text(dir / kModel)).at("config");
  j["aggregate"] = {{"beta_bar", agg.beta_bar},
                    {"rmse_bar", agg.rmse_bar},
                    {"n_valid", agg.n_valid},
                    {"n_excluded", agg.n_excluded}};
  json demos = json::array();
  for (const auto& m : per_demo) {
    json row = {{"demo_id", m.demo_id}, {"eps_mse", m.eps_mse}, {"eps_rmse", m.eps_rmse},
                {"eps_mse_ref", m.eps_mse_ref}};
    row["beta_mse"] = m.beta_mse ? json(*m.beta_mse) : json(nullptr);
    demos.push_back(row);
  }
  j["demos"] = demos;
  write_text(dir / kMetrics, j.dump(2) + "\n");
}

std::vector<int> explained_ids(const PipelineConfig& c, const std::vector<AlignedDemonstration>& all,
                               const DatasetSplit& split) {
  switch (c.explain_split) {
    case ExplainSplit::kTrain: return split.train;
    case ExplainSplit::kTest: return split.test;
    case ExplainSplit::kAll: break;
  }
  std::vector<int> ids;
  for (const auto& d : all) ids.push_back(d.demo_id);
  return ids;
}

void write_retrain_check(const PipelineConfig& c, const fs::path& dir,
                         const lstm::ModelArtifact& model,
                         const std::vector<AlignedDemonstration>& explained,
                         const std::vector<AlignedDemonstration>& train,
                         const shap::SaliencyTensor& tensor, std::size_t threads) {
  lstm::TrainConfig base = model.config;
  base.epochs = c.retrain_check.epochs;
  base.threads = 1;
  const auto models = shap::RetrainedModels::build(train, base, threads);
  const std::size_t n = std::min(c.retrain_check.max_demos, explained.size());
  const std::size_t m = base.inputs.size();

  struct Cell {
    std::size_t demo, index;
  };
  std::vector<Cell> cells;
  for (std::size_t d = 0; d < n; ++d)
    for (double alpha : c.retrain_check.alphas)
      cells.push_back({d, nearest_grid_index(alpha, tensor.grid_size)});
  std::vector<shap::ShapAttribution> retrained(cells.size());
  parallel_for(cells.size(), threads, [&](std::size_t k) {
    retrained[k] = shap::explain_moment(model.net, explained[cells[k].demo], cells[k].index,
                                        base.window, base.inputs, shap::Variant::kRetrain,
                                        nullptr, &models);
  });

  std::ostringstream out;
  out << "demo_id,alpha,feature,phi_mask,phi_retrain\n";
  for (std::size_t k = 0; k < cells.size(); ++k) {
    const auto [d, a] = cells[k];
    for (std::size_t i = 0; i < m; ++i)
      out << tensor.demo_ids[d] << ',' << text::format_double(grid_alpha(a, tensor.grid_size)) << ','
          << feature_name(base.inputs[i]) << ',' << text::format_double(tensor.phi_at(d, a, i))
          << ',' << text::format_double(retrained[k].phi[i]) << '\n';
  }
  write_text(dir / kRetrainCheck, out.str());
}

void stage_explain(const PipelineConfig& c, const fs::path& dir, std::size_t threads) {
  const auto all = load_aligned(dir);
  const DatasetSplit split = load_split(dir);
  const auto train = select(all, split.train);
  const auto explained = select(all, explained_ids(c, all, split));
  const lstm::ModelArtifact model = load_model(dir);

  shap::ExplainConfig ec;
  ec.window = model.config.window;
  ec.inputs = model.config.inputs;
  ec.variant = c.shap_variant;
  ec.background_k = c.background_k;
  ec.background_seed = c.seeds.background_seed();
  ec.threads = threads;

  std::optional<shap::RetrainedModels> models;
  if (c.shap_variant == shap::Variant::kRetrain) {
    lstm::TrainConfig base = model.config;
    base.threads = 1;
    models = shap::RetrainedModels::build(train, base, threads);
  }
  const shap::SaliencyTensor tensor =
      shap::explain_all(model.net, explained, train, ec, models ? &*models : nullptr);

  std::ostringstream sal, sum;
  shap::write_saliency_csv(sal, tensor);
  shap::write_summary_csv(sum, tensor);
  write_text(dir / kSaliency, sal.str());
  write_text(dir / kSummary, sum.str());

  if (c.retrain_check.enabled && c.shap_variant == shap::Variant::kMask)
    write_retrain_check(c, dir, model, explained, train, tensor, threads);
  else
    fs::remove(dir / kRetrainCheck);
}

shap::SaliencyTensor load_saliency(const fs::path& dir) {
  std::istringstream in(read_text(dir / kSaliency));
  return shap::read_saliency_csv(in);
}

void stage_quantify(const PipelineConfig& c, const fs::path& dir) {
  const auto tensor = load_saliency(dir);
  const auto result = uncertainty::uncertainty_curves(tensor, c.curves);
  std::ostringstream csv;
  uncertainty::write_curves_csv(csv, result, c.curves);
  write_text(dir / kCurves, csv.str());
  write_text(dir / kCurvesJson, uncertainty::curves_json(result, c.curves));
}

// --- manifest -------------------------------------------------------------

std::vector<std::string> stage_inputs(const PipelineConfig& c, Stage s, const fs::path& dir) {
  switch (s) {
    case Stage::kData: return {};
    case Stage::kTrain: return {kAligned, kSplit};
    case Stage::kEval: return {kAligned, kSplit, kModel};
    case Stage::kExplain: return {kAligned, kSplit, kModel};
    case Stage::kQuantify: return {kSaliency};
    case Stage::kReport: {
      std::vector<std::string> in = {kConfig, kMetrics, kSaliency, kCurvesJson};
      if (fs::exists(dir / kRetrainCheck)) in.push_back(kRetrainCheck);
      (void)c;
      return in;
    }
  }
  return {};
}

// The part of the resolved config a stage depends on.
json stage_config(const PipelineConfig& c, Stage s) {
  const json echo = json::parse(config_echo(c));
  json part;
  switch (s) {
    case Stage::kData:
      part["seeds"] = {{"split", echo["seeds"]["split"]}, {"synth", echo["seeds"]["synth"]}};
      part["data"] = echo["data"];
      if (echo.contains("synth")) part["synth"] = echo["synth"];
      part["grid"] = echo["grid"];
      part["split"] = echo["split"];
      break;
    case Stage::kTrain:
      part["seed"] = echo["seeds"]["train"];
      part["features"] = echo["features"];
      part["train"] = echo["train"];
      break;
    case Stage::kExplain:
      part["seed"] = echo["seeds"]["background"];
      part["shap"] = echo["shap"];
      break;
    case Stage::kQuantify:
      part["uncertainty"] = echo["uncertainty"];
      break;
    case Stage::kEval:
    case Stage::kReport:
      break;
  }
  return part;
}

std::string stage_key(const PipelineConfig& c, Stage s, const fs::path& dir) {
  std::uint64_t h = fnv1a64(stage_name(s));
  h = fnv1a64(stage_config(c, s).dump(), h);
  if (s == Stage::kData && c.source == DataSource::kCsv) {
    std::ifstream in(c.csv_path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    h = fnv1a64(ss.str(), h);
  }
  for (const auto& name : stage_inputs(c, s, dir)) {
    h = fnv1a64(name, h);
    h = fnv1a64(file_hash(dir / name), h);
  }
  return hex(h);
}

json load_manifest(const fs::path& dir) {
  const fs::path p = dir / kManifest;
  if (!fs::exists(p)) return json{{"stages", json::object()}};
  try {
    json j = json::parse(read_text(p));
    if (j.contains("stages") && j["stages"].is_object()) return j;
  } catch (const json::exception&) {
  }
  return json{{"stages", json::object()}};
}

bool outputs_match(const json& entry, const fs::path& dir) {
  if (!entry.contains("outputs")) return false;
  for (const auto& [name, hash] : entry["outputs"].items()) {
    if (!fs::exists(dir / name) || file_hash(dir / name) != hash.get<std::string>()) return false;
  }
  return true;
}

template <typename Fn>
void with_stage_context(Stage s, Fn&& fn) {
  const std::string prefix = "stage '" + std::string(stage_name(s)) + "': ";
  try {
    fn();
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const NumericFault& e) {
    throw NumericFault(prefix + e.what());
  } catch (const DataError& e) {
    throw DataError(prefix + e.what());
  } catch (const ContractViolation& e) {
    throw ContractViolation(prefix + e.what());
  } catch (const fs::filesystem_error& e) {
    throw DataError(prefix + e.what());
  }
}

// --- report ---------------------------------------------------------------

std::string fmt(double v, int precision = 4) {
  std::ostringstream ss;
  ss << std::setprecision(precision) << v;
  return ss.str();
}

std::string retrain_section(const fs::path& dir) {
  std::istringstream in(read_text(dir / kRetrainCheck));
  std::string line;
  std::getline(in, line);
  // (alpha, feature) -> sums of |phi| under both variants; per (demo, alpha) top features.
  std::map<std::string, std::map<std::string, std::pair<double, double>>> sums;
  std::map<std::string, std::size_t> counts;
  std::map<std::pair<std::string, std::string>, std::pair<std::pair<double, std::string>,
                                                          std::pair<double, std::string>>> top;
  std::vector<std::string> feature_order;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto f = text::split(text::trim(line));
    if (f.size() != 5) throw DataError("retrain_check.csv has a malformed row");
    const std::string demo(f[0]), alpha(f[1]), feature(f[2]);
    const auto pm = text::parse_number<double>(f[3]);
    const auto pr = text::parse_number<double>(f[4]);
    if (!pm || !pr) throw DataError("retrain_check.csv has a non-numeric value");
    if (std::find(feature_order.begin(), feature_order.end(), feature) == feature_order.end())
      feature_order.push_back(feature);
    auto& s = sums[alpha][feature];
    s.first += std::abs(*pm);
    s.second += std::abs(*pr);
    auto& t = top[{demo, alpha}];
    if (t.first.second.empty() || std::abs(*pm) > t.first.first) t.first = {std::abs(*pm), feature};
    if (t.second.second.empty() || std::abs(*pr) > t.second.first) t.second = {std::abs(*pr), feature};
  }
  for (const auto& [key, _] : top) ++counts[key.second];

  std::ostringstream r;
  r << "## Masking vs retraining cross-check\n\n";
  r << "| alpha | feature | mean abs phi (mask) | mean abs phi (retrain) |\n|---|---|---|---|\n";
  std::vector<std::string> alphas;
  for (const auto& [a, _] : sums) alphas.push_back(a);
  std::sort(alphas.begin(), alphas.end(), [](const std::string& x, const std::string& y) {
    return std::stod(x) < std::stod(y);
  });
  for (const auto& a : alphas)
    for (const auto& f : feature_order) {
      const auto& s = sums[a][f];
      const double n = static_cast<double>(counts[a]);
      r << "| " << a << "% | " << f << " | " << fmt(s.first / n) << " | " << fmt(s.second / n)
        << " |\n";
    }
  std::size_t agree = 0;
  for (const auto& [_, t] : top) agree += t.first.second == t.second.second;
  r << "\nTop feature agrees on " << agree << " of " << top.size() << " explained moments.\n\n";
  return r.str();
}

}  // namespace

std::vector<std::string> stage_outputs(const PipelineConfig& c, Stage s) {
  switch (s) {
    case Stage::kData:
      if (c.source == DataSource::kSynth) return {kAligned, kSplit, kTruth};
      return {kAligned, kSplit};
    case Stage::kTrain: return {kModel, kTrainLog};
    case Stage::kEval: return {kMetrics};
    case Stage::kExplain:
      if (c.retrain_check.enabled && c.shap_variant == shap::Variant::kMask)
        return {kSaliency, kSummary, kRetrainCheck};
      return {kSaliency, kSummary};
    case Stage::kQuantify: return {kCurves, kCurvesJson};
    case Stage::kReport: return {kReport};
  }
  return {};
}

std::string build_report(const fs::path& dir) {
  const json config = parse_artifact(dir / kConfig);
  const json metrics_j = parse_artifact(dir / kMetrics);
  const shap::SaliencyTensor tensor = load_saliency(dir);
  const json curves = parse_artifact(dir / kCurvesJson);
  if (tensor.grid_size < 2) throw DataError("saliency.csv has fewer than two grid moments");

  std::ostringstream r;
  r << "# Merge saliency report\n\n";
  r << "## Prediction quality (test split)\n\n";
  try {
    const auto& agg = metrics_j.at("aggregate");
    r << "- Output feature: " << metrics_j.at("output").get<std::string>() << "\n";
    r << "- Mean evaluation score beta_bar: " << fmt(agg.at("beta_bar").get<double>(), 6) << "\n";
    r << "- Mean RMSE: " << fmt(agg.at("rmse_bar").get<double>(), 6) << "\n";
    r << "- Demonstrations scored: " << agg.at("n_valid").get<std::size_t>()
      << ", excluded (constant truth): " << agg.at("n_excluded").get<std::size_t>() << "\n\n";
  } catch (const json::exception& e) {
    throw DataError(std::string("metrics.json is malformed: ") + e.what());
  }

  r << "## Feature saliency\n\n";
  r << "Variant: " << shap::variant_name(tensor.variant) << " (" << tensor.num_demos()
    << " demonstrations, " << tensor.grid_size << " grid moments). ";
  if (tensor.variant == shap::Variant::kMask)
    r << "Absent features take the background value over the whole input window.\n\n";
  else
    r << "Each coalition is scored by a model retrained on its features.\n\n";
  for (double alpha : {0.0, 50.0, 100.0}) {
    const std::size_t a = nearest_grid_index(alpha, tensor.grid_size);
    const auto summary = shap::saliency_summary(tensor, a);
    std::vector<std::size_t> order(tensor.num_features());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return summary.mean_abs_phi[x] > summary.mean_abs_phi[y];
    });
    r << "- alpha = " << fmt(alpha) << "%";
    const double actual = grid_alpha(a, tensor.grid_size);
    if (actual != alpha) r << " (nearest grid moment " << fmt(actual) << "%)";
    r << ": ";
    for (std::size_t k = 0; k < std::min<std::size_t>(3, order.size()); ++k) {
      if (k) r << ", ";
      r << (k + 1) << ". " << feature_name(tensor.features[order[k]]) << " ("
        << fmt(summary.mean_abs_phi[order[k]]) << ")";
    }
    r << "\n";
  }

  r << "\n## Perceptual uncertainty\n\n";
  try {
    const double kl = curves.at("kl").at("slope").get<double>();
    const double mi = curves.at("mi").at("slope").get<double>();
    r << "- KL slope: " << fmt(kl, 6) << " nats per percent\n";
    r << "- MI slope: " << fmt(mi, 6) << " nats per percent\n";
    r << "- KL slope negative: " << (kl < 0.0 ? "yes" : "no") << "\n";
    r << "- MI slope positive: " << (mi > 0.0 ? "yes" : "no") << "\n";
    r << "- Aggregation across features: " << curves.at("config").at("aggregation").get<std::string>()
      << "\n";
    r << "- Samples clamped into end bins: " << curves.at("n_clamped").get<std::size_t>() << "\n";
    if (curves.at("small_sample_warning").get<bool>())
      r << "- Warning: fewer samples per moment than KL bins\n";
  } catch (const json::exception& e) {
    throw DataError(std::string("curves.json is malformed: ") + e.what());
  }
  r << "\n";

  if (fs::exists(dir / kRetrainCheck)) r << retrain_section(dir);

  r << "## Configuration\n\n```json\n" << config.dump(2) << "\n```\n";
  return r.str();
}

StageOutcome run_stage(const PipelineConfig& config, Stage stage, const RunOptions& options) {
  const fs::path& dir = options.out_dir;
  StageOutcome outcome{stage, false};
  with_stage_context(stage, [&] {
    fs::create_directories(dir);
    write_text(dir / kConfig, config_echo(config) + "\n");
    json manifest = load_manifest(dir);
    const std::string name(stage_name(stage));
    const std::string key = stage == Stage::kReport ? std::string() : stage_key(config, stage, dir);
    if (options.resume && !key.empty() && manifest["stages"].contains(name)) {
      const json& entry = manifest["stages"][name];
      if (entry.value("key", "") == key && outputs_match(entry, dir)) {
        outcome.reused = true;
        return;
      }
    }
    switch (stage) {
      case Stage::kData: stage_data(config, dir); break;
      case Stage::kTrain: stage_train(config, dir, options.threads, options.verbose); break;
      case Stage::kEval: stage_eval(dir, options.threads); break;
      case Stage::kExplain: stage_explain(config, dir, options.threads); break;
      case Stage::kQuantify: stage_quantify(config, dir); break;
      case Stage::kReport: write_text(dir / kReport, build_report(dir)); break;
    }
    if (key.empty()) return;
    json outputs = json::object();
    for (const auto& f : stage_outputs(config, stage)) outputs[f] = file_hash(dir / f);
    manifest["stages"][name] = {{"key", key}, {"outputs", outputs}};
    write_text(dir / kManifest, manifest.dump(2) + "\n");
  });
  return outcome;
}

std::vector<StageOutcome> run_pipeline(const PipelineConfig& config, const RunOptions& options,
                                       Stage last) {
  std::vector<StageOutcome> outcomes;
  for (Stage s : kAllStages) {
    outcomes.push_back(run_stage(config, s, options));
    if (options.verbose)
      std::cerr << stage_name(s) << (outcomes.back().reused ? ": cached" : ": done") << '\n';
    if (s == last) break;
  }
  return outcomes;
}

}  // namespace mergexai::pipeline
