#include "mergexai/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mergexai/error.hpp"
#include "mergexai/random.hpp"

namespace mergexai {

using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

std::uint64_t SeedConfig::split_seed() const { return split.value_or(substream_seed(master, "split")); }
std::uint64_t SeedConfig::train_seed() const { return train.value_or(substream_seed(master, "train")); }
std::uint64_t SeedConfig::synth_seed() const { return synth.value_or(substream_seed(master, "synth")); }
std::uint64_t SeedConfig::background_seed() const {
  return background.value_or(substream_seed(master, "background"));
}

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError("'" + where + "' must be an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in '" + where + "'");
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback, const std::string& where) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + where + "." + key + "'");
  }
}

Feature feature_or_throw(const std::string& name) {
  const auto f = feature_from_name(name);
  if (!f) throw ConfigError("unknown feature name '" + name + "'");
  return *f;
}

Point point_from(const json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
    throw ConfigError(what + " must be an [x, y] pair");
  return {j[0].get<double>(), j[1].get<double>()};
}

SceneGeometry geometry_from(const json& j) {
  check_keys(j, {"lane_boundary", "ramp_end", "roi", "ramp_side", "highway_lane_width", "sentinel"},
             "geometry");
  SceneGeometry g;
  if (!j.contains("lane_boundary") || !j["lane_boundary"].is_array())
    throw ConfigError("geometry needs a lane_boundary vertex list");
  std::vector<Point> verts;
  for (const auto& v : j["lane_boundary"]) verts.push_back(point_from(v, "lane_boundary vertex"));
  g.lane_boundary = Polyline(std::move(verts));
  if (!j.contains("ramp_end")) throw ConfigError("geometry needs ramp_end");
  g.ramp_end = point_from(j["ramp_end"], "ramp_end");
  if (!j.contains("roi")) throw ConfigError("geometry needs roi");
  const json& roi = j["roi"];
  check_keys(roi, {"x_min", "y_min", "x_max", "y_max"}, "geometry.roi");
  try {
    g.region_of_interest = {roi.at("x_min").get<double>(), roi.at("y_min").get<double>(),
                            roi.at("x_max").get<double>(), roi.at("y_max").get<double>()};
  } catch (const json::exception&) {
    throw ConfigError("geometry.roi needs numeric x_min, y_min, x_max, y_max");
  }
  const auto side = get_or<std::string>(j, "ramp_side", "right", "geometry");
  if (side == "left")
    g.ramp_side = RampSide::kLeft;
  else if (side == "right")
    g.ramp_side = RampSide::kRight;
  else
    throw ConfigError("geometry.ramp_side must be 'left' or 'right'");
  g.highway_lane_width = get_or<double>(j, "highway_lane_width", 4.0, "geometry");
  if (j.contains("sentinel")) {
    check_keys(j["sentinel"], {"dx", "dv"}, "geometry.sentinel");
    g.sentinel_dx = get_or<double>(j["sentinel"], "dx", 200.0, "geometry.sentinel");
    g.sentinel_dv = get_or<double>(j["sentinel"], "dv", 0.0, "geometry.sentinel");
  }
  g.validate();
  return g;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json parse_json(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
}

}  // namespace

SceneGeometry parse_geometry(const std::string& text) {
  return geometry_from(parse_json(text, "geometry file"));
}

PipelineConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  const json root = parse_json(text, "config");
  check_keys(root, {"seed", "seeds", "data", "synth", "grid", "split", "features", "train", "shap",
                    "uncertainty"},
             "config");
  PipelineConfig c;
  if (!root.contains("seed")) throw ConfigError("config needs an explicit 'seed'");
  c.seeds.master = get_or<std::uint64_t>(root, "seed", 0, "config");
  if (root.contains("seeds")) {
    const json& s = root["seeds"];
    check_keys(s, {"split", "train", "synth", "background"}, "seeds");
    auto opt = [&](const char* k) -> std::optional<std::uint64_t> {
      if (!s.contains(k)) return std::nullopt;
      return get_or<std::uint64_t>(s, k, 0, "seeds");
    };
    c.seeds.split = opt("split");
    c.seeds.train = opt("train");
    c.seeds.synth = opt("synth");
    c.seeds.background = opt("background");
  }

  const json data = root.value("data", json::object());
  check_keys(data, {"source", "csv", "geometry", "min_frames", "frame_period_ms",
                    "period_tolerance_ms"},
             "data");
  const auto source = get_or<std::string>(data, "source", "synth", "data");
  if (source == "synth") {
    c.source = DataSource::kSynth;
  } else if (source == "csv") {
    c.source = DataSource::kCsv;
    if (!data.contains("csv")) throw ConfigError("data.source 'csv' needs data.csv");
    c.csv_path = base_dir / get_or<std::string>(data, "csv", "", "data");
    if (!data.contains("geometry")) throw ConfigError("data.source 'csv' needs data.geometry");
    const json& g = data["geometry"];
    c.geometry = g.is_string()
                     ? parse_geometry(read_file(base_dir / g.get<std::string>()))
                     : geometry_from(g);
  } else {
    throw ConfigError("data.source must be 'synth' or 'csv'");
  }
  c.extract.min_frames = get_or<std::size_t>(data, "min_frames", 10, "data");
  c.extract.frame_period_ms = get_or<std::int64_t>(data, "frame_period_ms", 100, "data");
  c.extract.period_tolerance_ms = get_or<std::int64_t>(data, "period_tolerance_ms", 1, "data");

  c.synth = synth::default_config(c.seeds.synth_seed());
  if (root.contains("synth")) {
    const json& s = root["synth"];
    check_keys(s, {"n_demos", "duration_range_s", "end_weights", "schedule", "noise_std",
                   "innovation_start", "innovation_end"},
               "synth");
    c.synth.n_demos = get_or<std::size_t>(s, "n_demos", c.synth.n_demos, "synth");
    if (s.contains("duration_range_s")) {
      const auto r = get_or<std::vector<double>>(s, "duration_range_s", {}, "synth");
      if (r.size() != 2) throw ConfigError("synth.duration_range_s must be [min, max]");
      c.synth.min_duration_s = r[0];
      c.synth.max_duration_s = r[1];
    }
    if (s.contains("end_weights") && s.contains("schedule"))
      throw ConfigError("synth takes either end_weights or schedule, not both");
    if (s.contains("end_weights"))
      c.synth.schedule = synth::converging_schedule(
          get_or<std::vector<double>>(s, "end_weights", {}, "synth"));
    if (s.contains("schedule")) {
      check_keys(s["schedule"], {"alphas", "weights"}, "synth.schedule");
      c.synth.schedule.alphas = get_or<std::vector<double>>(s["schedule"], "alphas", {}, "synth.schedule");
      c.synth.schedule.weights =
          get_or<std::vector<std::vector<double>>>(s["schedule"], "weights", {}, "synth.schedule");
    }
    if (s.contains("noise_std")) {
      if (s["noise_std"].is_number())
        c.synth.noise_std.assign(kNumFeatures, s["noise_std"].get<double>());
      else
        c.synth.noise_std = get_or<std::vector<double>>(s, "noise_std", {}, "synth");
    }
    c.synth.innovation_start = get_or<double>(s, "innovation_start", c.synth.innovation_start, "synth");
    c.synth.innovation_end = get_or<double>(s, "innovation_end", c.synth.innovation_end, "synth");
  }
  if (c.source == DataSource::kSynth) c.synth.validate();

  if (root.contains("grid")) {
    check_keys(root["grid"], {"resolution"}, "grid");
    c.grid_resolution = get_or<std::size_t>(root["grid"], "resolution", 101, "grid");
  }
  if (c.grid_resolution < 3) throw ConfigError("grid.resolution must be at least 3");
  if (root.contains("split")) {
    check_keys(root["split"], {"ratio"}, "split");
    c.split_ratio = get_or<double>(root["split"], "ratio", 0.8, "split");
  }
  if (!(c.split_ratio > 0.0 && c.split_ratio < 1.0)) throw ConfigError("split.ratio must lie in (0, 1)");

  if (root.contains("features")) {
    const json& f = root["features"];
    check_keys(f, {"inputs", "output"}, "features");
    if (f.contains("inputs")) {
      c.train.inputs.clear();
      for (const auto& name : get_or<std::vector<std::string>>(f, "inputs", {}, "features"))
        c.train.inputs.push_back(feature_or_throw(name));
    }
    if (f.contains("output"))
      c.train.output = feature_or_throw(get_or<std::string>(f, "output", "", "features"));
  }
  if (c.train.inputs.empty()) throw ConfigError("features.inputs must not be empty");
  for (std::size_t i = 0; i < c.train.inputs.size(); ++i) {
    if (c.train.inputs[i] == c.train.output)
      throw ConfigError("the output feature cannot also be an input");
    for (std::size_t j = 0; j < i; ++j)
      if (c.train.inputs[i] == c.train.inputs[j]) throw ConfigError("duplicate input feature");
  }
  if (c.train.inputs.size() > shap::kMaxEnumerableFeatures)
    throw ConfigError("too many input features for exact Shapley enumeration");

  if (root.contains("train")) {
    const json& t = root["train"];
    check_keys(t, {"window", "epochs", "batch_size", "lr", "hidden", "dense1", "dense2", "pad_start"},
               "train");
    c.train.window = get_or<std::size_t>(t, "window", c.train.window, "train");
    c.train.epochs = get_or<std::size_t>(t, "epochs", c.train.epochs, "train");
    c.train.batch_size = get_or<std::size_t>(t, "batch_size", c.train.batch_size, "train");
    c.train.lr = get_or<double>(t, "lr", c.train.lr, "train");
    c.train.dims.hidden = get_or<std::size_t>(t, "hidden", c.train.dims.hidden, "train");
    c.train.dims.dense1 = get_or<std::size_t>(t, "dense1", c.train.dims.dense1, "train");
    c.train.dims.dense2 = get_or<std::size_t>(t, "dense2", c.train.dims.dense2, "train");
    c.train.pad_start = get_or<bool>(t, "pad_start", c.train.pad_start, "train");
  }
  c.train.dims.input = c.train.inputs.size();
  c.train.seed = c.seeds.train_seed();
  if (c.train.window == 0 || c.train.batch_size == 0 || !(c.train.lr > 0.0) ||
      c.train.dims.hidden == 0 || c.train.dims.dense1 == 0 || c.train.dims.dense2 == 0)
    throw ConfigError("train window, batch_size, lr and layer sizes must be positive");

  if (root.contains("shap")) {
    const json& s = root["shap"];
    check_keys(s, {"variant", "background_k", "explain_split", "retrain_check"}, "shap");
    const auto v = shap::variant_from_name(get_or<std::string>(s, "variant", "mask", "shap"));
    if (!v) throw ConfigError("shap.variant must be 'mask' or 'retrain'");
    c.shap_variant = *v;
    c.background_k = get_or<std::size_t>(s, "background_k", 1, "shap");
    if (c.background_k == 0) throw ConfigError("shap.background_k must be at least 1");
    const auto split = get_or<std::string>(s, "explain_split", "all", "shap");
    if (split == "all")
      c.explain_split = ExplainSplit::kAll;
    else if (split == "train")
      c.explain_split = ExplainSplit::kTrain;
    else if (split == "test")
      c.explain_split = ExplainSplit::kTest;
    else
      throw ConfigError("shap.explain_split must be 'all', 'train' or 'test'");
    if (s.contains("retrain_check")) {
      const json& r = s["retrain_check"];
      check_keys(r, {"enabled", "alphas", "epochs", "max_demos"}, "shap.retrain_check");
      auto& rc = c.retrain_check;
      rc.enabled = get_or<bool>(r, "enabled", rc.enabled, "shap.retrain_check");
      rc.alphas = get_or<std::vector<double>>(r, "alphas", rc.alphas, "shap.retrain_check");
      rc.epochs = get_or<std::size_t>(r, "epochs", rc.epochs, "shap.retrain_check");
      rc.max_demos = get_or<std::size_t>(r, "max_demos", rc.max_demos, "shap.retrain_check");
      for (double a : rc.alphas)
        if (!(a >= 0.0 && a <= 100.0)) throw ConfigError("retrain_check alphas must lie in [0, 100]");
    }
  }

  if (root.contains("uncertainty")) {
    const json& u = root["uncertainty"];
    check_keys(u, {"kl_bins", "mi_bins", "eps", "aggregation", "band_window", "trend_degree",
                   "edge_margin"},
               "uncertainty");
    auto& cc = c.curves;
    cc.kl_bins = get_or<std::size_t>(u, "kl_bins", cc.kl_bins, "uncertainty");
    cc.mi_bins = get_or<std::size_t>(u, "mi_bins", cc.mi_bins, "uncertainty");
    cc.eps = get_or<double>(u, "eps", cc.eps, "uncertainty");
    cc.aggregation = get_or<std::string>(u, "aggregation", cc.aggregation, "uncertainty");
    cc.band_window = get_or<std::size_t>(u, "band_window", cc.band_window, "uncertainty");
    cc.trend_degree = get_or<std::size_t>(u, "trend_degree", cc.trend_degree, "uncertainty");
    cc.edge_margin = get_or<double>(u, "edge_margin", cc.edge_margin, "uncertainty");
  }
  if (c.curves.kl_bins == 0 || c.curves.mi_bins == 0 || !(c.curves.eps >= 0.0) ||
      c.curves.band_window == 0 || !(c.curves.edge_margin >= 0.0))
    throw ConfigError("uncertainty bins and band window must be positive, eps and margin >= 0");
  if (c.curves.aggregation != "mean" && c.curves.aggregation != "median")
    throw ConfigError("uncertainty.aggregation must be 'mean' or 'median'");
  if (c.curves.trend_degree != 1 && c.curves.trend_degree != 3)
    throw ConfigError("uncertainty.trend_degree must be 1 or 3");
  return c;
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return parse_config(read_file(path), path.parent_path());
}

void override_seed(PipelineConfig& config, std::uint64_t seed) {
  config.seeds = SeedConfig{seed, std::nullopt, std::nullopt, std::nullopt, std::nullopt};
  config.synth.seed = config.seeds.synth_seed();
  config.train.seed = config.seeds.train_seed();
}

std::string config_echo(const PipelineConfig& c) {
  ojson j;
  j["seed"] = c.seeds.master;
  j["seeds"] = {{"split", c.seeds.split_seed()},
                {"train", c.seeds.train_seed()},
                {"synth", c.seeds.synth_seed()},
                {"background", c.seeds.background_seed()}};
  if (c.source == DataSource::kSynth) {
    j["data"] = {{"source", "synth"}};
    j["synth"] = {{"n_demos", c.synth.n_demos},
                  {"duration_range_s", {c.synth.min_duration_s, c.synth.max_duration_s}},
                  {"schedule", {{"alphas", c.synth.schedule.alphas},
                                {"weights", c.synth.schedule.weights}}},
                  {"noise_std", c.synth.noise_std},
                  {"innovation_start", c.synth.innovation_start},
                  {"innovation_end", c.synth.innovation_end}};
  } else {
    std::vector<std::vector<double>> verts;
    for (const auto& p : c.geometry.lane_boundary.vertices()) verts.push_back({p.x, p.y});
    const auto& r = c.geometry.region_of_interest;
    j["data"] = {{"source", "csv"},
                 {"csv", c.csv_path.filename().string()},
                 {"min_frames", c.extract.min_frames},
                 {"frame_period_ms", c.extract.frame_period_ms},
                 {"period_tolerance_ms", c.extract.period_tolerance_ms},
                 {"geometry",
                  {{"lane_boundary", verts},
                   {"ramp_end", {c.geometry.ramp_end.x, c.geometry.ramp_end.y}},
                   {"roi", {{"x_min", r.x_min}, {"y_min", r.y_min}, {"x_max", r.x_max}, {"y_max", r.y_max}}},
                   {"ramp_side", c.geometry.ramp_side == RampSide::kLeft ? "left" : "right"},
                   {"highway_lane_width", c.geometry.highway_lane_width},
                   {"sentinel", {{"dx", c.geometry.sentinel_dx}, {"dv", c.geometry.sentinel_dv}}}}}};
  }
  j["grid"] = {{"resolution", c.grid_resolution}};
  j["split"] = {{"ratio", c.split_ratio}};
  std::vector<std::string> inputs;
  for (auto f : c.train.inputs) inputs.emplace_back(feature_name(f));
  j["features"] = {{"inputs", inputs}, {"output", std::string(feature_name(c.train.output))}};
  j["train"] = {{"window", c.train.window},       {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size}, {"lr", c.train.lr},
                {"hidden", c.train.dims.hidden},  {"dense1", c.train.dims.dense1},
                {"dense2", c.train.dims.dense2},  {"pad_start", c.train.pad_start}};
  const char* split = c.explain_split == ExplainSplit::kAll     ? "all"
                      : c.explain_split == ExplainSplit::kTrain ? "train"
                                                                : "test";
  j["shap"] = {{"variant", std::string(shap::variant_name(c.shap_variant))},
               {"background_k", c.background_k},
               {"background", c.background_k <= 1 ? "per-moment training mean window"
                                                  : "sampled training windows"},
               {"explain_split", split},
               {"coalition_scope", "feature toggled across the whole input window"},
               {"retrain_check", {{"enabled", c.retrain_check.enabled},
                                  {"alphas", c.retrain_check.alphas},
                                  {"epochs", c.retrain_check.epochs},
                                  {"max_demos", c.retrain_check.max_demos}}}};
  j["uncertainty"] = {{"kl_bins", c.curves.kl_bins},         {"mi_bins", c.curves.mi_bins},
                      {"eps", c.curves.eps},                 {"aggregation", c.curves.aggregation},
                      {"band_window", c.curves.band_window}, {"trend_degree", c.curves.trend_degree},
                      {"edge_margin", c.curves.edge_margin}};
  return j.dump(2);
}

}  // namespace mergexai
