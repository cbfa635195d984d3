#include "mergexai/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <unordered_map>

#include "mergexai/error.hpp"
#include "mergexai/random.hpp"
#include "mergexai/text.hpp"

namespace mergexai {

// ---------------------------------------------------------------------------
// Polyline

Polyline::Polyline(std::vector<Point> vertices) : vertices_(std::move(vertices)) {
  cumulative_.reserve(vertices_.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    if (i > 0)
      acc += std::hypot(vertices_[i].x - vertices_[i - 1].x,
                        vertices_[i].y - vertices_[i - 1].y);
    cumulative_.push_back(acc);
  }
}

Projection Polyline::project(Point p) const {
  require(vertices_.size() >= 2, "polyline needs at least two vertices");
  const std::size_t n_seg = vertices_.size() - 1;
  Projection best{0.0, 0.0, {1.0, 0.0}};
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < n_seg; ++k) {
    const Point a = vertices_[k];
    const Point b = vertices_[k + 1];
    const double dx = b.x - a.x;
    const double dy = b.y - a.y;
    const double len = std::hypot(dx, dy);
    if (len == 0.0) continue;
    const Point u{dx / len, dy / len};
    double t = (p.x - a.x) * u.x + (p.y - a.y) * u.y;
    // End segments extrapolate so points past the polyline still get a
    // well-defined longitudinal coordinate.
    if (k > 0) t = std::max(t, 0.0);
    if (k + 1 < n_seg) t = std::min(t, len);
    const Point foot{a.x + t * u.x, a.y + t * u.y};
    const double dist = std::hypot(p.x - foot.x, p.y - foot.y);
    if (dist < best_dist) {
      best_dist = dist;
      const double cross = u.x * (p.y - foot.y) - u.y * (p.x - foot.x);
      best = {cumulative_[k] + t, cross, u};
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Geometry

void SceneGeometry::validate() const {
  const auto& v = lane_boundary.vertices();
  if (v.size() < 2)
    throw ConfigError("lane_boundary needs at least 2 vertices");
  if (!(lane_boundary.length() > 0.0))
    throw ConfigError("lane_boundary has zero length");
  for (const auto& p : v)
    if (!std::isfinite(p.x) || !std::isfinite(p.y))
      throw ConfigError("lane_boundary has a non-finite vertex");
  const auto& r = region_of_interest;
  if (!(r.x_min < r.x_max && r.y_min < r.y_max))
    throw ConfigError("roi rectangle is empty");
  if (!r.contains(ramp_end))
    throw ConfigError("ramp_end lies outside the region of interest");
  if (!(highway_lane_width > 0.0))
    throw ConfigError("highway_lane_width must be positive");
  if (!std::isfinite(sentinel_dx) || !std::isfinite(sentinel_dv))
    throw ConfigError("sentinel values must be finite");
}

// ---------------------------------------------------------------------------
// CSV parsing

namespace {

constexpr std::array<std::string_view, 11> kTrackColumns = {
    "track_id", "frame_id", "timestamp_ms", "agent_type", "x",    "y",
    "vx",       "vy",       "psi_rad",      "length",     "width"};

AgentType parse_agent_type(std::string_view s) {
  s = text::trim(s);
  if (s == "car") return AgentType::kCar;
  if (s == "truck") return AgentType::kTruck;
  return AgentType::kOther;
}

}  // namespace

TrackMap parse_tracks(std::istream& source, const SceneGeometry& geometry) {
  geometry.validate();
  std::string line;
  if (!std::getline(source, line)) throw ParseError(1, "missing header");
  const auto header = text::split(line);
  std::array<std::size_t, kTrackColumns.size()> col{};
  for (std::size_t c = 0; c < kTrackColumns.size(); ++c) {
    auto it = std::find_if(header.begin(), header.end(), [&](std::string_view h) {
      return text::trim(h) == kTrackColumns[c];
    });
    if (it == header.end())
      throw ParseError(1, "missing column '" + std::string(kTrackColumns[c]) + "'");
    col[c] = static_cast<std::size_t>(it - header.begin());
  }

  TrackMap all;
  std::unordered_map<int, std::int64_t> last_ts;
  std::size_t row = 1;
  while (std::getline(source, line)) {
    ++row;
    if (text::trim(line).empty()) continue;
    const auto fields = text::split(line);
    if (fields.size() != header.size())
      throw ParseError(row, "expected " + std::to_string(header.size()) +
                                " fields, got " + std::to_string(fields.size()));
    auto num = [&](std::size_t c) {
      auto v = text::parse_number<double>(fields[col[c]]);
      if (!v || !std::isfinite(*v))
        throw ParseError(row, "bad value for '" + std::string(kTrackColumns[c]) + "'");
      return *v;
    };
    auto integer = [&](std::size_t c) {
      auto v = text::parse_number<std::int64_t>(fields[col[c]]);
      if (!v)
        throw ParseError(row, "bad integer for '" + std::string(kTrackColumns[c]) + "'");
      return *v;
    };
    TrajectoryRecord r;
    r.track_id = static_cast<int>(integer(0));
    r.frame_id = integer(1);
    r.timestamp_ms = integer(2);
    r.agent_type = parse_agent_type(fields[col[3]]);
    r.x = num(4);
    r.y = num(5);
    r.vx = num(6);
    r.vy = num(7);
    r.psi = num(8);
    r.length = num(9);
    r.width = num(10);
    if (!(r.length > 0.0) || !(r.width > 0.0))
      throw ParseError(row, "vehicle dimensions must be positive");

    auto [it, fresh] = last_ts.try_emplace(r.track_id, r.timestamp_ms);
    if (!fresh) {
      if (r.timestamp_ms <= it->second)
        throw IntegrityError("track " + std::to_string(r.track_id) +
                             ": timestamp " + std::to_string(r.timestamp_ms) +
                             " ms at row " + std::to_string(row) +
                             " does not increase");
      it->second = r.timestamp_ms;
    }
    if (r.agent_type == AgentType::kOther) continue;
    if (!geometry.region_of_interest.contains(r.position())) continue;
    all[r.track_id].push_back(r);
  }
  return all;
}

// ---------------------------------------------------------------------------
// Features

namespace {

struct LaneState {
  double s;       // longitudinal coordinate
  double dy;      // lateral offset, positive on the ramp side
  double v_long;  // speed along the lane
  double v_lat;   // speed toward the highway
};

LaneState lane_state(const TrajectoryRecord& r, const SceneGeometry& g) {
  const Projection proj = g.lane_boundary.project(r.position());
  const double side = g.ramp_side == RampSide::kLeft ? 1.0 : -1.0;
  // Unit normal pointing to the ramp side.
  const Point n_ramp{-proj.tangent.y * side, proj.tangent.x * side};
  return {proj.arc_length, g.ramp_side_offset(proj),
          r.vx * proj.tangent.x + r.vy * proj.tangent.y,
          -(r.vx * n_ramp.x + r.vy * n_ramp.y)};
}

bool on_highway_lane(double dy, const SceneGeometry& g) {
  return dy < 0.0 && dy >= -g.highway_lane_width;
}

}  // namespace

Neighbors find_neighbors(const TrajectoryRecord& ego,
                         std::span<const TrajectoryRecord* const> others,
                         const SceneGeometry& geometry) {
  const LaneState e = lane_state(ego, geometry);
  Neighbors out;
  double lead_gap = std::numeric_limits<double>::infinity();
  double lag_gap = std::numeric_limits<double>::infinity();
  auto better = [](double gap, int id, double best_gap, const TrajectoryRecord* best) {
    if (gap < best_gap) return true;
    return gap == best_gap && best != nullptr && id < best->track_id;
  };
  for (const TrajectoryRecord* o : others) {
    if (o->track_id == ego.track_id) continue;
    const LaneState s = lane_state(*o, geometry);
    if (!on_highway_lane(s.dy, geometry)) continue;
    const double dx = s.s - e.s;
    const double gap = std::abs(dx);
    if (dx >= 0.0) {
      if (better(gap, o->track_id, lead_gap, out.lead)) {
        lead_gap = gap;
        out.lead = o;
      }
    } else if (better(gap, o->track_id, lag_gap, out.lag)) {
      lag_gap = gap;
      out.lag = o;
    }
  }
  return out;
}

FeatureVector compute_features(const TrajectoryRecord& ego,
                               const Neighbors& neighbors,
                               const SceneGeometry& geometry) {
  const LaneState e = lane_state(ego, geometry);
  FeatureVector f;
  if (neighbors.lead) {
    const LaneState l = lane_state(*neighbors.lead, geometry);
    f[Feature::kDxLead] = l.s - e.s;
    f[Feature::kDvLead] = l.v_long - e.v_long;
  } else {
    f[Feature::kDxLead] = geometry.sentinel_dx;
    f[Feature::kDvLead] = geometry.sentinel_dv;
  }
  if (neighbors.lag) {
    const LaneState l = lane_state(*neighbors.lag, geometry);
    f[Feature::kDxLag] = l.s - e.s;
    f[Feature::kDvLag] = l.v_long - e.v_long;
  } else {
    f[Feature::kDxLag] = geometry.sentinel_dx;
    f[Feature::kDvLag] = geometry.sentinel_dv;
  }
  f[Feature::kVxEgo] = e.v_long;
  f[Feature::kVyEgo] = e.v_lat;
  const double s_end = geometry.lane_boundary.project(geometry.ramp_end).arc_length;
  f[Feature::kDxEnd] = std::max(0.0, s_end - e.s);
  f[Feature::kDyBdry] = e.dy;
  return f;
}

// ---------------------------------------------------------------------------
// Demonstration extraction

std::vector<MergeDemonstration> extract_merge_demonstrations(
    const TrackMap& tracks, const SceneGeometry& geometry,
    const ExtractOptions& options) {
  geometry.validate();

  std::map<std::int64_t, std::vector<const TrajectoryRecord*>> by_frame;
  for (const auto& [id, recs] : tracks)
    for (const auto& r : recs) by_frame[r.frame_id].push_back(&r);

  std::vector<MergeDemonstration> demos;
  for (const auto& [id, recs] : tracks) {
    if (recs.empty()) continue;
    // Ramp vehicles start on the ramp side of the boundary.
    if (!(lane_state(recs.front(), geometry).dy > 0.0)) continue;

    std::size_t crossing = recs.size();
    for (std::size_t k = 1; k < recs.size(); ++k) {
      if (lane_state(recs[k], geometry).dy <= 0.0) {
        crossing = k;
        break;
      }
    }
    if (crossing == recs.size()) continue;

    // The window is the gap-free run that ends at the crossing frame.
    std::size_t start = 0;
    for (std::size_t k = crossing; k > 0; --k) {
      const auto dt = recs[k].timestamp_ms - recs[k - 1].timestamp_ms;
      if (std::abs(dt - options.frame_period_ms) > options.period_tolerance_ms) {
        start = k;
        break;
      }
    }
    if (crossing - start + 1 < options.min_frames) continue;

    MergeDemonstration demo;
    demo.ego_track_id = id;
    for (std::size_t k = start; k <= crossing; ++k) {
      const auto& others = by_frame.at(recs[k].frame_id);
      const Neighbors nb = find_neighbors(recs[k], others, geometry);
      demo.frames.push_back({recs[k].timestamp_ms, compute_features(recs[k], nb, geometry)});
    }
    demo.crossing_index = demo.frames.size() - 1;
    demos.push_back(std::move(demo));
  }
  for (std::size_t i = 0; i < demos.size(); ++i) demos[i].demo_id = static_cast<int>(i);
  return demos;
}

// ---------------------------------------------------------------------------
// Grid alignment

std::vector<FeatureVector> resample_linear(std::span<const double> times,
                                           std::span<const FeatureVector> values,
                                           std::size_t resolution) {
  if (values.size() < 2) throw DataError("resampling needs at least 2 frames");
  require(times.size() == values.size(), "times and values differ in length");
  require(resolution >= 2, "grid resolution must be at least 2");
  for (std::size_t k = 1; k < times.size(); ++k)
    if (!(times[k] > times[k - 1])) throw DataError("frame times must increase");

  const double t0 = times.front();
  const double span = times.back() - t0;
  const double denom = static_cast<double>(resolution - 1);
  std::vector<FeatureVector> out(resolution);
  std::size_t seg = 0;
  for (std::size_t j = 0; j < resolution; ++j) {
    if (j == 0) {
      out[j] = values.front();
      continue;
    }
    if (j + 1 == resolution) {
      out[j] = values.back();
      continue;
    }
    const double tau = t0 + (static_cast<double>(j) * span) / denom;
    while (seg + 2 < times.size() && times[seg + 1] <= tau) ++seg;
    const double u = (tau - times[seg]) / (times[seg + 1] - times[seg]);
    for (std::size_t f = 0; f < kNumFeatures; ++f)
      out[j][f] = values[seg][f] + u * (values[seg + 1][f] - values[seg][f]);
  }
  return out;
}

AlignedDemonstration align_to_grid(const MergeDemonstration& demo,
                                   std::size_t resolution) {
  if (demo.frames.size() < 2)
    throw DataError("demo " + std::to_string(demo.demo_id) +
                    " has fewer than 2 frames");
  std::vector<double> times;
  std::vector<FeatureVector> values;
  const std::size_t last = std::min(demo.crossing_index, demo.frames.size() - 1);
  for (std::size_t k = 0; k <= last; ++k) {
    times.push_back(static_cast<double>(demo.frames[k].timestamp_ms));
    values.push_back(demo.frames[k].features);
  }
  return {demo.demo_id, resample_linear(times, values, resolution)};
}

// ---------------------------------------------------------------------------
// Split

DatasetSplit split_dataset(std::span<const int> demo_ids, double ratio,
                           std::uint64_t seed) {
  if (demo_ids.size() < 2) throw DataError("need at least 2 demonstrations to split");
  require(ratio > 0.0 && ratio < 1.0, "split ratio must lie in (0, 1)");
  std::vector<int> ids(demo_ids.begin(), demo_ids.end());
  Rng rng(seed);
  shuffle(std::span<int>(ids), rng);
  const auto n = ids.size();
  auto n_train = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  DatasetSplit split;
  split.seed = seed;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

// ---------------------------------------------------------------------------
// aligned.csv

void write_aligned_csv(std::ostream& out, std::span<const AlignedDemonstration> demos) {
  out << "demo_id,alpha";
  for (auto name : kFeatureNames) out << ',' << name;
  out << '\n';
  for (const auto& d : demos) {
    for (std::size_t j = 0; j < d.grid.size(); ++j) {
      out << d.demo_id << ',' << text::format_double(grid_alpha(j, d.grid.size()));
      for (double v : d.grid[j].values) out << ',' << text::format_double(v);
      out << '\n';
    }
  }
}

std::vector<AlignedDemonstration> read_aligned_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError(1, "missing header");
  const auto header = text::split(text::trim(line));
  if (header.size() != 2 + kNumFeatures || header[0] != "demo_id" || header[1] != "alpha")
    throw ParseError(1, "unexpected aligned.csv header");
  for (std::size_t f = 0; f < kNumFeatures; ++f)
    if (header[2 + f] != kFeatureNames[f])
      throw ParseError(1, "unexpected column '" + std::string(header[2 + f]) + "'");

  std::vector<AlignedDemonstration> demos;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (text::trim(line).empty()) continue;
    const auto fields = text::split(text::trim(line));
    if (fields.size() != header.size()) throw ParseError(row, "wrong field count");
    const auto id = text::parse_number<int>(fields[0]);
    if (!id) throw ParseError(row, "bad demo_id");
    if (demos.empty() || demos.back().demo_id != *id) {
      for (const auto& d : demos)
        if (d.demo_id == *id) throw ParseError(row, "demo rows are not contiguous");
      demos.push_back({*id, {}});
    }
    FeatureVector fv;
    for (std::size_t f = 0; f < kNumFeatures; ++f) {
      const auto v = text::parse_number<double>(fields[2 + f]);
      if (!v || !std::isfinite(*v)) throw ParseError(row, "bad feature value");
      fv[f] = *v;
    }
    demos.back().grid.push_back(fv);
  }
  if (demos.empty()) throw DataError("aligned.csv holds no demonstrations");
  const auto a = demos.front().grid.size();
  for (const auto& d : demos)
    if (d.grid.size() != a)
      throw DataError("demo " + std::to_string(d.demo_id) + " has a different grid size");
  if (a < 2) throw DataError("aligned grid needs at least 2 points");
  return demos;
}

}  // namespace mergexai
