#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mergexai/features.hpp"

namespace mergexai {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

struct Rect {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  bool contains(Point p) const {
    return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max;
  }
};

// Result of projecting a point onto a polyline.
struct Projection {
  double arc_length;  // longitudinal coordinate along the polyline
  double offset;      // signed perpendicular distance, positive to the left
  Point tangent;      // unit direction of the closest segment
};

// Piecewise-linear curve oriented in the direction of travel. Projections
// beyond either end extrapolate the end segments.
class Polyline {
 public:
  Polyline() = default;
  explicit Polyline(std::vector<Point> vertices);

  const std::vector<Point>& vertices() const { return vertices_; }
  double length() const { return cumulative_.empty() ? 0.0 : cumulative_.back(); }
  Projection project(Point p) const;

 private:
  std::vector<Point> vertices_;
  std::vector<double> cumulative_;
};

enum class AgentType { kCar, kTruck, kOther };
enum class RampSide { kLeft, kRight };

struct TrajectoryRecord {
  int track_id = 0;
  std::int64_t frame_id = 0;
  std::int64_t timestamp_ms = 0;
  AgentType agent_type = AgentType::kCar;
  double x = 0.0, y = 0.0;
  double vx = 0.0, vy = 0.0;
  double psi = 0.0;
  double length = 0.0, width = 0.0;

  Point position() const { return {x, y}; }
};

struct SceneGeometry {
  Polyline lane_boundary;
  Point ramp_end;
  Rect region_of_interest;
  RampSide ramp_side = RampSide::kRight;
  // Lateral band beyond the boundary in which highway vehicles count as
  // lead/lag candidates.
  double highway_lane_width = 4.0;
  double sentinel_dx = 200.0;
  double sentinel_dv = 0.0;

  // Throws ConfigError on a degenerate polyline or misplaced ramp end.
  void validate() const;

  // Lateral distance to the boundary, positive on the ramp side.
  double ramp_side_offset(const Projection& proj) const {
    return ramp_side == RampSide::kLeft ? proj.offset : -proj.offset;
  }
};

using TrackMap = std::map<int, std::vector<TrajectoryRecord>>;

// Reads the INTERACTION-style CSV. Rows are grouped by track and must be in
// strictly increasing timestamp order per track. Records outside the region
// of interest and agents other than cars and trucks are dropped.
TrackMap parse_tracks(std::istream& source, const SceneGeometry& geometry);

struct TimedFeatures {
  std::int64_t timestamp_ms = 0;
  FeatureVector features;
};

struct MergeDemonstration {
  int demo_id = 0;
  int ego_track_id = 0;
  std::vector<TimedFeatures> frames;
  std::size_t crossing_index = 0;

  double duration_s() const {
    return frames.empty() ? 0.0
                          : 1e-3 * static_cast<double>(frames.back().timestamp_ms -
                                                       frames.front().timestamp_ms);
  }
};

struct ExtractOptions {
  std::size_t min_frames = 10;
  std::int64_t frame_period_ms = 100;
  std::int64_t period_tolerance_ms = 1;
};

struct Neighbors {
  const TrajectoryRecord* lead = nullptr;
  const TrajectoryRecord* lag = nullptr;
};

// Nearest highway-lane vehicles ahead of and behind the ego along the lane.
// Ties on |dx| go to the lower track id.
Neighbors find_neighbors(const TrajectoryRecord& ego,
                         std::span<const TrajectoryRecord* const> others,
                         const SceneGeometry& geometry);

FeatureVector compute_features(const TrajectoryRecord& ego,
                               const Neighbors& neighbors,
                               const SceneGeometry& geometry);

std::vector<MergeDemonstration> extract_merge_demonstrations(
    const TrackMap& tracks, const SceneGeometry& geometry,
    const ExtractOptions& options = {});

struct AlignedDemonstration {
  int demo_id = 0;
  std::vector<FeatureVector> grid;
};

// Linear interpolation in time onto `resolution` evenly spaced points between
// the first and last sample; both endpoints are reproduced exactly.
std::vector<FeatureVector> resample_linear(std::span<const double> times,
                                           std::span<const FeatureVector> values,
                                           std::size_t resolution);

AlignedDemonstration align_to_grid(const MergeDemonstration& demo,
                                   std::size_t resolution);

// Percent value of grid index `index` on a grid of `resolution` points.
inline double grid_alpha(std::size_t index, std::size_t resolution) {
  return 100.0 * static_cast<double>(index) /
         static_cast<double>(resolution - 1);
}

struct DatasetSplit {
  std::vector<int> train;
  std::vector<int> test;
  std::uint64_t seed = 0;
};

// Uniform random split by demonstration. The train count is ratio * n rounded
// half up, kept within [1, n - 1].
DatasetSplit split_dataset(std::span<const int> demo_ids, double ratio,
                           std::uint64_t seed);

// aligned.csv: demo_id,alpha,<eight feature columns>
void write_aligned_csv(std::ostream& out,
                       std::span<const AlignedDemonstration> demos);
std::vector<AlignedDemonstration> read_aligned_csv(std::istream& in);

}  // namespace mergexai
