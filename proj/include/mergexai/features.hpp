#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mergexai {

// The eight merge decision features, in canonical column order.
enum class Feature : std::size_t {
  kDxLead = 0,  // longitudinal gap to lead vehicle [m]
  kDvLead,      // longitudinal speed difference to lead [m/s]
  kVxEgo,       // ego longitudinal speed [m/s]
  kVyEgo,       // ego lateral speed toward the highway [m/s]
  kDxLag,       // longitudinal gap to lag vehicle [m]
  kDvLag,       // longitudinal speed difference to lag [m/s]
  kDxEnd,       // distance along the lane to the ramp end [m]
  kDyBdry,      // signed lateral distance to the lane boundary [m]
};

inline constexpr std::size_t kNumFeatures = 8;

inline constexpr std::array<std::string_view, kNumFeatures> kFeatureNames = {
    "dx_lead", "dv_lead", "vx_ego", "vy_ego",
    "dx_lag",  "dv_lag",  "dx_end", "dy_bdry"};

inline std::string_view feature_name(Feature f) {
  return kFeatureNames[static_cast<std::size_t>(f)];
}

inline std::optional<Feature> feature_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumFeatures; ++i)
    if (kFeatureNames[i] == name) return static_cast<Feature>(i);
  return std::nullopt;
}

struct FeatureVector {
  std::array<double, kNumFeatures> values{};

  double& operator[](Feature f) { return values[static_cast<std::size_t>(f)]; }
  double operator[](Feature f) const {
    return values[static_cast<std::size_t>(f)];
  }
  double& operator[](std::size_t i) { return values[i]; }
  double operator[](std::size_t i) const { return values[i]; }

  bool operator==(const FeatureVector&) const = default;
};

// The default model configuration: six interaction features in, distance to
// the ramp end out.
inline std::vector<Feature> default_input_features() {
  return {Feature::kDxLead, Feature::kDvLead, Feature::kVxEgo,
          Feature::kVyEgo,  Feature::kDxLag,  Feature::kDvLag};
}
inline constexpr Feature kDefaultOutputFeature = Feature::kDxEnd;

}  // namespace mergexai
