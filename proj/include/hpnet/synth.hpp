#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hpnet/config.hpp"
#include "hpnet/scene.hpp"

namespace hpnet {

enum class Layout { kStraight, kCurve, kTIntersection, kFourWay };
enum class Maneuver { kKeepLane, kTurnLeft, kTurnRight, kStopAndGo, kSuddenTurn };

std::string to_string(Layout l);
std::string to_string(Maneuver m);
Layout parse_layout(const std::string& s);
Maneuver parse_maneuver(const std::string& s);

inline constexpr double kFramePeriod = 0.1;     // s, 10 Hz
inline constexpr double kMaxAcceleration = 4.0;  // m/s^2, bound on every generated speed profile
inline constexpr double kNoiseClampSigmas = 3.0;
inline constexpr double kLaneSegmentLength = 5.0;
inline constexpr double kLaneWidth = 3.5;

// Relative weights; maneuvers a layout cannot host fall back to keep-lane.
struct ManeuverMix {
  double keep_lane = 0.4;
  double turn_left = 0.2;
  double turn_right = 0.2;
  double stop_and_go = 0.2;
  double sudden_turn = 0.0;
};

struct ScenarioSpec {
  Layout layout = Layout::kFourWay;
  int min_agents = 2;
  int max_agents = 6;
  ManeuverMix mix;
  double position_noise = 0.0;  // std, meters; clamped at kNoiseClampSigmas
  double heading_noise = 0.0;   // std, radians
  std::uint64_t seed = 0;
  int history_frames = 20;
  int future_frames = 30;
  // Additional observed frames for streaming rollouts; the scene then holds
  // history_frames + extra_frames observed frames.
  int extra_frames = 0;
  std::optional<Maneuver> focal_maneuver;

  void validate() const;
};

// Deterministic in spec (including its seed).
Scene generate(const ScenarioSpec& spec);

// Mirror x -> -x for agents and lanes, with headings and velocities to match.
Scene flip_horizontal(const Scene& scene);

// Flip with probability flip_ratio, drop each non-focal agent with
// agent_occlusion_ratio and each lane with lane_occlusion_ratio (dangling
// neighbor ids are removed afterwards).
Scene augment(const Scene& scene, const AugmentationConfig& cfg, std::uint64_t seed);

// Scene `index` of a corpus split: layouts cycle through all four and the
// scenario seed is derived from (seed, split, index).
ScenarioSpec corpus_scenario(std::uint64_t seed, const std::string& split, int index, int extra_frames = 0);
std::vector<Scene> generate_corpus(std::uint64_t seed, const std::string& split, int count, int extra_frames = 0);

// Corpus manifest: a "# hpnet-corpus 1" line, then split<TAB>path<TAB>seed per scene.
struct ManifestEntry {
  std::string split;
  std::string path;  // relative to the manifest's directory
  std::uint64_t seed = 0;
};
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Extrapolates the agent's velocity at track index `frame_index` for
// `horizon` frames at 0.1 s per frame. Returns global positions.
std::vector<Vec2> constant_velocity_rollout(const Scene& scene, int agent, int frame_index, int horizon);

}  // namespace hpnet
