#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hpnet/geometry.hpp"

namespace hpnet {

enum class AgentClass { kVehicle = 0, kPedestrian = 1, kCyclist = 2 };
inline constexpr int kNumAgentClasses = 3;

enum class LaneClass { kDriving = 0, kIntersection = 1, kTurn = 2 };
inline constexpr int kNumLaneClasses = 3;

std::string_view to_string(AgentClass c);
std::string_view to_string(LaneClass c);
AgentClass parse_agent_class(std::string_view s);
LaneClass parse_lane_class(std::string_view s);

struct AgentState {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // (-pi, pi]
  double vx = 0.0;
  double vy = 0.0;
  bool valid = true;

  Pose pose() const { return {x, y, theta}; }
  Vec2 position() const { return {x, y}; }
  Vec2 velocity() const { return {vx, vy}; }
};

struct AgentTrack {
  int id = 0;
  AgentClass cls = AgentClass::kVehicle;
  std::vector<AgentState> states;  // one per frame, shared time base
};

struct LaneSegment {
  int id = 0;
  LaneClass cls = LaneClass::kDriving;
  std::vector<Vec2> centerline;
  std::vector<int> adjacent;
  std::vector<int> predecessors;
  std::vector<int> successors;

  double length() const;
  // Arc-length midpoint of the centerline with the local tangent direction.
  Pose midpoint() const;
};

// Location-independent agent inputs in the agent's own heading frame.
struct AgentLocalFeatures {
  double speed = 0.0;
  double direction = 0.0;  // velocity direction minus heading; 0 when stationary
  AgentClass cls = AgentClass::kVehicle;
};

AgentLocalFeatures agent_local_features(const AgentState& state, AgentClass cls = AgentClass::kVehicle);

// Agents over a common 10 Hz time base plus a lane map. Frame index 0 of a
// track is the oldest observed frame; history_frames observed frames are
// followed by future_frames ground-truth frames. Agent 0 is the focal agent.
struct Scene {
  int history_frames = 20;
  int future_frames = 30;
  double sample_rate_hz = 10.0;
  std::vector<AgentTrack> agents;
  std::vector<LaneSegment> lanes;

  int total_frames() const { return history_frames + future_frames; }
  // index of paper-style frame t in [-T+1, F] within a track
  int frame_index(int t) const { return t + history_frames - 1; }

  // Throws ValidityError / IntegrityError when the scene breaks its invariants.
  void validate() const;
  int lane_index(int lane_id) const;
};

enum class LaneRelation { kAdjacent, kPredecessor, kSuccessor };

struct LaneEdge {
  int src = 0;  // lane indices into Scene::lanes
  int dst = 0;
  LaneRelation relation = LaneRelation::kAdjacent;
  EdgeFeature feature;
};

// One directed edge per declared relation, from the declaring lane to the
// neighbor, with features between midpoint poses (time delta 0).
std::vector<LaneEdge> lane_graph_edges(const Scene& scene);

// Sub-scene whose observed window ends at track index `last_observed`.
Scene window(const Scene& scene, int last_observed, int history_frames, int future_frames);

// Applies one rigid transform to every agent and lane.
Scene transform_scene(const Scene& scene, const Rigid2& tf);

// Scene text file (JSON document):
//   {"format":"hpnet-scene","version":1,"history_frames":T,"future_frames":F,
//    "sample_rate_hz":10,"frame_fields":["x","y","theta","vx","vy","valid"],
//    "agents":[{"id":..,"class":"vehicle","frames":[[x,y,theta,vx,vy,valid],...]}],
//    "lanes":[{"id":..,"class":"driving","centerline":[[x,y],...],
//              "adjacent":[..],"predecessors":[..],"successors":[..]}]}
// Numbers are written in shortest round-trip form, so write -> read -> write
// reproduces the text exactly.
std::string scene_to_text(const Scene& scene);
Scene scene_from_text(std::string_view text);
void write_scene(const std::filesystem::path& path, const Scene& scene);
Scene read_scene(const std::filesystem::path& path);

}  // namespace hpnet
