#include "hpnet/scene.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "json.hpp"

#include "hpnet/errors.hpp"

namespace hpnet {

using nlohmann::json;

std::string_view to_string(AgentClass c) {
  switch (c) {
    case AgentClass::kVehicle:
      return "vehicle";
    case AgentClass::kPedestrian:
      return "pedestrian";
    case AgentClass::kCyclist:
      return "cyclist";
  }
  return "vehicle";
}

std::string_view to_string(LaneClass c) {
  switch (c) {
    case LaneClass::kDriving:
      return "driving";
    case LaneClass::kIntersection:
      return "intersection";
    case LaneClass::kTurn:
      return "turn";
  }
  return "driving";
}

AgentClass parse_agent_class(std::string_view s) {
  if (s == "vehicle") return AgentClass::kVehicle;
  if (s == "pedestrian") return AgentClass::kPedestrian;
  if (s == "cyclist") return AgentClass::kCyclist;
  throw ValidityError("unknown agent class '" + std::string(s) + "'");
}

LaneClass parse_lane_class(std::string_view s) {
  if (s == "driving") return LaneClass::kDriving;
  if (s == "intersection") return LaneClass::kIntersection;
  if (s == "turn") return LaneClass::kTurn;
  throw ValidityError("unknown lane class '" + std::string(s) + "'");
}

double LaneSegment::length() const {
  double len = 0.0;
  for (std::size_t i = 1; i < centerline.size(); ++i) len += distance(centerline[i - 1], centerline[i]);
  return len;
}

Pose LaneSegment::midpoint() const {
  if (centerline.empty()) throw ValidityError("lane " + std::to_string(id) + " has an empty centerline");
  if (centerline.size() == 1) return {centerline[0].x, centerline[0].y, 0.0};
  const double half = 0.5 * length();
  double walked = 0.0;
  for (std::size_t i = 1; i < centerline.size(); ++i) {
    const Vec2 a = centerline[i - 1], b = centerline[i];
    const double seg = distance(a, b);
    if (walked + seg >= half || i + 1 == centerline.size()) {
      const double u = seg > 0.0 ? std::clamp((half - walked) / seg, 0.0, 1.0) : 0.0;
      const Vec2 p = a + u * (b - a);
      return {p.x, p.y, std::atan2(b.y - a.y, b.x - a.x)};
    }
    walked += seg;
  }
  return {centerline.back().x, centerline.back().y, 0.0};
}

AgentLocalFeatures agent_local_features(const AgentState& state, AgentClass cls) {
  if (!state.valid) throw ValidityError("agent_local_features: state is not valid");
  AgentLocalFeatures f;
  f.cls = cls;
  f.speed = std::hypot(state.vx, state.vy);
  f.direction = f.speed == 0.0 ? 0.0 : wrap_angle(std::atan2(state.vy, state.vx) - state.theta);
  return f;
}

int Scene::lane_index(int lane_id) const {
  for (std::size_t i = 0; i < lanes.size(); ++i)
    if (lanes[i].id == lane_id) return static_cast<int>(i);
  return -1;
}

void Scene::validate() const {
  if (history_frames < 1 || future_frames < 1) throw ValidityError("scene needs at least one history and one future frame");
  std::unordered_set<int> agent_ids;
  for (const auto& a : agents) {
    if (static_cast<int>(a.states.size()) != total_frames()) {
      throw ValidityError("agent " + std::to_string(a.id) + " has " + std::to_string(a.states.size()) +
                          " frames, expected " + std::to_string(total_frames()));
    }
    if (!agent_ids.insert(a.id).second) throw ValidityError("duplicate agent id " + std::to_string(a.id));
    for (const auto& s : a.states) {
      if (s.valid && !(std::isfinite(s.x) && std::isfinite(s.y) && std::isfinite(s.theta) && std::isfinite(s.vx) &&
                       std::isfinite(s.vy))) {
        throw ValidityError("agent " + std::to_string(a.id) + " has a non-finite state");
      }
    }
  }
  std::unordered_map<int, const LaneSegment*> by_id;
  for (const auto& l : lanes) {
    if (l.centerline.size() < 2) throw ValidityError("lane " + std::to_string(l.id) + " needs >= 2 centerline points");
    if (!by_id.emplace(l.id, &l).second) throw IntegrityError("duplicate lane id " + std::to_string(l.id));
  }
  auto lookup = [&by_id](int from, int id) -> const LaneSegment& {
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      throw IntegrityError("lane " + std::to_string(from) + " references missing lane " + std::to_string(id));
    }
    return *it->second;
  };
  auto has = [](const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); };
  for (const auto& l : lanes) {
    for (int s : l.successors)
      if (!has(lookup(l.id, s).predecessors, l.id))
        throw IntegrityError("lane " + std::to_string(s) + " does not list " + std::to_string(l.id) + " as predecessor");
    for (int p : l.predecessors)
      if (!has(lookup(l.id, p).successors, l.id))
        throw IntegrityError("lane " + std::to_string(p) + " does not list " + std::to_string(l.id) + " as successor");
    for (int a : l.adjacent)
      if (!has(lookup(l.id, a).adjacent, l.id))
        throw IntegrityError("adjacency between " + std::to_string(l.id) + " and " + std::to_string(a) +
                             " is one-sided");
  }
}

std::vector<LaneEdge> lane_graph_edges(const Scene& scene) {
  std::unordered_map<int, int> index;
  for (std::size_t i = 0; i < scene.lanes.size(); ++i) index[scene.lanes[i].id] = static_cast<int>(i);
  std::vector<Pose> mid;
  mid.reserve(scene.lanes.size());
  for (const auto& l : scene.lanes) mid.push_back(l.midpoint());

  std::vector<LaneEdge> edges;
  auto emit = [&](int src, int neighbor_id, LaneRelation rel) {
    auto it = index.find(neighbor_id);
    if (it == index.end()) {
      throw IntegrityError("lane " + std::to_string(scene.lanes[static_cast<std::size_t>(src)].id) +
                           " references missing lane " + std::to_string(neighbor_id));
    }
    const int dst = it->second;
    edges.push_back({src, dst, rel,
                     relative_edge(mid[static_cast<std::size_t>(src)], 0.0, mid[static_cast<std::size_t>(dst)], 0.0)});
  };
  for (std::size_t i = 0; i < scene.lanes.size(); ++i) {
    const auto& l = scene.lanes[i];
    const int src = static_cast<int>(i);
    for (int a : l.adjacent) emit(src, a, LaneRelation::kAdjacent);
    for (int p : l.predecessors) emit(src, p, LaneRelation::kPredecessor);
    for (int s : l.successors) emit(src, s, LaneRelation::kSuccessor);
  }
  return edges;
}

Scene window(const Scene& scene, int last_observed, int history_frames, int future_frames) {
  const int first = last_observed - history_frames + 1;
  if (first < 0 || last_observed + future_frames >= scene.total_frames()) {
    throw ValidityError("window [" + std::to_string(first) + ", " + std::to_string(last_observed + future_frames) +
                        "] exceeds the scene's " + std::to_string(scene.total_frames()) + " frames");
  }
  Scene out;
  out.history_frames = history_frames;
  out.future_frames = future_frames;
  out.sample_rate_hz = scene.sample_rate_hz;
  out.lanes = scene.lanes;
  for (const auto& a : scene.agents) {
    AgentTrack t{a.id, a.cls, {}};
    t.states.assign(a.states.begin() + first, a.states.begin() + last_observed + future_frames + 1);
    out.agents.push_back(std::move(t));
  }
  return out;
}

Scene transform_scene(const Scene& scene, const Rigid2& tf) {
  Scene out = scene;
  for (auto& a : out.agents) {
    for (auto& s : a.states) {
      const Vec2 p = tf.apply(s.position());
      const Vec2 v = tf.apply_vector(s.velocity());
      s.x = p.x;
      s.y = p.y;
      s.vx = v.x;
      s.vy = v.y;
      s.theta = tf.apply_heading(s.theta);
    }
  }
  for (auto& l : out.lanes)
    for (auto& p : l.centerline) p = tf.apply(p);
  return out;
}

std::string scene_to_text(const Scene& scene) {
  json doc;
  doc["format"] = "hpnet-scene";
  doc["version"] = 1;
  doc["history_frames"] = scene.history_frames;
  doc["future_frames"] = scene.future_frames;
  doc["sample_rate_hz"] = scene.sample_rate_hz;
  doc["frame_fields"] = {"x", "y", "theta", "vx", "vy", "valid"};
  json agents = json::array();
  for (const auto& a : scene.agents) {
    json frames = json::array();
    for (const auto& s : a.states) frames.push_back(json::array({s.x, s.y, s.theta, s.vx, s.vy, s.valid}));
    agents.push_back({{"id", a.id}, {"class", to_string(a.cls)}, {"frames", std::move(frames)}});
  }
  doc["agents"] = std::move(agents);
  json lanes = json::array();
  for (const auto& l : scene.lanes) {
    json line = json::array();
    for (const auto& p : l.centerline) line.push_back(json::array({p.x, p.y}));
    lanes.push_back({{"id", l.id},
                     {"class", to_string(l.cls)},
                     {"centerline", std::move(line)},
                     {"adjacent", l.adjacent},
                     {"predecessors", l.predecessors},
                     {"successors", l.successors}});
  }
  doc["lanes"] = std::move(lanes);
  return doc.dump() + "\n";
}

Scene scene_from_text(std::string_view text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidityError(std::string("scene file is not valid JSON: ") + e.what());
  }
  try {
    if (doc.at("format") != "hpnet-scene") throw ValidityError("not an hpnet scene document");
    if (doc.at("version") != 1) throw ValidityError("unsupported scene version " + doc.at("version").dump());
    Scene s;
    s.history_frames = doc.at("history_frames").get<int>();
    s.future_frames = doc.at("future_frames").get<int>();
    s.sample_rate_hz = doc.at("sample_rate_hz").get<double>();
    for (const auto& a : doc.at("agents")) {
      AgentTrack t;
      t.id = a.at("id").get<int>();
      t.cls = parse_agent_class(a.at("class").get<std::string>());
      for (const auto& f : a.at("frames")) {
        if (f.size() != 6) throw ValidityError("agent frame must have 6 fields");
        t.states.push_back({f[0].get<double>(), f[1].get<double>(), f[2].get<double>(), f[3].get<double>(),
                            f[4].get<double>(), f[5].get<bool>()});
      }
      s.agents.push_back(std::move(t));
    }
    for (const auto& l : doc.at("lanes")) {
      LaneSegment seg;
      seg.id = l.at("id").get<int>();
      seg.cls = parse_lane_class(l.at("class").get<std::string>());
      for (const auto& p : l.at("centerline")) seg.centerline.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      seg.adjacent = l.at("adjacent").get<std::vector<int>>();
      seg.predecessors = l.at("predecessors").get<std::vector<int>>();
      seg.successors = l.at("successors").get<std::vector<int>>();
      s.lanes.push_back(std::move(seg));
    }
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw ValidityError(std::string("malformed scene document: ") + e.what());
  }
}

void write_scene(const std::filesystem::path& path, const Scene& scene) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write scene " + path.string());
  out << scene_to_text(scene);
  if (!out) throw IoError("failed writing scene " + path.string());
}

Scene read_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open scene " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return scene_from_text(ss.str());
}

}  // namespace hpnet
