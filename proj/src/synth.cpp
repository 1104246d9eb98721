#include "hpnet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <unordered_set>

#include "hpnet/errors.hpp"
#include "hpnet/rng.hpp"

namespace hpnet {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSampleStep = 0.5;
constexpr double kBoxHalf = 8.0;
constexpr double kArmLength = 60.0;

// Dense polyline parameterised by arc length.
struct Path {
  std::vector<Vec2> pts;
  std::vector<double> cum;

  explicit Path(std::vector<Vec2> p = {}) : pts(std::move(p)) {
    cum.assign(pts.size(), 0.0);
    for (std::size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + distance(pts[i - 1], pts[i]);
  }
  double length() const { return cum.empty() ? 0.0 : cum.back(); }

  std::size_t locate(double s) const {
    auto it = std::upper_bound(cum.begin(), cum.end(), s);
    std::size_t i = it == cum.begin() ? 1 : static_cast<std::size_t>(it - cum.begin());
    return std::clamp<std::size_t>(i, 1, pts.size() - 1);
  }
  Vec2 at(double s) const {
    s = std::clamp(s, 0.0, length());
    const std::size_t i = locate(s);
    const double seg = cum[i] - cum[i - 1];
    const double u = seg > 0.0 ? (s - cum[i - 1]) / seg : 0.0;
    return pts[i - 1] + u * (pts[i] - pts[i - 1]);
  }
  Vec2 tangent(double s) const {
    const std::size_t i = locate(std::clamp(s, 0.0, length()));
    const Vec2 d = pts[i] - pts[i - 1];
    const double n = d.norm();
    return n > 0.0 ? (1.0 / n) * d : Vec2{1.0, 0.0};
  }
};

std::vector<Vec2> line(Vec2 a, Vec2 b) {
  const int n = std::max(1, static_cast<int>(std::ceil(distance(a, b) / kSampleStep)));
  std::vector<Vec2> out;
  for (int i = 0; i <= n; ++i) out.push_back(a + (static_cast<double>(i) / n) * (b - a));
  return out;
}

std::vector<Vec2> bezier(Vec2 p0, Vec2 p1, Vec2 p2, Vec2 p3) {
  const double approx = distance(p0, p1) + distance(p1, p2) + distance(p2, p3);
  const int n = std::max(4, static_cast<int>(std::ceil(approx / (0.5 * kSampleStep))));
  std::vector<Vec2> out;
  for (int i = 0; i <= n; ++i) {
    const double u = static_cast<double>(i) / n, w = 1.0 - u;
    out.push_back((w * w * w) * p0 + (3.0 * w * w * u) * p1 + (3.0 * w * u * u) * p2 + (u * u * u) * p3);
  }
  return out;
}

std::vector<Vec2> arc(Vec2 center, double radius, double a0, double a1) {
  const int n = std::max(2, static_cast<int>(std::ceil(std::abs(a1 - a0) * radius / kSampleStep)));
  std::vector<Vec2> out;
  for (int i = 0; i <= n; ++i) {
    const double a = a0 + (a1 - a0) * i / n;
    out.push_back({center.x + radius * std::cos(a), center.y + radius * std::sin(a)});
  }
  return out;
}

struct Chain {
  Path path;
  std::vector<int> lanes;  // indices into Map::lanes, in travel order
};

struct Route {
  std::vector<int> chains;
  Maneuver kind = Maneuver::kKeepLane;
  double turn_begin = 0.0;  // arc-length span of the connector along the route
  double turn_end = 0.0;
};

struct Map {
  std::vector<LaneSegment> lanes;
  std::vector<Chain> chains;
  std::vector<Route> routes;

  int add_chain(std::vector<Vec2> pts, LaneClass cls) {
    Chain c{Path(std::move(pts)), {}};
    const double len = c.path.length();
    const int pieces = std::max(1, static_cast<int>(std::lround(len / kLaneSegmentLength)));
    for (int p = 0; p < pieces; ++p) {
      LaneSegment seg;
      seg.id = static_cast<int>(lanes.size());
      seg.cls = cls;
      constexpr int kPoints = 6;
      for (int j = 0; j < kPoints; ++j) {
        seg.centerline.push_back(c.path.at(len * (p + static_cast<double>(j) / (kPoints - 1)) / pieces));
      }
      if (!c.lanes.empty()) {
        seg.predecessors.push_back(c.lanes.back());
        lanes[static_cast<std::size_t>(c.lanes.back())].successors.push_back(seg.id);
      }
      c.lanes.push_back(seg.id);
      lanes.push_back(std::move(seg));
    }
    chains.push_back(std::move(c));
    return static_cast<int>(chains.size()) - 1;
  }

  void connect(int chain_a, int chain_b) {
    const int from = chains[static_cast<std::size_t>(chain_a)].lanes.back();
    const int to = chains[static_cast<std::size_t>(chain_b)].lanes.front();
    auto& succ = lanes[static_cast<std::size_t>(from)].successors;
    if (std::find(succ.begin(), succ.end(), to) != succ.end()) return;
    succ.push_back(to);
    lanes[static_cast<std::size_t>(to)].predecessors.push_back(from);
  }

  // Marks lanes of two parallel chains adjacent where their midpoints pair up.
  void make_adjacent(int chain_a, int chain_b, double max_gap) {
    for (int a : chains[static_cast<std::size_t>(chain_a)].lanes) {
      for (int b : chains[static_cast<std::size_t>(chain_b)].lanes) {
        const auto& la = lanes[static_cast<std::size_t>(a)];
        const auto& lb = lanes[static_cast<std::size_t>(b)];
        if (distance(la.midpoint().position(), lb.midpoint().position()) <= max_gap) {
          lanes[static_cast<std::size_t>(a)].adjacent.push_back(b);
          lanes[static_cast<std::size_t>(b)].adjacent.push_back(a);
        }
      }
    }
  }

  void add_route(std::vector<int> chain_ids, Maneuver kind, int connector_pos = -1) {
    Route r{std::move(chain_ids), kind, 0.0, 0.0};
    if (connector_pos >= 0) {
      double s = 0.0;
      for (int i = 0; i < connector_pos; ++i) s += chains[static_cast<std::size_t>(r.chains[i])].path.length();
      r.turn_begin = s;
      r.turn_end = s + chains[static_cast<std::size_t>(r.chains[connector_pos])].path.length();
    }
    routes.push_back(std::move(r));
  }

  Path route_path(const Route& r) const {
    std::vector<Vec2> pts;
    for (int c : r.chains) {
      const auto& p = chains[static_cast<std::size_t>(c)].path.pts;
      auto begin = p.begin();
      if (!pts.empty() && distance(pts.back(), p.front()) < 1e-9) ++begin;
      pts.insert(pts.end(), begin, p.end());
    }
    return Path(std::move(pts));
  }
};

Map straight_map() {
  Map m;
  const double x0 = -100.0, x1 = 100.0;
  const int e0 = m.add_chain(line({x0, -0.5 * kLaneWidth}, {x1, -0.5 * kLaneWidth}), LaneClass::kDriving);
  const int e1 = m.add_chain(line({x0, -1.5 * kLaneWidth}, {x1, -1.5 * kLaneWidth}), LaneClass::kDriving);
  const int w0 = m.add_chain(line({x1, 0.5 * kLaneWidth}, {x0, 0.5 * kLaneWidth}), LaneClass::kDriving);
  m.make_adjacent(e0, e1, kLaneWidth + 0.5);
  for (int c : {e0, e1, w0}) m.add_route({c}, Maneuver::kKeepLane);
  return m;
}

Map curve_map() {
  Map m;
  const double r = 80.0, a0 = -kPi / 2.0 - 1.25, a1 = -kPi / 2.0 + 1.25;
  const Vec2 c{0.0, r};
  const int ccw = m.add_chain(arc(c, r + 0.5 * kLaneWidth, a0, a1), LaneClass::kDriving);
  const int cw = m.add_chain(arc(c, r - 0.5 * kLaneWidth, a1, a0), LaneClass::kDriving);
  m.add_route({ccw}, Maneuver::kKeepLane);
  m.add_route({cw}, Maneuver::kKeepLane);
  return m;
}

// Arms point away from the box centre along `angle`; traffic keeps right.
Map junction_map(const std::vector<double>& arm_angles) {
  Map m;
  struct Arm {
    double angle;
    int in;
    int out;
    Vec2 in_end, in_dir, out_start, out_dir;
  };
  std::vector<Arm> arms;
  for (double a : arm_angles) {
    const Vec2 u{std::cos(a), std::sin(a)};
    const Vec2 right{u.y, -u.x};  // right of the outward direction
    const double off = 0.5 * kLaneWidth;
    // incoming travels -u and keeps to its right, which is -right relative to outward
    const Vec2 in_start = (kBoxHalf + kArmLength) * u + (-off) * right;
    const Vec2 in_end = kBoxHalf * u + (-off) * right;
    const Vec2 out_start = kBoxHalf * u + off * right;
    const Vec2 out_end = (kBoxHalf + kArmLength) * u + off * right;
    Arm arm{a, m.add_chain(line(in_start, in_end), LaneClass::kDriving),
            m.add_chain(line(out_start, out_end), LaneClass::kDriving), in_end, -1.0 * u, out_start, u};
    arms.push_back(arm);
  }
  for (const auto& from : arms) {
    for (const auto& to : arms) {
      if (&from == &to) continue;
      const double delta = wrap_angle(to.angle - (from.angle + kPi));
      Maneuver kind = Maneuver::kKeepLane;
      if (delta > 0.5) kind = Maneuver::kTurnLeft;
      else if (delta < -0.5) kind = Maneuver::kTurnRight;
      const double reach = 0.45 * distance(from.in_end, to.out_start);
      const int conn = m.add_chain(bezier(from.in_end, from.in_end + reach * from.in_dir,
                                          to.out_start - reach * to.out_dir, to.out_start),
                                   kind == Maneuver::kKeepLane ? LaneClass::kIntersection : LaneClass::kTurn);
      m.connect(from.in, conn);
      m.connect(conn, to.out);
      m.add_route({from.in, conn, to.out}, kind, 1);
    }
  }
  return m;
}

Map build_map(Layout layout) {
  switch (layout) {
    case Layout::kStraight:
      return straight_map();
    case Layout::kCurve:
      return curve_map();
    case Layout::kTIntersection:
      return junction_map({0.0, kPi, -kPi / 2.0});
    case Layout::kFourWay:
      return junction_map({0.0, kPi / 2.0, kPi, -kPi / 2.0});
  }
  return straight_map();
}

// Speeds per frame for `frames` frames.
std::vector<double> constant_profile(double v, int frames) { return std::vector<double>(static_cast<std::size_t>(frames), v); }

std::vector<double> stop_and_go_profile(Rng& rng, int frames) {
  const double cruise = rng.uniform(6.0, 12.0);
  const int brake_at = static_cast<int>(rng.uniform_int(5, std::max(5, frames / 2)));
  const int hold = static_cast<int>(rng.uniform_int(5, 15));
  constexpr double kDecel = 3.0, kAccel = 2.0;
  std::vector<double> v(static_cast<std::size_t>(frames));
  double cur = cruise;
  int stopped_for = 0;
  enum { kCruise, kBrake, kHold, kGo } phase = kCruise;
  for (int k = 0; k < frames; ++k) {
    v[static_cast<std::size_t>(k)] = cur;
    if (phase == kCruise && k + 1 >= brake_at) phase = kBrake;
    if (phase == kBrake) {
      cur = std::max(0.0, cur - kDecel * kFramePeriod);
      if (cur == 0.0) phase = kHold;
    } else if (phase == kHold) {
      if (++stopped_for >= hold) phase = kGo;
    } else if (phase == kGo) {
      cur = std::min(cruise, cur + kAccel * kFramePeriod);
    }
  }
  return v;
}

// Trapezoidal arc length per frame.
std::vector<double> integrate(const std::vector<double>& v) {
  std::vector<double> s(v.size(), 0.0);
  for (std::size_t k = 1; k < v.size(); ++k) s[k] = s[k - 1] + 0.5 * kFramePeriod * (v[k - 1] + v[k]);
  return s;
}

double clamped_normal(Rng& rng, double sigma) {
  if (sigma <= 0.0) return 0.0;
  return std::clamp(rng.normal() * sigma, -kNoiseClampSigmas * sigma, kNoiseClampSigmas * sigma);
}

Maneuver draw_maneuver(Rng& rng, const ManeuverMix& mix) {
  const std::array<double, 5> w{mix.keep_lane, mix.turn_left, mix.turn_right, mix.stop_and_go, mix.sudden_turn};
  double total = 0.0;
  for (double x : w) total += x;
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < w.size(); ++i) {
    if (u < w[i]) return static_cast<Maneuver>(i);
    u -= w[i];
  }
  return Maneuver::kKeepLane;
}

struct Motion {
  std::vector<Vec2> pos;
  std::vector<double> heading;
  std::vector<double> speed;
};

Motion follow_route(const Path& path, const std::vector<double>& v, double s0) {
  const auto s = integrate(v);
  Motion m;
  for (std::size_t k = 0; k < v.size(); ++k) {
    const Vec2 t = path.tangent(s0 + s[k]);
    m.pos.push_back(path.at(s0 + s[k]));
    m.heading.push_back(std::atan2(t.y, t.x));
    m.speed.push_back(v[k]);
  }
  return m;
}

// Straight along `path` until frame `turn_frame`, then the heading swings by
// `sign * pi/2` over five frames and the agent continues on a straight line.
Motion sudden_turn(const Path& path, double s0, double speed, int turn_frame, double sign, int frames) {
  Motion m;
  Vec2 p = path.at(s0);
  const Vec2 t0 = path.tangent(s0);
  const double h0 = std::atan2(t0.y, t0.x);
  constexpr int kTurnFrames = 5;
  auto heading_at = [&](int k) {
    const double f = std::clamp(static_cast<double>(k - turn_frame) / kTurnFrames, 0.0, 1.0);
    return wrap_angle(h0 + sign * 0.5 * kPi * f);
  };
  for (int k = 0; k < frames; ++k) {
    if (k > 0) {
      // exact chord of a constant-rate heading change between frames
      const double ha = heading_at(k - 1), hb = heading_at(k);
      const double dh = wrap_angle(hb - ha);
      const double mid = ha + 0.5 * dh;
      const double chord = dh == 0.0 ? speed * kFramePeriod : speed * kFramePeriod * std::sin(0.5 * dh) / (0.5 * dh);
      p = p + chord * Vec2{std::cos(mid), std::sin(mid)};
    }
    m.pos.push_back(p);
    m.heading.push_back(heading_at(k));
    m.speed.push_back(speed);
  }
  return m;
}

bool hosts(const Map& map, Maneuver kind) {
  return std::any_of(map.routes.begin(), map.routes.end(), [&](const Route& r) { return r.kind == kind; });
}

}  // namespace

std::string to_string(Layout l) {
  switch (l) {
    case Layout::kStraight:
      return "straight";
    case Layout::kCurve:
      return "curve";
    case Layout::kTIntersection:
      return "t-intersection";
    case Layout::kFourWay:
      return "4-way";
  }
  return "straight";
}

std::string to_string(Maneuver m) {
  switch (m) {
    case Maneuver::kKeepLane:
      return "keep-lane";
    case Maneuver::kTurnLeft:
      return "turn-left";
    case Maneuver::kTurnRight:
      return "turn-right";
    case Maneuver::kStopAndGo:
      return "stop-and-go";
    case Maneuver::kSuddenTurn:
      return "sudden-turn";
  }
  return "keep-lane";
}

Layout parse_layout(const std::string& s) {
  for (Layout l : {Layout::kStraight, Layout::kCurve, Layout::kTIntersection, Layout::kFourWay})
    if (to_string(l) == s) return l;
  throw UsageError("unknown layout '" + s + "' (straight, curve, t-intersection, 4-way)");
}

Maneuver parse_maneuver(const std::string& s) {
  for (Maneuver m : {Maneuver::kKeepLane, Maneuver::kTurnLeft, Maneuver::kTurnRight, Maneuver::kStopAndGo,
                     Maneuver::kSuddenTurn})
    if (to_string(m) == s) return m;
  throw UsageError("unknown maneuver '" + s + "'");
}

void ScenarioSpec::validate() const {
  if (min_agents < 1 || max_agents < min_agents) throw SpecError("scenario: need 1 <= min_agents <= max_agents");
  if (history_frames < 1 || future_frames < 1 || extra_frames < 0) throw SpecError("scenario: bad frame counts");
  if (position_noise < 0.0 || heading_noise < 0.0) throw SpecError("scenario: noise must be non-negative");
  const std::array<double, 5> w{mix.keep_lane, mix.turn_left, mix.turn_right, mix.stop_and_go, mix.sudden_turn};
  double total = 0.0;
  for (double x : w) {
    if (x < 0.0) throw SpecError("scenario: maneuver weights must be non-negative");
    total += x;
  }
  if (!(total > 0.0) && !focal_maneuver) throw SpecError("scenario: maneuver mix is empty");
}

Scene generate(const ScenarioSpec& spec) {
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x5ce7e));
  Map map = build_map(spec.layout);
  if (map.routes.empty()) throw SpecError("scenario: layout has no drivable routes");

  Scene scene;
  scene.history_frames = spec.history_frames + spec.extra_frames;
  scene.future_frames = spec.future_frames;
  const int frames = scene.total_frames();
  const double duration = (frames - 1) * kFramePeriod;

  const int n_agents = static_cast<int>(rng.uniform_int(spec.min_agents, spec.max_agents));
  std::vector<Vec2> starts;
  for (int n = 0; n < n_agents; ++n) {
    Maneuver kind = (n == 0 && spec.focal_maneuver) ? *spec.focal_maneuver : draw_maneuver(rng, spec.mix);
    const bool cyclist = rng.bernoulli(0.1);
    const double speed_scale = cyclist ? 0.5 : 1.0;

    Motion motion;
    for (int attempt = 0;; ++attempt) {
      Maneuver route_kind = kind == Maneuver::kStopAndGo || kind == Maneuver::kSuddenTurn ? Maneuver::kKeepLane : kind;
      if (!hosts(map, route_kind)) route_kind = Maneuver::kKeepLane;
      std::vector<int> candidates;
      for (std::size_t r = 0; r < map.routes.size(); ++r)
        if (map.routes[r].kind == route_kind) candidates.push_back(static_cast<int>(r));
      const Route& route = map.routes[static_cast<std::size_t>(
          candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))])];
      const Path path = map.route_path(route);
      const double len = path.length();

      if (kind == Maneuver::kSuddenTurn) {
        const double v = rng.uniform(6.0, 9.0) * speed_scale;
        const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
        const int turn_frame = scene.history_frames;
        const double straight = v * (turn_frame - 1) * kFramePeriod;
        const double s0 = std::max(0.0, std::min(len - straight - 1.0, rng.uniform(0.0, 20.0)));
        motion = sudden_turn(path, s0, v, turn_frame, sign, frames);
      } else {
        std::vector<double> v;
        if (kind == Maneuver::kStopAndGo) {
          v = stop_and_go_profile(rng, frames);
          for (double& x : v) x *= speed_scale;
        } else if (kind == Maneuver::kTurnLeft || kind == Maneuver::kTurnRight) {
          v = constant_profile(rng.uniform(6.0, 11.0) * speed_scale, frames);
        } else {
          v = constant_profile(rng.uniform(5.0, 15.0) * speed_scale, frames);
        }
        const double travel = integrate(v).back();
        double lo = 0.0, hi = std::max(0.0, len - travel - 1.0);
        if (route_kind != Maneuver::kKeepLane) {
          lo = std::max(lo, route.turn_end + 1.0 - travel);
          hi = std::min(hi, route.turn_begin - 1.0);
        }
        if (len <= travel) {
          throw SpecError("scenario: a " + std::to_string(duration) + " s track does not fit on layout " +
                          to_string(spec.layout));
        }
        double s0 = 0.0;
        if (lo <= hi) {
          s0 = rng.uniform(lo, hi);
        } else {
          // too short to cover the whole connector: centre the track on it
          const double mid = 0.5 * (route.turn_begin + route.turn_end);
          s0 = std::clamp(mid - 0.5 * travel, 0.0, len - travel - 1.0);
        }
        motion = follow_route(path, v, s0);
      }
      const bool clear = std::all_of(starts.begin(), starts.end(),
                                     [&](Vec2 p) { return distance(p, motion.pos.front()) > 6.0; });
      if (clear || attempt >= 8) break;
    }
    starts.push_back(motion.pos.front());

    AgentTrack track;
    track.id = n;
    track.cls = cyclist ? AgentClass::kCyclist : AgentClass::kVehicle;
    for (int k = 0; k < frames; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      AgentState st;
      const double h = motion.heading[ku];
      st.x = motion.pos[ku].x + clamped_normal(rng, spec.position_noise);
      st.y = motion.pos[ku].y + clamped_normal(rng, spec.position_noise);
      st.theta = wrap_angle(h + clamped_normal(rng, spec.heading_noise));
      st.vx = motion.speed[ku] * std::cos(h);
      st.vy = motion.speed[ku] * std::sin(h);
      track.states.push_back(st);
    }
    scene.agents.push_back(std::move(track));
  }
  scene.lanes = std::move(map.lanes);
  scene.validate();
  return scene;
}

Scene flip_horizontal(const Scene& scene) {
  Scene out = scene;
  for (auto& a : out.agents) {
    for (auto& s : a.states) {
      s.x = -s.x;
      s.vx = -s.vx;
      s.theta = wrap_angle(kPi - s.theta);
    }
  }
  for (auto& l : out.lanes)
    for (auto& p : l.centerline) p.x = -p.x;
  return out;
}

Scene augment(const Scene& scene, const AugmentationConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, 0xa06));
  Scene out = rng.bernoulli(cfg.flip_ratio) ? flip_horizontal(scene) : scene;

  if (cfg.agent_occlusion_ratio > 0.0) {
    std::vector<AgentTrack> kept;
    for (std::size_t i = 0; i < out.agents.size(); ++i) {
      const bool drop = i > 0 && rng.bernoulli(cfg.agent_occlusion_ratio);
      if (!drop) kept.push_back(std::move(out.agents[i]));
    }
    out.agents = std::move(kept);
  }

  if (cfg.lane_occlusion_ratio > 0.0) {
    std::unordered_set<int> removed;
    std::vector<LaneSegment> kept;
    for (auto& l : out.lanes) {
      if (rng.bernoulli(cfg.lane_occlusion_ratio)) removed.insert(l.id);
      else kept.push_back(std::move(l));
    }
    auto prune = [&removed](std::vector<int>& ids) {
      std::erase_if(ids, [&removed](int id) { return removed.contains(id); });
    };
    for (auto& l : kept) {
      prune(l.adjacent);
      prune(l.predecessors);
      prune(l.successors);
    }
    out.lanes = std::move(kept);
  }
  return out;
}

ScenarioSpec corpus_scenario(std::uint64_t seed, const std::string& split, int index, int extra_frames) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a of the split name
  for (unsigned char c : split) h = (h ^ c) * 0x100000001b3ULL;
  ScenarioSpec spec;
  spec.layout = static_cast<Layout>(index % 4);
  spec.seed = mix_seed(seed, h, static_cast<std::uint64_t>(index));
  spec.position_noise = 0.02;
  spec.heading_noise = 0.005;
  spec.extra_frames = extra_frames;
  return spec;
}

std::vector<Scene> generate_corpus(std::uint64_t seed, const std::string& split, int count, int extra_frames) {
  std::vector<Scene> out;
  out.reserve(static_cast<std::size_t>(std::max(count, 0)));
  for (int i = 0; i < count; ++i) out.push_back(generate(corpus_scenario(seed, split, i, extra_frames)));
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << "# hpnet-corpus 1\n";
  for (const auto& e : entries) out << e.split << '\t' << e.path << '\t' << e.seed << '\n';
  if (!out) throw IoError("failed writing manifest " + path.string());
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "# hpnet-corpus 1") throw ValidityError(path.string() + " is not a corpus manifest");
  std::vector<ManifestEntry> out;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto a = line.find('\t');
    const auto b = a == std::string::npos ? a : line.find('\t', a + 1);
    if (b == std::string::npos) throw ValidityError(path.string() + ":" + std::to_string(lineno) + ": expected 3 fields");
    ManifestEntry e{line.substr(0, a), line.substr(a + 1, b - a - 1), 0};
    try {
      e.seed = std::stoull(line.substr(b + 1));
    } catch (const std::exception&) {
      throw ValidityError(path.string() + ":" + std::to_string(lineno) + ": bad seed");
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<Vec2> constant_velocity_rollout(const Scene& scene, int agent, int frame_index, int horizon) {
  if (agent < 0 || agent >= static_cast<int>(scene.agents.size())) {
    throw ValidityError("constant velocity: no agent " + std::to_string(agent));
  }
  const auto& states = scene.agents[static_cast<std::size_t>(agent)].states;
  if (frame_index < 0 || frame_index >= static_cast<int>(states.size()) ||
      !states[static_cast<std::size_t>(frame_index)].valid) {
    throw ValidityError("constant velocity: agent " + std::to_string(agent) + " is not valid at frame " +
                        std::to_string(frame_index));
  }
  const auto& s = states[static_cast<std::size_t>(frame_index)];
  std::vector<Vec2> out;
  for (int k = 1; k <= horizon; ++k) out.push_back({s.x + s.vx * kFramePeriod * k, s.y + s.vy * kFramePeriod * k});
  return out;
}

}  // namespace hpnet
