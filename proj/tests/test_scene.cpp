#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "hpnet/errors.hpp"
#include "hpnet/geometry.hpp"
#include "hpnet/scene.hpp"
#include "hpnet/synth.hpp"
#include "support.hpp"

using namespace hpnet;
using std::numbers::pi;

namespace {

LaneSegment lane(int id, std::vector<Vec2> pts) {
  LaneSegment l;
  l.id = id;
  l.centerline = std::move(pts);
  return l;
}

Scene one_agent(int history, int future) {
  Scene s;
  s.history_frames = history;
  s.future_frames = future;
  AgentTrack a;
  for (int f = 0; f < history + future; ++f) a.states.push_back({f * 0.5, 0.0, 0.0, 5.0, 0.0, true});
  s.agents.push_back(a);
  return s;
}

double segment_distance(Vec2 p, Vec2 a, Vec2 b) {
  const Vec2 d = b - a;
  const double l2 = d.x * d.x + d.y * d.y;
  const double u = l2 > 0.0 ? std::clamp(((p.x - a.x) * d.x + (p.y - a.y) * d.y) / l2, 0.0, 1.0) : 0.0;
  return distance(p, a + u * d);
}

double lane_distance(const Scene& s, Vec2 p) {
  double best = INFINITY;
  for (const auto& l : s.lanes)
    for (std::size_t i = 1; i < l.centerline.size(); ++i)
      best = std::min(best, segment_distance(p, l.centerline[i - 1], l.centerline[i]));
  return best;
}

ScenarioSpec single(Layout layout, Maneuver m, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.layout = layout;
  spec.min_agents = spec.max_agents = 1;
  spec.focal_maneuver = m;
  spec.seed = seed;
  return spec;
}

}  // namespace

TEST_CASE("agent local features") {
  auto f = agent_local_features({0, 0, 1.2, 0, 0, true});
  CHECK(f.speed == 0.0);
  CHECK(f.direction == 0.0);
  f = agent_local_features({0, 0, 0.0, 3, 4, true});
  CHECK(f.speed == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(f.direction == doctest::Approx(std::atan2(4.0, 3.0)).epsilon(1e-15));
  f = agent_local_features({0, 0, pi / 2, 0, 2, true});
  CHECK(f.speed == 2.0);
  CHECK(std::abs(f.direction) < 1e-15);
  CHECK_THROWS_AS(agent_local_features({0, 0, 0, 1, 1, false}), ValidityError);
}

TEST_CASE("relative edge examples and properties") {
  const auto self = relative_edge({1, 2, 0.3}, 4, {1, 2, 0.3}, 4);
  CHECK(self.distance == 0.0);
  CHECK(self.direction == 0.0);
  CHECK(self.relative_heading == 0.0);
  CHECK(self.time_delta == 0.0);

  const auto e = relative_edge({3, 4, pi / 2}, 5, {0, 0, 0}, 7);
  CHECK(e.distance == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(e.direction == doctest::Approx(0.9273).epsilon(1e-4));
  CHECK(e.relative_heading == doctest::Approx(pi / 2).epsilon(1e-15));
  CHECK(e.time_delta == -2.0);

  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const Pose a{rng.uniform(-50, 50), rng.uniform(-50, 50), wrap_angle(rng.uniform(-4, 4))};
    const Pose b{rng.uniform(-50, 50), rng.uniform(-50, 50), wrap_angle(rng.uniform(-4, 4))};
    const auto ab = relative_edge(a, 1, b, 3);
    const auto ba = relative_edge(b, 3, a, 1);
    CHECK(ab.distance >= 0.0);
    CHECK(ab.direction > -pi);
    CHECK(ab.direction <= pi);
    CHECK(ba.time_delta == -ab.time_delta);
    CHECK(std::abs(wrap_angle(ba.relative_heading + ab.relative_heading)) < 1e-12);

    const Rigid2 tf = testing::random_rigid(rng);
    const Pose a2{tf.apply(a.position()).x, tf.apply(a.position()).y, tf.apply_heading(a.theta)};
    const Pose b2{tf.apply(b.position()).x, tf.apply(b.position()).y, tf.apply_heading(b.theta)};
    const auto moved = relative_edge(a2, 1, b2, 3);
    CHECK(std::abs(moved.distance - ab.distance) < 1e-9);
    CHECK(std::abs(wrap_angle(moved.direction - ab.direction)) < 1e-9);
    CHECK(std::abs(wrap_angle(moved.relative_heading - ab.relative_heading)) < 1e-9);
  }
}

TEST_CASE("spatial neighbours") {
  const std::vector<Vec2> pts = {{1, 0}, {0, 49.9}, {-50, 0}, {0, -50.1}};
  CHECK(spatial_neighbors({0, 0}, pts, 50.0) == std::vector<int>{0, 1, 2});
  CHECK(spatial_neighbors({0, 0}, pts, 1e9).size() == 4);
  CHECK(spatial_neighbors({1000, 0}, pts, 50.0).empty());
  CHECK(spatial_neighbors({1, 0}, pts, 50.0, 0) == std::vector<int>{1});
  CHECK_THROWS_AS(spatial_neighbors({0, 0}, pts, 0.0), SpecError);

  Rng rng(4);
  std::vector<Vec2> cloud;
  for (int i = 0; i < 40; ++i) cloud.push_back({rng.uniform(-30, 30), rng.uniform(-30, 30)});
  for (int i = 0; i < 40; ++i) {
    const auto ni = spatial_neighbors(cloud[static_cast<std::size_t>(i)], cloud, 15.0, i);
    for (int j : ni) {
      const auto nj = spatial_neighbors(cloud[static_cast<std::size_t>(j)], cloud, 15.0, j);
      CHECK(std::find(nj.begin(), nj.end(), i) != nj.end());
    }
  }
}

TEST_CASE("temporal windows are causal") {
  auto w = temporal_window(0, 20, 20);
  CHECK(w.first == -19);
  CHECK(w.last == 0);
  w = temporal_window(-19, 20, 20);
  CHECK(w.first == -19);
  CHECK(w.count() == 1);
  w = temporal_window(-5, 0, 20);
  CHECK(w.first == -5);
  CHECK(w.last == -5);
  for (int t = -11; t <= 0; ++t)
    for (int span = 0; span < 15; ++span) CHECK(temporal_window(t, span, 12).last <= t);
  CHECK_THROWS_AS(temporal_window(0, -1, 20), SpecError);
}

TEST_CASE("lane graph edges") {
  Scene s = one_agent(2, 1);
  s.lanes = {lane(10, {{0, 0}, {5, 0}}), lane(11, {{5, 0}, {10, 0}})};
  s.lanes[0].successors = {11};
  s.lanes[1].predecessors = {10};
  auto edges = lane_graph_edges(s);
  REQUIRE(edges.size() == 2);
  CHECK(edges[0].src == 0);
  CHECK(edges[0].dst == 1);
  CHECK(edges[0].relation == LaneRelation::kSuccessor);
  CHECK(edges[0].feature.distance == doctest::Approx(5.0));
  CHECK(edges[0].feature.time_delta == 0.0);
  CHECK(edges[1].relation == LaneRelation::kPredecessor);

  s.lanes = {lane(1, {{0, 0}, {5, 0}})};
  CHECK(lane_graph_edges(s).empty());

  s.lanes = {lane(1, {{0, 0}, {5, 0}}), lane(2, {{0, 3.5}, {5, 3.5}}), lane(3, {{0, 7}, {5, 7}})};
  s.lanes[0].adjacent = {2};
  s.lanes[1].adjacent = {1, 3};
  s.lanes[2].adjacent = {2};
  CHECK(lane_graph_edges(s).size() == 4);

  s.lanes[2].adjacent = {2, 99};
  CHECK_THROWS_AS(lane_graph_edges(s), IntegrityError);
  s.lanes[2].adjacent = {2};
  s.lanes[0].successors = {2};
  CHECK_THROWS_AS(s.validate(), IntegrityError);
}

TEST_CASE("lane length and midpoint") {
  const auto l = lane(0, {{0, 0}, {3, 4}, {3, 10}});
  CHECK(std::abs(l.length() - 11.0) < 1e-9);
  const Pose m = l.midpoint();
  CHECK(m.x == doctest::Approx(3.0));
  CHECK(m.y == doctest::Approx(4.5));
  CHECK(m.theta == doctest::Approx(pi / 2));
}

TEST_CASE("scene validation") {
  Scene s = one_agent(3, 2);
  CHECK_NOTHROW(s.validate());
  s.agents[0].states.pop_back();
  CHECK_THROWS_AS(s.validate(), ValidityError);
  s = one_agent(3, 2);
  s.agents.push_back(s.agents[0]);
  CHECK_THROWS_AS(s.validate(), ValidityError);
  s = one_agent(3, 2);
  s.agents[0].states[1].x = NAN;
  CHECK_THROWS_AS(s.validate(), ValidityError);
}

TEST_CASE("scene text round trip is exact") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Scene s = testing::micro_scene(seed, 5, 4, 3);
    s.agents[1].states[2].x = 0.1 + 0.2;
    s.agents[1].cls = AgentClass::kPedestrian;
    const std::string text = scene_to_text(s);
    const Scene back = scene_from_text(text);
    CHECK(scene_to_text(back) == text);
    CHECK(back.agents[1].states[2].x == s.agents[1].states[2].x);
    CHECK(back.agents[1].states[0].valid == s.agents[1].states[0].valid);
    CHECK(back.lanes.size() == s.lanes.size());
  }
  CHECK_THROWS_AS(scene_from_text("{not json"), ValidityError);
  CHECK_THROWS_AS(scene_from_text(R"({"format":"other","version":1})"), ValidityError);

  const auto dir = std::filesystem::temp_directory_path() / "hpnet_test_scene";
  std::filesystem::create_directories(dir);
  const Scene s = testing::micro_scene(3);
  write_scene(dir / "s.json", s);
  CHECK(scene_to_text(read_scene(dir / "s.json")) == scene_to_text(s));
  CHECK_THROWS_AS(read_scene(dir / "none.json"), IoError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("windows over a longer stream") {
  const Scene s = one_agent(10, 3);
  const Scene w = window(s, 6, 4, 3);
  CHECK(w.history_frames == 4);
  CHECK(w.future_frames == 3);
  REQUIRE(w.agents[0].states.size() == 7);
  CHECK(w.agents[0].states[0].x == s.agents[0].states[3].x);
  CHECK(w.agents[0].states[3].x == s.agents[0].states[6].x);
  CHECK_THROWS_AS(window(s, 11, 4, 3), ValidityError);
  CHECK_THROWS_AS(window(s, 2, 4, 3), ValidityError);
}

TEST_CASE("transform_scene moves every coordinate") {
  const Scene s = testing::micro_scene(2);
  Rng rng(1);
  const Rigid2 tf = testing::random_rigid(rng);
  const Scene m = transform_scene(s, tf);
  for (std::size_t n = 0; n < s.agents.size(); ++n) {
    for (std::size_t f = 0; f < s.agents[n].states.size(); ++f) {
      const auto& a = s.agents[n].states[f];
      const auto& b = m.agents[n].states[f];
      if (!a.valid) continue;
      CHECK(distance(tf.apply(a.position()), b.position()) < 1e-9);
      const auto la = agent_local_features(a), lb = agent_local_features(b);
      CHECK(std::abs(la.speed - lb.speed) < 1e-9);
      CHECK(std::abs(wrap_angle(la.direction - lb.direction)) < 1e-9);
    }
  }
  const auto ea = lane_graph_edges(s), eb = lane_graph_edges(m);
  REQUIRE(ea.size() == eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) {
    CHECK(std::abs(ea[i].feature.distance - eb[i].feature.distance) < 1e-9);
    CHECK(std::abs(wrap_angle(ea[i].feature.direction - eb[i].feature.direction)) < 1e-9);
  }
}

TEST_CASE("generator: keep-lane on a straight road is collinear") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = generate(single(Layout::kStraight, Maneuver::kKeepLane, seed));
    const auto& st = s.agents[0].states;
    const Vec2 a = st.front().position(), b = st[static_cast<std::size_t>(s.history_frames - 1)].position();
    const Vec2 d = b - a;
    for (const auto& x : st) {
      const Vec2 p = x.position() - a;
      CHECK(std::abs(d.x * p.y - d.y * p.x) / d.norm() < 1e-9);
    }
  }
}

TEST_CASE("generator is deterministic in its seed") {
  ScenarioSpec spec;
  spec.seed = 77;
  spec.position_noise = 0.1;
  CHECK(scene_to_text(generate(spec)) == scene_to_text(generate(spec)));
  spec.seed = 78;
  const std::string other = scene_to_text(generate(spec));
  spec.seed = 77;
  CHECK(scene_to_text(generate(spec)) != other);
}

TEST_CASE("generator: left turns at a 4-way junction") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Scene s = generate(single(Layout::kFourWay, Maneuver::kTurnLeft, seed));
    const auto& st = s.agents[0].states;
    const double turn = wrap_angle(st.back().theta - st.front().theta);
    CAPTURE(seed);
    CHECK(std::abs(turn - pi / 2) < 0.15);
  }
  const Scene r = generate(single(Layout::kTIntersection, Maneuver::kTurnRight, 4));
  CHECK(std::abs(wrap_angle(r.agents[0].states.back().theta - r.agents[0].states.front().theta) + pi / 2) < 0.15);
}

TEST_CASE("generator: sudden turns happen after the observed frames") {
  ScenarioSpec spec = single(Layout::kStraight, Maneuver::kSuddenTurn, 5);
  const Scene s = generate(spec);
  const auto& st = s.agents[0].states;
  const auto T = static_cast<std::size_t>(s.history_frames);
  CHECK(std::abs(wrap_angle(st[T - 1].theta - st[0].theta)) < 1e-9);
  CHECK(std::abs(std::abs(wrap_angle(st[T + 5].theta - st[0].theta)) - pi / 2) < 1e-6);
}

TEST_CASE("generator invariants over a mixed corpus") {
  for (int i = 0; i < 40; ++i) {
    ScenarioSpec spec = corpus_scenario(11, "train", i);
    spec.mix.sudden_turn = 0.1;
    const Scene s = generate(spec);
    CHECK_NOTHROW(s.validate());
    CHECK(static_cast<int>(s.agents.size()) >= spec.min_agents);
    CHECK(static_cast<int>(s.agents.size()) <= spec.max_agents);
    for (const auto& a : s.agents) {
      for (std::size_t f = 1; f < a.states.size(); ++f) {
        const double dv = std::abs(a.states[f].velocity().norm() - a.states[f - 1].velocity().norm());
        CHECK(dv <= kMaxAcceleration * kFramePeriod + 1e-9);
      }
    }
  }
}

TEST_CASE("generator: keep-lane agents stay within the noise corridor") {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    ScenarioSpec spec = single(static_cast<Layout>(seed % 4), Maneuver::kKeepLane, seed);
    spec.position_noise = 0.05;
    const Scene s = generate(spec);
    for (const auto& st : s.agents[0].states)
      CHECK(lane_distance(s, st.position()) <= kNoiseClampSigmas * spec.position_noise * std::sqrt(2.0) + 1e-3);
  }
}

TEST_CASE("generator rejects infeasible specs") {
  ScenarioSpec spec;
  spec.min_agents = 0;
  CHECK_THROWS_AS(generate(spec), SpecError);
  spec = ScenarioSpec{};
  spec.position_noise = -1.0;
  CHECK_THROWS_AS(generate(spec), SpecError);
  spec = ScenarioSpec{};
  spec.layout = Layout::kStraight;
  spec.history_frames = 400;
  CHECK_THROWS_AS(generate(spec), SpecError);
  CHECK(parse_layout("t-intersection") == Layout::kTIntersection);
  CHECK(parse_maneuver(to_string(Maneuver::kStopAndGo)) == Maneuver::kStopAndGo);
  CHECK_THROWS_AS(parse_layout("roundabout"), UsageError);
}

TEST_CASE("augmentation") {
  ScenarioSpec spec;
  spec.seed = 9;
  spec.min_agents = 5;
  const Scene s = generate(spec);
  CHECK(scene_to_text(augment(s, AugmentationConfig::none(), 1)) == scene_to_text(s));
  const Scene ff = flip_horizontal(flip_horizontal(s));
  for (std::size_t n = 0; n < s.agents.size(); ++n) {
    for (std::size_t t = 0; t < s.agents[n].states.size(); ++t) {
      const auto& a = s.agents[n].states[t];
      const auto& b = ff.agents[n].states[t];
      CHECK(a.position() == b.position());
      CHECK(a.velocity() == b.velocity());
      CHECK(std::abs(wrap_angle(a.theta - b.theta)) < 1e-12);
    }
  }
  for (std::size_t l = 0; l < s.lanes.size(); ++l) CHECK(ff.lanes[l].centerline == s.lanes[l].centerline);

  const Scene f = flip_horizontal(s);
  for (std::size_t i = 0; i < s.agents.size(); ++i) {
    for (std::size_t j = 0; j < s.agents.size(); ++j) {
      const auto& a = s.agents[i].states[3];
      const auto& b = s.agents[j].states[7];
      const auto e = relative_edge(a.pose(), 3, b.pose(), 7);
      const auto ef = relative_edge(f.agents[i].states[3].pose(), 3, f.agents[j].states[7].pose(), 7);
      CHECK(ef.distance == e.distance);
      CHECK(ef.time_delta == e.time_delta);
      CHECK(std::abs(wrap_angle(ef.direction + e.direction)) < 1e-9);
      CHECK(std::abs(wrap_angle(ef.relative_heading + e.relative_heading)) < 1e-9);
    }
  }

  AugmentationConfig all{0.0, 1.0, 1.0};
  const Scene a = augment(s, all, 3);
  CHECK(a.agents.size() == 1);
  CHECK(a.agents[0].id == s.agents[0].id);
  CHECK(a.lanes.empty());

  AugmentationConfig some{0.5, 0.3, 0.4};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Scene x = augment(s, some, seed);
    CHECK_NOTHROW(x.validate());
    CHECK_NOTHROW(lane_graph_edges(x));
    CHECK(scene_to_text(augment(s, some, seed)) == scene_to_text(x));
  }
  CHECK_THROWS_AS(augment(s, AugmentationConfig{1.5, 0, 0}, 1), SpecError);
}

TEST_CASE("constant velocity rollout") {
  Scene s = one_agent(3, 4);
  s.agents[0].states[2] = {0, 0, 0, 1, 0, true};
  const auto r = constant_velocity_rollout(s, 0, 2, 4);
  REQUIRE(r.size() == 4);
  for (int k = 1; k <= 4; ++k) {
    CHECK(r[static_cast<std::size_t>(k - 1)].x == doctest::Approx(0.1 * k).epsilon(1e-15));
    CHECK(r[static_cast<std::size_t>(k - 1)].y == 0.0);
  }
  s.agents[0].states[1] = {4, 5, 0, 0, 0, true};
  for (const auto& p : constant_velocity_rollout(s, 0, 1, 3)) CHECK(p == Vec2{4, 5});
  s.agents[0].states[1].valid = false;
  CHECK_THROWS_AS(constant_velocity_rollout(s, 0, 1, 3), ValidityError);

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    ScenarioSpec spec = single(Layout::kStraight, Maneuver::kKeepLane, seed);
    const Scene k = generate(spec);
    const int last = k.history_frames - 1;
    const auto cv = constant_velocity_rollout(k, 0, last, k.future_frames);
    double ade = 0.0;
    for (int f = 0; f < k.future_frames; ++f)
      ade += distance(cv[static_cast<std::size_t>(f)], k.agents[0].states[static_cast<std::size_t>(last + 1 + f)].position());
    CHECK(ade / k.future_frames < 1e-9);
  }
}

TEST_CASE("corpus manifests") {
  const auto dir = std::filesystem::temp_directory_path() / "hpnet_test_manifest";
  std::filesystem::create_directories(dir);
  const std::vector<ManifestEntry> entries = {{"train", "train/000000.json", 12345678901234567890ULL},
                                              {"val", "val/000000.json", 3}};
  write_manifest(dir / "manifest.tsv", entries);
  const auto back = read_manifest(dir / "manifest.tsv");
  REQUIRE(back.size() == 2);
  CHECK(back[0].seed == 12345678901234567890ULL);
  CHECK(back[1].path == "val/000000.json");
  {
    std::ofstream out(dir / "bad.tsv");
    out << "hello\n";
  }
  CHECK_THROWS_AS(read_manifest(dir / "bad.tsv"), ValidityError);
  std::filesystem::remove_all(dir);

  const auto a = generate_corpus(1, "val", 4);
  const auto b = generate_corpus(1, "val", 4);
  const auto c = generate_corpus(1, "train", 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(scene_to_text(a[i]) == scene_to_text(b[i]));
    CHECK(scene_to_text(a[i]) != scene_to_text(c[i]));
  }
  const auto streams = generate_corpus(1, "val", 2, 9);
  CHECK(streams[0].history_frames == 29);
}
