#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <numeric>

#include "hpnet/errors.hpp"
#include "hpnet/model.hpp"
#include "model_probes.hpp"
#include "support.hpp"

using namespace hpnet;
using namespace hpnet::testing;

namespace {

Scene two_agent_line(double gap) {
  Scene s;
  s.history_frames = 4;
  s.future_frames = 3;
  for (int n = 0; n < 2; ++n) {
    AgentTrack a{n, AgentClass::kVehicle, {}};
    for (int f = 0; f < s.total_frames(); ++f) a.states.push_back({f * 1.0, n * gap, 0.0, 10.0, 0.0, true});
    s.agents.push_back(a);
  }
  LaneSegment l{0, LaneClass::kDriving, {{-10.0, 0.0}, {-5.0, 0.0}}, {}, {}, {}};
  s.lanes.push_back(l);
  return s;
}

}  // namespace

TEST_CASE("forward shapes and output invariants") {
  const ModelConfig cfg = ModelConfig::toy();
  ScenarioSpec spec;
  spec.min_agents = spec.max_agents = 3;
  const Scene scene = generate(spec);
  const HpnetModel model(cfg, 1);
  const auto g = build_scene_graph(scene, cfg);
  ad::Tape tape;
  nn::Binding b(tape, model.params(), false);
  const auto out = model.forward(b, g);
  const auto bundle = to_bundle(g, out);
  CHECK(bundle.proposals.shape() == Shape{20, 3, 6, 30, 2});
  CHECK(bundle.finals.shape() == Shape{20, 3, 6, 30, 2});
  CHECK(bundle.scores.shape() == Shape{20, 3, 6});
  for (std::size_t i = 0; i < bundle.finals.size(); ++i)
    CHECK(bundle.finals[i] == bundle.proposals[i] + bundle.refinements[i]);
  for (std::size_t r = 0; r < 60; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < 6; ++k) s += bundle.scores[r * 6 + k];
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
  // agent embeddings [T*N x D]
  nn::Binding b2(tape, model.params(), false);
  CHECK(nn::mlp2(b2, "enc.agent", tape.constant(g.agent_features)).shape() == Shape{60, 32});
}

TEST_CASE("identical local inputs give identical agent embeddings, also after a rigid transform") {
  const ModelConfig cfg = ModelConfig::toy();
  const HpnetModel model(cfg, 3);
  Scene s = two_agent_line(20.0);
  s.history_frames = cfg.history_frames;
  s.future_frames = cfg.future_frames;
  for (auto& a : s.agents) a.states.resize(static_cast<std::size_t>(s.total_frames()), a.states.back());
  Rng rng(1);
  const Scene moved = transform_scene(s, random_rigid(rng));
  const auto g1 = build_scene_graph(s, cfg);
  const auto g2 = build_scene_graph(moved, cfg);
  ad::Tape tape;
  nn::Binding b(tape, model.params(), false);
  const Tensor e1 = nn::mlp2(b, "enc.agent", tape.constant(g1.agent_features)).value();
  const Tensor e2 = nn::mlp2(b, "enc.agent", tape.constant(g2.agent_features)).value();
  CHECK(max_abs_diff(e1, e2) < 1e-12);
  const auto r0 = e1.row(static_cast<std::size_t>(g1.agent_row(5, 0)));
  const auto r1 = e1.row(static_cast<std::size_t>(g1.agent_row(5, 1)));
  CHECK(std::equal(r0.begin(), r0.end(), r1.begin()));
}

TEST_CASE("edge relations follow the configured windows") {
  ModelConfig cfg = micro_config();
  const Scene s = micro_scene(5, cfg.history_frames, cfg.future_frames, 2, false);
  const auto g = build_scene_graph(s, cfg);
  const int q = g.query_row(3, 0, 1);
  // temporal window [t - I1, t] of the same agent
  std::vector<int> keys(g.temporal.edges.src.begin() + g.temporal.edges.offsets[q],
                        g.temporal.edges.src.begin() + g.temporal.edges.offsets[q + 1]);
  CHECK(keys == std::vector<int>{g.agent_row(1, 0), g.agent_row(2, 0), g.agent_row(3, 0)});
  // mode attention: every slot of the same (t, n)
  CHECK(g.mode.edges.offsets[q + 1] - g.mode.edges.offsets[q] == cfg.modes);

  cfg.temporal_span = 0;
  cfg.prediction_span = 0;
  const auto g0 = build_scene_graph(s, cfg);
  for (std::size_t r = 0; r < g0.temporal.edges.num_queries(); ++r) {
    CHECK(g0.temporal.edges.offsets[r + 1] - g0.temporal.edges.offsets[r] == 1);
    CHECK(g0.hpa.edges.src[static_cast<std::size_t>(g0.hpa.edges.offsets[r])] == static_cast<int>(r));
  }
}

TEST_CASE("agents without any valid observed frame are rejected") {
  const ModelConfig cfg = micro_config();
  Scene s = micro_scene(2, cfg.history_frames, cfg.future_frames, 2, false);
  for (int t = 0; t < cfg.history_frames; ++t) s.agents[1].states[static_cast<std::size_t>(t)].valid = false;
  CHECK_THROWS_AS(build_scene_graph(s, cfg), ValidityError);
}

TEST_CASE("isolated lanes keep their encoding, out-of-range lanes do not matter") {
  const ModelConfig cfg = micro_config();
  Scene s = two_agent_line(3.0);
  const HpnetModel model(cfg, 4);
  const auto with_far_lane = [&] {
    Scene c = s;
    c.lanes[0].centerline = {{1000.0, 0.0}, {1005.0, 0.0}};
    return c;
  }();
  Scene no_lanes = s;
  no_lanes.lanes.clear();
  const auto a = model.predict(with_far_lane);
  const auto b = model.predict(no_lanes);
  CHECK(max_abs_diff(a.finals, b.finals) == 0.0);
  CHECK(max_abs_diff(a.scores, b.scores) == 0.0);
  // a lane in range changes the result
  const auto c = model.predict(s);
  CHECK(max_abs_diff(a.finals, c.finals) > 0.0);
}

TEST_CASE("zero decoder and score weights") {
  const ModelConfig cfg = micro_config();
  HpnetModel model(cfg, 5);
  for (auto& [name, t] : model.params().items())
    if (name.starts_with("propose.decode.l2") || name.starts_with("refine.decode.l2") ||
        name.starts_with("refine.score.l2"))
      t.fill(0.0);
  const auto out = model.predict(micro_scene(1, cfg.history_frames, cfg.future_frames));
  for (double v : out.finals.values()) CHECK(v == 0.0);
  for (double p : out.scores.values()) CHECK(p == doctest::Approx(1.0 / cfg.modes).epsilon(1e-15));
}

TEST_CASE("identical mode queries give identical mode outputs") {
  ModelConfig cfg = micro_config();
  cfg.modes = 3;
  HpnetModel model(cfg, 6);
  auto& q = model.params().at("propose.modes");
  for (std::size_t c = 0; c < q.cols(); ++c) q.at(2, c) = q.at(0, c);
  const auto out = model.predict(micro_scene(3, cfg.history_frames, cfg.future_frames));
  for (int t = 0; t < out.T; ++t)
    for (int n = 0; n < out.N; ++n)
      for (int i = 0; i < 2 * out.F; ++i)
        CHECK(out.finals[out.offset(t, n, 0) + static_cast<std::size_t>(i)] ==
              doctest::Approx(out.finals[out.offset(t, n, 2) + static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("attention rounds carry independent parameters") {
  ModelConfig one = micro_config();
  one.attention_rounds = 1;
  ModelConfig two = micro_config();
  const Scene s = micro_scene(7, one.history_frames, one.future_frames);
  const HpnetModel m1(one, 9);
  const HpnetModel m2(two, 9);
  CHECK(m2.params().size() > m1.params().size());
  CHECK(max_abs_diff(m1.predict(s).finals, m2.predict(s).finals) > 1e-6);
}

TEST_CASE("eval-mode determinism and training-mode dropout") {
  ModelConfig cfg = micro_config();
  cfg.dropout = 0.3;
  const HpnetModel model(cfg, 11);
  const Scene s = micro_scene(8, cfg.history_frames, cfg.future_frames);
  const auto a = model.predict(s);
  const auto b = model.predict(s);
  CHECK(a.finals.values() == b.finals.values());
  CHECK(a.scores.values() == b.scores.values());

  const auto g = build_scene_graph(s, cfg);
  auto run = [&](std::uint64_t seed) {
    ad::Tape tape;
    nn::Binding bind(tape, model.params(), false);
    ForwardOptions o;
    o.training = true;
    o.dropout_seed = seed;
    return model.forward(bind, g, o).finals.value();
  };
  CHECK(run(1).values() == run(1).values());
  CHECK(run(1).values() != run(2).values());
  CHECK(run(1).values() != a.finals.values());
}

TEST_CASE("HPA weight inspection") {
  ModelConfig cfg = micro_config();
  const Scene s = micro_scene(12, cfg.history_frames, cfg.future_frames, 2, false);
  const HpnetModel model(cfg, 12);
  const auto g = build_scene_graph(s, cfg);
  AttentionTrace trace;
  model.predict(g, &trace);
  for (int t = -cfg.history_frames + 1; t <= 0; ++t) {
    const auto w = inspect_hpa_weights(trace, g, t, 1, 0);
    double sum = 0.0;
    for (const auto& [frame, v] : w) {
      CHECK(frame <= t);
      CHECK(frame >= t - cfg.prediction_span);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
  }
  for (const auto& [name, rec] : trace.records) {
    for (std::size_t q = 0; q < rec.edges.num_queries(); ++q) {
      if (!rec.edges.has_keys(q)) continue;
      double sum = 0.0;
      for (int e = rec.edges.offsets[q]; e < rec.edges.offsets[q + 1]; ++e) sum += rec.weights[static_cast<std::size_t>(e)];
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }

  cfg.prediction_span = 0;
  const HpnetModel single(cfg, 12);
  AttentionTrace t0;
  single.predict(build_scene_graph(s, cfg), &t0);
  const auto w0 = inspect_hpa_weights(t0, g, 0, 0, 1);
  REQUIRE(w0.size() == 1);
  CHECK(w0[0].first == 0);
  CHECK(w0[0].second == doctest::Approx(1.0).epsilon(1e-15));

  cfg.use_hpa = false;
  const HpnetModel ablated(cfg, 12);
  AttentionTrace t1;
  ablated.predict(build_scene_graph(s, cfg), &t1);
  CHECK_THROWS_AS(inspect_hpa_weights(t1, g, 0, 0, 0), SpecError);
  CHECK_THROWS_AS(inspect_hpa_weights(AttentionTrace{}, g, 0, 0, 0), SpecError);
}

TEST_CASE("causality: no gradient from later frames") {
  const ModelConfig cfg = micro_config();
  const HpnetModel model(cfg, 21);
  Rng rng(3);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto g = build_scene_graph(micro_scene(seed, cfg.history_frames, cfg.future_frames), cfg);
    for (int t = 0; t < g.T; ++t) {
      const Tensor grad = output_input_gradient(model, g, t, rng);
      for (int tp = t + 1; tp < g.T; ++tp) CHECK(frame_gradient_norm(grad, g, tp) == 0.0);
    }
  }
}

TEST_CASE("historical prediction attention extends the receptive field") {
  ModelConfig cfg = micro_config();
  cfg.history_frames = 8;
  cfg.temporal_span = 2;
  cfg.prediction_span = 2;
  ModelConfig ablated_cfg = cfg;
  ablated_cfg.use_hpa = false;
  const HpnetModel with(cfg, 31);
  const HpnetModel without(ablated_cfg, 31);
  Rng rng(4);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Scene s = micro_scene(seed + 40, cfg.history_frames, cfg.future_frames, 2, false);
    const auto g = build_scene_graph(s, cfg);
    const auto ga = build_scene_graph(s, ablated_cfg);
    const int last = g.T - 1;
    CHECK(frame_gradient_norm(output_input_gradient(with, g, last, rng), g, last - 4) > 0.0);
    const Tensor grad = output_input_gradient(without, ga, last, rng);
    for (int tp = 0; tp < last - 2; ++tp) CHECK(frame_gradient_norm(grad, ga, tp) == 0.0);
    CHECK(frame_gradient_norm(grad, ga, last - 2) > 0.0);
  }
}

TEST_CASE("agent attention reaches neighbours within the radius only") {
  ModelConfig cfg = micro_config();
  cfg.agent_radius = 5.0;
  Scene s = two_agent_line(0.0);
  // agent 1 sits 4 m to the side at frames 0 and 2, 8 m at frames 1 and 3
  for (int f = 0; f < s.total_frames(); ++f) s.agents[1].states[static_cast<std::size_t>(f)].y = (f % 2 == 0) ? 4.0 : 8.0;
  const HpnetModel model(cfg, 41);
  const auto g = build_scene_graph(s, cfg);
  for (int t = 0; t < g.T; ++t) {
    ad::Tape tape;
    nn::Binding b(tape, model.params(), false);
    const ad::Var x = tape.leaf(g.agent_features, true);
    const auto out = model.forward(b, g, x);
    Tensor seed(out.finals.shape(), 0.0);
    for (int k = 0; k < g.K; ++k)
      for (std::size_t c = 0; c < seed.cols(); ++c) seed.at(static_cast<std::size_t>(g.query_row(t, 0, k)), c) = 1.0;
    tape.backward(out.finals, seed);
    const Tensor grad = ad::grad_of(x);
    double s1 = 0.0;
    for (double v : grad.row(static_cast<std::size_t>(g.agent_row(t, 1)))) s1 += std::abs(v);
    CAPTURE(t);
    if (t % 2 == 0) {
      CHECK(s1 > 0.0);
    } else {
      CHECK(s1 == 0.0);
    }
  }
}

TEST_CASE("SE(2) invariance of local-frame outputs") {
  const ModelConfig cfg = ModelConfig::toy();
  const HpnetModel model(cfg, 51);
  ScenarioSpec spec;
  spec.seed = 5;
  const Scene s = generate(spec);
  const auto ref = model.predict(s);
  Rng rng(9);
  for (int i = 0; i < 5; ++i) {
    const auto moved = model.predict(transform_scene(s, random_rigid(rng)));
    CHECK(max_abs_diff(ref.finals, moved.finals) < 1e-6);
    CHECK(max_abs_diff(ref.scores, moved.scores) < 1e-9);
  }
}

TEST_CASE("agent and mode permutations permute the outputs") {
  const ModelConfig cfg = micro_config();
  HpnetModel model(cfg, 61);
  Scene s = micro_scene(9, cfg.history_frames, cfg.future_frames, 3);
  const auto ref = model.predict(s);

  Scene swapped = s;
  std::swap(swapped.agents[1], swapped.agents[2]);
  const auto p = model.predict(swapped);
  const int perm[] = {0, 2, 1};
  for (int t = 0; t < ref.T; ++t)
    for (int n = 0; n < ref.N; ++n)
      for (int k = 0; k < ref.K; ++k)
        for (int i = 0; i < 2 * ref.F; ++i)
          CHECK(std::abs(ref.finals[ref.offset(t, n, k) + static_cast<std::size_t>(i)] -
                         p.finals[p.offset(t, perm[n], k) + static_cast<std::size_t>(i)]) < 1e-12);

  auto& q = model.params().at("propose.modes");
  Tensor flipped = q;
  for (std::size_t c = 0; c < q.cols(); ++c) std::swap(flipped.at(0, c), flipped.at(1, c));
  q = flipped;
  const auto m = model.predict(s);
  for (int t = 0; t < ref.T; ++t)
    for (int n = 0; n < ref.N; ++n)
      for (int k = 0; k < ref.K; ++k) {
        const auto a = static_cast<std::size_t>((t * ref.N + n) * ref.K);
        CHECK(std::abs(ref.scores[a + static_cast<std::size_t>(k)] - m.scores[a + static_cast<std::size_t>(1 - k)]) < 1e-12);
      }
}

TEST_CASE("full-model gradient check on a micro configuration") {
  const ModelConfig cfg = micro_config();
  for (std::uint64_t seed = 13; seed < 16; ++seed) {
    const HpnetModel model(cfg, seed + 58);
    const auto g = build_scene_graph(micro_scene(seed, cfg.history_frames, cfg.future_frames), cfg);
    Rng rng(seed);
    const auto rep = model_grad_check(model, g, 240, rng);
    INFO(rep.worst);
    CHECK(rep.max_rel_error < 1e-4);
  }
}

TEST_CASE("parameter sets are validated against the config") {
  const ModelConfig cfg = micro_config();
  const HpnetModel model(cfg, 1);
  CHECK_NOTHROW(HpnetModel(cfg, model.params()));
  ModelConfig other = cfg;
  other.dim = 16;
  CHECK_THROWS_AS(HpnetModel(other, model.params()), DimensionError);
  ModelConfig ablated = cfg;
  ablated.use_hpa = false;
  CHECK_THROWS_AS(HpnetModel(ablated, model.params()), IntegrityError);
  CHECK(model_card(cfg).find("model.dim=8\n") != std::string::npos);
}
