#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hpnet/errors.hpp"
#include "hpnet/metrics.hpp"
#include "hpnet/synth.hpp"
#include "json.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace hpnet;
using namespace hpnet::testing;

TEST_CASE("metric examples") {
  for (const auto& [name, ok] : metric_examples()) {
    CAPTURE(name);
    CHECK(ok);
  }
}

TEST_CASE("metric errors") {
  const Trajectory gt = line_traj({0, 0}, {1, 0}, 4);
  CHECK_THROWS_AS(min_ade({line_traj({0, 0}, {1, 0}, 3)}, gt), DimensionError);
  CHECK_THROWS_AS(min_ade({}, gt), DimensionError);
  CHECK_THROWS_AS(hungarian_match({{1, 2}, {3}}), DimensionError);
  CHECK_THROWS_AS(hungarian_match({{1, NAN}, {3, 4}}), NumericError);
  CHECK_THROWS_AS(stability_summed_ade({line_traj({0, 0}, {1, 0}, 1)}, {line_traj({0, 0}, {1, 0}, 1)}), SpecError);
}

TEST_CASE("hungarian matches the exhaustive optimum") {
  Rng rng(12);
  for (int K = 1; K <= 6; ++K) {
    for (int trial = 0; trial < 40; ++trial) {
      std::vector<std::vector<double>> cost(static_cast<std::size_t>(K), std::vector<double>(static_cast<std::size_t>(K)));
      for (auto& row : cost)
        for (auto& c : row) c = trial % 3 == 0 ? static_cast<double>(rng.uniform_int(0, 4)) : rng.uniform(0.0, 10.0);
      const auto m = hungarian_match(cost);
      std::vector<int> seen(static_cast<std::size_t>(K), 0);
      double sum = 0.0;
      for (int i = 0; i < K; ++i) {
        const int j = m.assignment[static_cast<std::size_t>(i)];
        REQUIRE(j >= 0);
        REQUIRE(j < K);
        ++seen[static_cast<std::size_t>(j)];
        sum += cost[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
      }
      for (int s : seen) CHECK(s == 1);
      CHECK(m.cost == sum);
      CHECK(std::abs(m.cost - brute_force_assignment(cost)) <= 1e-12 * (1.0 + m.cost));
    }
  }
}

TEST_CASE("metric properties") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Trajectory gt = line_traj({rng.uniform(-5, 5), rng.uniform(-5, 5)}, {rng.uniform(-2, 2), rng.uniform(-2, 2)}, 8);
    std::vector<Trajectory> preds;
    std::vector<double> probs;
    for (int k = 0; k < 4; ++k) {
      Trajectory p;
      for (const auto& x : gt) p.push_back(x + Vec2{rng.uniform(-3, 3), rng.uniform(-3, 3)});
      preds.push_back(p);
      probs.push_back(rng.uniform(0.05, 1.0));
    }
    double z = 0.0;
    for (double p : probs) z += p;
    for (double& p : probs) p /= z;

    const double a = min_ade(preds, gt);
    for (const auto& p : preds) CHECK(a <= min_ade({p}, gt));
    const auto f = min_fde(preds, gt);
    CHECK(b_min_fde(preds, probs, gt) > f.fde);
    std::vector<double> onehot(4, 0.0);
    onehot[static_cast<std::size_t>(f.mode)] = 1.0;
    CHECK(b_min_fde(preds, onehot, gt) == f.fde);

    const Rigid2 tf = random_rigid(rng);
    Trajectory gt2;
    for (const auto& x : gt) gt2.push_back(tf.apply(x));
    std::vector<Trajectory> preds2;
    for (const auto& p : preds) {
      preds2.emplace_back();
      for (const auto& x : p) preds2.back().push_back(tf.apply(x));
    }
    CHECK(std::abs(min_ade(preds2, gt2) - a) < 1e-9);
    CHECK(std::abs(min_fde(preds2, gt2).fde - f.fde) < 1e-9);
    std::vector<Trajectory> next, next2;
    for (const auto& p : preds) {
      next.push_back(offset_traj(p, {rng.uniform(-1, 1), rng.uniform(-1, 1)}));
      next2.emplace_back();
      for (const auto& x : next.back()) next2.back().push_back(tf.apply(x));
    }
    CHECK(std::abs(stability_summed_ade(preds, next) - stability_summed_ade(preds2, next2)) < 1e-9);

    const std::vector<std::vector<Trajectory>> joint = {preds, preds};
    const double j = min_joint_ade(joint, {gt, gt});
    CHECK(j >= a - 1e-12);
  }
}

TEST_CASE("rollout bookkeeping") {
  ScenarioSpec spec;
  spec.layout = Layout::kStraight;
  spec.min_agents = spec.max_agents = 3;
  spec.extra_frames = 9;
  spec.mix = ManeuverMix{1.0, 0, 0, 0, 0};
  spec.seed = 2;
  const Scene stream = generate(spec);
  EvalReport rep;
  rollout_eval(rep, cv_predictor(30), stream, 0, 10, 20, 30);
  const auto rows = rep.per_step();
  REQUIRE(rows.size() == 10);
  int with_stability = 0;
  for (const auto& r : rows) {
    CHECK(r.count == 3);
    if (r.stability_count > 0) ++with_stability;
  }
  CHECK(with_stability == 9);
  CHECK(rep.aggregate().stability < 1e-9);
  CHECK(rep.aggregate().min_ade < 1e-9);
  CHECK_THROWS_AS(rollout_eval(rep, cv_predictor(30), stream, 0, 11, 20, 30), ValidityError);

  const auto doc = nlohmann::json::parse(rep.to_json());
  CHECK(doc["format"] == "hpnet-eval");
  CHECK(doc["steps"].size() == 10);
  CHECK(doc["steps"][0]["stability"].is_null());
  CHECK(doc["stability_samples"].size() == 27);
  const std::string csv = rep.to_csv();
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 11);
  CHECK(csv.starts_with("step,count,min_ade"));

  EvalReport empty;
  CHECK(nlohmann::json::parse(empty.to_json())["aggregate"]["min_ade"].is_null());
}

TEST_CASE("model predictions convert to the global frame") {
  const ModelConfig cfg = micro_config();
  HpnetModel model(cfg, 3);
  for (auto& [name, t] : model.params().items())
    if (name.starts_with("propose.decode.l2") || name.starts_with("refine.decode.l2")) t.fill(0.0);
  model.params().at("propose.decode.l2.b")[static_cast<std::size_t>(2 * cfg.future_frames - 2)] = 0.1;
  const Scene s = micro_scene(4, cfg.history_frames, cfg.future_frames, 2, false);
  const Prediction p = model_predictor(model)(s);
  REQUIRE(p.trajectories.size() == 2);
  for (std::size_t n = 0; n < 2; ++n) {
    const auto& st = s.agents[n].states[static_cast<std::size_t>(cfg.history_frames - 1)];
    REQUIRE(p.trajectories[n].size() == static_cast<std::size_t>(cfg.modes));
    const Vec2 end = p.trajectories[n][0].back();
    // 0.1 decoder units = 1 m straight ahead of the agent
    CHECK(std::abs(end.x - (st.x + std::cos(st.theta))) < 1e-12);
    CHECK(std::abs(end.y - (st.y + std::sin(st.theta))) < 1e-12);
    CHECK(p.trajectories[n][0].front() == st.position());
    double z = 0.0;
    for (double q : p.probabilities[n]) z += q;
    CHECK(std::abs(z - 1.0) < 1e-12);
  }
}
