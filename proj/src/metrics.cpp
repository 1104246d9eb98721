#include "hpnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "json.hpp"

#include "hpnet/config.hpp"
#include "hpnet/errors.hpp"
#include "hpnet/synth.hpp"

namespace hpnet {
namespace {

void check_horizon(const std::vector<Trajectory>& preds, const Trajectory& gt) {
  if (preds.empty()) throw DimensionError("no predicted modes");
  if (gt.empty()) throw DimensionError("empty ground truth");
  for (const auto& p : preds)
    if (p.size() != gt.size())
      throw DimensionError("prediction horizon " + std::to_string(p.size()) + " does not match ground truth " +
                           std::to_string(gt.size()));
}

double ade(const Trajectory& p, const Trajectory& g) {
  double s = 0.0;
  for (std::size_t f = 0; f < g.size(); ++f) s += distance(p[f], g[f]);
  return s / static_cast<double>(g.size());
}

void check_joint(const std::vector<std::vector<Trajectory>>& preds, const std::vector<Trajectory>& gts) {
  if (preds.empty() || preds.size() != gts.size()) throw DimensionError("joint metrics need one gt per agent");
  for (std::size_t n = 0; n < preds.size(); ++n) {
    if (preds[n].size() != preds[0].size()) throw DimensionError("agents do not share the mode slots");
    check_horizon(preds[n], gts[n]);
  }
}

template <typename PerAgent>
double min_joint(const std::vector<std::vector<Trajectory>>& preds, const std::vector<Trajectory>& gts, PerAgent f) {
  check_joint(preds, gts);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < preds[0].size(); ++k) {
    double s = 0.0;
    for (std::size_t n = 0; n < preds.size(); ++n) s += f(preds[n][k], gts[n]);
    best = std::min(best, s / static_cast<double>(preds.size()));
  }
  return best;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

double min_ade(const std::vector<Trajectory>& preds, const Trajectory& gt) {
  check_horizon(preds, gt);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : preds) best = std::min(best, ade(p, gt));
  return best;
}

FdeResult min_fde(const std::vector<Trajectory>& preds, const Trajectory& gt) {
  check_horizon(preds, gt);
  FdeResult r{std::numeric_limits<double>::infinity(), 0};
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const double d = distance(preds[k].back(), gt.back());
    if (d < r.fde) r = {d, static_cast<int>(k)};
  }
  return r;
}

double miss_rate(std::span<const double> min_fdes, double threshold) {
  if (min_fdes.empty()) throw ValidityError("miss rate of an empty sample");
  std::size_t misses = 0;
  for (double d : min_fdes) misses += d > threshold ? 1 : 0;
  return static_cast<double>(misses) / static_cast<double>(min_fdes.size());
}

double b_min_fde(const std::vector<Trajectory>& preds, std::span<const double> probs, const Trajectory& gt) {
  if (probs.size() != preds.size()) throw DimensionError("b-minFDE needs one probability per mode");
  const auto r = min_fde(preds, gt);
  const double miss = 1.0 - probs[static_cast<std::size_t>(r.mode)];
  return r.fde + miss * miss;
}

double min_joint_ade(const std::vector<std::vector<Trajectory>>& preds, const std::vector<Trajectory>& gts) {
  return min_joint(preds, gts, [](const Trajectory& p, const Trajectory& g) { return ade(p, g); });
}

double min_joint_fde(const std::vector<std::vector<Trajectory>>& preds, const std::vector<Trajectory>& gts) {
  return min_joint(preds, gts, [](const Trajectory& p, const Trajectory& g) { return distance(p.back(), g.back()); });
}

MatchResult hungarian_match(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  for (const auto& row : cost) {
    if (row.size() != n) throw DimensionError("hungarian_match needs a square cost matrix");
    for (double c : row)
      if (!std::isfinite(c)) throw NumericError("hungarian_match: non-finite cost");
  }
  // Shortest augmenting paths with row/column potentials, 1-based.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  MatchResult r;
  r.assignment.assign(n, -1);
  for (std::size_t j = 1; j <= n; ++j) r.assignment[p[j] - 1] = static_cast<int>(j - 1);
  for (std::size_t i = 0; i < n; ++i) r.cost += cost[i][static_cast<std::size_t>(r.assignment[i])];
  return r;
}

double stability_summed_ade(const std::vector<Trajectory>& prev, const std::vector<Trajectory>& curr) {
  if (prev.empty() || prev.size() != curr.size()) throw DimensionError("stability needs equal mode counts");
  const std::size_t F = prev[0].size();
  if (F < 2) throw SpecError("stability needs a horizon of at least 2 frames");
  for (const auto& t : prev)
    if (t.size() != F) throw DimensionError("ragged horizons");
  for (const auto& t : curr)
    if (t.size() != F) throw DimensionError("ragged horizons");
  const std::size_t K = prev.size();
  std::vector<std::vector<double>> cost(K, std::vector<double>(K));
  for (std::size_t i = 0; i < K; ++i) {
    for (std::size_t j = 0; j < K; ++j) {
      double s = 0.0;
      for (std::size_t f = 0; f + 1 < F; ++f) s += distance(prev[i][f + 1], curr[j][f]);
      cost[i][j] = s / static_cast<double>(F - 1);
    }
  }
  return hungarian_match(cost).cost;
}

Prediction bundle_to_prediction(const TrajectoryBundle& b, const SceneGraph& g) {
  Prediction p;
  const int t = b.T - 1;
  p.trajectories.resize(static_cast<std::size_t>(b.N));
  p.probabilities.resize(static_cast<std::size_t>(b.N));
  p.valid.assign(static_cast<std::size_t>(b.N), 0);
  for (int n = 0; n < b.N; ++n) {
    const auto a = static_cast<std::size_t>(g.agent_row(t, n));
    if (!g.valid[a]) continue;
    p.valid[static_cast<std::size_t>(n)] = 1;
    const Pose frame = g.poses[a];
    for (int k = 0; k < b.K; ++k) {
      Trajectory traj;
      const std::size_t off = b.offset(t, n, k);
      for (int f = 0; f < b.F; ++f)
        traj.push_back(to_global(frame, {b.finals[off + 2 * static_cast<std::size_t>(f)],
                                         b.finals[off + 2 * static_cast<std::size_t>(f) + 1]}));
      p.trajectories[static_cast<std::size_t>(n)].push_back(std::move(traj));
      p.probabilities[static_cast<std::size_t>(n)].push_back(b.scores[a * static_cast<std::size_t>(b.K) + k]);
    }
  }
  return p;
}

Predictor model_predictor(const HpnetModel& model) {
  return [&model](const Scene& window) {
    const SceneGraph g = build_scene_graph(window, model.config());
    return bundle_to_prediction(model.predict(g), g);
  };
}

Predictor cv_predictor(int future_frames) {
  return [future_frames](const Scene& window) {
    Prediction p;
    const int last = window.history_frames - 1;
    for (std::size_t n = 0; n < window.agents.size(); ++n) {
      const bool ok = window.agents[n].states[static_cast<std::size_t>(last)].valid;
      p.valid.push_back(ok ? 1 : 0);
      p.trajectories.emplace_back();
      p.probabilities.emplace_back();
      if (!ok) continue;
      p.trajectories.back().push_back(constant_velocity_rollout(window, static_cast<int>(n), last, future_frames));
      p.probabilities.back().push_back(1.0);
    }
    return p;
  };
}

void evaluate_window(EvalReport& report, int scene, int step, const Prediction& pred, const Scene& window) {
  const int T = window.history_frames;
  std::vector<std::vector<Trajectory>> joint_preds;
  std::vector<Trajectory> joint_gts;
  for (std::size_t n = 0; n < window.agents.size() && n < pred.valid.size(); ++n) {
    if (!pred.valid[n]) continue;
    const auto& states = window.agents[n].states;
    Trajectory gt;
    bool full = true;
    for (int f = 0; f < window.future_frames && full; ++f) {
      const auto& s = states[static_cast<std::size_t>(T + f)];
      full = s.valid;
      gt.push_back(s.position());
    }
    if (!full) continue;
    const auto& preds = pred.trajectories[n];
    AgentSample a;
    a.scene = scene;
    a.step = step;
    a.agent = window.agents[n].id;
    a.ade = min_ade(preds, gt);
    a.fde = min_fde(preds, gt).fde;
    a.b_fde = b_min_fde(preds, pred.probabilities[n], gt);
    report.agents.push_back(a);
    joint_preds.push_back(preds);
    joint_gts.push_back(std::move(gt));
  }
  if (!joint_preds.empty()) {
    report.joint.push_back({scene, step, min_joint_ade(joint_preds, joint_gts), min_joint_fde(joint_preds, joint_gts)});
  }
}

void rollout_eval(EvalReport& report, const Predictor& predictor, const Scene& stream, int scene, int steps,
                  int history_frames, int future_frames) {
  if (steps < 1) throw SpecError("rollout needs at least one step");
  if (stream.history_frames < history_frames + steps - 1 || stream.future_frames < future_frames) {
    throw ValidityError("stream has " + std::to_string(stream.history_frames) + "+" +
                        std::to_string(stream.future_frames) + " frames; a " + std::to_string(steps) +
                        "-step rollout needs " + std::to_string(history_frames + steps - 1) + "+" +
                        std::to_string(future_frames));
  }
  Prediction prev;
  for (int s = 0; s < steps; ++s) {
    const Scene w = window(stream, history_frames - 1 + s, history_frames, future_frames);
    Prediction cur = predictor(w);
    evaluate_window(report, scene, s, cur, w);
    if (s > 0) {
      for (std::size_t n = 0; n < cur.valid.size() && n < prev.valid.size(); ++n) {
        if (!cur.valid[n] || !prev.valid[n]) continue;
        report.stability.push_back(
            {scene, s, w.agents[n].id, stability_summed_ade(prev.trajectories[n], cur.trajectories[n])});
      }
    }
    prev = std::move(cur);
  }
}

namespace {

EvalRow summarize(int step, const std::vector<const AgentSample*>& a, const std::vector<const JointSample*>& j,
                  const std::vector<const StabilitySample*>& s) {
  EvalRow r;
  r.step = step;
  r.count = a.size();
  std::vector<double> ade, fde, bfde, jade, jfde, stab;
  for (const auto* x : a) {
    ade.push_back(x->ade);
    fde.push_back(x->fde);
    bfde.push_back(x->b_fde);
  }
  for (const auto* x : j) {
    jade.push_back(x->ade);
    jfde.push_back(x->fde);
  }
  for (const auto* x : s) stab.push_back(x->value);
  r.min_ade = mean_of(ade);
  r.min_fde = mean_of(fde);
  r.miss_rate = fde.empty() ? 0.0 : miss_rate(fde);
  r.b_min_fde = mean_of(bfde);
  r.joint_count = j.size();
  r.min_joint_ade = mean_of(jade);
  r.min_joint_fde = mean_of(jfde);
  r.stability_count = s.size();
  r.stability = mean_of(stab);
  return r;
}

}  // namespace

std::vector<EvalRow> EvalReport::per_step() const {
  std::map<int, std::tuple<std::vector<const AgentSample*>, std::vector<const JointSample*>,
                           std::vector<const StabilitySample*>>>
      by_step;
  for (const auto& x : agents) std::get<0>(by_step[x.step]).push_back(&x);
  for (const auto& x : joint) std::get<1>(by_step[x.step]).push_back(&x);
  for (const auto& x : stability) std::get<2>(by_step[x.step]).push_back(&x);
  std::vector<EvalRow> rows;
  for (const auto& [step, v] : by_step) rows.push_back(summarize(step, std::get<0>(v), std::get<1>(v), std::get<2>(v)));
  return rows;
}

EvalRow EvalReport::aggregate() const {
  std::vector<const AgentSample*> a;
  std::vector<const JointSample*> j;
  std::vector<const StabilitySample*> s;
  for (const auto& x : agents) a.push_back(&x);
  for (const auto& x : joint) j.push_back(&x);
  for (const auto& x : stability) s.push_back(&x);
  return summarize(-1, a, j, s);
}

namespace {

nlohmann::json row_json(const EvalRow& r) {
  auto val = [](std::size_t count, double v) { return count ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j;
  if (r.step >= 0) j["step"] = r.step;
  j["count"] = r.count;
  j["min_ade"] = val(r.count, r.min_ade);
  j["min_fde"] = val(r.count, r.min_fde);
  j["miss_rate"] = val(r.count, r.miss_rate);
  j["b_min_fde"] = val(r.count, r.b_min_fde);
  j["joint_count"] = r.joint_count;
  j["min_joint_ade"] = val(r.joint_count, r.min_joint_ade);
  j["min_joint_fde"] = val(r.joint_count, r.min_joint_fde);
  j["stability_count"] = r.stability_count;
  j["stability"] = val(r.stability_count, r.stability);
  return j;
}

std::string csv_value(std::size_t count, double v) { return count ? format_double(v) : std::string(); }

}  // namespace

std::string EvalReport::to_json() const {
  nlohmann::json doc;
  doc["format"] = "hpnet-eval";
  doc["version"] = 1;
  doc["aggregate"] = row_json(aggregate());
  doc["steps"] = nlohmann::json::array();
  for (const auto& r : per_step()) doc["steps"].push_back(row_json(r));
  doc["stability_samples"] = nlohmann::json::array();
  for (const auto& s : stability) doc["stability_samples"].push_back({s.scene, s.step, s.agent, s.value});
  return doc.dump(1) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "step,count,min_ade,min_fde,miss_rate,b_min_fde,joint_count,min_joint_ade,min_joint_fde,stability_count,"
         "stability\n";
  for (const auto& r : per_step()) {
    out << r.step << ',' << r.count << ',' << csv_value(r.count, r.min_ade) << ',' << csv_value(r.count, r.min_fde)
        << ',' << csv_value(r.count, r.miss_rate) << ',' << csv_value(r.count, r.b_min_fde) << ',' << r.joint_count
        << ',' << csv_value(r.joint_count, r.min_joint_ade) << ',' << csv_value(r.joint_count, r.min_joint_fde) << ','
        << r.stability_count << ',' << csv_value(r.stability_count, r.stability) << '\n';
  }
  return out.str();
}

}  // namespace hpnet
