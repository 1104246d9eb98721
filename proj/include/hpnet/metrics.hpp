#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hpnet/geometry.hpp"
#include "hpnet/model.hpp"
#include "hpnet/scene.hpp"

namespace hpnet {

using Trajectory = std::vector<Vec2>;

// preds[k] and gt share one horizon F. Throws DimensionError otherwise.
double min_ade(const std::vector<Trajectory>& preds, const Trajectory& gt);

struct FdeResult {
  double fde = 0.0;
  int mode = 0;  // ties to the smaller index
};
FdeResult min_fde(const std::vector<Trajectory>& preds, const Trajectory& gt);

// Fraction of entries strictly above threshold. Throws ValidityError on empty input.
double miss_rate(std::span<const double> min_fdes, double threshold = 2.0);

// minFDE + (1 - probs[k_hat])^2 with k_hat the minFDE mode.
double b_min_fde(const std::vector<Trajectory>& preds, std::span<const double> probs, const Trajectory& gt);

// preds[n][k]; every agent shares the K mode slots.
double min_joint_ade(const std::vector<std::vector<Trajectory>>& preds, const std::vector<Trajectory>& gts);
double min_joint_fde(const std::vector<std::vector<Trajectory>>& preds, const std::vector<Trajectory>& gts);

struct MatchResult {
  std::vector<int> assignment;  // previous mode i -> current mode assignment[i]
  double cost = 0.0;
};
// Minimum-cost bijection on a square cost matrix (rows: previous, cols: current).
MatchResult hungarian_match(const std::vector<std::vector<double>>& cost);

// Horizons one frame apart: prev[k][f + 1] and curr[k'][f] describe the same
// frame for f in [0, F-2]. Modes are matched by overlap ADE and the matched
// overlap ADEs are summed. Throws SpecError when F < 2.
double stability_summed_ade(const std::vector<Trajectory>& prev, const std::vector<Trajectory>& curr);

// Predictions for one window, global frame, at the last observed frame.
struct Prediction {
  std::vector<std::vector<Trajectory>> trajectories;  // [n][k]
  std::vector<std::vector<double>> probabilities;     // [n][k]
  std::vector<std::uint8_t> valid;                    // [n]
};

// t = 0 outputs of a bundle, converted with each agent's pose at t = 0.
Prediction bundle_to_prediction(const TrajectoryBundle& bundle, const SceneGraph& graph);

// Per-window predictor used by evaluation and rollouts.
using Predictor = std::function<Prediction(const Scene& window)>;
Predictor model_predictor(const HpnetModel& model);
// One mode per agent, probability 1.
Predictor cv_predictor(int future_frames);

struct AgentSample {
  int scene = 0;
  int step = 0;
  int agent = 0;
  double ade = 0.0;
  double fde = 0.0;
  double b_fde = 0.0;
};
struct JointSample {
  int scene = 0;
  int step = 0;
  double ade = 0.0;
  double fde = 0.0;
};
struct StabilitySample {
  int scene = 0;
  int step = 0;  // compares step-1 with step
  int agent = 0;
  double value = 0.0;
};

struct EvalRow {
  int step = -1;  // -1 for the aggregate row
  std::size_t count = 0;
  double min_ade = 0.0;
  double min_fde = 0.0;
  double miss_rate = 0.0;
  double b_min_fde = 0.0;
  std::size_t joint_count = 0;
  double min_joint_ade = 0.0;
  double min_joint_fde = 0.0;
  std::size_t stability_count = 0;
  double stability = 0.0;  // mean over agents
};

struct EvalReport {
  std::vector<AgentSample> agents;
  std::vector<JointSample> joint;
  std::vector<StabilitySample> stability;

  std::vector<EvalRow> per_step() const;
  EvalRow aggregate() const;
  // JSON document: {"format":"hpnet-eval","version":1,"aggregate":{..},"steps":[..],
  //   "stability_samples":[[scene,step,agent,value],..]}
  std::string to_json() const;
  // step,count,min_ade,min_fde,miss_rate,b_min_fde,joint_count,min_joint_ade,min_joint_fde,stability_count,stability
  std::string to_csv() const;
};

// Scores one prediction against the window's ground-truth future. Agents
// without a valid last observed frame or a full future are skipped.
void evaluate_window(EvalReport& report, int scene, int step, const Prediction& pred, const Scene& window);

// Slides a window of history_frames over the stream one frame at a time,
// starting with the first full window. Requires
// stream.history_frames >= history_frames + steps - 1.
void rollout_eval(EvalReport& report, const Predictor& predictor, const Scene& stream, int scene, int steps,
                  int history_frames, int future_frames);

}  // namespace hpnet
