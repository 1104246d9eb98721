#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hpnet/autodiff.hpp"
#include "hpnet/checkpoint.hpp"
#include "hpnet/config.hpp"
#include "hpnet/geometry.hpp"
#include "hpnet/model.hpp"
#include "hpnet/nn.hpp"

namespace hpnet {

// argmin_k |endpoint_k - gt|, ties to the smallest k.
int select_mode_marginal(std::span<const Vec2> endpoints, Vec2 gt_endpoint);
// endpoints[n][k]; argmin_k sum_n |endpoints[n][k] - gt[n]|, ties to the smallest k.
int select_mode_joint(const std::vector<std::vector<Vec2>>& endpoints, std::span<const Vec2> gt_endpoints);

// Mean over components of the Huber penalty with threshold delta.
double huber(std::span<const double> pred, std::span<const double> gt, double delta = 1.0);
// -log softmax(logits)[target], via log-sum-exp.
double classification_loss(std::span<const double> logits, int target);

struct LossBreakdown {
  double reg1 = 0.0;  // proposal regression, averaged like total
  double reg2 = 0.0;  // refined regression
  double cls = 0.0;
  double total = 0.0;
  int terms = 0;               // (t, n) pairs [marginal] or frames t [joint] averaged over
  std::vector<int> selected;   // per agent row (marginal) or per frame (joint); -1 when excluded
};

struct Loss {
  ad::Var total;
  LossBreakdown parts;
};

// Throws ValidityError when no (t, n) has a full future.
Loss total_loss(const ForwardVars& out, const SceneGraph& graph, Objective objective, double huber_delta);

// ---- optimisation --------------------------------------------------------

// Cosine annealing from base to 0: lr(step) = base * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double base, long step, long total_steps);

struct AdamW {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long steps = 0;
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;

  // Bias-corrected adaptive step plus decoupled decay p -= lr * wd * p.
  // Throws NumericError naming the first parameter with a non-finite gradient.
  void step(nn::ParamStore& params, const nn::GradMap& grads, double lr, double weight_decay);
};

// ---- training ------------------------------------------------------------

struct TrainRun {
  HpnetModel model;
  AdamW optimizer;
  int epochs_done = 0;
  long steps_done = 0;
};

TrainRun init_run(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

struct ValidationStats {
  double loss = 0.0;
  double min_ade = 0.0;  // t = 0, every agent with a full future, K modes
  double min_fde = 0.0;
  std::size_t samples = 0;
};
ValidationStats validate_model(const HpnetModel& model, const std::vector<Scene>& scenes, const TrainConfig& cfg);

// One record per optimiser step and one per epoch, as plain text lines.
using LogSink = std::function<void(const std::string& line)>;

// Trains until run.epochs_done == cfg.epochs. `after_epoch` (optional) runs
// after each completed epoch, e.g. to write a checkpoint.
void train(TrainRun& run, const std::vector<Scene>& train_set, const std::vector<Scene>& val_set,
           const TrainConfig& cfg, const LogSink& log = {},
           const std::function<void(const TrainRun&)>& after_epoch = {});

// Loss and parameter gradients of one scene (the unit of data parallelism).
struct SceneGradient {
  LossBreakdown parts;
  nn::GradMap grads;
};
SceneGradient scene_gradient(const HpnetModel& model, const Scene& scene, const TrainConfig& cfg, bool training,
                             std::uint64_t dropout_seed);

Checkpoint make_checkpoint(const TrainRun& run, const TrainConfig& cfg);
// Restores model, optimiser moments and counters. The training config
// stored in the checkpoint is returned through train_cfg when non-null.
TrainRun restore_run(const Checkpoint& ckpt, TrainConfig* train_cfg = nullptr);
HpnetModel load_model(const Checkpoint& ckpt);

}  // namespace hpnet
