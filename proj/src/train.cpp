#include "hpnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <optional>

#include "hpnet/errors.hpp"
#include "hpnet/kernels.hpp"
#include "hpnet/metrics.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/synth.hpp"

#ifdef HPNET_HAVE_OPENMP
#include <omp.h>
#endif

namespace hpnet {

using ad::Var;

int select_mode_marginal(std::span<const Vec2> endpoints, Vec2 gt_endpoint) {
  if (endpoints.empty()) throw DimensionError("select_mode_marginal: no modes");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < endpoints.size(); ++k) {
    const double d = distance(endpoints[k], gt_endpoint);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

int select_mode_joint(const std::vector<std::vector<Vec2>>& endpoints, std::span<const Vec2> gt_endpoints) {
  if (endpoints.empty() || endpoints.size() != gt_endpoints.size()) {
    throw DimensionError("select_mode_joint: need one ground-truth endpoint per agent");
  }
  const std::size_t K = endpoints[0].size();
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < K; ++k) {
    double d = 0.0;
    for (std::size_t n = 0; n < endpoints.size(); ++n) {
      if (endpoints[n].size() != K) throw DimensionError("select_mode_joint: agents disagree on K");
      d += distance(endpoints[n][k], gt_endpoints[n]);
    }
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(k);
    }
  }
  return best;
}

double huber(std::span<const double> pred, std::span<const double> gt, double delta) {
  if (pred.size() != gt.size() || pred.empty()) throw DimensionError("huber: shape mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = std::abs(pred[i] - gt[i]);
    s += e <= delta ? 0.5 * e * e : delta * (e - 0.5 * delta);
  }
  return s / static_cast<double>(pred.size());
}

double classification_loss(std::span<const double> logits, int target) {
  if (target < 0 || static_cast<std::size_t>(target) >= logits.size()) throw DimensionError("classification target");
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return mx + std::log(z) - logits[static_cast<std::size_t>(target)];
}

Loss total_loss(const ForwardVars& out, const SceneGraph& g, Objective objective, double huber_delta) {
  const Tensor& L1 = out.proposals.value();
  const std::size_t F2 = static_cast<std::size_t>(2 * g.F);
  auto endpoint = [&](int row) {
    return Vec2{L1[static_cast<std::size_t>(row) * F2 + F2 - 2], L1[static_cast<std::size_t>(row) * F2 + F2 - 1]};
  };
  auto gt_endpoint = [&](int a) {
    return Vec2{g.targets.at(static_cast<std::size_t>(a), F2 - 2), g.targets.at(static_cast<std::size_t>(a), F2 - 1)};
  };

  Loss loss;
  auto& parts = loss.parts;
  std::vector<int> sel_rows;     // query rows of the selected modes
  std::vector<int> agent_rows;   // matching agent rows
  std::vector<double> targets;   // their ground truth
  auto take = [&](int a, int k) {
    sel_rows.push_back(a * g.K + k);
    agent_rows.push_back(a);
    const auto row = g.targets.row(static_cast<std::size_t>(a));
    targets.insert(targets.end(), row.begin(), row.end());
  };

  std::vector<int> cls_target;
  std::vector<double> joint_weights;  // [frames x selected rows]
  if (objective == Objective::kMarginal) {
    parts.selected.assign(static_cast<std::size_t>(g.T * g.N), -1);
    for (int a = 0; a < g.T * g.N; ++a) {
      if (!g.has_target[static_cast<std::size_t>(a)]) continue;
      std::vector<Vec2> ends;
      for (int k = 0; k < g.K; ++k) ends.push_back(endpoint(a * g.K + k));
      const int k = select_mode_marginal(ends, gt_endpoint(a));
      parts.selected[static_cast<std::size_t>(a)] = k;
      take(a, k);
      cls_target.push_back(k);
    }
    parts.terms = static_cast<int>(sel_rows.size());
  } else {
    parts.selected.assign(static_cast<std::size_t>(g.T), -1);
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // [begin, end) into sel_rows per frame
    for (int t = 0; t < g.T; ++t) {
      std::vector<int> members;
      for (int n = 0; n < g.N; ++n)
        if (g.has_target[static_cast<std::size_t>(g.agent_row(t, n))]) members.push_back(g.agent_row(t, n));
      if (members.empty()) continue;
      std::vector<std::vector<Vec2>> ends;
      std::vector<Vec2> gts;
      for (int a : members) {
        ends.emplace_back();
        for (int k = 0; k < g.K; ++k) ends.back().push_back(endpoint(a * g.K + k));
        gts.push_back(gt_endpoint(a));
      }
      const int k = select_mode_joint(ends, gts);
      parts.selected[static_cast<std::size_t>(t)] = k;
      const std::size_t begin = sel_rows.size();
      for (int a : members) take(a, k);
      spans.emplace_back(begin, sel_rows.size());
      cls_target.push_back(k);
    }
    parts.terms = static_cast<int>(spans.size());
    joint_weights.assign(spans.size() * sel_rows.size(), 0.0);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      const double w = 1.0 / static_cast<double>(spans[i].second - spans[i].first);
      for (std::size_t j = spans[i].first; j < spans[i].second; ++j) joint_weights[i * sel_rows.size() + j] = w;
    }
  }
  if (parts.terms == 0) throw ValidityError("loss: no (t, n) has a full ground-truth future");

  const Tensor target(Shape{sel_rows.size(), F2}, std::move(targets));
  const Var reg1 = ad::huber_rows(ad::gather_rows(out.proposals, sel_rows), target, huber_delta);
  const Var reg2 = ad::huber_rows(ad::gather_rows(out.finals, sel_rows), target, huber_delta);
  Var logits = ad::gather_rows(out.logits, agent_rows);
  if (objective == Objective::kJoint) {
    // joint score of a frame: mean of its agents' logits for each mode slot
    ad::Tape& tape = *out.logits.tape;
    const Var w = tape.constant(Tensor(Shape{static_cast<std::size_t>(parts.terms), sel_rows.size()}, joint_weights));
    logits = ad::matmul(w, logits);
  }
  const Var cls = ad::cross_entropy_rows(logits, cls_target);

  const double inv = 1.0 / static_cast<double>(parts.terms);
  const Var s1 = ad::sum(reg1), s2 = ad::sum(reg2), s3 = ad::sum(cls);
  loss.total = ad::scale(ad::add(ad::add(s1, s2), s3), inv);
  parts.reg1 = s1.value()[0] * inv;
  parts.reg2 = s2.value()[0] * inv;
  parts.cls = s3.value()[0] * inv;
  parts.total = loss.total.value()[0];
  return loss;
}

double cosine_lr(double base, long step, long total_steps) {
  if (total_steps <= 0) return base;
  const double u = std::clamp(static_cast<double>(step) / static_cast<double>(total_steps), 0.0, 1.0);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * u));
}

void AdamW::step(nn::ParamStore& params, const nn::GradMap& grads, double lr, double weight_decay) {
  for (const auto& [name, g] : grads) {
    if (!g.all_finite()) {
      std::size_t bad = 0;
      while (bad < g.size() && std::isfinite(g[bad])) ++bad;
      throw NumericError("non-finite gradient for parameter '" + name + "' at element " + std::to_string(bad) +
                         " (value " + std::to_string(g[bad]) + ")");
    }
  }
  ++steps;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (auto& [name, p] : params.items()) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    if (g.size() != p.size()) throw DimensionError("gradient for '" + name + "' has the wrong size");
    auto [mit, m_new] = m.try_emplace(name, p.shape(), 0.0);
    auto [vit, v_new] = v.try_emplace(name, p.shape(), 0.0);
    Tensor& mm = mit->second;
    Tensor& vv = vit->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      mm[i] = beta1 * mm[i] + (1.0 - beta1) * g[i];
      vv[i] = beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i];
      p[i] -= lr * weight_decay * p[i];
      p[i] -= lr * (mm[i] / c1) / (std::sqrt(vv[i] / c2) + eps);
    }
  }
}

TrainRun init_run(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  train_cfg.validate();
  return TrainRun{HpnetModel(model_cfg, train_cfg.seed), AdamW{}, 0, 0};
}

SceneGradient scene_gradient(const HpnetModel& model, const Scene& scene, const TrainConfig& cfg, bool training,
                             std::uint64_t dropout_seed) {
  const SceneGraph g = build_scene_graph(scene, model.config());
  ad::Tape tape;
  nn::Binding b(tape, model.params(), training);
  ForwardOptions opts;
  opts.training = training;
  opts.dropout_seed = dropout_seed;
  const auto out = model.forward(b, g, opts);
  Loss loss = total_loss(out, g, cfg.objective, cfg.huber_delta);
  SceneGradient sg;
  sg.parts = std::move(loss.parts);
  if (training) {
    tape.backward(loss.total);
    sg.grads = b.gradients();
  }
  return sg;
}

ValidationStats validate_model(const HpnetModel& model, const std::vector<Scene>& scenes, const TrainConfig& cfg) {
  ValidationStats st;
  if (scenes.empty()) return st;
  double loss = 0.0, ade = 0.0, fde = 0.0;
  for (const auto& s : scenes) {
    const SceneGraph g = build_scene_graph(s, model.config());
    ad::Tape tape;
    nn::Binding b(tape, model.params(), false);
    const auto out = model.forward(b, g);
    loss += total_loss(out, g, cfg.objective, cfg.huber_delta).parts.total;
    EvalReport rep;
    evaluate_window(rep, 0, 0, bundle_to_prediction(to_bundle(g, out), g), s);
    for (const auto& a : rep.agents) {
      ade += a.ade;
      fde += a.fde;
      ++st.samples;
    }
  }
  st.loss = loss / static_cast<double>(scenes.size());
  if (st.samples) {
    st.min_ade = ade / static_cast<double>(st.samples);
    st.min_fde = fde / static_cast<double>(st.samples);
  }
  return st;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, 0x5f, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
  return order;
}

std::string fmt(double v) { return format_double(v); }

}  // namespace

void train(TrainRun& run, const std::vector<Scene>& train_set, const std::vector<Scene>& val_set,
           const TrainConfig& cfg, const LogSink& log, const std::function<void(const TrainRun&)>& after_epoch) {
  cfg.validate();
  if (train_set.empty()) throw ValidityError("training corpus is empty");
  const auto batch = static_cast<std::size_t>(cfg.batch_size);
  const long steps_per_epoch = static_cast<long>((train_set.size() + batch - 1) / batch);
  const long total_steps = steps_per_epoch * cfg.epochs;
  auto emit = [&log](const std::string& s) {
    if (log) log(s);
  };

  for (int epoch = run.epochs_done; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(train_set.size(), cfg.seed, epoch);
    for (std::size_t begin = 0; begin < order.size(); begin += batch) {
      const std::size_t count = std::min(batch, order.size() - begin);
      const long step = run.steps_done;
      std::vector<SceneGradient> results(count);
      std::vector<std::exception_ptr> errors(count);
      auto work = [&](std::size_t i) {
        try {
          const std::size_t idx = order[begin + i];
          const std::uint64_t s = mix_seed(cfg.seed, static_cast<std::uint64_t>(step), idx);
          const Scene scene = augment(train_set[idx], cfg.augmentation, s);
          results[i] = scene_gradient(run.model, scene, cfg, true, s ^ 0xd7);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      };
#ifdef HPNET_HAVE_OPENMP
#pragma omp parallel for schedule(dynamic, 1) if (kernels::parallel_enabled() && omp_get_max_threads() > 1)
      for (long i = 0; i < static_cast<long>(count); ++i) work(static_cast<std::size_t>(i));
#else
      for (std::size_t i = 0; i < count; ++i) work(i);
#endif
      for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

      nn::GradMap sum = std::move(results[0].grads);
      LossBreakdown mean = results[0].parts;
      for (std::size_t i = 1; i < count; ++i) {
        for (auto& [name, g] : sum) {
          const Tensor& o = results[i].grads.at(name);
          for (std::size_t j = 0; j < g.size(); ++j) g[j] += o[j];
        }
        mean.reg1 += results[i].parts.reg1;
        mean.reg2 += results[i].parts.reg2;
        mean.cls += results[i].parts.cls;
        mean.total += results[i].parts.total;
      }
      const double inv = 1.0 / static_cast<double>(count);
      for (auto& [name, g] : sum)
        for (auto& x : g.values()) x *= inv;
      const double lr = cosine_lr(cfg.learning_rate, step, total_steps);
      run.optimizer.step(run.model.params(), sum, lr, cfg.weight_decay);
      ++run.steps_done;
      emit("step=" + std::to_string(run.steps_done) + " epoch=" + std::to_string(epoch + 1) + " lr=" + fmt(lr) +
           " reg1=" + fmt(mean.reg1 * inv) + " reg2=" + fmt(mean.reg2 * inv) + " cls=" + fmt(mean.cls * inv) +
           " total=" + fmt(mean.total * inv));
    }
    run.epochs_done = epoch + 1;
    std::string line = "epoch=" + std::to_string(run.epochs_done) + " steps=" + std::to_string(run.steps_done);
    if (!val_set.empty()) {
      const auto v = validate_model(run.model, val_set, cfg);
      line += " val_total=" + fmt(v.loss) + " val_min_ade=" + fmt(v.min_ade) + " val_min_fde=" + fmt(v.min_fde) +
              " val_samples=" + std::to_string(v.samples);
    }
    emit(line);
    if (after_epoch) after_epoch(run);
  }
}

Checkpoint make_checkpoint(const TrainRun& run, const TrainConfig& cfg) {
  Checkpoint c;
  for (const auto& [k, v] : run.model.config().to_kv()) c.meta[k] = v;
  for (const auto& [k, v] : cfg.to_kv()) c.meta[k] = v;
  c.meta["state.epochs_done"] = std::to_string(run.epochs_done);
  c.meta["state.steps_done"] = std::to_string(run.steps_done);
  c.meta["state.adam_steps"] = std::to_string(run.optimizer.steps);
  for (const auto& [name, t] : run.model.params().items()) c.tensors["param/" + name] = t;
  for (const auto& [name, t] : run.optimizer.m) c.tensors["adam.m/" + name] = t;
  for (const auto& [name, t] : run.optimizer.v) c.tensors["adam.v/" + name] = t;
  return c;
}

namespace {

long meta_long(const Checkpoint& c, const std::string& key) {
  auto it = c.meta.find(key);
  if (it == c.meta.end()) throw IntegrityError("checkpoint lacks '" + key + "'");
  try {
    return std::stol(it->second);
  } catch (const std::exception&) {
    throw IntegrityError("checkpoint field '" + key + "' is not an integer");
  }
}

}  // namespace

HpnetModel load_model(const Checkpoint& ckpt) {
  const ModelConfig cfg = ModelConfig::from_kv(KeyValues(ckpt.meta.begin(), ckpt.meta.end()));
  nn::ParamStore ps;
  for (const auto& [name, t] : ckpt.tensors)
    if (name.starts_with("param/")) ps.add(name.substr(6), t);
  return HpnetModel(cfg, std::move(ps));
}

TrainRun restore_run(const Checkpoint& ckpt, TrainConfig* train_cfg) {
  TrainRun run{load_model(ckpt), AdamW{}, 0, 0};
  run.epochs_done = static_cast<int>(meta_long(ckpt, "state.epochs_done"));
  run.steps_done = meta_long(ckpt, "state.steps_done");
  run.optimizer.steps = meta_long(ckpt, "state.adam_steps");
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.starts_with("adam.m/")) run.optimizer.m[name.substr(7)] = t;
    if (name.starts_with("adam.v/")) run.optimizer.v[name.substr(7)] = t;
  }
  if (train_cfg) *train_cfg = TrainConfig::from_kv(KeyValues(ckpt.meta.begin(), ckpt.meta.end()));
  return run;
}

}  // namespace hpnet
