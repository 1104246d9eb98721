#include "hpnet/model.hpp"

#include <algorithm>
#include <cmath>

#include "hpnet/errors.hpp"
#include "hpnet/geometry.hpp"
#include "hpnet/rng.hpp"

namespace hpnet {

using ad::Var;

namespace {

constexpr double kSpeedScale = 10.0;
constexpr double kDistanceScale = 10.0;
constexpr double kTimeScale = 10.0;
constexpr double kLaneLengthScale = 5.0;

class RelationBuilder {
 public:
  RelationBuilder() { rel_.edges.offsets.push_back(0); }

  int feature(const EdgeFeature& e) {
    const auto f = encode_edge_feature(e);
    feats_.insert(feats_.end(), f.begin(), f.end());
    return rows_++;
  }
  void edge(int src, int eid) {
    rel_.edges.src.push_back(src);
    rel_.edges.eid.push_back(eid);
  }
  void end_query() { rel_.edges.offsets.push_back(static_cast<int>(rel_.edges.src.size())); }

  Relation finish() {
    rel_.features = Tensor(Shape{static_cast<std::size_t>(rows_), kEdgeFeatureDim}, std::move(feats_));
    return std::move(rel_);
  }

 private:
  Relation rel_;
  std::vector<double> feats_;
  int rows_ = 0;
};

std::vector<double> keyed_mask(const ad::EdgeList& edges) {
  std::vector<double> m(edges.num_queries());
  for (std::size_t q = 0; q < m.size(); ++q) m[q] = edges.has_keys(q) ? 1.0 : 0.0;
  return m;
}

std::vector<double> complement(const std::vector<double>& m) {
  std::vector<double> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = 1.0 - m[i];
  return out;
}

void init_attention(nn::ParamStore& ps, const std::string& name, std::size_t d, Rng& rng) {
  nn::init_linear(ps, name + ".q", d, d, rng);
  nn::init_linear(ps, name + ".k", d, d, rng);
  nn::init_linear(ps, name + ".ke", d, d, rng, false);
  nn::init_linear(ps, name + ".v", d, d, rng);
  nn::init_linear(ps, name + ".ve", d, d, rng, false);
  nn::init_linear(ps, name + ".o", d, d, rng);
}

void init_block(nn::ParamStore& ps, const std::string& name, std::size_t d, Rng& rng, bool cross) {
  nn::init_layer_norm(ps, name + ".ln_q", d);
  if (cross) nn::init_layer_norm(ps, name + ".ln_kv", d);
  init_attention(ps, name + ".attn", d, rng);
  nn::init_layer_norm(ps, name + ".ln_ff", d);
  nn::init_mlp2(ps, name + ".ff", d, 2 * d, d, rng);
}

struct Pass {
  nn::Binding& b;
  const ModelConfig& cfg;
  const SceneGraph& g;
  const ForwardOptions& opts;
  Rng drop_rng;

  Var drop(Var x) {
    if (!opts.training || cfg.dropout <= 0.0) return x;
    std::vector<std::uint8_t> keep(x.value().size());
    for (auto& k : keep) k = drop_rng.bernoulli(1.0 - cfg.dropout) ? 1 : 0;
    return ad::dropout(x, keep, cfg.dropout);
  }

  Var ln(const std::string& name, Var x) { return nn::layer_norm(b, name, x); }

  Var attend(const std::string& name, Var hq, Var hsrc, Var edge_emb, const Relation& rel,
             const std::string& trace_name) {
    const Var q = nn::linear(b, name + ".q", hq);
    const Var ks = nn::linear(b, name + ".k", hsrc);
    const Var vs = nn::linear(b, name + ".v", hsrc);
    const Var ke = nn::linear(b, name + ".ke", edge_emb);
    const Var ve = nn::linear(b, name + ".ve", edge_emb);
    std::vector<double>* tr = nullptr;
    if (opts.trace) {
      auto& rec = opts.trace->records[trace_name];
      rec.edges = rel.edges;
      tr = &rec.weights;
    }
    const Var a = ad::graph_attention(q, ks, ke, vs, ve, rel.edges, static_cast<std::size_t>(cfg.heads), tr);
    return nn::linear(b, name + ".o", a);
  }

  // Attention + feed-forward with residuals. Queries without keys pass
  // through unchanged. src is nullopt for self-attention.
  Var block(const std::string& name, Var x, std::optional<Var> src, Var edge_emb, const Relation& rel) {
    if (rel.edges.num_edges() == 0) return x;
    const auto mask = keyed_mask(rel.edges);
    const bool res = cfg.residual_norm;
    const Var h = res ? ln(name + ".ln_q", x) : x;
    const Var s = src ? (res ? ln(name + ".ln_kv", *src) : *src) : h;
    const Var a = ad::scale_rows(drop(attend(name + ".attn", h, s, edge_emb, rel, name)), mask);
    const auto inv = complement(mask);
    const Var y = res ? ad::add(x, a) : ad::add(a, ad::scale_rows(x, inv));
    const Var h2 = res ? ln(name + ".ln_ff", y) : y;
    const Var m = ad::scale_rows(drop(nn::mlp2(b, name + ".ff", h2)), mask);
    return res ? ad::add(y, m) : ad::add(m, ad::scale_rows(y, inv));
  }

  std::optional<Var> edge_embedding(const std::string& type, const Relation& rel) {
    if (rel.edges.num_edges() == 0) return std::nullopt;
    return nn::mlp2(b, "edge." + type, b.tape().constant(rel.features));
  }

  struct Context {
    Var agents;
    std::optional<Var> lanes;
    std::optional<Var> spatial, temporal, agent, hpa, mode;
  };

  Var stage(const std::string& prefix, Var queries, const Context& c) {
    Var p = block(prefix + ".temporal", queries, c.agents, c.temporal.value_or(queries), g.temporal);
    if (c.lanes && c.spatial) {
      const auto mask = keyed_mask(g.spatial.edges);
      const bool res = cfg.residual_norm;
      const std::string name = prefix + ".spatial";
      const Var h = res ? ln(name + ".ln_q", queries) : queries;
      const Var s = res ? ln(name + ".ln_kv", *c.lanes) : *c.lanes;
      p = ad::add(p, ad::scale_rows(drop(attend(name + ".attn", h, s, *c.spatial, g.spatial, name)), mask));
    }
    for (int r = 0; r < cfg.attention_rounds; ++r) {
      const std::string round = prefix + ".round" + std::to_string(r);
      if (c.agent) p = block(round + ".agent", p, std::nullopt, *c.agent, g.agent);
      if (cfg.use_hpa && c.hpa) p = block(round + ".hpa", p, std::nullopt, *c.hpa, g.hpa);
      if (c.mode) p = block(round + ".mode", p, std::nullopt, *c.mode, g.mode);
    }
    return cfg.residual_norm ? ln(prefix + ".ln_out", p) : p;
  }
};

}  // namespace

std::vector<double> encode_edge_feature(const EdgeFeature& e) {
  return {e.distance / kDistanceScale,        std::cos(e.direction),        std::sin(e.direction),
          std::cos(e.relative_heading),       std::sin(e.relative_heading), e.time_delta / kTimeScale};
}

SceneGraph build_scene_graph(const Scene& scene, const ModelConfig& cfg) {
  cfg.validate();
  if (scene.history_frames != cfg.history_frames) {
    throw SpecError("scene has " + std::to_string(scene.history_frames) + " observed frames, model expects " +
                    std::to_string(cfg.history_frames));
  }
  if (scene.agents.empty()) throw ValidityError("scene has no agents");
  SceneGraph g;
  g.T = cfg.history_frames;
  g.N = static_cast<int>(scene.agents.size());
  g.K = cfg.modes;
  g.F = cfg.future_frames;
  g.M = static_cast<int>(scene.lanes.size());
  const int T = g.T, N = g.N, K = g.K, F = g.F;

  g.agent_features = Tensor(Shape{static_cast<std::size_t>(T * N), kAgentFeatureDim});
  g.valid.assign(static_cast<std::size_t>(T * N), 0);
  g.poses.assign(static_cast<std::size_t>(T * N), Pose{});
  for (int n = 0; n < N; ++n) {
    const auto& track = scene.agents[static_cast<std::size_t>(n)];
    bool any = false;
    for (int t = 0; t < T; ++t) {
      const auto& st = track.states[static_cast<std::size_t>(t)];
      if (!st.valid) continue;
      any = true;
      const auto a = static_cast<std::size_t>(g.agent_row(t, n));
      g.valid[a] = 1;
      g.poses[a] = st.pose();
      const auto f = agent_local_features(st, track.cls);
      auto row = g.agent_features.row(a);
      row[0] = f.speed / kSpeedScale;
      row[1] = std::cos(f.direction);
      row[2] = std::sin(f.direction);
      row[3 + static_cast<int>(f.cls)] = 1.0;
    }
    if (!any) throw ValidityError("agent " + std::to_string(track.id) + " has no valid observed frame");
  }

  g.lane_features = Tensor(Shape{static_cast<std::size_t>(g.M), kLaneFeatureDim});
  std::vector<Pose> mids;
  std::vector<Vec2> mid_pos;
  for (int m = 0; m < g.M; ++m) {
    const auto& l = scene.lanes[static_cast<std::size_t>(m)];
    auto row = g.lane_features.row(static_cast<std::size_t>(m));
    row[0] = l.length() / kLaneLengthScale;
    row[1 + static_cast<int>(l.cls)] = 1.0;
    mids.push_back(l.midpoint());
    mid_pos.push_back(mids.back().position());
  }

  {
    auto edges = lane_graph_edges(scene);
    std::stable_sort(edges.begin(), edges.end(), [](const LaneEdge& a, const LaneEdge& b) { return a.dst < b.dst; });
    RelationBuilder rb;
    std::size_t e = 0;
    for (int m = 0; m < g.M; ++m) {
      for (; e < edges.size() && edges[e].dst == m; ++e) rb.edge(edges[e].src, rb.feature(edges[e].feature));
      rb.end_query();
    }
    g.lane = rb.finish();
  }

  auto pose = [&g](int t, int n) { return g.poses[static_cast<std::size_t>(g.agent_row(t, n))]; };
  auto valid = [&g](int t, int n) { return g.valid[static_cast<std::size_t>(g.agent_row(t, n))] != 0; };

  RelationBuilder spatial, temporal, agent, hpa, mode;
  const int mode_eid = mode.feature(EdgeFeature{});
  std::vector<std::pair<int, int>> keys;  // (src, eid) per (t, n), shared by its K queries
  auto emit = [&keys, K](RelationBuilder& rb, auto src_of_k) {
    for (int k = 0; k < K; ++k) {
      for (const auto& [src, eid] : keys) rb.edge(src_of_k(src, k), eid);
      rb.end_query();
    }
  };
  for (int t = 0; t < T; ++t) {
    for (int n = 0; n < N; ++n) {
      if (!valid(t, n)) {
        for (auto* rb : {&spatial, &temporal, &agent, &hpa, &mode})
          for (int k = 0; k < K; ++k) rb->end_query();
        continue;
      }
      const Pose here = pose(t, n);

      keys.clear();
      for (int m : spatial_neighbors(here.position(), mid_pos, cfg.spatial_radius))
        keys.emplace_back(m, spatial.feature(relative_edge(mids[static_cast<std::size_t>(m)], t, here, t)));
      emit(spatial, [](int src, int) { return src; });

      keys.clear();
      for (int tp = std::max(0, t - cfg.temporal_span); tp <= t; ++tp)
        if (valid(tp, n)) keys.emplace_back(g.agent_row(tp, n), temporal.feature(relative_edge(pose(tp, n), tp, here, t)));
      emit(temporal, [](int src, int) { return src; });

      keys.clear();
      for (int o = 0; o < N; ++o) {
        if (o == n || !valid(t, o)) continue;
        const Pose there = pose(t, o);
        if (distance(there.position(), here.position()) <= cfg.agent_radius)
          keys.emplace_back(o, agent.feature(relative_edge(there, t, here, t)));
      }
      emit(agent, [&g, t](int o, int k) { return g.query_row(t, o, k); });

      keys.clear();
      for (int tp = std::max(0, t - cfg.prediction_span); tp <= t; ++tp)
        if (valid(tp, n)) keys.emplace_back(tp, hpa.feature(relative_edge(pose(tp, n), tp, here, t)));
      emit(hpa, [&g, n](int tp, int k) { return g.query_row(tp, n, k); });

      for (int k = 0; k < K; ++k) {
        for (int kp = 0; kp < K; ++kp) mode.edge(g.query_row(t, n, kp), mode_eid);
        mode.end_query();
      }
    }
  }
  g.spatial = spatial.finish();
  g.temporal = temporal.finish();
  g.agent = agent.finish();
  g.hpa = hpa.finish();
  g.mode = mode.finish();

  g.targets = Tensor(Shape{static_cast<std::size_t>(T * N), static_cast<std::size_t>(2 * F)});
  g.has_target.assign(static_cast<std::size_t>(T * N), 0);
  for (int t = 0; t < T; ++t) {
    if (t + F >= scene.total_frames()) continue;
    for (int n = 0; n < N; ++n) {
      if (!valid(t, n)) continue;
      const auto& states = scene.agents[static_cast<std::size_t>(n)].states;
      bool full = true;
      for (int f = 1; f <= F && full; ++f) full = states[static_cast<std::size_t>(t + f)].valid;
      if (!full) continue;
      const auto a = static_cast<std::size_t>(g.agent_row(t, n));
      g.has_target[a] = 1;
      auto row = g.targets.row(a);
      for (int f = 0; f < F; ++f) {
        const Vec2 p = to_local(pose(t, n), states[static_cast<std::size_t>(t + 1 + f)].position());
        row[static_cast<std::size_t>(2 * f)] = p.x;
        row[static_cast<std::size_t>(2 * f + 1)] = p.y;
      }
    }
  }
  return g;
}

std::vector<std::pair<int, double>> inspect_hpa_weights(const AttentionTrace& trace, const SceneGraph& g, int t,
                                                        int n, int k) {
  const AttentionRecord* rec = nullptr;
  for (const auto& [name, r] : trace.records)
    if (name.starts_with("refine.") && name.ends_with(".hpa")) rec = &r;  // map order: last round wins
  if (!rec) throw SpecError("attention trace holds no HPA record (trace disabled or HPA ablated)");
  const int ti = t + g.T - 1;
  if (ti < 0 || ti >= g.T || n < 0 || n >= g.N || k < 0 || k >= g.K) throw DimensionError("inspect_hpa_weights: index out of range");
  const auto q = static_cast<std::size_t>(g.query_row(ti, n, k));
  std::vector<std::pair<int, double>> out;
  for (int e = rec->edges.offsets[q]; e < rec->edges.offsets[q + 1]; ++e) {
    const int frame = rec->edges.src[static_cast<std::size_t>(e)] / (g.N * g.K);
    out.emplace_back(frame - (g.T - 1), rec->weights[static_cast<std::size_t>(e)]);
  }
  return out;
}

HpnetModel::HpnetModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  init(seed);
}

HpnetModel::HpnetModel(const ModelConfig& cfg, nn::ParamStore params) : cfg_(cfg), params_(std::move(params)) {
  cfg_.validate();
  nn::ParamStore expected;
  std::swap(expected, params_);
  init(0);
  std::swap(expected, params_);
  for (const auto& [name, t] : expected.items()) {
    if (!params_.contains(name)) throw IntegrityError("parameter '" + name + "' missing for this model config");
    if (params_.at(name).shape() != t.shape()) {
      throw DimensionError("parameter '" + name + "' has shape " + shape_str(params_.at(name).shape()) +
                           ", config expects " + shape_str(t.shape()));
    }
  }
  if (expected.size() != params_.size()) throw IntegrityError("parameter set does not match the model config");
}

void HpnetModel::init(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4e7));
  const auto D = static_cast<std::size_t>(cfg_.dim);
  const auto F2 = static_cast<std::size_t>(2 * cfg_.future_frames);
  nn::init_mlp2(params_, "enc.agent", kAgentFeatureDim, D, D, rng);
  nn::init_mlp2(params_, "enc.lane", kLaneFeatureDim, D, D, rng);
  init_block(params_, "enc.lane_attn", D, rng, false);
  for (const char* type : {"lane", "spatial", "temporal", "agent", "hpa", "mode"}) {
    if (std::string(type) == "hpa" && !cfg_.use_hpa) continue;
    nn::init_mlp2(params_, std::string("edge.") + type, kEdgeFeatureDim, D, D, rng);
  }
  Tensor modes(Shape{static_cast<std::size_t>(cfg_.modes), D});
  for (auto& v : modes.values()) v = rng.normal();
  params_.add("propose.modes", std::move(modes));
  nn::init_mlp2(params_, "refine.reenc", F2, D, D, rng);
  for (const char* stage : {"propose", "refine"}) {
    const std::string s = stage;
    init_block(params_, s + ".temporal", D, rng, true);
    nn::init_layer_norm(params_, s + ".spatial.ln_q", D);
    nn::init_layer_norm(params_, s + ".spatial.ln_kv", D);
    init_attention(params_, s + ".spatial.attn", D, rng);
    for (int r = 0; r < cfg_.attention_rounds; ++r) {
      const std::string round = s + ".round" + std::to_string(r);
      init_block(params_, round + ".agent", D, rng, false);
      if (cfg_.use_hpa) init_block(params_, round + ".hpa", D, rng, false);
      init_block(params_, round + ".mode", D, rng, false);
    }
    nn::init_layer_norm(params_, s + ".ln_out", D);
    nn::init_mlp2(params_, s + ".decode", D, D, F2, rng);
  }
  nn::init_mlp2(params_, "refine.score", D, D, 1, rng);
}

ForwardVars HpnetModel::forward(nn::Binding& b, const SceneGraph& g, const ForwardOptions& opts) const {
  return forward(b, g, b.tape().constant(g.agent_features), opts);
}

ForwardVars HpnetModel::forward(nn::Binding& b, const SceneGraph& g, Var agent_features,
                                const ForwardOptions& opts) const {
  if (g.K != cfg_.modes || g.T != cfg_.history_frames || g.F != cfg_.future_frames) {
    throw SpecError("scene graph was built for a different model config");
  }
  Pass pass{b, cfg_, g, opts, Rng(mix_seed(opts.dropout_seed, 0xd0))};
  Pass::Context c{nn::mlp2(b, "enc.agent", agent_features), std::nullopt, std::nullopt, std::nullopt,
                  std::nullopt, std::nullopt, std::nullopt};
  if (g.M > 0) {
    Var lanes = nn::mlp2(b, "enc.lane", b.tape().constant(g.lane_features));
    if (auto e = pass.edge_embedding("lane", g.lane)) lanes = pass.block("enc.lane_attn", lanes, std::nullopt, *e, g.lane);
    c.lanes = lanes;
    c.spatial = pass.edge_embedding("spatial", g.spatial);
  }
  c.temporal = pass.edge_embedding("temporal", g.temporal);
  c.agent = pass.edge_embedding("agent", g.agent);
  if (cfg_.use_hpa) c.hpa = pass.edge_embedding("hpa", g.hpa);
  c.mode = pass.edge_embedding("mode", g.mode);

  const int rows = g.T * g.N * g.K;
  std::vector<int> mode_of_row(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) mode_of_row[static_cast<std::size_t>(r)] = r % g.K;
  const Var q0 = ad::gather_rows(b("propose.modes"), mode_of_row);
  const Var p0 = pass.stage("propose", q0, c);
  ForwardVars out;
  out.proposals = ad::scale(nn::mlp2(b, "propose.decode", p0), kPositionScale);

  const Var q1 = nn::mlp2(b, "refine.reenc", ad::scale(out.proposals, 1.0 / kPositionScale));
  const Var p1 = pass.stage("refine", q1, c);
  out.refinements = ad::scale(nn::mlp2(b, "refine.decode", p1), kPositionScale);
  out.finals = ad::add(out.proposals, out.refinements);
  out.logits = ad::reshape(nn::mlp2(b, "refine.score", p1),
                           Shape{static_cast<std::size_t>(g.T * g.N), static_cast<std::size_t>(g.K)});
  out.scores = ad::softmax(out.logits);
  return out;
}

TrajectoryBundle HpnetModel::predict(const SceneGraph& g, AttentionTrace* trace) const {
  ad::Tape tape;
  nn::Binding b(tape, params_, false);
  ForwardOptions opts;
  opts.trace = trace;
  return to_bundle(g, forward(b, g, opts));
}

TrajectoryBundle HpnetModel::predict(const Scene& scene, AttentionTrace* trace) const {
  return predict(build_scene_graph(scene, cfg_), trace);
}

TrajectoryBundle to_bundle(const SceneGraph& g, const ForwardVars& out) {
  TrajectoryBundle tb;
  tb.T = g.T;
  tb.N = g.N;
  tb.K = g.K;
  tb.F = g.F;
  const Shape traj{static_cast<std::size_t>(g.T), static_cast<std::size_t>(g.N), static_cast<std::size_t>(g.K),
                   static_cast<std::size_t>(g.F), 2};
  tb.proposals = out.proposals.value().reshaped(traj);
  tb.refinements = out.refinements.value().reshaped(traj);
  tb.finals = out.finals.value().reshaped(traj);
  tb.scores = out.scores.value().reshaped(
      Shape{static_cast<std::size_t>(g.T), static_cast<std::size_t>(g.N), static_cast<std::size_t>(g.K)});
  tb.valid = g.valid;
  return tb;
}

std::string model_card(const ModelConfig& cfg, const KeyValues& extra) {
  KeyValues kv = cfg.to_kv();
  for (const auto& [k, v] : extra) kv[k] = v;
  return "# hpnet model card\n" + format_key_values(kv);
}

}  // namespace hpnet
