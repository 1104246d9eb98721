#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hpnet/autodiff.hpp"
#include "hpnet/config.hpp"
#include "hpnet/nn.hpp"
#include "hpnet/scene.hpp"
#include "hpnet/tensor.hpp"

namespace hpnet {

inline constexpr int kAgentFeatureDim = 3 + kNumAgentClasses;  // speed, cos/sin direction, class
inline constexpr int kLaneFeatureDim = 1 + kNumLaneClasses;    // length, class
inline constexpr int kEdgeFeatureDim = 6;                       // d, cos/sin phi, cos/sin psi, delta
inline constexpr double kPositionScale = 10.0;                  // meters per unit of decoder output

// Edge features as fed to the edge encoders.
std::vector<double> encode_edge_feature(const EdgeFeature& e);

// One attention pattern: query rows -> key rows, with one feature row per
// distinct geometric edge (several queries may share an edge row).
struct Relation {
  ad::EdgeList edges;
  Tensor features;  // [num_feature_rows x kEdgeFeatureDim]
};

// Everything the network reads from a scene, laid out in row order
// agent row  a = t * N + n
// query row  r = (t * N + n) * K + k
// with t the frame index within the T observed frames (0 = oldest).
struct SceneGraph {
  int T = 0, N = 0, K = 0, F = 0, M = 0;
  Tensor agent_features;            // [T*N x kAgentFeatureDim], zero rows for invalid frames
  std::vector<std::uint8_t> valid;  // [T*N]
  std::vector<Pose> poses;          // [T*N]
  Tensor lane_features;             // [M x kLaneFeatureDim]
  Relation lane;                    // lanes -> lanes
  Relation spatial;                 // lanes -> query rows (within R1 of the agent at t)
  Relation temporal;                // agent rows [t-I1, t] of the same agent -> query rows
  Relation agent;                   // query rows of other agents at t, same k (within R2)
  Relation hpa;                     // query rows [t-I2, t], same n, k
  Relation mode;                    // all K query rows of the same (t, n)
  Tensor targets;                   // [T*N x 2F] future positions in the local frame of (t, n)
  std::vector<std::uint8_t> has_target;  // [T*N], full valid future available

  int agent_row(int t, int n) const { return t * N + n; }
  int query_row(int t, int n, int k) const { return (t * N + n) * K + k; }
};

// Requires scene.history_frames == cfg.history_frames. Throws ValidityError
// when an agent has no valid observed frame.
SceneGraph build_scene_graph(const Scene& scene, const ModelConfig& cfg);

// Head-averaged attention weights per recorded sublayer (keyed by sublayer
// name, e.g. "refine.round1.hpa").
struct AttentionRecord {
  ad::EdgeList edges;
  std::vector<double> weights;  // one per edge
};
struct AttentionTrace {
  std::map<std::string, AttentionRecord> records;
};

// HPA weights of query (t, n, k) from the last attention round of the
// refinement stage. t is in [-T+1, 0]. Returns (frame t', weight) pairs in
// ascending t'. Throws SpecError if the trace holds no HPA record.
std::vector<std::pair<int, double>> inspect_hpa_weights(const AttentionTrace& trace, const SceneGraph& graph, int t,
                                                        int n, int k);

// Plain-tensor view of a forward pass.
struct TrajectoryBundle {
  int T = 0, N = 0, K = 0, F = 0;
  Tensor proposals;    // [T, N, K, F, 2], local frame of agent n at frame t
  Tensor refinements;  // same shape
  Tensor finals;       // proposals + refinements
  Tensor scores;       // [T, N, K], softmax over K
  std::vector<std::uint8_t> valid;  // [T*N]

  std::size_t offset(int t, int n, int k) const {
    return ((static_cast<std::size_t>(t) * N + n) * K + k) * static_cast<std::size_t>(F) * 2;
  }
};

struct ForwardOptions {
  bool training = false;           // enables dropout
  std::uint64_t dropout_seed = 0;  // dropout masks are drawn from this seed
  AttentionTrace* trace = nullptr;
};

struct ForwardVars {
  ad::Var proposals;    // [T*N*K x 2F]
  ad::Var refinements;  // [T*N*K x 2F]
  ad::Var finals;       // [T*N*K x 2F]
  ad::Var logits;       // [T*N x K]
  ad::Var scores;       // [T*N x K]
};

class HpnetModel {
 public:
  HpnetModel(const ModelConfig& cfg, std::uint64_t seed);
  HpnetModel(const ModelConfig& cfg, nn::ParamStore params);

  const ModelConfig& config() const { return cfg_; }
  const nn::ParamStore& params() const { return params_; }
  nn::ParamStore& params() { return params_; }

  // Differentiable pass. agent_features replaces graph.agent_features so
  // callers can take gradients with respect to per-frame inputs.
  ForwardVars forward(nn::Binding& b, const SceneGraph& graph, ad::Var agent_features,
                      const ForwardOptions& opts = {}) const;
  ForwardVars forward(nn::Binding& b, const SceneGraph& graph, const ForwardOptions& opts = {}) const;

  // Eval-mode inference without gradients.
  TrajectoryBundle predict(const SceneGraph& graph, AttentionTrace* trace = nullptr) const;
  TrajectoryBundle predict(const Scene& scene, AttentionTrace* trace = nullptr) const;

 private:
  void init(std::uint64_t seed);

  ModelConfig cfg_;
  nn::ParamStore params_;
};

TrajectoryBundle to_bundle(const SceneGraph& graph, const ForwardVars& out);

// Model card: the ModelConfig as key=value lines plus free-form extras.
std::string model_card(const ModelConfig& cfg, const KeyValues& extra = {});

}  // namespace hpnet
