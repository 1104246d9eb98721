#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace hpnet {

// Flat key=value view used for model cards, run configs and config files.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(const std::string& text);
std::string format_key_values(const KeyValues& kv);
std::string format_double(double v);

struct ModelConfig {
  int dim = 128;                 // D
  int modes = 6;                 // K
  int history_frames = 20;       // T
  int future_frames = 30;        // F
  double spatial_radius = 50.0;  // R1, agent-lane
  double agent_radius = 50.0;    // R2, agent-agent
  int temporal_span = 20;        // I1
  int prediction_span = 20;      // I2
  int attention_rounds = 2;      // N_attn
  int heads = 8;
  int stages = 2;                // proposal + refinement
  bool use_hpa = true;           // false gives the ablated twin
  bool residual_norm = true;     // pre-norm residual blocks
  double dropout = 0.1;          // training only

  static ModelConfig defaults() { return {}; }
  static ModelConfig toy();
  // tiny shapes for gradient checks
  static ModelConfig micro();

  void validate() const;
  KeyValues to_kv() const;
  static ModelConfig from_kv(const KeyValues& kv, ModelConfig base);
  static ModelConfig from_kv(const KeyValues& kv) { return from_kv(kv, ModelConfig()); }
};

struct AugmentationConfig {
  double flip_ratio = 0.5;
  double agent_occlusion_ratio = 0.05;
  double lane_occlusion_ratio = 0.2;

  static AugmentationConfig none() { return {0.0, 0.0, 0.0}; }
  void validate() const;
};

enum class Objective { kMarginal, kJoint };
std::string to_string(Objective o);
Objective parse_objective(const std::string& s);

struct TrainConfig {
  int epochs = 64;
  int batch_size = 16;
  double learning_rate = 5e-4;
  double weight_decay = 1e-4;
  double huber_delta = 1.0;
  std::uint64_t seed = 0;
  Objective objective = Objective::kMarginal;
  AugmentationConfig augmentation;

  static TrainConfig defaults() { return {}; }
  static TrainConfig toy();

  void validate() const;
  KeyValues to_kv() const;
  static TrainConfig from_kv(const KeyValues& kv, TrainConfig base);
  static TrainConfig from_kv(const KeyValues& kv) { return from_kv(kv, TrainConfig()); }
};

}  // namespace hpnet
