#include "hpnet/config.hpp"

#include <charconv>
#include <cstdlib>
#include <sstream>

#include "hpnet/errors.hpp"

namespace hpnet {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double to_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || *end != '\0') throw UsageError("config key '" + key + "': '" + v + "' is not a number");
  return d;
}

long long to_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size()) {
    throw UsageError("config key '" + key + "': '" + v + "' is not an integer");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw UsageError("config key '" + key + "': '" + v + "' is not a boolean");
}

template <typename F>
void with(const KeyValues& kv, const std::string& key, F&& f) {
  auto it = kv.find(key);
  if (it != kv.end()) f(it->second);
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + " has no '='");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, p);
}

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.dim = 32;
  c.heads = 2;
  return c;
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.dim = 8;
  c.heads = 2;
  c.modes = 2;
  c.history_frames = 4;
  c.future_frames = 3;
  c.temporal_span = 2;
  c.prediction_span = 2;
  c.dropout = 0.0;
  return c;
}

void ModelConfig::validate() const {
  if (dim <= 0 || modes < 1 || history_frames < 1 || future_frames < 1 || attention_rounds < 1 || heads < 1) {
    throw SpecError("model config: sizes must be positive");
  }
  if (dim % heads != 0) throw SpecError("model config: heads must divide dim");
  if (!(spatial_radius > 0.0) || !(agent_radius > 0.0)) throw SpecError("model config: radii must be positive");
  if (temporal_span < 0 || prediction_span < 0) throw SpecError("model config: spans must be non-negative");
  if (temporal_span > history_frames || prediction_span > history_frames) {
    throw SpecError("model config: spans may not exceed the history length");
  }
  if (stages != 2) throw SpecError("model config: exactly two stages (proposal, refinement) are supported");
  if (dropout < 0.0 || dropout >= 1.0) throw SpecError("model config: dropout must be in [0, 1)");
}

KeyValues ModelConfig::to_kv() const {
  return {{"model.dim", std::to_string(dim)},
          {"model.modes", std::to_string(modes)},
          {"model.history_frames", std::to_string(history_frames)},
          {"model.future_frames", std::to_string(future_frames)},
          {"model.spatial_radius", format_double(spatial_radius)},
          {"model.agent_radius", format_double(agent_radius)},
          {"model.temporal_span", std::to_string(temporal_span)},
          {"model.prediction_span", std::to_string(prediction_span)},
          {"model.attention_rounds", std::to_string(attention_rounds)},
          {"model.heads", std::to_string(heads)},
          {"model.stages", std::to_string(stages)},
          {"model.use_hpa", use_hpa ? "true" : "false"},
          {"model.residual_norm", residual_norm ? "true" : "false"},
          {"model.dropout", format_double(dropout)}};
}

ModelConfig ModelConfig::from_kv(const KeyValues& kv, ModelConfig c) {
  auto i = [&](const char* k, int& dst) { with(kv, k, [&](const std::string& v) { dst = static_cast<int>(to_int(k, v)); }); };
  auto d = [&](const char* k, double& dst) { with(kv, k, [&](const std::string& v) { dst = to_double(k, v); }); };
  auto b = [&](const char* k, bool& dst) { with(kv, k, [&](const std::string& v) { dst = to_bool(k, v); }); };
  i("model.dim", c.dim);
  i("model.modes", c.modes);
  i("model.history_frames", c.history_frames);
  i("model.future_frames", c.future_frames);
  d("model.spatial_radius", c.spatial_radius);
  d("model.agent_radius", c.agent_radius);
  i("model.temporal_span", c.temporal_span);
  i("model.prediction_span", c.prediction_span);
  i("model.attention_rounds", c.attention_rounds);
  i("model.heads", c.heads);
  i("model.stages", c.stages);
  b("model.use_hpa", c.use_hpa);
  b("model.residual_norm", c.residual_norm);
  d("model.dropout", c.dropout);
  return c;
}

void AugmentationConfig::validate() const {
  for (double p : {flip_ratio, agent_occlusion_ratio, lane_occlusion_ratio})
    if (!(p >= 0.0 && p <= 1.0)) throw SpecError("augmentation ratios must lie in [0, 1]");
}

std::string to_string(Objective o) { return o == Objective::kJoint ? "joint" : "marginal"; }

Objective parse_objective(const std::string& s) {
  if (s == "marginal") return Objective::kMarginal;
  if (s == "joint") return Objective::kJoint;
  throw UsageError("unknown objective '" + s + "' (expected marginal or joint)");
}

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.epochs = 8;
  c.batch_size = 4;
  c.learning_rate = 3e-4;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 0 || batch_size < 1) throw SpecError("train config: epochs >= 0 and batch size >= 1 required");
  if (!(learning_rate > 0.0)) throw SpecError("train config: learning rate must be positive");
  if (weight_decay < 0.0 || !(huber_delta > 0.0)) throw SpecError("train config: bad weight decay or huber delta");
  augmentation.validate();
}

KeyValues TrainConfig::to_kv() const {
  return {{"train.epochs", std::to_string(epochs)},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.learning_rate", format_double(learning_rate)},
          {"train.weight_decay", format_double(weight_decay)},
          {"train.huber_delta", format_double(huber_delta)},
          {"train.seed", std::to_string(seed)},
          {"train.objective", to_string(objective)},
          {"augment.flip_ratio", format_double(augmentation.flip_ratio)},
          {"augment.agent_occlusion_ratio", format_double(augmentation.agent_occlusion_ratio)},
          {"augment.lane_occlusion_ratio", format_double(augmentation.lane_occlusion_ratio)}};
}

TrainConfig TrainConfig::from_kv(const KeyValues& kv, TrainConfig c) {
  auto d = [&](const char* k, double& dst) { with(kv, k, [&](const std::string& v) { dst = to_double(k, v); }); };
  with(kv, "train.epochs", [&](const std::string& v) { c.epochs = static_cast<int>(to_int("train.epochs", v)); });
  with(kv, "train.batch_size",
       [&](const std::string& v) { c.batch_size = static_cast<int>(to_int("train.batch_size", v)); });
  d("train.learning_rate", c.learning_rate);
  d("train.weight_decay", c.weight_decay);
  d("train.huber_delta", c.huber_delta);
  with(kv, "train.seed", [&](const std::string& v) { c.seed = static_cast<std::uint64_t>(to_int("train.seed", v)); });
  with(kv, "train.objective", [&](const std::string& v) { c.objective = parse_objective(v); });
  d("augment.flip_ratio", c.augmentation.flip_ratio);
  d("augment.agent_occlusion_ratio", c.augmentation.agent_occlusion_ratio);
  d("augment.lane_occlusion_ratio", c.augmentation.lane_occlusion_ratio);
  return c;
}

}  // namespace hpnet
