#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "hpnet/config.hpp"
#include "hpnet/rng.hpp"
#include "hpnet/scene.hpp"
#include "hpnet/synth.hpp"
#include "hpnet/tensor.hpp"

namespace hpnet::testing {

// Small generated scene; with `occlude` a few frames are marked invalid
// (never every frame of an agent, never the focal agent's last observed frame).
inline Scene micro_scene(std::uint64_t seed, int history = 4, int future = 3, int agents = 2, bool occlude = true) {
  ScenarioSpec spec;
  spec.layout = static_cast<Layout>(seed % 4);
  spec.min_agents = agents;
  spec.max_agents = agents;
  spec.history_frames = history;
  spec.future_frames = future;
  spec.position_noise = 0.05;
  spec.heading_noise = 0.01;
  spec.seed = seed;
  Scene s = generate(spec);
  if (occlude) {
    Rng rng(mix_seed(seed, 77));
    for (std::size_t n = 0; n < s.agents.size(); ++n) {
      for (int t = 0; t + 1 < history; ++t)
        if (rng.bernoulli(0.15)) s.agents[n].states[static_cast<std::size_t>(t)].valid = false;
    }
  }
  return s;
}

inline ModelConfig micro_config() {
  ModelConfig c = ModelConfig::micro();
  return c;
}

inline Rigid2 random_rigid(Rng& rng) {
  return Rigid2{rng.uniform(-std::numbers::pi, std::numbers::pi), {rng.uniform(-500.0, 500.0), rng.uniform(-500.0, 500.0)}};
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace hpnet::testing
