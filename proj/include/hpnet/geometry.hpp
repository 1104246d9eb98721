#pragma once

#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

namespace hpnet {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
  double norm() const { return std::hypot(x, y); }
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;

  Vec2 position() const { return {x, y}; }
};

// Wraps to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::remainder(a, 2.0 * std::numbers::pi);
  if (a <= -std::numbers::pi) a += 2.0 * std::numbers::pi;
  return a;
}

inline double distance(Vec2 a, Vec2 b) { return (a - b).norm(); }

// Rigid transform p -> R(rotation) p + translation.
struct Rigid2 {
  double rotation = 0.0;
  Vec2 translation;

  Vec2 apply(Vec2 p) const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    return {c * p.x - s * p.y + translation.x, s * p.x + c * p.y + translation.y};
  }
  Vec2 apply_vector(Vec2 v) const {
    const double c = std::cos(rotation), s = std::sin(rotation);
    return {c * v.x - s * v.y, s * v.x + c * v.y};
  }
  double apply_heading(double theta) const { return wrap_angle(theta + rotation); }
};

// Expresses a global point in the frame with origin `frame` and x-axis along
// frame.theta, and back.
Vec2 to_local(const Pose& frame, Vec2 p);
Vec2 to_global(const Pose& frame, Vec2 p);

// Relative spatio-temporal polar tuple linking a source node to a target node.
struct EdgeFeature {
  double distance = 0.0;          // meters
  double direction = 0.0;         // direction of (src - tgt) in the target heading frame
  double relative_heading = 0.0;  // theta_src - theta_tgt
  double time_delta = 0.0;        // t_src - t_tgt, frames
};

EdgeFeature relative_edge(const Pose& src, double t_src, const Pose& tgt, double t_tgt);

// Indices of candidates within `radius` (inclusive) of center. `exclude`
// drops one index (the center itself in self-attention contexts).
std::vector<int> spatial_neighbors(Vec2 center, std::span<const Vec2> candidates, double radius,
                                   std::optional<int> exclude = std::nullopt);

// Causal window [max(t - span, first_frame), t] in frame indices.
struct FrameRange {
  int first = 0;
  int last = 0;
  int count() const { return last - first + 1; }
  bool contains(int t) const { return t >= first && t <= last; }
};
FrameRange temporal_window(int t, int span, int history_frames);

}  // namespace hpnet
