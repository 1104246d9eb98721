#include "hpnet/geometry.hpp"

#include <algorithm>

#include "hpnet/errors.hpp"

namespace hpnet {

Vec2 to_local(const Pose& frame, Vec2 p) {
  const double c = std::cos(frame.theta), s = std::sin(frame.theta);
  const double dx = p.x - frame.x, dy = p.y - frame.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

Vec2 to_global(const Pose& frame, Vec2 p) {
  const double c = std::cos(frame.theta), s = std::sin(frame.theta);
  return {frame.x + c * p.x - s * p.y, frame.y + s * p.x + c * p.y};
}

EdgeFeature relative_edge(const Pose& src, double t_src, const Pose& tgt, double t_tgt) {
  if (!std::isfinite(src.x) || !std::isfinite(src.y) || !std::isfinite(src.theta) || !std::isfinite(tgt.x) ||
      !std::isfinite(tgt.y) || !std::isfinite(tgt.theta) || !std::isfinite(t_src) || !std::isfinite(t_tgt)) {
    throw ValidityError("relative_edge: non-finite pose");
  }
  EdgeFeature e;
  const double dx = src.x - tgt.x, dy = src.y - tgt.y;
  e.distance = std::hypot(dx, dy);
  // atan2 is undefined at zero distance; pin the direction to 0 there.
  e.direction = e.distance == 0.0 ? 0.0 : wrap_angle(std::atan2(dy, dx) - tgt.theta);
  e.relative_heading = wrap_angle(src.theta - tgt.theta);
  e.time_delta = t_src - t_tgt;
  return e;
}

std::vector<int> spatial_neighbors(Vec2 center, std::span<const Vec2> candidates, double radius,
                                   std::optional<int> exclude) {
  if (!(radius > 0.0)) throw SpecError("spatial_neighbors: radius must be positive");
  std::vector<int> out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (exclude && static_cast<int>(i) == *exclude) continue;
    if (distance(center, candidates[i]) <= radius) out.push_back(static_cast<int>(i));
  }
  return out;
}

FrameRange temporal_window(int t, int span, int history_frames) {
  if (span < 0) throw SpecError("temporal_window: span must be non-negative");
  const int first_frame = -history_frames + 1;
  if (t < first_frame || t > 0) throw SpecError("temporal_window: frame " + std::to_string(t) + " is not observed");
  return {std::max(t - span, first_frame), t};
}

}  // namespace hpnet
