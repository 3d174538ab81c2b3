#pragma once

// Brute-force re-derivation of the scoring rules, kept deliberately dumb:
// refine the trace, then walk every sample of every event window applying the
// pointwise definitions. Uses none of the library's scoring code beyond the
// shared resample grid.

#include <cmath>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "beatpose/beatmap.hpp"
#include "beatpose/eval.hpp"
#include "beatpose/pose.hpp"

namespace oracle {

inline Eigen::Vector3d cut_dir(beatpose::CutDirection d) {
  const double s = 1.0 / std::sqrt(2.0);
  using CD = beatpose::CutDirection;
  switch (d) {
    case CD::Up: return {0, 1, 0};
    case CD::Down: return {0, -1, 0};
    case CD::Left: return {-1, 0, 0};
    case CD::Right: return {1, 0, 0};
    case CD::UpLeft: return {-s, s, 0};
    case CD::UpRight: return {s, s, 0};
    case CD::DownLeft: return {-s, -s, 0};
    case CD::DownRight: return {s, -s, 0};
    default: return {0, 0, 0};
  }
}

struct Samples {
  std::vector<double> t;
  std::vector<Eigen::Vector3d> head, left, right;
};

inline Samples refine(const beatpose::PoseTrace& trace, int supersample) {
  const beatpose::PoseTrace r =
      beatpose::resample(trace, trace.rate * supersample);
  Samples s;
  for (const auto& f : r.frames) {
    s.t.push_back(f.timestamp);
    s.head.push_back(f.head.position);
    s.left.push_back(f.left_hand.position);
    s.right.push_back(f.right_hand.position);
  }
  return s;
}

inline Eigen::Vector3d velocity(const std::vector<double>& t,
                                const std::vector<Eigen::Vector3d>& p,
                                std::size_t k) {
  const std::size_t last = t.size() - 1;
  const std::size_t lo = k == 0 ? 0 : k - 1;
  const std::size_t hi = k == last ? last : k + 1;
  return (p[hi] - p[lo]) / (t[hi] - t[lo]);
}

inline std::vector<std::size_t> in_window(const std::vector<double>& t,
                                          double t_lo, double t_hi) {
  std::vector<std::size_t> idx;
  for (std::size_t k = 0; k < t.size(); ++k)
    if (t[k] >= t_lo - 1e-9 && t[k] <= t_hi + 1e-9) idx.push_back(k);
  return idx;
}

inline std::vector<beatpose::NoteOutcome> note_outcomes(
    const beatpose::PoseTrace& trace, const beatpose::Beatmap& map,
    const beatpose::ScoringGeometry& g) {
  const Samples s = refine(trace, g.supersample);
  std::vector<beatpose::NoteOutcome> out;
  for (const beatpose::NoteEvent& e : map.notes) {
    const double t_note = e.beat * 60.0 / map.bpm;
    const Eigen::Vector3d c = g.lanes.cell_center(e.column, e.row);
    const Eigen::Vector3d half{g.lanes.cell_width / 2, g.lanes.cell_height / 2,
                               g.cell_half_depth};
    const auto& hand =
        e.color == beatpose::NoteColor::Left ? s.left : s.right;
    const std::vector<std::size_t> idx =
        in_window(s.t, t_note - g.hit_window, t_note + g.hit_window);

    // Pass 1: collect entry samples.
    std::vector<std::size_t> entries;
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const Eigen::Vector3d& p = hand[idx[j]];
      auto strictly_inside = [&](const Eigen::Vector3d& q) {
        return q.x() > c.x() - half.x() && q.x() < c.x() + half.x() &&
               q.y() > c.y() - half.y() && q.y() < c.y() + half.y() &&
               q.z() > c.z() - half.z() && q.z() < c.z() + half.z();
      };
      if (!strictly_inside(p)) continue;
      if (j == 0 || !strictly_inside(hand[idx[j - 1]])) entries.push_back(idx[j]);
    }

    // Pass 2: classify each entry, best outcome wins.
    bool hit = false, wrong = false, slow = false;
    for (std::size_t k : entries) {
      const Eigen::Vector3d v = velocity(s.t, hand, k);
      if (v.norm() >= g.min_hand_speed) {
        if (e.cut_direction == beatpose::CutDirection::Any ||
            v.dot(cut_dir(e.cut_direction)) / v.norm() >= g.direction_cos_min)
          hit = true;
        else
          wrong = true;
      } else {
        slow = true;
      }
    }
    using NO = beatpose::NoteOutcome;
    out.push_back(hit ? NO::Hit : wrong ? NO::WrongDirection
                                        : slow ? NO::TooSlow : NO::Miss);
  }
  return out;
}

inline int bomb_touches(const beatpose::PoseTrace& trace,
                        const beatpose::Beatmap& map,
                        const beatpose::ScoringGeometry& g) {
  const Samples s = refine(trace, g.supersample);
  int count = 0;
  for (const beatpose::BombEvent& e : map.bombs) {
    const double t_bomb = e.beat * 60.0 / map.bpm;
    const Eigen::Vector3d c = g.lanes.cell_center(e.column, e.row);
    bool touched = false;
    for (std::size_t k : in_window(s.t, t_bomb - g.hit_window, t_bomb + g.hit_window)) {
      if ((s.left[k] - c).squaredNorm() < g.bomb_radius * g.bomb_radius ||
          (s.right[k] - c).squaredNorm() < g.bomb_radius * g.bomb_radius) {
        touched = true;
        break;
      }
    }
    if (touched) ++count;
  }
  return count;
}

inline int obstacle_collisions(const beatpose::PoseTrace& trace,
                               const beatpose::Beatmap& map,
                               const beatpose::ScoringGeometry& g) {
  const Samples s = refine(trace, g.supersample);
  int count = 0;
  for (const beatpose::ObstacleEvent& e : map.obstacles) {
    const double start = e.beat * 60.0 / map.bpm;
    const double dur = e.duration * 60.0 / map.bpm;
    const double x_lo =
        g.lanes.column_x[static_cast<std::size_t>(e.column)] - 0.5 * g.lanes.cell_width;
    const double x_hi = x_lo + g.lanes.cell_width * e.width;
    const bool crouch = e.kind == beatpose::ObstacleKind::Crouch;
    const double y_lo = crouch ? g.lanes.crouch_wall_bottom : 0.0;
    const double y_hi =
        y_lo + (crouch ? g.lanes.crouch_wall_height : g.lanes.full_wall_height);
    const double depth = dur * g.lanes.beam_speed;

    bool collided = false;
    for (std::size_t k : in_window(s.t, start, start + dur)) {
      const double z_lo = g.lanes.z_spawn - g.lanes.beam_speed * (s.t[k] - start);
      const double z_hi = z_lo + depth;
      const Eigen::Vector3d& p = s.head[k];
      const double cx = std::min(std::max(p.x(), x_lo), x_hi);
      const double cy = std::min(std::max(p.y(), y_lo), y_hi);
      const double cz = std::min(std::max(p.z(), z_lo), z_hi);
      const double dx = p.x() - cx, dy = p.y() - cy, dz = p.z() - cz;
      if (dx * dx + dy * dy + dz * dz < g.head_radius * g.head_radius) {
        collided = true;
        break;
      }
    }
    if (collided) ++count;
  }
  return count;
}

}  // namespace oracle
