#pragma once

// Shared helpers for the test binaries: seeded random poses, traces, and
// beatmaps, plus small filesystem scaffolding.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "beatpose/beatmap.hpp"
#include "beatpose/common.hpp"
#include "beatpose/pose.hpp"

namespace testutil {

inline std::filesystem::path fixture_dir() {
  return std::filesystem::path(BEATPOSE_FIXTURE_DIR);
}

inline std::string fixture_text(const std::string& rel) {
  return beatpose::read_text_file(fixture_dir() / rel);
}

// Fresh empty directory under the build tree's temp area.
inline std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("beatpose_test_" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline Eigen::Quaterniond random_quat(beatpose::Rng& rng) {
  Eigen::Vector4d v;
  do {
    for (int i = 0; i < 4; ++i) v[i] = rng.uniform(-1.0, 1.0);
  } while (v.norm() < 1e-3);
  v.normalize();
  return Eigen::Quaterniond(v[0], v[1], v[2], v[3]);
}

// Orientation whose facing keeps a clear horizontal component, so the frame
// can serve as a canonicalization anchor.
inline Eigen::Quaterniond random_heading_quat(beatpose::Rng& rng) {
  const double yaw = rng.uniform(-3.1, 3.1);
  const double pitch = rng.uniform(-0.9, 0.9);
  const double roll = rng.uniform(-0.5, 0.5);
  return Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY())) *
         Eigen::Quaterniond(Eigen::AngleAxisd(pitch, Eigen::Vector3d::UnitX())) *
         Eigen::Quaterniond(Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()));
}

inline beatpose::ThreePointPose random_frame(beatpose::Rng& rng, double t) {
  beatpose::ThreePointPose f;
  f.timestamp = t;
  f.head.position = {rng.uniform(-1, 1), rng.uniform(1.4, 1.9), rng.uniform(-1, 1)};
  f.head.orientation = random_heading_quat(rng);
  f.left_hand.position = {rng.uniform(-1, 0.2), rng.uniform(0.7, 1.7), rng.uniform(-0.3, 0.8)};
  f.left_hand.orientation = random_quat(rng);
  f.right_hand.position = {rng.uniform(-0.2, 1), rng.uniform(0.7, 1.7), rng.uniform(-0.3, 0.8)};
  f.right_hand.orientation = random_quat(rng);
  return f;
}

inline beatpose::PoseWindow random_window(beatpose::Rng& rng, int frames,
                                          double rate = 30.0, double t0 = 0.0) {
  beatpose::PoseWindow w;
  for (int i = 0; i < frames; ++i)
    w.frames.push_back(random_frame(rng, t0 + i / rate));
  return w;
}

// Smooth random walk around the play area; hand steps are large enough that
// entry speeds routinely cross 1 m/s at 30 Hz.
inline beatpose::PoseTrace random_trace(beatpose::Rng& rng, int frames,
                                        double rate = 30.0) {
  beatpose::PoseTrace trace;
  trace.rate = rate;
  Eigen::Vector3d head{rng.uniform(-0.3, 0.3), 1.7, rng.uniform(-0.2, 0.2)};
  Eigen::Vector3d lh{-0.4, 1.2, 0.1};
  Eigen::Vector3d rh{0.4, 1.2, 0.1};
  for (int i = 0; i < frames; ++i) {
    beatpose::ThreePointPose f;
    f.timestamp = i / rate;
    for (int a = 0; a < 3; ++a) {
      head[a] += rng.uniform(-0.03, 0.03);
      lh[a] += rng.uniform(-0.12, 0.12);
      rh[a] += rng.uniform(-0.12, 0.12);
    }
    auto pull = [&](Eigen::Vector3d& p, const Eigen::Vector3d& home) {
      p += 0.05 * (home - p);
    };
    pull(head, {0, 1.7, 0});
    pull(lh, {-0.5, 1.2, 0.1});
    pull(rh, {0.5, 1.2, 0.1});
    f.head.position = head;
    f.head.orientation = random_heading_quat(rng);
    f.left_hand.position = lh;
    f.left_hand.orientation = random_quat(rng);
    f.right_hand.position = rh;
    f.right_hand.orientation = random_quat(rng);
    trace.frames.push_back(f);
  }
  return trace;
}

// Events land well inside [margin, song_length - margin] so hit windows and
// wall intervals stay coverable by a trace spanning the song.
inline beatpose::Beatmap random_beatmap(beatpose::Rng& rng, double song_length,
                                        int notes, int bombs, int obstacles) {
  beatpose::Beatmap map;
  map.bpm = 60.0 + 10.0 * rng.below_int(13);
  map.song_length = song_length;
  // Long songs keep events 0.4 s clear of both ends so +/-0.2 s scoring
  // windows stay covered; very short songs shrink the margin instead.
  const double margin = std::min(0.4, song_length / 4.0);
  auto random_time = [&] { return rng.uniform(margin, song_length - margin); };
  for (int i = 0; i < notes; ++i) {
    beatpose::NoteEvent e;
    e.beat = random_time() * map.bpm / 60.0;
    e.column = rng.below_int(4);
    e.row = rng.below_int(3);
    e.color = static_cast<beatpose::NoteColor>(rng.below_int(2));
    e.cut_direction = static_cast<beatpose::CutDirection>(rng.below_int(9));
    map.notes.push_back(e);
  }
  for (int i = 0; i < bombs; ++i) {
    beatpose::BombEvent e;
    e.beat = random_time() * map.bpm / 60.0;
    e.column = rng.below_int(4);
    e.row = rng.below_int(3);
    map.bombs.push_back(e);
  }
  for (int i = 0; i < obstacles; ++i) {
    beatpose::ObstacleEvent e;
    const double start = rng.uniform(margin, song_length - margin - 0.15);
    const double dur =
        rng.uniform(0.1, std::min(1.0, song_length - margin - start));
    e.beat = start * map.bpm / 60.0;
    e.duration = dur * map.bpm / 60.0;
    e.column = rng.below_int(4);
    e.width = 1 + rng.below_int(4 - e.column);
    e.kind = static_cast<beatpose::ObstacleKind>(rng.below_int(2));
    map.obstacles.push_back(e);
  }
  beatpose::sort_events(map);
  return map;
}

// Rigid SE(2) motion applied in the test's own arithmetic, independent of the
// library's anchor code.
struct RigidXZ {
  double yaw = 0.0;
  Eigen::Vector3d shift = Eigen::Vector3d::Zero();  // y component 0

  Eigen::Vector3d point(const Eigen::Vector3d& p) const {
    Eigen::AngleAxisd r(yaw, Eigen::Vector3d::UnitY());
    return r * p + shift;
  }
  beatpose::JointPose joint(const beatpose::JointPose& j) const {
    beatpose::JointPose out;
    out.position = point(j.position);
    out.orientation =
        Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY())) *
        j.orientation;
    return out;
  }
  beatpose::ThreePointPose frame(const beatpose::ThreePointPose& f) const {
    beatpose::ThreePointPose out;
    out.timestamp = f.timestamp;
    out.head = joint(f.head);
    out.left_hand = joint(f.left_hand);
    out.right_hand = joint(f.right_hand);
    return out;
  }
  beatpose::PoseWindow window(const beatpose::PoseWindow& w) const {
    beatpose::PoseWindow out;
    out.canonical = w.canonical;
    for (const auto& f : w.frames) out.frames.push_back(frame(f));
    return out;
  }
  beatpose::PoseTrace trace(const beatpose::PoseTrace& t) const {
    beatpose::PoseTrace out;
    out.rate = t.rate;
    for (const auto& f : t.frames) out.frames.push_back(frame(f));
    return out;
  }
};

inline RigidXZ random_rigid(beatpose::Rng& rng) {
  RigidXZ g;
  g.yaw = rng.uniform(-3.1, 3.1);
  g.shift = {rng.uniform(-5, 5), 0.0, rng.uniform(-5, 5)};
  return g;
}

inline double quat_angle(const Eigen::Quaterniond& a, const Eigen::Quaterniond& b) {
  return a.angularDistance(b);
}

inline double max_window_diff(const beatpose::PoseWindow& a,
                              const beatpose::PoseWindow& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.frames.size(); ++i) {
    const auto& fa = a.frames[i];
    const auto& fb = b.frames[i];
    for (auto [ja, jb] : {std::pair{&fa.head, &fb.head},
                          std::pair{&fa.left_hand, &fb.left_hand},
                          std::pair{&fa.right_hand, &fb.right_hand}}) {
      m = std::max(m, (ja->position - jb->position).norm());
      m = std::max(m, quat_angle(ja->orientation, jb->orientation));
    }
  }
  return m;
}

}  // namespace testutil
