// Game context assembly: the n nearest upcoming notes, bombs, and obstacles
// as fixed-size featurized sets, plus aligned training windows.
//
// Lane geometry (defaults, overridable): column centers x in {-0.9,-0.3,0.3,0.9},
// row centers y in {0.8,1.2,1.6}, cells 0.6 x 0.4 m. Events arrive at the
// z = z_spawn plane at their resolved time; obstacles extend in depth by
// duration * beam_speed.
#pragma once

#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "beatpose/beatmap.hpp"
#include "beatpose/common.hpp"
#include "beatpose/pose.hpp"

namespace beatpose {

struct LaneGeometry {
  std::array<double, 4> column_x{-0.9, -0.3, 0.3, 0.9};
  std::array<double, 3> row_y{0.8, 1.2, 1.6};
  double cell_width = 0.6;
  double cell_height = 0.4;
  double z_spawn = 0.0;
  double beam_speed = 4.0;     // m/s, obstacle depth per second of duration
  double full_wall_height = 2.0;
  double crouch_wall_bottom = 1.2;
  double crouch_wall_height = 0.8;

  Eigen::Vector3d cell_center(int column, int row) const {
    return {column_x[static_cast<std::size_t>(column)],
            row_y[static_cast<std::size_t>(row)], z_spawn};
  }

  // World-frame axis-aligned wall box at spawn depth.
  void obstacle_box(const ObstacleEvent& e, double duration_seconds,
                    Eigen::Vector3d& min_corner, Eigen::Vector3d& extent) const {
    const double x0 = column_x[static_cast<std::size_t>(e.column)] - 0.5 * cell_width;
    const bool crouch = e.kind == ObstacleKind::Crouch;
    min_corner = {x0, crouch ? crouch_wall_bottom : 0.0, z_spawn};
    extent = {cell_width * e.width,
              crouch ? crouch_wall_height : full_wall_height,
              duration_seconds * beam_speed};
  }
};

inline constexpr int kNoteFeatureDim = 15;      // tte, xyz, color(2), cut(9)
inline constexpr int kBombFeatureDim = 4;       // tte, xyz
inline constexpr int kObstacleFeatureDim = 8;   // tte, duration, min xyz, extent xyz

// Fixed-size featurized event sets at one query time. Rows are sorted
// ascending by time-to-event; rows past the populated count are zero with
// mask 0, so they contribute nothing downstream.
struct GameContext {
  double query_time = 0.0;
  Eigen::MatrixXd notes;          // n x 15
  Eigen::VectorXd note_mask;      // n, {0,1}
  Eigen::MatrixXd bombs;          // n x 4
  Eigen::VectorXd bomb_mask;
  Eigen::MatrixXd obstacles;      // n x 8
  Eigen::VectorXd obstacle_mask;
};

// Window/context sizing shared across dataset, model, and rollout. h is the
// history length minus the anchor frame (history windows hold h+1 frames),
// T the future length in frames.
struct WindowConfig {
  int h = 15;
  int T = 30;
  int n = 4;
  int n_ref = 4;
  double horizon = 2.0;  // seconds
};

// Per-performer exemplar windows whose pooled latent conditions generation.
struct StyleReferenceSet {
  std::vector<PoseWindow> refs;  // n_ref windows, T frames each, canonical
};

struct TrainingExample {
  PoseWindow history;  // canonical, h+1 frames
  PoseWindow future;   // canonical in the same anchor frame, T frames
  GameContext context;
  StyleReferenceSet style_refs;
  AnchorTransform anchor;
};

// ---------------------------------------------------------------------------
// Featurization. Event positions are re-expressed in the anchor's canonical
// frame; time-to-event stays in seconds.

inline Eigen::RowVectorXd featurize_note(const NoteEvent& e, double event_time,
                                         double query_time,
                                         const AnchorTransform& anchor,
                                         const LaneGeometry& geom) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(kNoteFeatureDim);
  row(0) = event_time - query_time;
  const Eigen::Vector3d p =
      point_to_canonical(geom.cell_center(e.column, e.row), anchor);
  row.segment<3>(1) = p.transpose();
  row(4 + static_cast<int>(e.color)) = 1.0;
  row(6 + static_cast<int>(e.cut_direction)) = 1.0;
  return row;
}

inline Eigen::RowVectorXd featurize_bomb(const BombEvent& e, double event_time,
                                         double query_time,
                                         const AnchorTransform& anchor,
                                         const LaneGeometry& geom) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(kBombFeatureDim);
  row(0) = event_time - query_time;
  const Eigen::Vector3d p =
      point_to_canonical(geom.cell_center(e.column, e.row), anchor);
  row.segment<3>(1) = p.transpose();
  return row;
}

// time-to-start is clamped to 0 for already-active walls.
inline Eigen::RowVectorXd featurize_obstacle(const ObstacleEvent& e,
                                             double start_time,
                                             double duration_seconds,
                                             double query_time,
                                             const AnchorTransform& anchor,
                                             const LaneGeometry& geom) {
  Eigen::RowVectorXd row = Eigen::RowVectorXd::Zero(kObstacleFeatureDim);
  row(0) = std::max(0.0, start_time - query_time);
  row(1) = duration_seconds;
  Eigen::Vector3d min_corner, extent;
  geom.obstacle_box(e, duration_seconds, min_corner, extent);
  row.segment<3>(2) = point_to_canonical(min_corner, anchor).transpose();
  row.segment<3>(5) = extent.transpose();
  return row;
}

// ---------------------------------------------------------------------------
// Context assembly.

// For notes and bombs: the first n events resolving in [t, t+horizon].
// Obstacles additionally include walls already active at t (time-to-start 0).
// Events come out ascending by time-to-event.
inline GameContext upcoming_events(const Beatmap& map, double t, int n,
                                   double horizon,
                                   const LaneGeometry& geom = {},
                                   const AnchorTransform& anchor = {}) {
  if (n < 1) throw Error(ErrorKind::Domain, "upcoming_events: n must be >= 1");
  if (!(horizon > 0.0))
    throw Error(ErrorKind::Domain, "upcoming_events: horizon must be positive");

  GameContext ctx;
  ctx.query_time = t;
  ctx.notes = Eigen::MatrixXd::Zero(n, kNoteFeatureDim);
  ctx.note_mask = Eigen::VectorXd::Zero(n);
  ctx.bombs = Eigen::MatrixXd::Zero(n, kBombFeatureDim);
  ctx.bomb_mask = Eigen::VectorXd::Zero(n);
  ctx.obstacles = Eigen::MatrixXd::Zero(n, kObstacleFeatureDim);
  ctx.obstacle_mask = Eigen::VectorXd::Zero(n);

  int filled = 0;
  for (const NoteEvent& e : map.notes) {
    if (filled == n) break;
    const double te = beats_to_seconds(e.beat, map.bpm);
    if (te < t) continue;
    if (te > t + horizon) break;  // sorted, nothing closer follows
    ctx.notes.row(filled) = featurize_note(e, te, t, anchor, geom);
    ctx.note_mask(filled) = 1.0;
    ++filled;
  }

  filled = 0;
  for (const BombEvent& e : map.bombs) {
    if (filled == n) break;
    const double te = beats_to_seconds(e.beat, map.bpm);
    if (te < t) continue;
    if (te > t + horizon) break;
    ctx.bombs.row(filled) = featurize_bomb(e, te, t, anchor, geom);
    ctx.bomb_mask(filled) = 1.0;
    ++filled;
  }

  filled = 0;
  for (const ObstacleEvent& e : map.obstacles) {
    if (filled == n) break;
    const double start = beats_to_seconds(e.beat, map.bpm);
    const double dur = beats_to_seconds(e.duration, map.bpm);
    const bool active = start <= t && t <= start + dur;
    const bool upcoming = start >= t && start <= t + horizon;
    if (!(active || upcoming)) continue;
    if (start > t + horizon) break;
    ctx.obstacles.row(filled) = featurize_obstacle(e, start, dur, t, anchor, geom);
    ctx.obstacle_mask(filled) = 1.0;
    ++filled;
  }

  return ctx;
}

// ---------------------------------------------------------------------------
// Training windows.

// Cuts the history/future windows anchored at frame index `i` of a
// uniform-rate trace: history = frames [i-h, i], future = frames [i+1, i+T].
// Both are canonicalized with the single anchor taken from frame i, and the
// context is expressed in that same canonical frame.
inline TrainingExample build_training_window(const PoseTrace& trace,
                                             const Beatmap& map,
                                             std::size_t i,
                                             const WindowConfig& cfg,
                                             const LaneGeometry& geom,
                                             StyleReferenceSet style_refs) {
  const std::size_t frames = trace.frames.size();
  const std::size_t h = static_cast<std::size_t>(cfg.h);
  const std::size_t T = static_cast<std::size_t>(cfg.T);
  if (i < h || i + T >= frames)
    throw Error(ErrorKind::Window,
                "frame " + std::to_string(i) + " does not admit " +
                    std::to_string(cfg.h) + " history and " +
                    std::to_string(cfg.T) + " future frames",
                {{"frame", std::to_string(i)}});

  PoseWindow history;
  history.frames.assign(trace.frames.begin() + static_cast<std::ptrdiff_t>(i - h),
                        trace.frames.begin() + static_cast<std::ptrdiff_t>(i + 1));
  PoseWindow future;
  future.frames.assign(trace.frames.begin() + static_cast<std::ptrdiff_t>(i + 1),
                       trace.frames.begin() + static_cast<std::ptrdiff_t>(i + 1 + T));

  TrainingExample ex;
  auto [canon_history, anchor] = canonicalize_window(history);
  ex.history = std::move(canon_history);
  ex.anchor = anchor;
  ex.future = window_to_canonical(future, anchor);
  ex.context = upcoming_events(map, trace.frames[i].timestamp, cfg.n, cfg.horizon,
                               geom, anchor);
  ex.style_refs = std::move(style_refs);
  return ex;
}

// Seconds-based overload; t must sit on the frame grid (within 1e-6 s).
inline TrainingExample build_training_window(const PoseTrace& trace,
                                             const Beatmap& map, double t,
                                             const WindowConfig& cfg,
                                             const LaneGeometry& geom,
                                             StyleReferenceSet style_refs) {
  for (std::size_t i = 0; i < trace.frames.size(); ++i) {
    if (std::abs(trace.frames[i].timestamp - t) <= 1e-6)
      return build_training_window(trace, map, i, cfg, geom, std::move(style_refs));
  }
  throw Error(ErrorKind::Window,
              "query time " + std::to_string(t) + " is not on the frame grid");
}

// ---------------------------------------------------------------------------
// Style references.

// Samples n_ref non-overlapping T-frame windows uniformly at random among all
// valid placements, then canonicalizes each window independently. The same
// seed always yields the same selection.
inline StyleReferenceSet select_style_references(const PoseTrace& donor,
                                                 int n_ref, int T,
                                                 std::uint64_t seed) {
  if (n_ref < 1) throw Error(ErrorKind::Domain, "n_ref must be >= 1");
  if (T < 1) throw Error(ErrorKind::Domain, "T must be >= 1");
  const std::size_t frames = donor.frames.size();
  const std::size_t need = static_cast<std::size_t>(n_ref) * static_cast<std::size_t>(T);
  if (need > frames)
    throw Error(ErrorKind::Capacity,
                "donor has " + std::to_string(frames) + " frames; " +
                    std::to_string(n_ref) + " disjoint windows of " +
                    std::to_string(T) + " need " + std::to_string(need),
                {{"frames", std::to_string(frames)}});

  // Disjoint placements biject onto sorted k-subsets of [0, slack + k):
  // picks[j] - j gives the j-th inter-window gap offset, and adding j*T
  // spaces the window starts back out.
  const std::size_t k = static_cast<std::size_t>(n_ref);
  const std::size_t slack = frames - need;
  Rng rng(seed);
  std::vector<std::size_t> picks = rng.sample_sorted(k, slack + k);

  StyleReferenceSet out;
  out.refs.reserve(k);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t start = picks[j] - j + j * static_cast<std::size_t>(T);
    PoseWindow w;
    w.frames.assign(donor.frames.begin() + static_cast<std::ptrdiff_t>(start),
                    donor.frames.begin() + static_cast<std::ptrdiff_t>(start + static_cast<std::size_t>(T)));
    out.refs.push_back(canonicalize_window(w).first);
  }
  return out;
}

}  // namespace beatpose
