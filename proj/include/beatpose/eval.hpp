// Deterministic geometric scoring of a pose trace against a beatmap, plus
// model-based style and smoothness metrics and a byte-stable report.
//
// Scoring semantics are pinned on a refined grid: the trace is resampled at
// `supersample` times its rate and every predicate is evaluated on those
// samples. A sample lies in a closed time window iff it is within 1e-9 s of
// it. Velocities are central differences of refined positions over refined
// timestamp spans (one-sided at the trace ends). Box and sphere tests are
// strict-inside. Notes use the static cell box at the event-time position;
// obstacles slide toward -z at beam_speed so the wall straddles the player
// plane exactly during its active interval.
#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "beatpose/beatmap.hpp"
#include "beatpose/common.hpp"
#include "beatpose/context.hpp"
#include "beatpose/model.hpp"
#include "beatpose/pose.hpp"

namespace beatpose {

inline constexpr double kTimeEps = 1e-9;

struct ScoringGeometry {
  double hit_window = 0.20;        // seconds each side of the note time
  double cell_half_depth = 0.3;    // half-extent along z of a note's cell box
  double min_hand_speed = 1.0;     // m/s at the entry sample
  double direction_cos_min = 0.5;  // cosine threshold vs required cut direction
  double bomb_radius = 0.15;
  double head_radius = 0.10;
  int supersample = 10;  // refinement factor of the scoring grid
  LaneGeometry lanes;

  void validate() const {
    if (!(hit_window > 0) || !(cell_half_depth > 0) || !(min_hand_speed > 0) ||
        !(bomb_radius > 0) || !(head_radius > 0))
      throw Error(ErrorKind::Config, "scoring thresholds must be positive");
    if (!(direction_cos_min > 0.0) || direction_cos_min > 1.0)
      throw Error(ErrorKind::Config, "direction_cos_min must be in (0, 1]");
    if (supersample < 1)
      throw Error(ErrorKind::Config, "supersample must be >= 1");
  }
};

// Unit swing direction required by a cut direction, in the x/y plane.
inline Eigen::Vector3d cut_direction_vector(CutDirection d) {
  const double s = 1.0 / std::sqrt(2.0);
  switch (d) {
    case CutDirection::Up: return {0, 1, 0};
    case CutDirection::Down: return {0, -1, 0};
    case CutDirection::Left: return {-1, 0, 0};
    case CutDirection::Right: return {1, 0, 0};
    case CutDirection::UpLeft: return {-s, s, 0};
    case CutDirection::UpRight: return {s, s, 0};
    case CutDirection::DownLeft: return {-s, -s, 0};
    case CutDirection::DownRight: return {s, -s, 0};
    case CutDirection::Any: return {0, 0, 0};
  }
  throw Error(ErrorKind::Domain, "unknown cut direction");
}

enum class NoteOutcome { Hit, Miss, WrongDirection, TooSlow };

inline const char* to_string(NoteOutcome o) {
  switch (o) {
    case NoteOutcome::Hit: return "hit";
    case NoteOutcome::Miss: return "miss";
    case NoteOutcome::WrongDirection: return "wrong_direction";
    case NoteOutcome::TooSlow: return "too_slow";
  }
  return "?";
}

struct HitReport {
  std::vector<NoteOutcome> note_outcomes;  // aligned with beatmap note order
  std::vector<double> note_times;          // seconds
  int bomb_touches = 0;
  int obstacle_collisions = 0;
  double hit_rate = 0.0;
  double jerk = 0.0;
  std::optional<double> style_distance;
};

namespace detail {

enum class Joint { Head, LeftHand, RightHand };

inline const Eigen::Vector3d& joint_position(const ThreePointPose& f, Joint j) {
  switch (j) {
    case Joint::Head: return f.head.position;
    case Joint::LeftHand: return f.left_hand.position;
    default: return f.right_hand.position;
  }
}

inline Eigen::Vector3d sample_velocity(const std::vector<ThreePointPose>& fr,
                                       std::size_t k, Joint j) {
  const std::size_t last = fr.size() - 1;
  const std::size_t lo = k == 0 ? 0 : k - 1;
  const std::size_t hi = k == last ? last : k + 1;
  const double span = fr[hi].timestamp - fr[lo].timestamp;
  return (joint_position(fr[hi], j) - joint_position(fr[lo], j)) / span;
}

// Indices of refined samples inside [t_lo, t_hi] (closed, 1e-9 slack).
inline std::pair<std::size_t, std::size_t> window_samples(
    const std::vector<ThreePointPose>& fr, double t_lo, double t_hi) {
  std::size_t first = fr.size(), past = 0;
  for (std::size_t k = 0; k < fr.size(); ++k) {
    if (fr[k].timestamp >= t_lo - kTimeEps && fr[k].timestamp <= t_hi + kTimeEps) {
      if (first == fr.size()) first = k;
      past = k + 1;
    }
  }
  return {first, past};
}

inline void require_coverage(const PoseTrace& trace, const std::vector<double>& lo,
                             const std::vector<double>& hi, const char* category) {
  std::string bad;
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (lo[i] < trace.frames.front().timestamp - kTimeEps ||
        hi[i] > trace.frames.back().timestamp + kTimeEps) {
      if (!bad.empty()) bad += ",";
      bad += std::to_string(i);
    }
  }
  if (!bad.empty())
    throw Error(ErrorKind::Coverage,
                std::string("trace does not cover all ") + category + " windows",
                {{"category", category}, {"indices", bad}});
}

inline bool inside_box(const Eigen::Vector3d& p, const Eigen::Vector3d& min_corner,
                       const Eigen::Vector3d& max_corner) {
  return p.x() > min_corner.x() && p.x() < max_corner.x() &&
         p.y() > min_corner.y() && p.y() < max_corner.y() &&
         p.z() > min_corner.z() && p.z() < max_corner.z();
}

}  // namespace detail

// Per-note outcomes. A note is Hit iff within +/- hit_window of its time the
// matching hand (Left color -> left hand) enters the static cell box with
// speed >= min_hand_speed and swing-direction cosine >= direction_cos_min at
// the entry sample (direction waived for Any). Entry = strictly inside now
// and not at the previous in-window sample (the window's first sample counts
// as an entry if already inside). Precedence over all entries:
// Hit > WrongDirection > TooSlow > Miss.
inline std::vector<NoteOutcome> score_hits(const PoseTrace& trace, const Beatmap& map,
                                           const ScoringGeometry& geom) {
  geom.validate();
  if (trace.frames.size() < 2)
    throw Error(ErrorKind::Domain, "score_hits: trace needs at least 2 frames");
  std::vector<double> lo, hi;
  for (const NoteEvent& e : map.notes) {
    const double t = beats_to_seconds(e.beat, map.bpm);
    lo.push_back(t - geom.hit_window);
    hi.push_back(t + geom.hit_window);
  }
  detail::require_coverage(trace, lo, hi, "notes");

  const PoseTrace refined = resample(trace, trace.rate * geom.supersample);
  const auto& fr = refined.frames;
  const Eigen::Vector3d half{geom.lanes.cell_width / 2, geom.lanes.cell_height / 2,
                             geom.cell_half_depth};

  std::vector<NoteOutcome> out;
  out.reserve(map.notes.size());
  for (std::size_t i = 0; i < map.notes.size(); ++i) {
    const NoteEvent& e = map.notes[i];
    const Eigen::Vector3d center = geom.lanes.cell_center(e.column, e.row);
    const detail::Joint hand = e.color == NoteColor::Left ? detail::Joint::LeftHand
                                                          : detail::Joint::RightHand;
    const auto [first, past] = detail::window_samples(fr, lo[i], hi[i]);
    bool hit = false, wrong = false, slow = false;
    bool prev_inside = false;
    for (std::size_t k = first; k < past; ++k) {
      const Eigen::Vector3d p = detail::joint_position(fr[k], hand);
      const bool inside = detail::inside_box(p, center - half, center + half);
      const bool entry = inside && (k == first || !prev_inside);
      prev_inside = inside;
      if (!entry) continue;
      const Eigen::Vector3d v = detail::sample_velocity(fr, k, hand);
      if (v.norm() >= geom.min_hand_speed) {
        if (e.cut_direction == CutDirection::Any ||
            v.dot(cut_direction_vector(e.cut_direction)) / v.norm() >=
                geom.direction_cos_min)
          hit = true;
        else
          wrong = true;
      } else {
        slow = true;
      }
    }
    out.push_back(hit ? NoteOutcome::Hit
                      : wrong ? NoteOutcome::WrongDirection
                              : slow ? NoteOutcome::TooSlow : NoteOutcome::Miss);
  }
  return out;
}

// A bomb is touched iff either hand comes strictly within bomb_radius of its
// cell center during +/- hit_window. Each bomb counts at most once.
inline int check_bombs(const PoseTrace& trace, const Beatmap& map,
                       const ScoringGeometry& geom) {
  geom.validate();
  if (trace.frames.size() < 2)
    throw Error(ErrorKind::Domain, "check_bombs: trace needs at least 2 frames");
  std::vector<double> lo, hi;
  for (const BombEvent& e : map.bombs) {
    const double t = beats_to_seconds(e.beat, map.bpm);
    lo.push_back(t - geom.hit_window);
    hi.push_back(t + geom.hit_window);
  }
  detail::require_coverage(trace, lo, hi, "bombs");

  const PoseTrace refined = resample(trace, trace.rate * geom.supersample);
  const auto& fr = refined.frames;
  const double r2 = geom.bomb_radius * geom.bomb_radius;

  int touched = 0;
  for (std::size_t i = 0; i < map.bombs.size(); ++i) {
    const Eigen::Vector3d center =
        geom.lanes.cell_center(map.bombs[i].column, map.bombs[i].row);
    const auto [first, past] = detail::window_samples(fr, lo[i], hi[i]);
    bool any = false;
    for (std::size_t k = first; k < past && !any; ++k)
      any = (detail::joint_position(fr[k], detail::Joint::LeftHand) - center)
                    .squaredNorm() < r2 ||
            (detail::joint_position(fr[k], detail::Joint::RightHand) - center)
                    .squaredNorm() < r2;
    touched += any ? 1 : 0;
  }
  return touched;
}

// An obstacle collides iff the head sphere strictly intersects the wall box
// at some sample of the active interval [start, start + duration]. The box
// slides toward -z at beam_speed: its front face crosses z_spawn at `start`
// and its tail clears it at `start + duration`.
inline int check_obstacles(const PoseTrace& trace, const Beatmap& map,
                           const ScoringGeometry& geom) {
  geom.validate();
  if (trace.frames.size() < 2)
    throw Error(ErrorKind::Domain, "check_obstacles: trace needs at least 2 frames");
  std::vector<double> lo, hi, durs;
  for (const ObstacleEvent& e : map.obstacles) {
    const double start = beats_to_seconds(e.beat, map.bpm);
    const double dur = beats_to_seconds(e.duration, map.bpm);
    lo.push_back(start);
    hi.push_back(start + dur);
    durs.push_back(dur);
  }
  detail::require_coverage(trace, lo, hi, "obstacles");

  const PoseTrace refined = resample(trace, trace.rate * geom.supersample);
  const auto& fr = refined.frames;
  const double r2 = geom.head_radius * geom.head_radius;

  int collisions = 0;
  for (std::size_t i = 0; i < map.obstacles.size(); ++i) {
    Eigen::Vector3d min_corner, extent;
    geom.lanes.obstacle_box(map.obstacles[i], durs[i], min_corner, extent);
    const auto [first, past] = detail::window_samples(fr, lo[i], hi[i]);
    bool any = false;
    for (std::size_t k = first; k < past && !any; ++k) {
      const double z_min =
          geom.lanes.z_spawn - geom.lanes.beam_speed * (fr[k].timestamp - lo[i]);
      const Eigen::Vector3d bmin{min_corner.x(), min_corner.y(), z_min};
      const Eigen::Vector3d bmax = bmin + extent;
      const Eigen::Vector3d& p = detail::joint_position(fr[k], detail::Joint::Head);
      const Eigen::Vector3d closest = p.cwiseMax(bmin).cwiseMin(bmax);
      any = (p - closest).squaredNorm() < r2;
    }
    collisions += any ? 1 : 0;
  }
  return collisions;
}

// Mean over non-overlapping T-frame windows of the squared latent distance
// between the window's style encoding and the references' pooled latent.
// Each trace window is canonicalized independently, like the references.
inline double style_distance(const PoseTrace& trace, const StyleReferenceSet& refs,
                             const ModelParams<double>& params) {
  const int T = params.dims.T;
  const std::size_t F = trace.frames.size();
  if (static_cast<int>(F) < T)
    throw Error(ErrorKind::Domain, "style_distance: trace shorter than T frames");
  if (refs.refs.empty())
    throw Error(ErrorKind::Domain, "style_distance: empty reference set");

  std::vector<Eigen::MatrixXd> ref_feats;
  ref_feats.reserve(refs.refs.size());
  for (const PoseWindow& r : refs.refs) ref_feats.push_back(window_features(r));
  const Eigen::VectorXd z_ref = encode_style(params, ref_feats);

  const std::size_t count = F / static_cast<std::size_t>(T);
  double sum = 0.0;
  for (std::size_t w = 0; w < count; ++w) {
    PoseWindow slice;
    slice.canonical = false;
    slice.frames.assign(trace.frames.begin() + static_cast<std::ptrdiff_t>(w) * T,
                        trace.frames.begin() + static_cast<std::ptrdiff_t>(w + 1) * T);
    auto [canonical, anchor] = canonicalize_window(slice);
    const Eigen::VectorXd z = encode_style_window(params, window_features(canonical));
    sum += (z - z_ref).squaredNorm();
  }
  return sum / static_cast<double>(count);
}

// Full evaluation. Style distance is reported only when a checkpoint and
// reference set are supplied and the trace is long enough.
inline HitReport evaluate(const PoseTrace& trace, const Beatmap& map,
                          const ScoringGeometry& geom,
                          const ModelParams<double>* params = nullptr,
                          const StyleReferenceSet* refs = nullptr) {
  HitReport r;
  r.note_outcomes = score_hits(trace, map, geom);
  for (const NoteEvent& e : map.notes)
    r.note_times.push_back(beats_to_seconds(e.beat, map.bpm));
  r.bomb_touches = check_bombs(trace, map, geom);
  r.obstacle_collisions = check_obstacles(trace, map, geom);
  const auto hits = static_cast<double>(
      std::count(r.note_outcomes.begin(), r.note_outcomes.end(), NoteOutcome::Hit));
  r.hit_rate = hits / std::max<double>(1.0, static_cast<double>(map.notes.size()));
  r.jerk = trace.frames.size() >= 4 ? jerk_metric(trace) : 0.0;
  if (params && refs && static_cast<int>(trace.frames.size()) >= params->dims.T)
    r.style_distance = style_distance(trace, *refs, *params);
  return r;
}

// ---------------------------------------------------------------------------
// Report emission.

namespace detail {

inline std::string fmt2(double v) {
  std::array<char, 64> buf{};
  auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v,
                           std::chars_format::fixed, 2);
  return std::string(buf.data(), res.ptr);
}

struct Svg {
  std::string body;
  double width, height;

  Svg(double w, double h) : width(w), height(h) {
    body += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt2(w) +
            "\" height=\"" + fmt2(h) + "\" viewBox=\"0 0 " + fmt2(w) + " " +
            fmt2(h) + "\">\n";
    body += "<rect width=\"" + fmt2(w) + "\" height=\"" + fmt2(h) +
            "\" fill=\"#ffffff\"/>\n";
  }
  void line(double x1, double y1, double x2, double y2, const char* color) {
    body += "<line x1=\"" + fmt2(x1) + "\" y1=\"" + fmt2(y1) + "\" x2=\"" + fmt2(x2) +
            "\" y2=\"" + fmt2(y2) + "\" stroke=\"" + color + "\" stroke-width=\"1\"/>\n";
  }
  void circle(double cx, double cy, double r, const char* color) {
    body += "<circle cx=\"" + fmt2(cx) + "\" cy=\"" + fmt2(cy) + "\" r=\"" + fmt2(r) +
            "\" fill=\"" + color + "\"/>\n";
  }
  void rect(double x, double y, double w, double h, const char* color) {
    body += "<rect x=\"" + fmt2(x) + "\" y=\"" + fmt2(y) + "\" width=\"" + fmt2(w) +
            "\" height=\"" + fmt2(h) + "\" fill=\"" + color + "\"/>\n";
  }
  void text(double x, double y, const std::string& s, int size = 12) {
    body += "<text x=\"" + fmt2(x) + "\" y=\"" + fmt2(y) +
            "\" font-family=\"monospace\" font-size=\"" + std::to_string(size) +
            "\" fill=\"#222222\">" + s + "</text>\n";
  }
  void polyline(const std::vector<std::pair<double, double>>& pts, const char* color) {
    if (pts.empty()) return;
    body += "<polyline fill=\"none\" stroke=\"";
    body += color;
    body += "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (i) body += " ";
      body += fmt2(pts[i].first) + "," + fmt2(pts[i].second);
    }
    body += "\"/>\n";
  }
  std::string finish() const { return body + "</svg>\n"; }
};

inline const char* outcome_color(NoteOutcome o) {
  switch (o) {
    case NoteOutcome::Hit: return "#2a9d42";
    case NoteOutcome::Miss: return "#c43333";
    case NoteOutcome::WrongDirection: return "#d98324";
    case NoteOutcome::TooSlow: return "#3471c4";
  }
  return "#000000";
}

}  // namespace detail

// Per-second jerk samples (chunk start time, jerk) for the timeline plot.
inline std::vector<std::pair<double, double>> jerk_timeline(const PoseTrace& trace) {
  std::vector<std::pair<double, double>> out;
  const std::size_t chunk = std::max<std::size_t>(
      4, static_cast<std::size_t>(std::lround(trace.rate)));
  for (std::size_t start = 0; start + chunk <= trace.frames.size(); start += chunk) {
    PoseTrace slice;
    slice.rate = trace.rate;
    slice.frames.assign(trace.frames.begin() + static_cast<std::ptrdiff_t>(start),
                        trace.frames.begin() + static_cast<std::ptrdiff_t>(start + chunk));
    out.emplace_back(slice.frames.front().timestamp, jerk_metric(slice));
  }
  return out;
}

inline nlohmann::json report_json(const HitReport& r, const ScoringGeometry& geom,
                                  const nlohmann::json& inputs) {
  int hit = 0, miss = 0, wrong = 0, slow = 0;
  for (NoteOutcome o : r.note_outcomes) {
    switch (o) {
      case NoteOutcome::Hit: ++hit; break;
      case NoteOutcome::Miss: ++miss; break;
      case NoteOutcome::WrongDirection: ++wrong; break;
      case NoteOutcome::TooSlow: ++slow; break;
    }
  }
  nlohmann::json j;
  j["hit_rate"] = r.hit_rate;
  j["outcomes"] = {{"hit", hit}, {"miss", miss}, {"wrong_direction", wrong},
                   {"too_slow", slow}};
  j["bomb_touches"] = r.bomb_touches;
  j["obstacle_collisions"] = r.obstacle_collisions;
  j["jerk"] = r.jerk;
  if (r.style_distance)
    j["style_distance"] = *r.style_distance;
  else
    j["style_distance"] = nullptr;
  j["config"] = {
      {"hit_window", geom.hit_window},
      {"cell_half_depth", geom.cell_half_depth},
      {"min_hand_speed", geom.min_hand_speed},
      {"direction_cos_min", geom.direction_cos_min},
      {"bomb_radius", geom.bomb_radius},
      {"head_radius", geom.head_radius},
      {"supersample", geom.supersample},
      {"lanes",
       {{"column_x", geom.lanes.column_x},
        {"row_y", geom.lanes.row_y},
        {"cell_width", geom.lanes.cell_width},
        {"cell_height", geom.lanes.cell_height},
        {"z_spawn", geom.lanes.z_spawn},
        {"beam_speed", geom.lanes.beam_speed}}},
  };
  j["inputs"] = inputs;
  j["note"] = "self-contained geometric proxy; thresholds above define the "
              "scoring rule and make no claim of parity with any game";
  return j;
}

// Writes report.json plus hit_timeline.svg, outcome_histogram.svg, and
// jerk_timeline.svg under out_dir. JSON is canonical (sorted keys, fixed
// indent), so identical inputs give identical bytes.
inline nlohmann::json emit_report(const HitReport& r, const PoseTrace& trace,
                                  const ScoringGeometry& geom,
                                  const nlohmann::json& inputs,
                                  const std::filesystem::path& out_dir) {
  const nlohmann::json j = report_json(r, geom, inputs);
  write_text_file(out_dir / "report.json", j.dump(2) + "\n");

  {  // note timeline colored by outcome
    detail::Svg svg(640, 200);
    svg.text(10, 20, "note outcomes over time (s)");
    svg.line(40, 160, 620, 160, "#888888");
    double t_max = 1.0;
    for (double t : r.note_times) t_max = std::max(t_max, t);
    for (std::size_t i = 0; i < r.note_times.size(); ++i) {
      const double x = 40 + (r.note_times[i] / t_max) * 560;
      svg.circle(x, 120, 5, detail::outcome_color(r.note_outcomes[i]));
    }
    svg.text(40, 180, "0");
    svg.text(580, 180, detail::fmt2(t_max));
    write_text_file(out_dir / "hit_timeline.svg", svg.finish());
  }

  {  // outcome histogram
    const std::array<std::pair<NoteOutcome, int>, 4> counts = {{
        {NoteOutcome::Hit,
         static_cast<int>(std::count(r.note_outcomes.begin(), r.note_outcomes.end(),
                                     NoteOutcome::Hit))},
        {NoteOutcome::Miss,
         static_cast<int>(std::count(r.note_outcomes.begin(), r.note_outcomes.end(),
                                     NoteOutcome::Miss))},
        {NoteOutcome::WrongDirection,
         static_cast<int>(std::count(r.note_outcomes.begin(), r.note_outcomes.end(),
                                     NoteOutcome::WrongDirection))},
        {NoteOutcome::TooSlow,
         static_cast<int>(std::count(r.note_outcomes.begin(), r.note_outcomes.end(),
                                     NoteOutcome::TooSlow))},
    }};
    int top = 1;
    for (const auto& [o, c] : counts) top = std::max(top, c);
    detail::Svg svg(640, 240);
    svg.text(10, 20, "note outcomes");
    for (std::size_t i = 0; i < counts.size(); ++i) {
      const double height = 160.0 * counts[i].second / top;
      const double x = 60 + static_cast<double>(i) * 140;
      svg.rect(x, 200 - height, 100, height, detail::outcome_color(counts[i].first));
      svg.text(x, 220, to_string(counts[i].first));
      svg.text(x, 196 - height, std::to_string(counts[i].second));
    }
    write_text_file(out_dir / "outcome_histogram.svg", svg.finish());
  }

  {  // jerk over time
    const auto pts = jerk_timeline(trace);
    detail::Svg svg(640, 200);
    svg.text(10, 20, "jerk (m/s^3) per second");
    svg.line(40, 160, 620, 160, "#888888");
    if (!pts.empty()) {
      double t_max = 1.0, j_max = 1e-9;
      for (const auto& [t, v] : pts) {
        t_max = std::max(t_max, t);
        j_max = std::max(j_max, v);
      }
      std::vector<std::pair<double, double>> scaled;
      scaled.reserve(pts.size());
      for (const auto& [t, v] : pts)
        scaled.emplace_back(40 + (t / t_max) * 560, 160 - (v / j_max) * 120);
      svg.polyline(scaled, "#3471c4");
      svg.text(40, 180, "0");
      svg.text(580, 180, detail::fmt2(t_max));
      svg.text(10, 44, detail::fmt2(j_max));
    }
    write_text_file(out_dir / "jerk_timeline.svg", svg.finish());
  }
  return j;
}

}  // namespace beatpose
