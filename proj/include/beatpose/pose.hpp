// 3-point pose sequences: head and both hands as rigid transforms.
//
// Conventions, used everywhere: +y is up, +z is forward, units are meters,
// quaternions are wxyz and unit norm. The canonical frame of a window anchors
// the LAST frame's head: horizontal position at the origin, facing projected
// onto +z. Orientation features for models use the 6D representation (first
// two rotation-matrix columns); quaternions live only at I/O boundaries.
#pragma once

#include <array>
#include <charconv>
#include <cmath>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include "beatpose/common.hpp"

namespace beatpose {

struct JointPose {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  Eigen::Quaterniond orientation = Eigen::Quaterniond::Identity();
};

struct ThreePointPose {
  double timestamp = 0.0;  // seconds
  JointPose head;
  JointPose left_hand;
  JointPose right_hand;
};

struct PoseTrace {
  std::vector<ThreePointPose> frames;
  double rate = 0.0;  // Hz; valid once the trace is on a uniform grid
};

// Fixed-length run of consecutive poses. History windows have h+1 frames,
// future windows T frames.
struct PoseWindow {
  std::vector<ThreePointPose> frames;
  bool canonical = false;
};

// Rigid SE(2) anchor: the canonical->world map. world = R_y(yaw) * p + t,
// with t = (x, 0, z).
struct AnchorTransform {
  double yaw = 0.0;  // radians about +y
  Eigen::Vector2d translation_xz = Eigen::Vector2d::Zero();
};

inline constexpr double kQuatDriftTolerance = 1e-2;  // accepted recording drift
inline constexpr double kDegenerateFacingTol = 1e-6;
inline constexpr double kCollinearTol = 1e-8;

// ---------------------------------------------------------------------------
// Quaternion interpolation.

// Shortest-path slerp. q1 is sign-flipped if needed so dot(q0, q1) >= 0;
// below 1e-6 rad the geodesic is replaced by normalized lerp.
inline Eigen::Quaterniond slerp(const Eigen::Quaterniond& q0,
                                const Eigen::Quaterniond& q1, double u) {
  if (u <= 0.0) return q0;
  if (u >= 1.0 && q0.coeffs().dot(q1.coeffs()) >= 0.0) return q1;
  Eigen::Vector4d a = q0.coeffs();
  Eigen::Vector4d b = q1.coeffs();
  double dot = a.dot(b);
  if (dot < 0.0) {
    b = -b;
    dot = -dot;
  }
  dot = std::min(dot, 1.0);
  const double angle = std::acos(dot);
  Eigen::Vector4d mix;
  if (angle < 1e-6) {
    mix = a + u * (b - a);
  } else {
    const double s = std::sin(angle);
    mix = (std::sin((1.0 - u) * angle) / s) * a + (std::sin(u * angle) / s) * b;
  }
  mix.normalize();
  return Eigen::Quaterniond(mix);
}

// ---------------------------------------------------------------------------
// 6D rotation representation.

// First two columns of the rotation matrix.
inline std::array<double, 6> rotation_to_6d(const Eigen::Quaterniond& q) {
  const Eigen::Matrix3d r = q.toRotationMatrix();
  return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

// Gram-Schmidt the two halves back into an orthonormal basis and rebuild the
// quaternion. Throws on (near-)collinear halves.
inline Eigen::Quaterniond rotation_from_6d(const std::array<double, 6>& v) {
  Eigen::Vector3d u1(v[0], v[1], v[2]);
  Eigen::Vector3d u2(v[3], v[4], v[5]);
  const double n1 = u1.norm();
  if (n1 < kCollinearTol)
    throw Error(ErrorKind::Domain, "rotation_from_6d: first half is near zero",
                {{"reason", "degenerate"}});
  const Eigen::Vector3d b1 = u1 / n1;
  const Eigen::Vector3d w2 = u2 - b1.dot(u2) * b1;
  const double n2 = w2.norm();
  if (n2 < kCollinearTol)
    throw Error(ErrorKind::Domain, "rotation_from_6d: halves are collinear",
                {{"reason", "degenerate"}});
  const Eigen::Vector3d b2 = w2 / n2;
  const Eigen::Vector3d b3 = b1.cross(b2);
  Eigen::Matrix3d r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b3;
  Eigen::Quaterniond q(r);
  q.normalize();
  return q;
}

// ---------------------------------------------------------------------------
// Anchors and canonicalization.

inline Eigen::Quaterniond yaw_quaternion(double yaw) {
  return Eigen::Quaterniond(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()));
}

// Heading of an orientation: its +z axis projected to the horizontal plane.
// Throws when the facing is vertical within tolerance.
inline double heading_yaw(const Eigen::Quaterniond& q) {
  const Eigen::Vector3d f = q * Eigen::Vector3d::UnitZ();
  const double horizontal = std::sqrt(f.x() * f.x() + f.z() * f.z());
  if (horizontal < kDegenerateFacingTol)
    throw Error(ErrorKind::Domain,
                "head facing is vertical; canonical yaw undefined",
                {{"reason", "degenerate_facing"}});
  return std::atan2(f.x(), f.z());
}

inline AnchorTransform anchor_of(const ThreePointPose& frame) {
  AnchorTransform a;
  a.yaw = heading_yaw(frame.head.orientation);
  a.translation_xz = Eigen::Vector2d(frame.head.position.x(), frame.head.position.z());
  return a;
}

inline ThreePointPose to_canonical(const ThreePointPose& frame,
                                   const AnchorTransform& anchor) {
  const Eigen::Quaterniond rot = yaw_quaternion(-anchor.yaw);
  const Eigen::Vector3d t(anchor.translation_xz.x(), 0.0, anchor.translation_xz.y());
  ThreePointPose out = frame;
  for (JointPose* j : {&out.head, &out.left_hand, &out.right_hand}) {
    j->position = rot * (j->position - t);
    j->orientation = (rot * j->orientation).normalized();
  }
  return out;
}

inline ThreePointPose to_world(const ThreePointPose& frame,
                               const AnchorTransform& anchor) {
  const Eigen::Quaterniond rot = yaw_quaternion(anchor.yaw);
  const Eigen::Vector3d t(anchor.translation_xz.x(), 0.0, anchor.translation_xz.y());
  ThreePointPose out = frame;
  for (JointPose* j : {&out.head, &out.left_hand, &out.right_hand}) {
    j->position = rot * j->position + t;
    j->orientation = (rot * j->orientation).normalized();
  }
  return out;
}

// Canonical point transform for positions that are not attached to a pose
// (event geometry).
inline Eigen::Vector3d point_to_canonical(const Eigen::Vector3d& p,
                                          const AnchorTransform& anchor) {
  const Eigen::Vector3d t(anchor.translation_xz.x(), 0.0, anchor.translation_xz.y());
  return yaw_quaternion(-anchor.yaw) * (p - t);
}

// Re-expresses the window relative to its last frame's head (horizontal
// position at the origin, facing onto +z). Returns the canonical->world
// anchor alongside.
inline std::pair<PoseWindow, AnchorTransform> canonicalize_window(
    const PoseWindow& window) {
  if (window.canonical)
    throw Error(ErrorKind::Domain, "window is already canonical");
  if (window.frames.empty())
    throw Error(ErrorKind::Domain, "cannot canonicalize an empty window");
  const AnchorTransform anchor = anchor_of(window.frames.back());
  PoseWindow out;
  out.frames.reserve(window.frames.size());
  for (const ThreePointPose& f : window.frames)
    out.frames.push_back(to_canonical(f, anchor));
  out.canonical = true;
  return {std::move(out), anchor};
}

// Re-expresses an already-canonical window in the frame of `anchor`. Used for
// future windows that share the history window's anchor.
inline PoseWindow window_to_canonical(const PoseWindow& window,
                                      const AnchorTransform& anchor) {
  PoseWindow out;
  out.frames.reserve(window.frames.size());
  for (const ThreePointPose& f : window.frames)
    out.frames.push_back(to_canonical(f, anchor));
  out.canonical = true;
  return out;
}

inline PoseWindow decanonicalize(const PoseWindow& window,
                                 const AnchorTransform& anchor) {
  if (!window.canonical)
    throw Error(ErrorKind::Domain, "decanonicalize expects a canonical window");
  PoseWindow out;
  out.frames.reserve(window.frames.size());
  for (const ThreePointPose& f : window.frames)
    out.frames.push_back(to_world(f, anchor));
  out.canonical = false;
  return out;
}

// ---------------------------------------------------------------------------
// Resampling.

// Uniform grid from the first to the last timestamp. Positions are linearly
// interpolated, orientations slerped. Grid points that coincide with source
// frames reproduce them exactly.
inline PoseTrace resample(const PoseTrace& trace, double target_rate) {
  if (trace.frames.size() < 2)
    throw Error(ErrorKind::Domain, "resample requires at least 2 frames");
  if (!(target_rate > 0.0))
    throw Error(ErrorKind::Domain, "target_rate must be positive");

  const auto& src = trace.frames;
  const double t0 = src.front().timestamp;
  const double t_last = src.back().timestamp;
  const std::size_t count =
      static_cast<std::size_t>(std::floor((t_last - t0) * target_rate + 1e-9)) + 1;

  PoseTrace out;
  out.rate = target_rate;
  out.frames.reserve(count);

  std::size_t seg = 0;  // largest index with src[seg].timestamp <= t
  for (std::size_t i = 0; i < count; ++i) {
    const double t = t0 + static_cast<double>(i) / target_rate;
    while (seg + 2 < src.size() && src[seg + 1].timestamp <= t) ++seg;
    const ThreePointPose& a = src[seg];
    const ThreePointPose& b = src[seg + 1];
    double u = (t - a.timestamp) / (b.timestamp - a.timestamp);
    u = std::clamp(u, 0.0, 1.0);

    ThreePointPose f;
    f.timestamp = t;
    auto mix = [u](const JointPose& ja, const JointPose& jb) {
      JointPose j;
      if (u <= 0.0) {
        j = ja;
      } else if (u >= 1.0) {
        j = jb;
      } else {
        j.position = ja.position + u * (jb.position - ja.position);
        j.orientation = slerp(ja.orientation, jb.orientation, u);
      }
      return j;
    };
    f.head = mix(a.head, b.head);
    f.left_hand = mix(a.left_hand, b.left_hand);
    f.right_hand = mix(a.right_hand, b.right_hand);
    out.frames.push_back(f);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Smoothness metric.

// Mean magnitude of the third finite difference of positions over dt^3,
// averaged across samples and the 3 joints. Exact on cubics: a*t^3 -> 6a.
inline double jerk_metric(const PoseTrace& trace) {
  const auto& fr = trace.frames;
  if (fr.size() < 4)
    throw Error(ErrorKind::Domain, "jerk_metric requires at least 4 frames");
  if (!(trace.rate > 0.0))
    throw Error(ErrorKind::Domain, "jerk_metric requires a uniform-rate trace");
  const double dt = 1.0 / trace.rate;
  for (std::size_t i = 1; i < fr.size(); ++i)
    if (std::abs(fr[i].timestamp - fr[i - 1].timestamp - dt) > 1e-6)
      throw Error(ErrorKind::Domain, "jerk_metric requires uniform frame spacing",
                  {{"frame", std::to_string(i)}});

  const double inv_dt3 = 1.0 / (dt * dt * dt);
  auto joint = [](const ThreePointPose& f, int j) -> const Eigen::Vector3d& {
    return j == 0 ? f.head.position : (j == 1 ? f.left_hand.position : f.right_hand.position);
  };
  double total = 0.0;
  for (int j = 0; j < 3; ++j) {
    double sum = 0.0;
    for (std::size_t i = 0; i + 3 < fr.size(); ++i) {
      const Eigen::Vector3d d3 = joint(fr[i + 3], j) - 3.0 * joint(fr[i + 2], j) +
                                 3.0 * joint(fr[i + 1], j) - joint(fr[i], j);
      sum += (d3 * inv_dt3).norm();
    }
    total += sum / static_cast<double>(fr.size() - 3);
  }
  return total / 3.0;
}

// ---------------------------------------------------------------------------
// CSV I/O.
//
// Schema (exact header, 22 columns):
//   t,head_px,head_py,head_pz,head_qw,head_qx,head_qy,head_qz,
//     lh_px,lh_py,lh_pz,lh_qw,lh_qx,lh_qy,lh_qz,
//     rh_px,rh_py,rh_pz,rh_qw,rh_qx,rh_qy,rh_qz

inline constexpr std::string_view kPoseCsvHeader =
    "t,head_px,head_py,head_pz,head_qw,head_qx,head_qy,head_qz,"
    "lh_px,lh_py,lh_pz,lh_qw,lh_qx,lh_qy,lh_qz,"
    "rh_px,rh_py,rh_pz,rh_qw,rh_qx,rh_qy,rh_qz";

namespace detail {

inline double parse_double(std::string_view field, std::size_t line) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last)
    throw Error(ErrorKind::Format,
                "line " + std::to_string(line) + ": not a number: '" +
                    std::string(field) + "'",
                {{"line", std::to_string(line)}});
  return value;
}

inline void append_fixed(std::string& out, double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v,
                                 std::chars_format::fixed, 9);
  out.append(buf, ptr);
}

}  // namespace detail

// Loads a pose trace. Quaternions are normalized on load; drift beyond
// norm error 1e-2 is rejected. Timestamps must be strictly increasing.
// The rate field is estimated from the span (0 for traces shorter than 2).
inline PoseTrace load_pose_trace(std::string_view csv) {
  PoseTrace trace;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool saw_header = false;

  while (start <= csv.size()) {
    std::size_t end = csv.find('\n', start);
    std::string_view line = csv.substr(
        start, end == std::string_view::npos ? std::string_view::npos : end - start);
    start = end == std::string_view::npos ? csv.size() + 1 : end + 1;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    ++line_no;
    if (line.empty()) continue;

    if (!saw_header) {
      if (line != kPoseCsvHeader)
        throw Error(ErrorKind::Format, "unexpected CSV header",
                    {{"line", "1"}, {"got", std::string(line)}});
      saw_header = true;
      continue;
    }

    std::array<double, 22> v{};
    std::size_t field = 0;
    std::size_t pos = 0;
    while (field < 22) {
      std::size_t comma = line.find(',', pos);
      std::string_view cell = line.substr(
          pos, comma == std::string_view::npos ? std::string_view::npos : comma - pos);
      v[field] = detail::parse_double(cell, line_no);
      ++field;
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    if (field != 22 || line.find(',', pos) != std::string_view::npos)
      throw Error(ErrorKind::Format,
                  "line " + std::to_string(line_no) + ": expected 22 columns",
                  {{"line", std::to_string(line_no)}});

    ThreePointPose f;
    f.timestamp = v[0];
    auto read_joint = [&v, line_no](std::size_t base) {
      JointPose j;
      j.position = Eigen::Vector3d(v[base], v[base + 1], v[base + 2]);
      Eigen::Quaterniond q(v[base + 3], v[base + 4], v[base + 5], v[base + 6]);
      const double err = std::abs(q.norm() - 1.0);
      if (err > kQuatDriftTolerance)
        throw Error(ErrorKind::Data,
                    "line " + std::to_string(line_no) +
                        ": quaternion norm error " + std::to_string(err) +
                        " exceeds tolerance",
                    {{"line", std::to_string(line_no)}});
      j.orientation = q.normalized();
      return j;
    };
    f.head = read_joint(1);
    f.left_hand = read_joint(8);
    f.right_hand = read_joint(15);

    if (!trace.frames.empty() && f.timestamp <= trace.frames.back().timestamp)
      throw Error(ErrorKind::Format,
                  "line " + std::to_string(line_no) +
                      ": timestamps must be strictly increasing",
                  {{"line", std::to_string(line_no)}});
    if (!std::isfinite(f.timestamp))
      throw Error(ErrorKind::Format,
                  "line " + std::to_string(line_no) + ": non-finite timestamp",
                  {{"line", std::to_string(line_no)}});
    trace.frames.push_back(f);
  }

  if (!saw_header)
    throw Error(ErrorKind::Format, "empty pose CSV: missing header");
  if (trace.frames.size() >= 2) {
    trace.rate = static_cast<double>(trace.frames.size() - 1) /
                 (trace.frames.back().timestamp - trace.frames.front().timestamp);
  }
  return trace;
}

// Fixed 9-decimal notation; row order is time order.
inline std::string save_pose_trace(const PoseTrace& trace) {
  std::string out(kPoseCsvHeader);
  out.push_back('\n');
  for (const ThreePointPose& f : trace.frames) {
    detail::append_fixed(out, f.timestamp);
    for (const JointPose* j : {&f.head, &f.left_hand, &f.right_hand}) {
      for (double c : {j->position.x(), j->position.y(), j->position.z()}) {
        out.push_back(',');
        detail::append_fixed(out, c);
      }
      for (double c : {j->orientation.w(), j->orientation.x(), j->orientation.y(),
                       j->orientation.z()}) {
        out.push_back(',');
        detail::append_fixed(out, c);
      }
    }
    out.push_back('\n');
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model features: per frame [position xyz + 6d rotation] per joint = 27 reals.

inline constexpr int kFrameFeatureDim = 27;

inline void frame_features_into(const ThreePointPose& f, double* out) {
  int k = 0;
  for (const JointPose* j : {&f.head, &f.left_hand, &f.right_hand}) {
    out[k++] = j->position.x();
    out[k++] = j->position.y();
    out[k++] = j->position.z();
    const std::array<double, 6> sixd = rotation_to_6d(j->orientation);
    for (double c : sixd) out[k++] = c;
  }
}

// Rows are frames.
inline Eigen::MatrixXd window_features(const PoseWindow& window) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(window.frames.size()), kFrameFeatureDim);
  std::array<double, kFrameFeatureDim> row{};
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    frame_features_into(window.frames[static_cast<std::size_t>(i)], row.data());
    for (Eigen::Index c = 0; c < kFrameFeatureDim; ++c) m(i, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

// Inverse of window_features. Orientations are rebuilt through
// rotation_from_6d, so halves must be non-degenerate.
inline PoseWindow features_to_window(const Eigen::MatrixXd& features,
                                     const std::vector<double>& timestamps,
                                     bool canonical) {
  if (features.cols() != kFrameFeatureDim ||
      features.rows() != static_cast<Eigen::Index>(timestamps.size()))
    throw Error(ErrorKind::Shape, "features_to_window: bad dimensions");
  PoseWindow w;
  w.canonical = canonical;
  w.frames.resize(timestamps.size());
  for (Eigen::Index i = 0; i < features.rows(); ++i) {
    ThreePointPose& f = w.frames[static_cast<std::size_t>(i)];
    f.timestamp = timestamps[static_cast<std::size_t>(i)];
    JointPose* joints[3] = {&f.head, &f.left_hand, &f.right_hand};
    for (int j = 0; j < 3; ++j) {
      const Eigen::Index base = 9 * j;
      joints[j]->position = Eigen::Vector3d(features(i, base), features(i, base + 1),
                                            features(i, base + 2));
      std::array<double, 6> sixd;
      for (int k = 0; k < 6; ++k) sixd[static_cast<std::size_t>(k)] = features(i, base + 3 + k);
      joints[j]->orientation = rotation_from_6d(sixd);
    }
  }
  return w;
}

}  // namespace beatpose
