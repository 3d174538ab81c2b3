// Autoregressive full-song generation: slide the model along the beatmap
// timeline, committing a fixed prefix of each predicted window and
// crossfading the seam against the previous window's overlap.
#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "beatpose/common.hpp"
#include "beatpose/context.hpp"
#include "beatpose/model.hpp"
#include "beatpose/pose.hpp"

namespace beatpose {

struct RolloutConfig {
  int stride = 10;
  int blend = 3;  // crossfade frames, 0 <= blend < stride, stride + blend <= T
  std::optional<PoseWindow> seed_history;  // world frame, h+1 frames; default rest pose
  bool style_per_window = false;  // re-encode references each window (same refs -> same latent)
};

// Documented, reproducible start state: head at (0, 1.7, 0) facing +z, hands
// at (-/+0.3, 1.2, 0.2), identity orientations, held for h+1 frames.
inline PoseWindow rest_pose_seed(int h, double rate) {
  PoseWindow w;
  w.canonical = false;
  w.frames.resize(static_cast<std::size_t>(h) + 1);
  for (int k = 0; k <= h; ++k) {
    ThreePointPose& f = w.frames[static_cast<std::size_t>(k)];
    f.timestamp = static_cast<double>(k) / rate;
    f.head.position = {0.0, 1.7, 0.0};
    f.left_hand.position = {-0.3, 1.2, 0.2};
    f.right_hand.position = {0.3, 1.2, 0.2};
  }
  return w;
}

// Predicts a canonical T-frame future from a canonical history window and the
// canonical-frame game context. Timestamps on the result are ignored by the
// rollout loop, which re-stamps committed frames onto the global grid.
using WindowPredictor =
    std::function<PoseWindow(const PoseWindow& canonical_history, const GameContext&)>;

inline WindowPredictor make_model_predictor(const ModelParams<double>& params,
                                            const StyleReferenceSet& refs,
                                            bool style_per_window = false) {
  std::vector<Eigen::MatrixXd> ref_feats;
  ref_feats.reserve(refs.refs.size());
  for (const PoseWindow& r : refs.refs) ref_feats.push_back(window_features(r));
  const Eigen::VectorXd z_style_once = encode_style(params, ref_feats);

  return [&params, ref_feats, z_style_once, style_per_window](
             const PoseWindow& history, const GameContext& ctx) -> PoseWindow {
    const Eigen::MatrixXd hist = window_features(history);
    const Eigen::VectorXd z3p = encode_3p(params, hist);
    const Eigen::VectorXd zgame = encode_game(params, ctx);
    const Eigen::VectorXd zs =
        style_per_window ? Eigen::VectorXd(encode_style(params, ref_feats)) : z_style_once;
    const Eigen::MatrixXd feats = decode(params, z3p, zgame, zs);
    std::vector<double> stamps(static_cast<std::size_t>(feats.rows()), 0.0);
    return features_to_window(feats, stamps, /*canonical=*/true);
  };
}

// Crossfade: frame i gets weight w = (i+1)/(blend+1) on the new window,
// positions linear, orientations slerp. blend = 0 is the identity on `head`.
inline std::vector<ThreePointPose> stitch(const std::vector<ThreePointPose>& prev_tail,
                                          const std::vector<ThreePointPose>& new_head,
                                          int blend) {
  if (static_cast<int>(prev_tail.size()) != blend ||
      static_cast<int>(new_head.size()) != blend)
    throw Error(ErrorKind::Shape, "stitch: tail/head length must equal blend");
  std::vector<ThreePointPose> out = new_head;
  for (int i = 0; i < blend; ++i) {
    const double w = static_cast<double>(i + 1) / static_cast<double>(blend + 1);
    const ThreePointPose& a = prev_tail[static_cast<std::size_t>(i)];
    ThreePointPose& b = out[static_cast<std::size_t>(i)];
    auto mix = [w](const JointPose& ja, JointPose& jb) {
      jb.position = (1.0 - w) * ja.position + w * jb.position;
      jb.orientation = slerp(ja.orientation, jb.orientation, w);
    };
    mix(a.head, b.head);
    mix(a.left_hand, b.left_hand);
    mix(a.right_hand, b.right_hand);
  }
  return out;
}

struct RolloutSetup {
  WindowConfig window;
  double rate = 30.0;
  LaneGeometry lanes;
};

// Committed-prefix autoregression. Starting from the seed history, repeat:
// canonicalize the last h+1 frames, build the game context at the current
// time, predict T frames, decanonicalize, crossfade the first `blend` frames
// against the previous window's overlap, commit `stride` frames. Output is a
// uniform-rate world-frame trace spanning [seed start, song_length].
inline PoseTrace rollout_with(const WindowPredictor& predict, const Beatmap& map,
                              const RolloutConfig& cfg, const RolloutSetup& setup) {
  const int h = setup.window.h;
  const int T = setup.window.T;
  if (cfg.stride < 1 || cfg.stride > T)
    throw Error(ErrorKind::Domain, "rollout: stride must be in [1, T]");
  if (cfg.blend < 0 || cfg.blend >= cfg.stride)
    throw Error(ErrorKind::Domain, "rollout: blend must satisfy 0 <= blend < stride");
  if (cfg.stride + cfg.blend > T)
    throw Error(ErrorKind::Domain, "rollout: stride + blend must not exceed T");
  if (!(setup.rate > 0)) throw Error(ErrorKind::Domain, "rollout: rate must be positive");

  const PoseWindow seed =
      cfg.seed_history ? *cfg.seed_history : rest_pose_seed(h, setup.rate);
  if (seed.canonical)
    throw Error(ErrorKind::Domain, "rollout: seed history must be world-frame");
  if (static_cast<int>(seed.frames.size()) != h + 1)
    throw Error(ErrorKind::Window,
                "rollout: seed history must hold exactly h+1 frames");
  for (std::size_t k = 1; k < seed.frames.size(); ++k) {
    const double dt = seed.frames[k].timestamp - seed.frames[k - 1].timestamp;
    if (std::abs(dt - 1.0 / setup.rate) > 1e-6)
      throw Error(ErrorKind::Validation, "rollout: seed history is off the frame grid");
  }

  const double t0 = seed.frames.front().timestamp;
  // last grid index whose time fits inside the song
  const std::size_t total =
      static_cast<std::size_t>(std::floor(map.song_length * setup.rate + 1e-9)) + 1;

  std::vector<ThreePointPose> frames = seed.frames;
  std::vector<ThreePointPose> prev_tail;  // previous window frames [stride, stride+blend)

  while (frames.size() < total) {
    PoseWindow history;
    history.canonical = false;
    history.frames.assign(frames.end() - (h + 1), frames.end());
    auto [canonical_history, anchor] = canonicalize_window(history);

    const double t_now = frames.back().timestamp;
    const GameContext ctx =
        upcoming_events(map, t_now, setup.window.n, setup.window.horizon, setup.lanes, anchor);

    PoseWindow predicted = predict(canonical_history, ctx);
    if (static_cast<int>(predicted.frames.size()) != T)
      throw Error(ErrorKind::Shape, "rollout: predictor must return T frames");
    PoseWindow world = decanonicalize(predicted, anchor);
    for (const ThreePointPose& f : world.frames) {
      const bool finite = f.head.position.allFinite() && f.left_hand.position.allFinite() &&
                          f.right_hand.position.allFinite() &&
                          std::isfinite(f.head.orientation.w()) &&
                          std::isfinite(f.left_hand.orientation.w()) &&
                          std::isfinite(f.right_hand.orientation.w());
      if (!finite)
        throw Error(ErrorKind::Rollout, "non-finite prediction",
                    {{"timestamp", std::to_string(t_now)}});
    }

    if (cfg.blend > 0 && !prev_tail.empty()) {
      std::vector<ThreePointPose> head(world.frames.begin(),
                                       world.frames.begin() + cfg.blend);
      std::vector<ThreePointPose> blended = stitch(prev_tail, head, cfg.blend);
      std::copy(blended.begin(), blended.end(), world.frames.begin());
    }

    if (cfg.blend > 0) {
      prev_tail.assign(world.frames.begin() + cfg.stride,
                       world.frames.begin() + cfg.stride + cfg.blend);
    }

    for (int k = 0; k < cfg.stride && frames.size() < total; ++k) {
      ThreePointPose f = world.frames[static_cast<std::size_t>(k)];
      f.timestamp = t0 + static_cast<double>(frames.size()) / setup.rate;
      frames.push_back(f);
    }
  }

  PoseTrace out;
  out.frames = std::move(frames);
  out.rate = setup.rate;
  return out;
}

inline PoseTrace rollout(const ModelParams<double>& params, const Beatmap& map,
                         const StyleReferenceSet& refs, const RolloutConfig& cfg,
                         const RolloutSetup& setup) {
  if (params.dims.h != setup.window.h || params.dims.T != setup.window.T ||
      params.dims.n != setup.window.n)
    throw Error(ErrorKind::Shape, "rollout: window config does not match checkpoint dims");
  return rollout_with(make_model_predictor(params, refs, cfg.style_per_window), map,
                      cfg, setup);
}

}  // namespace beatpose
