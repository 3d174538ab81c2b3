// Style-conditioned future-pose model: three encoders, one decoder, losses,
// and a bit-reproducible SGD training loop with hand-written backprop.
//
// Realization: every encoder is a shared 2-layer tanh perceptron applied per
// frame (or per event row) followed by pooling — mean over frames for the
// pose encoder, masked sum over rows plus a final linear map for the game
// encoder, mean over references for the style encoder. The decoder is a
// 2-layer perceptron from the three concatenated latents to T x 27 features
// whose rotation halves are re-orthonormalized on output.
//
// The reference style latent is treated as a constant during
// differentiation: gradients reach the style encoder only by re-encoding the
// predicted window. All math is templated on the scalar so training can run
// in single precision while gradient checks stay in double.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "beatpose/common.hpp"
#include "beatpose/context.hpp"
#include "beatpose/pose.hpp"

namespace beatpose {

template <class S>
using MatX = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecX = Eigen::Matrix<S, Eigen::Dynamic, 1>;
template <class S>
using Vec3 = Eigen::Matrix<S, 3, 1>;

struct ModelDims {
  int d_z = 32;
  int hidden = 64;
  int row_dim = 16;  // pooled per-row width of the game encoder
  int h = 15;        // history windows hold h+1 frames
  int T = 30;
  int n = 4;
  int n_ref = 4;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

// Model-ready view of one training example: canonical features only.
struct ExampleTensors {
  Eigen::MatrixXd history;            // (h+1) x 27
  Eigen::MatrixXd future;             // T x 27
  GameContext context;
  std::vector<Eigen::MatrixXd> refs;  // n_ref matrices of T x 27
  AnchorTransform anchor;
};

inline ExampleTensors tensorize(const TrainingExample& ex) {
  ExampleTensors t;
  t.history = window_features(ex.history);
  t.future = window_features(ex.future);
  t.context = ex.context;
  t.refs.reserve(ex.style_refs.refs.size());
  for (const PoseWindow& w : ex.style_refs.refs)
    t.refs.push_back(window_features(w));
  t.anchor = ex.anchor;
  return t;
}

template <class S>
struct NamedTensor {
  std::string name;
  MatX<S> value;  // biases are stored as k x 1
};

template <class S>
struct ModelParams {
  ModelDims dims;
  std::vector<NamedTensor<S>> tensors;

  MatX<S>& at(std::string_view name) {
    for (auto& t : tensors)
      if (t.name == name) return t.value;
    throw Error(ErrorKind::Shape, "unknown parameter tensor: " + std::string(name));
  }
  const MatX<S>& at(std::string_view name) const {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw Error(ErrorKind::Shape, "unknown parameter tensor: " + std::string(name));
  }

  std::size_t scalar_count() const {
    std::size_t total = 0;
    for (const auto& t : tensors) total += static_cast<std::size_t>(t.value.size());
    return total;
  }
};

struct LossBreakdown {
  double recon = 0.0;
  double match = 0.0;
  double total = 0.0;
  double lambda_match = 0.0;
};

namespace detail {

// Declaration order fixes both checkpoint layout and the seeded init stream.
inline std::vector<std::pair<std::string, std::pair<int, int>>> tensor_plan(
    const ModelDims& d) {
  const int out = d.T * kFrameFeatureDim;
  return {
      {"e3p.l1.weight", {d.hidden, kFrameFeatureDim}},
      {"e3p.l1.bias", {d.hidden, 1}},
      {"e3p.l2.weight", {d.d_z, d.hidden}},
      {"e3p.l2.bias", {d.d_z, 1}},
      {"style.l1.weight", {d.hidden, kFrameFeatureDim}},
      {"style.l1.bias", {d.hidden, 1}},
      {"style.l2.weight", {d.d_z, d.hidden}},
      {"style.l2.bias", {d.d_z, 1}},
      {"game.note.l1.weight", {d.hidden, kNoteFeatureDim}},
      {"game.note.l1.bias", {d.hidden, 1}},
      {"game.note.l2.weight", {d.row_dim, d.hidden}},
      {"game.note.l2.bias", {d.row_dim, 1}},
      {"game.bomb.l1.weight", {d.hidden, kBombFeatureDim}},
      {"game.bomb.l1.bias", {d.hidden, 1}},
      {"game.bomb.l2.weight", {d.row_dim, d.hidden}},
      {"game.bomb.l2.bias", {d.row_dim, 1}},
      {"game.obstacle.l1.weight", {d.hidden, kObstacleFeatureDim}},
      {"game.obstacle.l1.bias", {d.hidden, 1}},
      {"game.obstacle.l2.weight", {d.row_dim, d.hidden}},
      {"game.obstacle.l2.bias", {d.row_dim, 1}},
      {"game.head.weight", {d.d_z, 3 * d.row_dim}},
      {"game.head.bias", {d.d_z, 1}},
      {"dec.l1.weight", {d.hidden, 3 * d.d_z}},
      {"dec.l1.bias", {d.hidden, 1}},
      {"dec.l2.weight", {out, d.hidden}},
      {"dec.l2.bias", {out, 1}},
  };
}

}  // namespace detail

// Uniform(-s, s) with s = 1/sqrt(fan_in); each layer's bias shares its
// weight's scale. The fill order is fixed, so one seed means one model.
template <class S>
ModelParams<S> init_params(const ModelDims& dims, std::uint64_t seed) {
  ModelParams<S> p;
  p.dims = dims;
  Rng rng(seed);
  double scale = 1.0;
  for (const auto& [name, shape] : detail::tensor_plan(dims)) {
    NamedTensor<S> t;
    t.name = name;
    t.value.resize(shape.first, shape.second);
    if (shape.second > 1) scale = 1.0 / std::sqrt(static_cast<double>(shape.second));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c)
        t.value(r, c) = static_cast<S>(rng.uniform(-scale, scale));
    p.tensors.push_back(std::move(t));
  }
  return p;
}

template <class S>
ModelParams<S> zero_like(const ModelParams<S>& p) {
  ModelParams<S> z;
  z.dims = p.dims;
  z.tensors.reserve(p.tensors.size());
  for (const auto& t : p.tensors)
    z.tensors.push_back({t.name, MatX<S>::Zero(t.value.rows(), t.value.cols())});
  return z;
}

// ---------------------------------------------------------------------------
// Shared 2-layer perceptron, applied to each row of X.

template <class S>
struct MlpCache {
  MatX<S> input;   // F x in
  MatX<S> hidden;  // F x hid, post-tanh
};

template <class S>
MatX<S> mlp_apply(const ModelParams<S>& p, const std::string& prefix,
                  const MatX<S>& x, MlpCache<S>* cache = nullptr) {
  const MatX<S>& w1 = p.at(prefix + ".l1.weight");
  const MatX<S>& b1 = p.at(prefix + ".l1.bias");
  const MatX<S>& w2 = p.at(prefix + ".l2.weight");
  const MatX<S>& b2 = p.at(prefix + ".l2.bias");
  if (x.cols() != w1.cols())
    throw Error(ErrorKind::Shape,
                prefix + ": input width " + std::to_string(x.cols()) +
                    " does not match " + std::to_string(w1.cols()));
  MatX<S> hidden = ((x * w1.transpose()).rowwise() + b1.col(0).transpose())
                       .array()
                       .tanh()
                       .matrix();
  MatX<S> y = (hidden * w2.transpose()).rowwise() + b2.col(0).transpose();
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(hidden);
  }
  return y;
}

// Returns dX; accumulates parameter gradients.
template <class S>
MatX<S> mlp_backward(const ModelParams<S>& p, const std::string& prefix,
                     const MlpCache<S>& cache, const MatX<S>& dy,
                     ModelParams<S>& grads) {
  const MatX<S>& w1 = p.at(prefix + ".l1.weight");
  const MatX<S>& w2 = p.at(prefix + ".l2.weight");
  grads.at(prefix + ".l2.weight") += dy.transpose() * cache.hidden;
  grads.at(prefix + ".l2.bias").col(0) += dy.colwise().sum().transpose();
  MatX<S> dh = dy * w2;
  MatX<S> da =
      (dh.array() * (1 - cache.hidden.array().square())).matrix();
  grads.at(prefix + ".l1.weight") += da.transpose() * cache.input;
  grads.at(prefix + ".l1.bias").col(0) += da.colwise().sum().transpose();
  return da * w1;
}

// ---------------------------------------------------------------------------
// Encoders.

// Pose history -> latent: per-frame MLP, mean-pooled over frames.
template <class S>
VecX<S> encode_3p(const ModelParams<S>& p, const MatX<S>& history,
                  MlpCache<S>* cache = nullptr) {
  if (history.rows() != p.dims.h + 1 || history.cols() != kFrameFeatureDim)
    throw Error(ErrorKind::Shape,
                "encode_3p expects " + std::to_string(p.dims.h + 1) + " x " +
                    std::to_string(kFrameFeatureDim) + " history, got " +
                    std::to_string(history.rows()) + " x " +
                    std::to_string(history.cols()));
  MatX<S> y = mlp_apply(p, "e3p", history, cache);
  return y.colwise().mean().transpose();
}

template <class S>
void encode_3p_backward(const ModelParams<S>& p, const MlpCache<S>& cache,
                        const VecX<S>& dz, ModelParams<S>& grads) {
  const Eigen::Index frames = cache.input.rows();
  MatX<S> dy = MatX<S>::Zero(frames, dz.size());
  dy.rowwise() = (dz / static_cast<S>(frames)).transpose();
  mlp_backward(p, "e3p", cache, dy, grads);
}

template <class S>
struct GameCache {
  MlpCache<S> note, bomb, obstacle;
  VecX<S> pooled;  // 3 * row_dim
  VecX<S> note_mask, bomb_mask, obstacle_mask;
};

// Game context -> latent: per-row MLP per category, row outputs multiplied by
// the mask before sum-pooling, then one linear map on the concatenated pools.
// Invariant under row permutations and under injecting masked rows.
template <class S>
VecX<S> encode_game(const ModelParams<S>& p, const GameContext& ctx,
                    GameCache<S>* cache = nullptr) {
  if (ctx.notes.cols() != kNoteFeatureDim || ctx.bombs.cols() != kBombFeatureDim ||
      ctx.obstacles.cols() != kObstacleFeatureDim ||
      ctx.notes.rows() != ctx.note_mask.size() ||
      ctx.bombs.rows() != ctx.bomb_mask.size() ||
      ctx.obstacles.rows() != ctx.obstacle_mask.size())
    throw Error(ErrorKind::Shape, "encode_game: malformed context tensors");

  const int rd = p.dims.row_dim;
  VecX<S> pooled = VecX<S>::Zero(3 * rd);
  GameCache<S> local;
  GameCache<S>& c = cache ? *cache : local;

  auto pool = [&p](const std::string& prefix, const Eigen::MatrixXd& rows,
                   const Eigen::VectorXd& mask, MlpCache<S>& mlp_cache,
                   VecX<S>& mask_out) -> VecX<S> {
    MatX<S> x = rows.template cast<S>();
    mask_out = mask.template cast<S>();
    MatX<S> row_out = mlp_apply(p, prefix, x, &mlp_cache);
    return (mask_out.asDiagonal() * row_out).colwise().sum().transpose();
  };
  pooled.segment(0, rd) =
      pool("game.note", ctx.notes, ctx.note_mask, c.note, c.note_mask);
  pooled.segment(rd, rd) =
      pool("game.bomb", ctx.bombs, ctx.bomb_mask, c.bomb, c.bomb_mask);
  pooled.segment(2 * rd, rd) = pool("game.obstacle", ctx.obstacles,
                                    ctx.obstacle_mask, c.obstacle, c.obstacle_mask);
  c.pooled = pooled;
  return p.at("game.head.weight") * pooled + p.at("game.head.bias").col(0);
}

template <class S>
void encode_game_backward(const ModelParams<S>& p, const GameCache<S>& cache,
                          const VecX<S>& dz, ModelParams<S>& grads) {
  grads.at("game.head.weight") += dz * cache.pooled.transpose();
  grads.at("game.head.bias").col(0) += dz;
  VecX<S> dpooled = p.at("game.head.weight").transpose() * dz;
  const int rd = p.dims.row_dim;

  auto unpool = [&p, &grads](const std::string& prefix, const MlpCache<S>& mlp_cache,
                             const VecX<S>& mask, const VecX<S>& dpool) {
    // every unmasked row receives dpool
    MatX<S> dy = mask * dpool.transpose();
    mlp_backward(p, prefix, mlp_cache, dy, grads);
  };
  unpool("game.note", cache.note, cache.note_mask, dpooled.segment(0, rd));
  unpool("game.bomb", cache.bomb, cache.bomb_mask, dpooled.segment(rd, rd));
  unpool("game.obstacle", cache.obstacle, cache.obstacle_mask,
         dpooled.segment(2 * rd, rd));
}

// One window through the style encoder: per-frame MLP, mean over frames.
template <class S>
VecX<S> encode_style_window(const ModelParams<S>& p, const MatX<S>& window,
                            MlpCache<S>* cache = nullptr) {
  if (window.cols() != kFrameFeatureDim || window.rows() < 1)
    throw Error(ErrorKind::Shape, "encode_style_window: expected frames x 27");
  MatX<S> y = mlp_apply(p, "style", window, cache);
  return y.colwise().mean().transpose();
}

template <class S>
void encode_style_window_backward(const ModelParams<S>& p,
                                  const MlpCache<S>& cache, const VecX<S>& dz,
                                  ModelParams<S>& grads, MatX<S>* dwindow) {
  const Eigen::Index frames = cache.input.rows();
  MatX<S> dy = MatX<S>::Zero(frames, dz.size());
  dy.rowwise() = (dz / static_cast<S>(frames)).transpose();
  MatX<S> dx = mlp_backward(p, "style", cache, dy, grads);
  if (dwindow) *dwindow = std::move(dx);
}

// Reference set -> pooled style latent: mean over per-reference latents.
template <class S>
VecX<S> encode_style(const ModelParams<S>& p,
                     const std::vector<Eigen::MatrixXd>& refs) {
  if (refs.empty())
    throw Error(ErrorKind::Shape, "encode_style: reference set is empty");
  VecX<S> z = VecX<S>::Zero(p.dims.d_z);
  for (const Eigen::MatrixXd& r : refs)
    z += encode_style_window(p, MatX<S>(r.template cast<S>()));
  return z / static_cast<S>(refs.size());
}

// ---------------------------------------------------------------------------
// Decoder.

template <class S>
struct DecodeCache {
  VecX<S> zcat;    // 3 d_z
  VecX<S> hidden;  // post-tanh
  MatX<S> raw;     // T x 27, before orthonormalization
  struct Gs {
    Vec3<S> u1, u2, b1, b2;
    S n1, n2, d;
  };
  std::vector<Gs> gs;  // T*3, frame-major
};

// Latents -> T x 27 canonical features. Rotation halves come out
// orthonormalized (Gram-Schmidt), so rotation_from_6d on any output frame
// succeeds.
template <class S>
MatX<S> decode(const ModelParams<S>& p, const VecX<S>& z3p, const VecX<S>& zgame,
               const VecX<S>& zstyle, DecodeCache<S>* cache = nullptr) {
  const int dz = p.dims.d_z;
  if (z3p.size() != dz || zgame.size() != dz || zstyle.size() != dz)
    throw Error(ErrorKind::Shape, "decode expects three latents of size " +
                                      std::to_string(dz));
  DecodeCache<S> local;
  DecodeCache<S>& c = cache ? *cache : local;

  c.zcat.resize(3 * dz);
  c.zcat << z3p, zgame, zstyle;
  c.hidden = ((p.at("dec.l1.weight") * c.zcat + p.at("dec.l1.bias").col(0)).array().tanh()).matrix();
  VecX<S> flat = p.at("dec.l2.weight") * c.hidden + p.at("dec.l2.bias").col(0);

  const int T = p.dims.T;
  c.raw.resize(T, kFrameFeatureDim);
  for (int i = 0; i < T; ++i)
    for (int k = 0; k < kFrameFeatureDim; ++k)
      c.raw(i, k) = flat(i * kFrameFeatureDim + k);

  MatX<S> pred = c.raw;
  c.gs.assign(static_cast<std::size_t>(T) * 3, {});
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j < 3; ++j) {
      auto& g = c.gs[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(j)];
      const int base = 9 * j;
      g.u1 = c.raw.template block<1, 3>(i, base + 3).transpose();
      g.u2 = c.raw.template block<1, 3>(i, base + 6).transpose();
      g.n1 = g.u1.norm();
      if (g.n1 < S(kCollinearTol))
        throw Error(ErrorKind::Domain, "decode produced a degenerate rotation");
      g.b1 = g.u1 / g.n1;
      g.d = g.b1.dot(g.u2);
      Vec3<S> w2 = g.u2 - g.d * g.b1;
      g.n2 = w2.norm();
      if (g.n2 < S(kCollinearTol))
        throw Error(ErrorKind::Domain, "decode produced collinear rotation halves");
      g.b2 = w2 / g.n2;
      pred.template block<1, 3>(i, base + 3) = g.b1.transpose();
      pred.template block<1, 3>(i, base + 6) = g.b2.transpose();
    }
  }
  return pred;
}

// dpred holds gradients w.r.t. the orthonormalized output features. Returns
// gradients for the three latent inputs.
template <class S>
void decode_backward(const ModelParams<S>& p, const DecodeCache<S>& cache,
                     const MatX<S>& dpred, ModelParams<S>& grads, VecX<S>& dz3p,
                     VecX<S>& dzgame, VecX<S>& dzstyle) {
  const int T = p.dims.T;
  MatX<S> draw = dpred;
  for (int i = 0; i < T; ++i) {
    for (int j = 0; j < 3; ++j) {
      const auto& g = cache.gs[static_cast<std::size_t>(i) * 3 + static_cast<std::size_t>(j)];
      const int base = 9 * j;
      const Vec3<S> db1_in = dpred.template block<1, 3>(i, base + 3).transpose();
      const Vec3<S> db2_in = dpred.template block<1, 3>(i, base + 6).transpose();
      // b2 = w2 / n2
      const Vec3<S> dw2 = (db2_in - g.b2 * g.b2.dot(db2_in)) / g.n2;
      // w2 = u2 - (b1 . u2) b1
      const Vec3<S> du2 = dw2 - g.b1 * g.b1.dot(dw2);
      const Vec3<S> db1 = db1_in - g.u2 * g.b1.dot(dw2) - g.d * dw2;
      // b1 = u1 / n1
      const Vec3<S> du1 = (db1 - g.b1 * g.b1.dot(db1)) / g.n1;
      draw.template block<1, 3>(i, base + 3) = du1.transpose();
      draw.template block<1, 3>(i, base + 6) = du2.transpose();
    }
  }

  VecX<S> dflat(T * kFrameFeatureDim);
  for (int i = 0; i < T; ++i)
    for (int k = 0; k < kFrameFeatureDim; ++k)
      dflat(i * kFrameFeatureDim + k) = draw(i, k);

  grads.at("dec.l2.weight") += dflat * cache.hidden.transpose();
  grads.at("dec.l2.bias").col(0) += dflat;
  VecX<S> dh = p.at("dec.l2.weight").transpose() * dflat;
  VecX<S> da = (dh.array() * (1 - cache.hidden.array().square())).matrix();
  grads.at("dec.l1.weight") += da * cache.zcat.transpose();
  grads.at("dec.l1.bias").col(0) += da;
  VecX<S> dzcat = p.at("dec.l1.weight").transpose() * da;
  const int dz = p.dims.d_z;
  dz3p = dzcat.segment(0, dz);
  dzgame = dzcat.segment(dz, dz);
  dzstyle = dzcat.segment(2 * dz, dz);
}

// ---------------------------------------------------------------------------
// Losses.

namespace detail {

// d(acos(c)^2)/dc with the removable singularity at c -> 1 handled.
template <class S>
S geodesic_sq_derivative(S c) {
  const S theta = std::acos(c);
  if (theta < S(1e-6)) return S(-2);
  return S(-2) * theta / std::sin(theta);
}

template <class S>
Vec3<S> half(const MatX<S>& feats, int frame, int offset) {
  return feats.template block<1, 3>(frame, offset).transpose();
}

}  // namespace detail

// Mean squared position error plus mean squared geodesic rotation angle,
// averaged over the 3*T joint-frames and summed with unit weights. Both
// inputs must carry orthonormal rotation halves.
template <class S>
S loss_recon(const MatX<S>& pred, const MatX<S>& target) {
  if (pred.rows() != target.rows() || pred.cols() != kFrameFeatureDim ||
      target.cols() != kFrameFeatureDim)
    throw Error(ErrorKind::Shape, "loss_recon: shape mismatch");
  const Eigen::Index T = pred.rows();
  const S norm = S(1) / static_cast<S>(3 * T);
  S pos = 0, rot = 0;
  for (Eigen::Index i = 0; i < T; ++i) {
    for (int j = 0; j < 3; ++j) {
      const int base = 9 * j;
      const Vec3<S> dp = detail::half(pred, static_cast<int>(i), base) -
                         detail::half(target, static_cast<int>(i), base);
      pos += dp.squaredNorm();
      const Vec3<S> b1 = detail::half(pred, static_cast<int>(i), base + 3);
      const Vec3<S> b2 = detail::half(pred, static_cast<int>(i), base + 6);
      const Vec3<S> t1 = detail::half(target, static_cast<int>(i), base + 3);
      const Vec3<S> t2 = detail::half(target, static_cast<int>(i), base + 6);
      const Vec3<S> b3 = b1.cross(b2);
      const Vec3<S> t3 = t1.cross(t2);
      S c = (b1.dot(t1) + b2.dot(t2) + b3.dot(t3) - S(1)) / S(2);
      c = std::clamp(c, S(-1) + S(1e-12), S(1));
      const S theta = std::acos(c);
      rot += theta * theta;
    }
  }
  return (pos + rot) * norm;
}

template <class S>
void loss_recon_backward(const MatX<S>& pred, const MatX<S>& target, S dloss,
                         MatX<S>& dpred) {
  const Eigen::Index T = pred.rows();
  const S norm = dloss / static_cast<S>(3 * T);
  dpred = MatX<S>::Zero(T, kFrameFeatureDim);
  for (Eigen::Index i = 0; i < T; ++i) {
    for (int j = 0; j < 3; ++j) {
      const int base = 9 * j;
      const Vec3<S> dp = detail::half(pred, static_cast<int>(i), base) -
                         detail::half(target, static_cast<int>(i), base);
      dpred.template block<1, 3>(static_cast<int>(i), base) =
          (S(2) * norm * dp).transpose();
      const Vec3<S> b1 = detail::half(pred, static_cast<int>(i), base + 3);
      const Vec3<S> b2 = detail::half(pred, static_cast<int>(i), base + 6);
      const Vec3<S> t1 = detail::half(target, static_cast<int>(i), base + 3);
      const Vec3<S> t2 = detail::half(target, static_cast<int>(i), base + 6);
      const Vec3<S> b3 = b1.cross(b2);
      const Vec3<S> t3 = t1.cross(t2);
      S c = (b1.dot(t1) + b2.dot(t2) + b3.dot(t3) - S(1)) / S(2);
      c = std::clamp(c, S(-1) + S(1e-12), S(1));
      const S k = norm * detail::geodesic_sq_derivative(c) / S(2);
      const Vec3<S> db1 = k * (t1 + b2.cross(t3));
      const Vec3<S> db2 = k * (t2 + t3.cross(b1));
      dpred.template block<1, 3>(static_cast<int>(i), base + 3) = db1.transpose();
      dpred.template block<1, 3>(static_cast<int>(i), base + 6) = db2.transpose();
    }
  }
}

// Squared distance between the prediction's style latent and a reference
// latent held constant during differentiation.
template <class S>
S loss_match(const VecX<S>& z_pred, const VecX<S>& z_ref) {
  if (z_pred.size() != z_ref.size())
    throw Error(ErrorKind::Shape, "loss_match: latent size mismatch");
  return (z_pred - z_ref).squaredNorm();
}

// ---------------------------------------------------------------------------
// Full pipeline.

template <class S>
struct ForwardState {
  MlpCache<S> e3p_cache;
  GameCache<S> game_cache;
  DecodeCache<S> dec_cache;
  MlpCache<S> match_cache;
  VecX<S> z3p, zgame, z_ref, z_pred;
  MatX<S> pred;    // T x 27, orthonormalized
  MatX<S> target;  // T x 27
  LossBreakdown losses;
};

// encode -> decode -> losses. When `fixed_ref` is given it replaces the
// reference-set latent (both as decoder conditioning and as the match
// target); this is the frozen-reference view that finite differencing
// must use to agree with the stop-gradient analytic gradient.
template <class S>
ForwardState<S> run_forward(const ModelParams<S>& p, const ExampleTensors& ex,
                            S lambda, const VecX<S>* fixed_ref = nullptr) {
  ForwardState<S> st;
  st.z3p = encode_3p(p, MatX<S>(ex.history.template cast<S>()), &st.e3p_cache);
  st.zgame = encode_game(p, ex.context, &st.game_cache);
  st.z_ref = fixed_ref ? *fixed_ref : encode_style(p, ex.refs);
  st.pred = decode(p, st.z3p, st.zgame, st.z_ref, &st.dec_cache);
  st.target = ex.future.template cast<S>();
  st.z_pred = encode_style_window(p, st.pred, &st.match_cache);

  const S recon = loss_recon(st.pred, st.target);
  const S match = loss_match(st.z_pred, st.z_ref);
  st.losses.recon = static_cast<double>(recon);
  st.losses.match = static_cast<double>(match);
  st.losses.lambda_match = static_cast<double>(lambda);
  st.losses.total = static_cast<double>(recon + lambda * match);
  return st;
}

// Accumulates parameter gradients of recon + lambda * match into `grads`.
// Nothing flows into the reference branch.
template <class S>
void run_backward(const ModelParams<S>& p, const ExampleTensors& ex,
                  const ForwardState<S>& st, S lambda, ModelParams<S>& grads) {
  MatX<S> dpred;
  loss_recon_backward(st.pred, st.target, S(1), dpred);

  if (lambda != S(0)) {
    VecX<S> dz_pred = S(2) * lambda * (st.z_pred - st.z_ref);
    MatX<S> dpred_match;
    encode_style_window_backward(p, st.match_cache, dz_pred, grads, &dpred_match);
    dpred += dpred_match;
  }

  VecX<S> dz3p, dzgame, dzstyle;
  decode_backward(p, st.dec_cache, dpred, grads, dz3p, dzgame, dzstyle);
  // dzstyle ends at the frozen reference latent.
  encode_3p_backward(p, st.e3p_cache, dz3p, grads);
  encode_game_backward(p, st.game_cache, dzgame, grads);
  (void)ex;
  (void)dzstyle;
}

template <class S>
LossBreakdown total_loss(const ModelParams<S>& p, const ExampleTensors& ex,
                         S lambda) {
  return run_forward(p, ex, lambda).losses;
}

// Loss value with an externally supplied reference latent; the finite
// difference path of gradient_check.
template <class S>
double loss_with_fixed_ref(const ModelParams<S>& p, const ExampleTensors& ex,
                           S lambda, const VecX<S>& z_ref) {
  return run_forward(p, ex, lambda, &z_ref).losses.total;
}

// ---------------------------------------------------------------------------
// Training.

template <class S>
struct OptState {
  std::vector<MatX<S>> velocity;  // aligned with ModelParams::tensors
  S momentum = S(0.9);
};

template <class S>
OptState<S> make_opt_state(const ModelParams<S>& p, S momentum = S(0.9)) {
  OptState<S> o;
  o.momentum = momentum;
  o.velocity.reserve(p.tensors.size());
  for (const auto& t : p.tensors)
    o.velocity.push_back(MatX<S>::Zero(t.value.rows(), t.value.cols()));
  return o;
}

// One SGD-with-momentum step over a batch (mean gradient). With lr = 0 the
// parameters are bit-identical afterwards. Throws Training on non-finite
// losses or gradients, naming the offending example or tensor.
template <class S>
LossBreakdown train_step(ModelParams<S>& p, std::span<const ExampleTensors> batch,
                         OptState<S>& opt, S lr, S lambda) {
  if (batch.empty())
    throw Error(ErrorKind::Domain, "train_step: empty batch");
  ModelParams<S> grads = zero_like(p);
  double recon_sum = 0, match_sum = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    ForwardState<S> st = run_forward(p, batch[b], lambda);
    if (!std::isfinite(st.losses.total))
      throw Error(ErrorKind::Training, "non-finite loss",
                  {{"batch_index", std::to_string(b)}});
    run_backward(p, batch[b], st, lambda, grads);
    recon_sum += st.losses.recon;
    match_sum += st.losses.match;
  }
  const S inv = S(1) / static_cast<S>(batch.size());
  for (std::size_t i = 0; i < grads.tensors.size(); ++i) {
    MatX<S>& g = grads.tensors[i].value;
    g *= inv;
    if (!g.allFinite())
      throw Error(ErrorKind::Training, "non-finite gradient",
                  {{"parameter", grads.tensors[i].name}});
    MatX<S>& v = opt.velocity[i];
    v = opt.momentum * v + g;
    if (lr != S(0)) p.tensors[i].value -= lr * v;
  }

  LossBreakdown out;
  out.recon = recon_sum / static_cast<double>(batch.size());
  out.match = match_sum / static_cast<double>(batch.size());
  out.lambda_match = static_cast<double>(lambda);
  out.total = out.recon + out.lambda_match * out.match;
  return out;
}

struct TrainOptions {
  int steps = 200;
  int batch = 16;
  double lr = 1e-2;
  double momentum = 0.9;
  double lambda_match = 0.1;
  std::uint64_t seed = 0;
};

struct StepRecord {
  int step = 0;
  double recon = 0, match = 0, total = 0;
};

// Seeded epoch shuffling, consecutive batches, single-threaded. Identical
// (params, data, options) always produce identical trajectories.
template <class S>
std::vector<StepRecord> train_loop(ModelParams<S>& p,
                                   const std::vector<ExampleTensors>& data,
                                   const TrainOptions& opts) {
  if (data.empty()) throw Error(ErrorKind::Domain, "train_loop: no examples");
  OptState<S> opt = make_opt_state(p, static_cast<S>(opts.momentum));
  Rng order_rng(derive_seed(opts.seed, "train/order"));

  std::vector<std::size_t> order(data.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t pos = order.size();  // force an initial shuffle

  std::vector<StepRecord> history;
  history.reserve(static_cast<std::size_t>(opts.steps));
  const std::size_t batch_size =
      std::min<std::size_t>(static_cast<std::size_t>(opts.batch), data.size());
  std::vector<ExampleTensors> batch(batch_size);

  for (int step = 0; step < opts.steps; ++step) {
    for (std::size_t k = 0; k < batch_size; ++k) {
      if (pos == order.size()) {
        order_rng.shuffle(order);
        pos = 0;
      }
      batch[k] = data[order[pos++]];
    }
    LossBreakdown lb = train_step(p, std::span<const ExampleTensors>(batch),
                                  opt, static_cast<S>(opts.lr),
                                  static_cast<S>(opts.lambda_match));
    history.push_back({step, lb.recon, lb.match, lb.total});
  }
  return history;
}

// ---------------------------------------------------------------------------
// Gradient checking (double precision, toy dimensions).

// Central finite differences of the total loss over every parameter, against
// the analytic gradient. The reference latent is computed once at the base
// parameters and held fixed throughout, matching the stop-gradient
// semantics of the analytic path. Returns the max relative error
// |g_fd - g| / max(1e-8, |g_fd| + |g|).
inline double gradient_check(const ModelParams<double>& params,
                             const ExampleTensors& ex, double lambda,
                             double eps = 1e-5) {
  const Eigen::VectorXd z_ref = encode_style(params, ex.refs);

  ModelParams<double> grads = zero_like(params);
  {
    ForwardState<double> st = run_forward(params, ex, lambda, &z_ref);
    run_backward(params, ex, st, lambda, grads);
  }

  ModelParams<double> probe = params;
  double max_rel = 0.0;
  for (std::size_t t = 0; t < probe.tensors.size(); ++t) {
    auto& value = probe.tensors[t].value;
    const auto& g = grads.tensors[t].value;
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double up = loss_with_fixed_ref(probe, ex, lambda, z_ref);
      value.data()[i] = saved - eps;
      const double down = loss_with_fixed_ref(probe, ex, lambda, z_ref);
      value.data()[i] = saved;
      const double fd = (up - down) / (2.0 * eps);
      const double analytic = g.data()[i];
      const double rel = std::abs(fd - analytic) /
                         std::max(1e-8, std::abs(fd) + std::abs(analytic));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---------------------------------------------------------------------------
// Checkpoints.
//
// Binary layout: magic "BPCK", u32 version, u32 d_z, h, T, n, n_ref, then one
// block per tensor: u32 name length, name bytes, u32 rank, u32 dims
// (row-major payload order), f64 little-endian payload. A sidecar JSON
// (<path>.json) carries config, seed, and training metadata.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::filesystem::path& path,
                            const ModelParams<double>& p,
                            const nlohmann::json& meta) {
  std::string buf;
  buf.append("BPCK");
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(p.dims.d_z));
  put_u32(buf, static_cast<std::uint32_t>(p.dims.h));
  put_u32(buf, static_cast<std::uint32_t>(p.dims.T));
  put_u32(buf, static_cast<std::uint32_t>(p.dims.n));
  put_u32(buf, static_cast<std::uint32_t>(p.dims.n_ref));
  for (const auto& t : p.tensors) {
    put_u32(buf, static_cast<std::uint32_t>(t.name.size()));
    buf.append(t.name);
    const bool vector = t.value.cols() == 1;
    put_u32(buf, vector ? 1u : 2u);
    put_u32(buf, static_cast<std::uint32_t>(t.value.rows()));
    if (!vector) put_u32(buf, static_cast<std::uint32_t>(t.value.cols()));
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c)
        put_f64(buf, t.value(r, c));
  }
  write_text_file(path, buf);
  write_text_file(path.string() + ".json", meta.dump(2) + "\n");
}

inline ModelParams<double> load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = read_text_file(path);
  Cursor cur(buf);
  if (cur.take(4) != "BPCK")
    throw Error(ErrorKind::Parse, "not a checkpoint file: " + path.string());
  const std::uint32_t version = cur.u32();
  if (version != kCheckpointVersion)
    throw Error(ErrorKind::Parse,
                "unsupported checkpoint version " + std::to_string(version));
  ModelDims dims;
  dims.d_z = static_cast<int>(cur.u32());
  dims.h = static_cast<int>(cur.u32());
  dims.T = static_cast<int>(cur.u32());
  dims.n = static_cast<int>(cur.u32());
  dims.n_ref = static_cast<int>(cur.u32());

  std::vector<NamedTensor<double>> tensors;
  while (cur.remaining() > 0) {
    const std::uint32_t name_len = cur.u32();
    std::string name(cur.take(name_len));
    const std::uint32_t rank = cur.u32();
    if (rank != 1 && rank != 2)
      throw Error(ErrorKind::Parse, "bad tensor rank in checkpoint",
                  {{"tensor", name}});
    const std::uint32_t rows = cur.u32();
    const std::uint32_t cols = rank == 2 ? cur.u32() : 1u;
    MatX<double> value(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) value(r, c) = cur.f64();
    tensors.push_back({std::move(name), std::move(value)});
  }

  // hidden and row_dim are recoverable from the stored shapes
  ModelParams<double> p;
  auto find = [&tensors](std::string_view name) -> const MatX<double>& {
    for (const auto& t : tensors)
      if (t.name == name) return t.value;
    throw Error(ErrorKind::Schema,
                "checkpoint missing tensor: " + std::string(name));
  };
  dims.hidden = static_cast<int>(find("e3p.l1.weight").rows());
  dims.row_dim = static_cast<int>(find("game.note.l2.weight").rows());
  p.dims = dims;

  for (const auto& [name, shape] : detail::tensor_plan(dims)) {
    const MatX<double>& v = find(name);
    if (v.rows() != shape.first || v.cols() != shape.second)
      throw Error(ErrorKind::Schema, "checkpoint tensor has wrong shape",
                  {{"tensor", name}});
    p.tensors.push_back({name, v});
  }
  if (p.tensors.size() != tensors.size())
    throw Error(ErrorKind::Schema, "checkpoint contains unexpected tensors");
  return p;
}

}  // namespace beatpose
