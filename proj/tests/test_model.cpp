#include "beatpose/model.hpp"

#include <cmath>
#include <cstring>
#include <vector>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace beatpose;

namespace {

ModelDims toy_dims() {
  ModelDims d;
  d.d_z = 4;
  d.hidden = 8;
  d.row_dim = 4;
  d.h = 2;
  d.T = 3;
  d.n = 2;
  d.n_ref = 2;
  return d;
}

WindowConfig toy_window(const ModelDims& d) {
  WindowConfig w;
  w.h = d.h;
  w.T = d.T;
  w.n = d.n;
  w.n_ref = d.n_ref;
  return w;
}

Beatmap toy_map() {
  Beatmap map;
  map.bpm = 120.0;
  map.song_length = 10.0;
  map.notes = {{1.0, 1, 1, NoteColor::Right, CutDirection::Down},
               {2.0, 2, 0, NoteColor::Left, CutDirection::Any}};
  map.bombs = {{1.5, 0, 2}};
  map.obstacles = {{2.0, 2.0, 0, 2, ObstacleKind::FullHeight}};
  sort_events(map);
  return map;
}

ExampleTensors toy_example(std::uint64_t seed, const ModelDims& d = toy_dims()) {
  Rng rng(seed);
  PoseTrace trace = testutil::random_trace(rng, 16);
  StyleReferenceSet refs =
      select_style_references(trace, d.n_ref, d.T, derive_seed(seed, "refs"));
  TrainingExample ex = build_training_window(
      trace, toy_map(), static_cast<std::size_t>(d.h + 3), toy_window(d), {},
      std::move(refs));
  return tensorize(ex);
}

bool params_equal_bits(const ModelParams<double>& a, const ModelParams<double>& b) {
  if (a.tensors.size() != b.tensors.size()) return false;
  for (std::size_t i = 0; i < a.tensors.size(); ++i) {
    const auto& x = a.tensors[i].value;
    const auto& y = b.tensors[i].value;
    if (a.tensors[i].name != b.tensors[i].name || x.rows() != y.rows() ||
        x.cols() != y.cols())
      return false;
    if (std::memcmp(x.data(), y.data(),
                    static_cast<std::size_t>(x.size()) * sizeof(double)) != 0)
      return false;
  }
  return true;
}

GameContext random_context(Rng& rng, int n) {
  GameContext ctx;
  ctx.notes = Eigen::MatrixXd::Zero(n, kNoteFeatureDim);
  ctx.note_mask = Eigen::VectorXd::Zero(n);
  ctx.bombs = Eigen::MatrixXd::Zero(n, kBombFeatureDim);
  ctx.bomb_mask = Eigen::VectorXd::Zero(n);
  ctx.obstacles = Eigen::MatrixXd::Zero(n, kObstacleFeatureDim);
  ctx.obstacle_mask = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (rng.uniform() < 0.7) {
      for (int c = 0; c < kNoteFeatureDim; ++c) ctx.notes(i, c) = rng.uniform(-1, 1);
      ctx.note_mask(i) = 1.0;
    }
    if (rng.uniform() < 0.5) {
      for (int c = 0; c < kBombFeatureDim; ++c) ctx.bombs(i, c) = rng.uniform(-1, 1);
      ctx.bomb_mask(i) = 1.0;
    }
    if (rng.uniform() < 0.5) {
      for (int c = 0; c < kObstacleFeatureDim; ++c)
        ctx.obstacles(i, c) = rng.uniform(-1, 1);
      ctx.obstacle_mask(i) = 1.0;
    }
  }
  return ctx;
}

void permute_rows(Eigen::MatrixXd& m, Eigen::VectorXd& mask,
                  const std::vector<int>& perm) {
  Eigen::MatrixXd pm = m;
  Eigen::VectorXd pk = mask;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    pm.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
    pk(static_cast<Eigen::Index>(i)) = mask(perm[i]);
  }
  m = pm;
  mask = pk;
}

Eigen::MatrixXd identity_features(int T) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(T, kFrameFeatureDim);
  for (int i = 0; i < T; ++i)
    for (int j = 0; j < 3; ++j) {
      m(i, 9 * j + 3) = 1.0;  // first half (1,0,0)
      m(i, 9 * j + 7) = 1.0;  // second half (0,1,0)
    }
  return m;
}

}  // namespace

TEST(Init, DeterministicAndSeedSensitive) {
  const ModelDims d = toy_dims();
  auto a = init_params<double>(d, 5);
  auto b = init_params<double>(d, 5);
  EXPECT_TRUE(params_equal_bits(a, b));
  auto c = init_params<double>(d, 6);
  EXPECT_FALSE(params_equal_bits(a, c));
}

TEST(Init, WeightsBoundedByFanIn) {
  auto p = init_params<double>(toy_dims(), 7);
  for (const auto& t : p.tensors) {
    if (t.value.cols() == 1) continue;  // biases share the layer scale
    const double bound = 1.0 / std::sqrt(static_cast<double>(t.value.cols()));
    EXPECT_LE(t.value.cwiseAbs().maxCoeff(), bound) << t.name;
    // Not all-zero either.
    EXPECT_GT(t.value.cwiseAbs().maxCoeff(), 0.0) << t.name;
  }
}

TEST(Init, PlanCoversExpectedTensors) {
  auto p = init_params<double>(toy_dims(), 8);
  for (const char* name :
       {"e3p.l1.weight", "e3p.l2.bias", "style.l1.weight", "game.note.l2.weight",
        "game.bomb.l1.bias", "game.obstacle.l2.bias", "game.head.weight",
        "dec.l1.weight", "dec.l2.bias"})
    EXPECT_NO_THROW(p.at(name)) << name;
  EXPECT_THROW(p.at("nope"), Error);
}

TEST(Encode3p, ZeroFinalLayerGivesZeroLatent) {
  auto p = init_params<double>(toy_dims(), 9);
  p.at("e3p.l2.weight").setZero();
  p.at("e3p.l2.bias").setZero();
  const ExampleTensors ex = toy_example(1);
  const Eigen::VectorXd z = encode_3p(p, ex.history);
  EXPECT_EQ(z.norm(), 0.0);
}

TEST(Encode3p, ShapeChecked) {
  auto p = init_params<double>(toy_dims(), 10);
  Eigen::MatrixXd wrong = Eigen::MatrixXd::Zero(toy_dims().h + 2, kFrameFeatureDim);
  EXPECT_THROW(encode_3p(p, wrong), Error);
}

TEST(EncodeGame, EmptyContextEqualsHeadBias) {
  auto p = init_params<double>(toy_dims(), 11);
  Rng rng(12);
  GameContext a = random_context(rng, toy_dims().n);
  a.note_mask.setZero();
  a.bomb_mask.setZero();
  a.obstacle_mask.setZero();
  GameContext b = random_context(rng, toy_dims().n);
  b.note_mask.setZero();
  b.bomb_mask.setZero();
  b.obstacle_mask.setZero();
  const Eigen::VectorXd za = encode_game(p, a);
  const Eigen::VectorXd zb = encode_game(p, b);
  EXPECT_EQ((za - zb).norm(), 0.0);
  EXPECT_EQ((za - p.at("game.head.bias").col(0)).norm(), 0.0);
}

TEST(EncodeGame, PermutationAndMaskInvariance) {
  auto p = init_params<double>(toy_dims(), 13);
  Rng rng(14);
  const int n = 6;
  for (int rep = 0; rep < 30; ++rep) {
    GameContext ctx = random_context(rng, n);
    const Eigen::VectorXd base = encode_game(p, ctx);

    GameContext shuffled = ctx;
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
    std::vector<int> tmp = perm;
    rng.shuffle(tmp);
    permute_rows(shuffled.notes, shuffled.note_mask, tmp);
    rng.shuffle(tmp);
    permute_rows(shuffled.bombs, shuffled.bomb_mask, tmp);
    rng.shuffle(tmp);
    permute_rows(shuffled.obstacles, shuffled.obstacle_mask, tmp);
    const Eigen::VectorXd zp = encode_game(p, shuffled);
    EXPECT_LT((zp - base).norm(), 1e-9);

    // Rewriting masked rows cannot move the latent at all.
    GameContext scribbled = ctx;
    for (int i = 0; i < n; ++i) {
      if (scribbled.note_mask(i) == 0.0)
        scribbled.notes.row(i).setConstant(rng.uniform(-9, 9));
      if (scribbled.bomb_mask(i) == 0.0)
        scribbled.bombs.row(i).setConstant(rng.uniform(-9, 9));
      if (scribbled.obstacle_mask(i) == 0.0)
        scribbled.obstacles.row(i).setConstant(rng.uniform(-9, 9));
    }
    const Eigen::VectorXd zs = encode_game(p, scribbled);
    EXPECT_EQ((zs - base).norm(), 0.0);
  }
}

TEST(EncodeStyle, PoolingOverReferences) {
  auto p = init_params<double>(toy_dims(), 15);
  Rng rng(16);
  Eigen::MatrixXd r(toy_dims().T, kFrameFeatureDim);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-1, 1);

  const Eigen::VectorXd single = encode_style(p, {r});
  const Eigen::VectorXd window = encode_style_window(p, Eigen::MatrixXd(r));
  EXPECT_EQ((single - window).norm(), 0.0);  // mean over one ref is exact

  const Eigen::VectorXd triple = encode_style(p, {r, r, r});
  EXPECT_LT((triple - single).norm(), 1e-12);

  Eigen::MatrixXd r2 = r;
  r2.array() += 0.3;
  const Eigen::VectorXd ab = encode_style(p, {r, r2});
  const Eigen::VectorXd ba = encode_style(p, {r2, r});
  EXPECT_LT((ab - ba).norm(), 1e-9);

  EXPECT_THROW(encode_style(p, {}), Error);
}

TEST(Decode, ProducesOrthonormalRotationHalves) {
  auto p = init_params<double>(toy_dims(), 17);
  Rng rng(18);
  const int dz = toy_dims().d_z;
  for (int rep = 0; rep < 200; ++rep) {
    Eigen::VectorXd z1(dz), z2(dz), z3(dz);
    for (int i = 0; i < dz; ++i) {
      z1(i) = rng.uniform(-2, 2);
      z2(i) = rng.uniform(-2, 2);
      z3(i) = rng.uniform(-2, 2);
    }
    const Eigen::MatrixXd pred = decode(p, z1, z2, z3);
    ASSERT_EQ(pred.rows(), toy_dims().T);
    ASSERT_EQ(pred.cols(), kFrameFeatureDim);
    for (int i = 0; i < pred.rows(); ++i) {
      for (int j = 0; j < 3; ++j) {
        const Eigen::Vector3d b1 = pred.block<1, 3>(i, 9 * j + 3).transpose();
        const Eigen::Vector3d b2 = pred.block<1, 3>(i, 9 * j + 6).transpose();
        EXPECT_NEAR(b1.norm(), 1.0, 1e-9);
        EXPECT_NEAR(b2.norm(), 1.0, 1e-9);
        EXPECT_NEAR(b1.dot(b2), 0.0, 1e-9);
        std::array<double, 6> sixd{b1.x(), b1.y(), b1.z(), b2.x(), b2.y(), b2.z()};
        EXPECT_NO_THROW(rotation_from_6d(sixd));
      }
    }
  }
}

TEST(Decode, ShapeChecked) {
  auto p = init_params<double>(toy_dims(), 19);
  Eigen::VectorXd good = Eigen::VectorXd::Zero(toy_dims().d_z);
  Eigen::VectorXd bad = Eigen::VectorXd::Zero(toy_dims().d_z + 1);
  EXPECT_THROW(decode(p, bad, good, good), Error);
  EXPECT_THROW(decode(p, good, good, bad), Error);
}

TEST(LossRecon, PerfectPredictionIsZero) {
  const int T = 3;
  Eigen::MatrixXd m = identity_features(T);
  EXPECT_EQ(loss_recon(m, m), 0.0);
}

TEST(LossRecon, PositionOffsetPinnedValue) {
  const int T = 3;
  Eigen::MatrixXd target = identity_features(T);
  Eigen::MatrixXd pred = target;
  pred(0, 0) += 0.1;  // head x of the first frame
  EXPECT_DOUBLE_EQ(loss_recon(pred, target), 0.1 * 0.1 / (3.0 * T));
}

TEST(LossRecon, NinetyDegreeRotationPinnedValue) {
  const int T = 3;
  Eigen::MatrixXd target = identity_features(T);
  Eigen::MatrixXd pred = target;
  // One joint's frame rotated 90 degrees about z: columns (0,1,0), (-1,0,0).
  pred.block<1, 3>(1, 9 * 2 + 3) = Eigen::RowVector3d(0, 1, 0);
  pred.block<1, 3>(1, 9 * 2 + 6) = Eigen::RowVector3d(-1, 0, 0);
  const double theta = std::acos(0.0);
  EXPECT_DOUBLE_EQ(loss_recon(pred, target), theta * theta / (3.0 * T));
}

TEST(LossRecon, SymmetricInRotationAndShapeChecked) {
  Rng rng(20);
  auto p = init_params<double>(toy_dims(), 21);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(toy_dims().d_z);
  Eigen::MatrixXd a = decode(p, z, z, z);
  Eigen::VectorXd z2 = z;
  z2(0) = 1.0;
  Eigen::MatrixXd b = decode(p, z2, z, z);
  // Geodesic term is symmetric in its rotation arguments; positions are
  // symmetric squared differences.
  EXPECT_NEAR(loss_recon(a, b), loss_recon(b, a), 1e-12);
  Eigen::MatrixXd wrong(a.rows() + 1, kFrameFeatureDim);
  EXPECT_THROW(loss_recon(wrong, a), Error);
}

TEST(LossMatch, FixedPointIsExactlyZero) {
  auto p = init_params<double>(toy_dims(), 22);
  Rng rng(23);
  Eigen::MatrixXd r(toy_dims().T, kFrameFeatureDim);
  for (Eigen::Index i = 0; i < r.size(); ++i) r.data()[i] = rng.uniform(-1, 1);
  const Eigen::VectorXd z_ref = encode_style(p, {r});
  const Eigen::VectorXd z_pred = encode_style_window(p, Eigen::MatrixXd(r));
  EXPECT_EQ(loss_match(z_pred, z_ref), 0.0);
}

TEST(LossMatch, QuadraticAndRecomputable) {
  Rng rng(24);
  Eigen::VectorXd z(6), d(6);
  for (int i = 0; i < 6; ++i) {
    z(i) = rng.uniform(-1, 1);
    d(i) = rng.uniform(-1, 1);
  }
  const double one = loss_match<double>(z, Eigen::VectorXd(z + d));
  const double two = loss_match<double>(z, Eigen::VectorXd(z + 2 * d));
  EXPECT_NEAR(two, 4.0 * one, 1e-12 * std::max(1.0, two));

  double manual = 0.0;
  for (int i = 0; i < 6; ++i) manual += d(i) * d(i);
  EXPECT_NEAR(one, manual, 1e-15);

  Eigen::VectorXd shorter(5);
  EXPECT_THROW(loss_match<double>(z, shorter), Error);
}

TEST(TotalLoss, BreakdownIdentity) {
  auto p = init_params<double>(toy_dims(), 25);
  const ExampleTensors ex = toy_example(2);
  const LossBreakdown lb = total_loss(p, ex, 0.37);
  EXPECT_EQ(lb.lambda_match, 0.37);
  EXPECT_EQ(lb.total, lb.recon + lb.lambda_match * lb.match);
  EXPECT_GE(lb.recon, 0.0);
  EXPECT_GE(lb.match, 0.0);
}

TEST(TotalLoss, LambdaZeroEqualsRecon) {
  auto p = init_params<double>(toy_dims(), 26);
  const ExampleTensors ex = toy_example(3);
  const LossBreakdown lb = total_loss(p, ex, 0.0);
  EXPECT_EQ(lb.total, lb.recon);
  const LossBreakdown with = total_loss(p, ex, 0.5);
  EXPECT_EQ(lb.recon, with.recon);  // lambda does not change the forward recon
}

TEST(TrainStep, LrZeroIsBitExactNoOp) {
  auto p = init_params<double>(toy_dims(), 27);
  auto before = p;
  auto opt = make_opt_state(p);
  std::vector<ExampleTensors> batch{toy_example(4), toy_example(5)};
  const LossBreakdown lb =
      train_step(p, std::span<const ExampleTensors>(batch), opt, 0.0, 0.1);
  EXPECT_TRUE(params_equal_bits(p, before));
  EXPECT_GT(lb.total, 0.0);
  // Velocity still accumulates, so a later nonzero-lr step is well-defined.
  double vnorm = 0.0;
  for (const auto& v : opt.velocity) vnorm += v.norm();
  EXPECT_GT(vnorm, 0.0);
}

TEST(TrainStep, RejectsEmptyBatchAndNonFiniteParams) {
  auto p = init_params<double>(toy_dims(), 28);
  auto opt = make_opt_state(p);
  std::vector<ExampleTensors> none;
  EXPECT_THROW(train_step(p, std::span<const ExampleTensors>(none), opt, 0.01, 0.1),
               Error);

  p.at("dec.l2.weight")(0, 0) = std::numeric_limits<double>::quiet_NaN();
  std::vector<ExampleTensors> batch{toy_example(6)};
  try {
    train_step(p, std::span<const ExampleTensors>(batch), opt, 0.01, 0.1);
    FAIL() << "expected Training error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Training);
  }
}

TEST(TrainLoop, DeterministicTrajectories) {
  std::vector<ExampleTensors> data{toy_example(7), toy_example(8), toy_example(9)};
  TrainOptions opts;
  opts.steps = 30;
  opts.batch = 2;
  opts.seed = 77;

  auto p1 = init_params<double>(toy_dims(), 30);
  auto h1 = train_loop(p1, data, opts);
  auto p2 = init_params<double>(toy_dims(), 30);
  auto h2 = train_loop(p2, data, opts);

  EXPECT_TRUE(params_equal_bits(p1, p2));
  ASSERT_EQ(h1.size(), h2.size());
  for (std::size_t i = 0; i < h1.size(); ++i) {
    EXPECT_EQ(h1[i].total, h2[i].total);
    EXPECT_EQ(h1[i].recon, h2[i].recon);
    EXPECT_EQ(h1[i].match, h2[i].match);
  }

  // A different order seed diverges.
  auto p3 = init_params<double>(toy_dims(), 30);
  TrainOptions other = opts;
  other.seed = 78;
  auto h3 = train_loop(p3, data, other);
  bool same = true;
  for (std::size_t i = 0; i < h1.size(); ++i)
    if (h1[i].total != h3[i].total) same = false;
  EXPECT_FALSE(same);
}

TEST(TrainLoop, LossDecreasesOnSmallSet) {
  std::vector<ExampleTensors> data{toy_example(10), toy_example(11),
                                   toy_example(12), toy_example(13)};
  auto p = init_params<double>(toy_dims(), 31);
  TrainOptions opts;
  opts.steps = 300;
  opts.batch = 4;
  opts.lr = 1e-2;
  opts.seed = 1;
  auto hist = train_loop(p, data, opts);
  EXPECT_LT(hist.back().recon, 0.5 * hist.front().recon);
}

TEST(GradientCheck, ToyDimsBelowTolerance) {
  auto p = init_params<double>(toy_dims(), 32);
  const ExampleTensors ex = toy_example(14);
  const double err = gradient_check(p, ex, 0.1);
  EXPECT_LT(err, 1e-4);
}

TEST(GradientCheck, HalvedEpsilonStaysAccurate) {
  auto p = init_params<double>(toy_dims(), 33);
  const ExampleTensors ex = toy_example(15);
  const double err = gradient_check(p, ex, 0.1, 1e-5);
  const double half = gradient_check(p, ex, 0.1, 5e-6);
  EXPECT_LT(err, 1e-4);
  EXPECT_LT(half, 1e-4);
  // Shrinks with the truncation term or sits in the roundoff floor.
  EXPECT_LT(half, std::max(err * 2.0, 1e-5));
}

TEST(GradientCheck, DetectsCorruptedGradient) {
  auto p = init_params<double>(toy_dims(), 34);
  const ExampleTensors ex = toy_example(16);
  const double lambda = 0.1;

  const Eigen::VectorXd z_ref = encode_style(p, ex.refs);
  ModelParams<double> grads = zero_like(p);
  {
    ForwardState<double> st = run_forward(p, ex, lambda, &z_ref);
    run_backward(p, ex, st, lambda, grads);
  }
  // Simulate a backward-pass bug in one layer.
  Eigen::MatrixXd& g = grads.at("dec.l1.weight");
  g = g * 1.5;
  g.array() += 0.01;

  const double eps = 1e-5;
  ModelParams<double> probe = p;
  Eigen::MatrixXd& value = probe.at("dec.l1.weight");
  double max_rel = 0.0;
  for (Eigen::Index i = 0; i < value.size(); ++i) {
    const double saved = value.data()[i];
    value.data()[i] = saved + eps;
    const double up = loss_with_fixed_ref(probe, ex, lambda, z_ref);
    value.data()[i] = saved - eps;
    const double down = loss_with_fixed_ref(probe, ex, lambda, z_ref);
    value.data()[i] = saved;
    const double fd = (up - down) / (2.0 * eps);
    const double analytic = g.data()[i];
    max_rel = std::max(max_rel, std::abs(fd - analytic) /
                                    std::max(1e-8, std::abs(fd) + std::abs(analytic)));
  }
  EXPECT_GT(max_rel, 1e-2);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  auto dir = testutil::temp_dir("model_ckpt");
  auto p = init_params<double>(toy_dims(), 35);
  nlohmann::json meta{{"seed", 35}, {"note", "test"}};
  save_checkpoint(dir / "m.bpck", p, meta);

  auto q = load_checkpoint(dir / "m.bpck");
  EXPECT_EQ(q.dims, p.dims);
  EXPECT_TRUE(params_equal_bits(p, q));

  // Re-saving the loaded params reproduces the file byte for byte.
  save_checkpoint(dir / "m2.bpck", q, meta);
  EXPECT_EQ(read_text_file(dir / "m.bpck"), read_text_file(dir / "m2.bpck"));

  const std::string sidecar = read_text_file(dir / "m.bpck.json");
  EXPECT_NE(sidecar.find("\"seed\""), std::string::npos);
}

TEST(Checkpoint, RejectsCorruption) {
  auto dir = testutil::temp_dir("model_ckpt_bad");
  auto p = init_params<double>(toy_dims(), 36);
  save_checkpoint(dir / "m.bpck", p, nlohmann::json::object());
  const std::string good = read_text_file(dir / "m.bpck");

  auto expect_kind = [&dir](const std::string& bytes, ErrorKind kind,
                            const char* why) {
    write_text_file(dir / "bad.bpck", bytes);
    try {
      load_checkpoint(dir / "bad.bpck");
      ADD_FAILURE() << "expected error: " << why;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), kind) << why;
    }
  };

  std::string magic = good;
  magic[0] = 'X';
  expect_kind(magic, ErrorKind::Parse, "bad magic");

  std::string version = good;
  version[4] = 9;
  expect_kind(version, ErrorKind::Parse, "bad version");

  expect_kind(good.substr(0, good.size() - 13), ErrorKind::Parse,
              "mid-block truncation");

  // Cleanly dropping the final tensor block (dec.l2.bias) leaves a parseable
  // file with a missing tensor.
  const std::size_t tail = 4 + std::string("dec.l2.bias").size() + 4 + 4 +
                           static_cast<std::size_t>(toy_dims().T) * 27 * 8;
  expect_kind(good.substr(0, good.size() - tail), ErrorKind::Schema,
              "missing tensor");

  std::string extra = good;
  put_u32(extra, 5);
  extra.append("bonus");
  put_u32(extra, 1);
  put_u32(extra, 1);
  put_f64(extra, 1.0);
  expect_kind(extra, ErrorKind::Schema, "unexpected tensor");
}

TEST(Tensorize, ShapesMatchWindowConfig) {
  const ModelDims d = toy_dims();
  const ExampleTensors ex = toy_example(17, d);
  EXPECT_EQ(ex.history.rows(), d.h + 1);
  EXPECT_EQ(ex.history.cols(), kFrameFeatureDim);
  EXPECT_EQ(ex.future.rows(), d.T);
  ASSERT_EQ(ex.refs.size(), static_cast<std::size_t>(d.n_ref));
  for (const auto& r : ex.refs) EXPECT_EQ(r.rows(), d.T);
  EXPECT_EQ(ex.context.notes.rows(), d.n);
}
