#include "beatpose/dataset.hpp"

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace beatpose;

namespace {

// 25 Hz keeps every timestamp exact at the CSV's 9 decimals, so frame counts
// survive the save -> load -> resample path unchanged.
constexpr double kRate = 25.0;

struct Inputs {
  std::filesystem::path dir;
  std::filesystem::path trace;
  std::filesystem::path beatmap;
};

Inputs write_inputs(const std::string& tag, int frames, std::uint64_t seed) {
  Inputs in;
  in.dir = testutil::temp_dir("dataset_" + tag);
  Rng rng(seed);
  PoseTrace t = testutil::random_trace(rng, frames, kRate);
  in.trace = in.dir / "trace.csv";
  write_text_file(in.trace, save_pose_trace(t));
  Beatmap map = testutil::random_beatmap(rng, frames / kRate, 3, 1, 1);
  in.beatmap = in.dir / "map.json";
  write_text_file(in.beatmap, serialize_beatmap(map));
  return in;
}

DatasetConfig small_cfg(int h, int T, int stride) {
  DatasetConfig cfg;
  cfg.window.h = h;
  cfg.window.T = T;
  cfg.window.n = 2;
  cfg.window.n_ref = 2;
  cfg.rate = kRate;
  cfg.stride = stride;
  return cfg;
}

}  // namespace

TEST(PairsManifest, ParsesPathsAndOptionalDonor) {
  auto pairs = parse_pairs_manifest(
      R"({"pairs": [{"trace": "a.csv", "beatmap": "m.json"},
                    {"trace": "b.csv", "beatmap": "n.json", "donor": "d.csv"}]})");
  ASSERT_EQ(pairs.size(), 2u);
  EXPECT_EQ(pairs[0].trace, "a.csv");
  EXPECT_FALSE(pairs[0].donor.has_value());
  ASSERT_TRUE(pairs[1].donor.has_value());
  EXPECT_EQ(*pairs[1].donor, "d.csv");
}

TEST(PairsManifest, RejectsMalformedDocuments) {
  auto expect_manifest_error = [](const std::string& text) {
    try {
      parse_pairs_manifest(text);
      ADD_FAILURE() << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::Manifest) << text;
    }
  };
  expect_manifest_error("not json");
  expect_manifest_error(R"({"no_pairs": []})");
  expect_manifest_error(R"({"pairs": [{"trace": "a.csv"}]})");
  expect_manifest_error(R"({"pairs": [{"trace": 3, "beatmap": "m.json"}]})");
  expect_manifest_error(
      R"({"pairs": [{"trace": "a.csv", "beatmap": "m.json", "donor": 5}]})");
}

TEST(BuildDataset, CountsAdmissibleQueryFrames) {
  const int h = 3, T = 5;
  // h + T + 2 frames admit query indices h and h+1.
  Inputs in = write_inputs("count", h + T + 2, 41);
  std::vector<DatasetPair> pairs{{in.trace, in.beatmap, std::nullopt}};

  BuiltDataset one = build_dataset(pairs, small_cfg(h, T, 1), 7);
  EXPECT_EQ(one.example_count, 2u);
  EXPECT_EQ(one.manifest["counts"]["examples"].get<std::size_t>(), 2u);

  BuiltDataset strided = build_dataset(pairs, small_cfg(h, T, 2), 7);
  EXPECT_EQ(strided.example_count, 1u);

  // One frame fewer leaves a single admissible index. 9 frames cannot seat
  // two disjoint 5-frame reference windows, so this variant uses one.
  Inputs tight = write_inputs("tight", h + T + 1, 42);
  std::vector<DatasetPair> tp{{tight.trace, tight.beatmap, std::nullopt}};
  DatasetConfig tight_cfg = small_cfg(h, T, 1);
  tight_cfg.window.n_ref = 1;
  EXPECT_EQ(build_dataset(tp, tight_cfg, 7).example_count, 1u);
}

TEST(BuildDataset, RebuildsAreByteIdentical) {
  Inputs in = write_inputs("rebuild", 40, 43);
  std::vector<DatasetPair> pairs{{in.trace, in.beatmap, std::nullopt}};
  const DatasetConfig cfg = small_cfg(4, 6, 1);

  BuiltDataset a = build_dataset(pairs, cfg, 9);
  BuiltDataset b = build_dataset(pairs, cfg, 9);
  EXPECT_EQ(a.data_bytes, b.data_bytes);
  EXPECT_EQ(a.manifest.dump(), b.manifest.dump());

  // Different seed changes the style reference draw.
  BuiltDataset c = build_dataset(pairs, cfg, 10);
  EXPECT_NE(a.data_bytes, c.data_bytes);
}

TEST(BuildDataset, ThreadCountDoesNotChangeBytes) {
  Inputs in = write_inputs("threads", 60, 44);
  std::vector<DatasetPair> pairs{{in.trace, in.beatmap, std::nullopt}};
  const DatasetConfig cfg = small_cfg(4, 6, 1);
  BuiltDataset serial = build_dataset(pairs, cfg, 11, 1);
  BuiltDataset threaded = build_dataset(pairs, cfg, 11, 4);
  EXPECT_EQ(serial.data_bytes, threaded.data_bytes);
}

TEST(BuildDataset, ManifestRecordsHashesAndLayout) {
  Inputs in = write_inputs("manifest", 30, 45);
  std::vector<DatasetPair> pairs{{in.trace, in.beatmap, std::nullopt}};
  const DatasetConfig cfg = small_cfg(3, 5, 1);
  BuiltDataset built = build_dataset(pairs, cfg, 12);
  const nlohmann::json& m = built.manifest;

  EXPECT_EQ(m["layout_version"].get<std::uint32_t>(), kDatasetVersion);
  EXPECT_EQ(m["seed"].get<std::uint64_t>(), 12u);
  EXPECT_EQ(m["cfg"]["h"].get<int>(), 3);
  EXPECT_EQ(m["cfg"]["T"].get<int>(), 5);
  EXPECT_EQ(m["cfg"]["rate"].get<double>(), kRate);
  EXPECT_EQ(m["counts"]["pairs"].get<std::size_t>(), 1u);
  ASSERT_EQ(m["inputs"].size(), 1u);
  EXPECT_EQ(m["inputs"][0]["trace_sha256"].get<std::string>(),
            sha256_hex_file(in.trace));
  EXPECT_EQ(m["inputs"][0]["beatmap_sha256"].get<std::string>(),
            sha256_hex_file(in.beatmap));
  // Donorless pairs fall back to the trace.
  EXPECT_EQ(m["inputs"][0]["donor_sha256"].get<std::string>(),
            sha256_hex_file(in.trace));
  EXPECT_EQ(m["record"]["float_count"].get<std::size_t>(),
            detail::record_float_count(cfg.window));
  EXPECT_GT(m["record"]["fields"].size(), 0u);
}

TEST(BuildDataset, DonorSuppliesStyleReferences) {
  Inputs in = write_inputs("donor", 30, 46);
  Rng rng(47);
  PoseTrace donor_trace = testutil::random_trace(rng, 50, kRate);
  auto donor_path = in.dir / "donor.csv";
  write_text_file(donor_path, save_pose_trace(donor_trace));

  std::vector<DatasetPair> with{{in.trace, in.beatmap, donor_path}};
  std::vector<DatasetPair> without{{in.trace, in.beatmap, std::nullopt}};
  const DatasetConfig cfg = small_cfg(3, 5, 1);

  BuiltDataset a = build_dataset(with, cfg, 13);
  BuiltDataset b = build_dataset(without, cfg, 13);
  EXPECT_EQ(a.manifest["inputs"][0]["donor_sha256"].get<std::string>(),
            sha256_hex_file(donor_path));
  EXPECT_NE(a.data_bytes, b.data_bytes);

  // Reference rows in the records match an independent re-selection from the
  // donor at the pair-local derived seed.
  LoadedDataset loaded = load_dataset(a.data_bytes);
  ASSERT_FALSE(loaded.examples.empty());
  PoseTrace donor_resampled =
      resample(load_pose_trace(read_text_file(donor_path)), kRate);
  StyleReferenceSet refs = select_style_references(
      donor_resampled, cfg.window.n_ref, cfg.window.T,
      derive_seed(derive_seed(13, "dataset"), "refs/0"));
  ASSERT_EQ(loaded.examples[0].refs.size(), refs.refs.size());
  for (std::size_t r = 0; r < refs.refs.size(); ++r) {
    Eigen::MatrixXd expect = window_features(refs.refs[r]).cast<float>().cast<double>();
    EXPECT_LT((loaded.examples[0].refs[r] - expect).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(BuildDataset, ErrorsOnBadInputs) {
  Inputs in = write_inputs("errors", 30, 48);
  const DatasetConfig cfg = small_cfg(3, 5, 1);
  EXPECT_THROW(build_dataset({}, cfg, 1), Error);

  std::vector<DatasetPair> missing{{in.dir / "nope.csv", in.beatmap, std::nullopt}};
  try {
    build_dataset(missing, cfg, 1);
    FAIL() << "expected Manifest error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Manifest);
  }

  std::vector<DatasetPair> pairs{{in.trace, in.beatmap, std::nullopt}};
  DatasetConfig bad = cfg;
  bad.stride = 0;
  EXPECT_THROW(build_dataset(pairs, bad, 1), Error);
  bad.stride = cfg.window.T + 1;
  EXPECT_THROW(build_dataset(pairs, bad, 1), Error);
}

TEST(Records, EncodeDecodeRoundTripAtFloatPrecision) {
  Inputs in = write_inputs("record", 30, 49);
  std::vector<DatasetPair> pairs{{in.trace, in.beatmap, std::nullopt}};
  const DatasetConfig cfg = small_cfg(3, 5, 1);
  BuiltDataset built = build_dataset(pairs, cfg, 14);
  LoadedDataset loaded = load_dataset(built.data_bytes);
  ASSERT_EQ(loaded.examples.size(), built.example_count);

  for (const ExampleTensors& ex : loaded.examples) {
    const std::string bytes = encode_record(ex, cfg.window);
    Cursor cur(bytes);
    ExampleTensors back = decode_record(cur, cfg.window);
    EXPECT_EQ(cur.remaining(), 0u);
    EXPECT_EQ((back.history - ex.history).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((back.future - ex.future).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((back.context.notes - ex.context.notes).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ((back.context.note_mask - ex.context.note_mask).cwiseAbs().maxCoeff(),
              0.0);
    EXPECT_EQ(back.anchor.yaw, ex.anchor.yaw);
    EXPECT_EQ(back.context.query_time, ex.context.query_time);
  }
}

TEST(LoadDataset, HeaderCarriesWindowDims) {
  Inputs in = write_inputs("dims", 30, 50);
  std::vector<DatasetPair> pairs{{in.trace, in.beatmap, std::nullopt}};
  const DatasetConfig cfg = small_cfg(4, 6, 2);
  BuiltDataset built = build_dataset(pairs, cfg, 15);
  LoadedDataset loaded = load_dataset(built.data_bytes);
  EXPECT_EQ(loaded.window.h, 4);
  EXPECT_EQ(loaded.window.T, 6);
  EXPECT_EQ(loaded.window.n, cfg.window.n);
  EXPECT_EQ(loaded.window.n_ref, cfg.window.n_ref);
  ASSERT_FALSE(loaded.examples.empty());
  EXPECT_EQ(loaded.examples[0].history.rows(), 5);
  EXPECT_EQ(loaded.examples[0].future.rows(), 6);
}

TEST(LoadDataset, RejectsCorruptBytes) {
  Inputs in = write_inputs("corrupt", 30, 51);
  std::vector<DatasetPair> pairs{{in.trace, in.beatmap, std::nullopt}};
  BuiltDataset built = build_dataset(pairs, small_cfg(3, 5, 1), 16);

  std::string magic = built.data_bytes;
  magic[0] = 'X';
  EXPECT_THROW(load_dataset(magic), Error);

  std::string truncated = built.data_bytes.substr(0, built.data_bytes.size() - 5);
  EXPECT_THROW(load_dataset(truncated), Error);

  std::string trailing = built.data_bytes + "zz";
  EXPECT_THROW(load_dataset(trailing), Error);

  std::string version = built.data_bytes;
  version[4] = 9;
  EXPECT_THROW(load_dataset(version), Error);
}
