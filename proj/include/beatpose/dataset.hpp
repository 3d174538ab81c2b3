// Dataset construction: slide a (history, future) window pair over each
// trace/beatmap pair, attach style references from a donor trace, and write
// flat float32 records. Builds are pure functions of (inputs, cfg, seed):
// byte-identical on repeat, independent of thread count.
#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "beatpose/beatmap.hpp"
#include "beatpose/common.hpp"
#include "beatpose/context.hpp"
#include "beatpose/model.hpp"
#include "beatpose/pose.hpp"

namespace beatpose {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct DatasetPair {
  std::filesystem::path trace;
  std::filesystem::path beatmap;
  std::optional<std::filesystem::path> donor;  // defaults to the trace itself
};

struct DatasetConfig {
  WindowConfig window;
  double rate = 30.0;
  int stride = 1;
  LaneGeometry lanes;
};

// {"pairs": [{"trace": ..., "beatmap": ..., "donor": ...?}, ...]}
inline std::vector<DatasetPair> parse_pairs_manifest(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::Manifest, std::string("manifest is not valid JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("pairs") || !j["pairs"].is_array())
    throw Error(ErrorKind::Manifest, "manifest must be an object with a \"pairs\" array");
  std::vector<DatasetPair> pairs;
  for (std::size_t i = 0; i < j["pairs"].size(); ++i) {
    const auto& e = j["pairs"][i];
    if (!e.is_object() || !e.contains("trace") || !e.contains("beatmap") ||
        !e["trace"].is_string() || !e["beatmap"].is_string())
      throw Error(ErrorKind::Manifest, "pair needs string \"trace\" and \"beatmap\"",
                  {{"pair", std::to_string(i)}});
    DatasetPair p;
    p.trace = e["trace"].get<std::string>();
    p.beatmap = e["beatmap"].get<std::string>();
    if (e.contains("donor")) {
      if (!e["donor"].is_string())
        throw Error(ErrorKind::Manifest, "\"donor\" must be a string path",
                    {{"pair", std::to_string(i)}});
      p.donor = e["donor"].get<std::string>();
    }
    pairs.push_back(std::move(p));
  }
  return pairs;
}

namespace detail {

struct RecordField {
  std::string name;
  std::size_t offset;  // in floats
  std::size_t count;
};

inline std::vector<RecordField> record_fields(const WindowConfig& w) {
  const std::size_t F = kFrameFeatureDim;
  std::vector<RecordField> f;
  std::size_t at = 0;
  auto push = [&f, &at](std::string name, std::size_t count) {
    f.push_back({std::move(name), at, count});
    at += count;
  };
  push("history", static_cast<std::size_t>(w.h + 1) * F);
  push("future", static_cast<std::size_t>(w.T) * F);
  push("notes", static_cast<std::size_t>(w.n) * kNoteFeatureDim);
  push("note_mask", static_cast<std::size_t>(w.n));
  push("bombs", static_cast<std::size_t>(w.n) * kBombFeatureDim);
  push("bomb_mask", static_cast<std::size_t>(w.n));
  push("obstacles", static_cast<std::size_t>(w.n) * kObstacleFeatureDim);
  push("obstacle_mask", static_cast<std::size_t>(w.n));
  push("refs", static_cast<std::size_t>(w.n_ref) * static_cast<std::size_t>(w.T) * F);
  push("anchor", 3);
  push("query_time", 1);
  return f;
}

inline std::size_t record_float_count(const WindowConfig& w) {
  const auto f = record_fields(w);
  return f.back().offset + f.back().count;
}

inline void put_matrix(std::string& buf, const Eigen::MatrixXd& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      put_f32(buf, static_cast<float>(m(r, c)));
}

inline void put_vector(std::string& buf, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    put_f32(buf, static_cast<float>(v(i)));
}

inline Eigen::MatrixXd take_matrix(Cursor& cur, Eigen::Index rows, Eigen::Index cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = cur.f32();
  return m;
}

}  // namespace detail

// One example as a length-prefixed float32 record.
inline std::string encode_record(const ExampleTensors& ex, const WindowConfig& w) {
  std::string payload;
  payload.reserve(detail::record_float_count(w) * 4);
  detail::put_matrix(payload, ex.history);
  detail::put_matrix(payload, ex.future);
  detail::put_matrix(payload, ex.context.notes);
  detail::put_vector(payload, ex.context.note_mask);
  detail::put_matrix(payload, ex.context.bombs);
  detail::put_vector(payload, ex.context.bomb_mask);
  detail::put_matrix(payload, ex.context.obstacles);
  detail::put_vector(payload, ex.context.obstacle_mask);
  for (const auto& r : ex.refs) detail::put_matrix(payload, r);
  put_f32(payload, static_cast<float>(ex.anchor.yaw));
  put_f32(payload, static_cast<float>(ex.anchor.translation_xz.x()));
  put_f32(payload, static_cast<float>(ex.anchor.translation_xz.y()));
  put_f32(payload, static_cast<float>(ex.context.query_time));

  std::string rec;
  put_u32(rec, static_cast<std::uint32_t>(payload.size()));
  rec += payload;
  return rec;
}

inline ExampleTensors decode_record(Cursor& cur, const WindowConfig& w) {
  const std::uint32_t len = cur.u32();
  if (len != detail::record_float_count(w) * 4)
    throw Error(ErrorKind::Parse, "dataset record length mismatch",
                {{"expected", std::to_string(detail::record_float_count(w) * 4)},
                 {"got", std::to_string(len)}});
  ExampleTensors ex;
  ex.history = detail::take_matrix(cur, w.h + 1, kFrameFeatureDim);
  ex.future = detail::take_matrix(cur, w.T, kFrameFeatureDim);
  ex.context.notes = detail::take_matrix(cur, w.n, kNoteFeatureDim);
  ex.context.note_mask = detail::take_matrix(cur, w.n, 1);
  ex.context.bombs = detail::take_matrix(cur, w.n, kBombFeatureDim);
  ex.context.bomb_mask = detail::take_matrix(cur, w.n, 1);
  ex.context.obstacles = detail::take_matrix(cur, w.n, kObstacleFeatureDim);
  ex.context.obstacle_mask = detail::take_matrix(cur, w.n, 1);
  ex.refs.resize(static_cast<std::size_t>(w.n_ref));
  for (auto& r : ex.refs) r = detail::take_matrix(cur, w.T, kFrameFeatureDim);
  ex.anchor.yaw = cur.f32();
  const double tx = cur.f32();
  const double tz = cur.f32();
  ex.anchor.translation_xz = Eigen::Vector2d(tx, tz);
  ex.context.query_time = cur.f32();
  return ex;
}

struct BuiltDataset {
  std::string data_bytes;
  nlohmann::json manifest;
  std::size_t example_count = 0;
};

// Examples are emitted in (pair, frame) order at every stride-th admissible
// query frame. An admissible frame i has h frames before it and T after it.
// Style references come from the pair's donor (default: its own trace),
// sampled once per pair with a pair-local derived seed.
inline BuiltDataset build_dataset(const std::vector<DatasetPair>& pairs,
                                  const DatasetConfig& cfg, std::uint64_t seed,
                                  int threads = 1) {
  if (pairs.empty()) throw Error(ErrorKind::Manifest, "manifest lists no pairs");
  if (cfg.stride < 1 || cfg.stride > cfg.window.T)
    throw Error(ErrorKind::Domain, "stride must be in [1, T]");

  struct PairData {
    PoseTrace trace;
    Beatmap map;
    StyleReferenceSet refs;
    std::vector<int> query_frames;
    std::string trace_hash, beatmap_hash, donor_hash;
  };
  std::vector<PairData> loaded(pairs.size());
  const std::uint64_t dataset_seed = derive_seed(seed, "dataset");

  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    PairData& pd = loaded[pi];
    std::string trace_text, map_text;
    try {
      trace_text = read_text_file(pairs[pi].trace);
      map_text = read_text_file(pairs[pi].beatmap);
    } catch (const Error& e) {
      throw Error(ErrorKind::Manifest, std::string("pair input unreadable: ") + e.what(),
                  {{"pair", std::to_string(pi)}});
    }
    pd.trace_hash = sha256_hex(trace_text);
    pd.beatmap_hash = sha256_hex(map_text);
    pd.trace = resample(load_pose_trace(trace_text), cfg.rate);
    pd.map = parse_beatmap(map_text);

    PoseTrace donor;
    if (pairs[pi].donor) {
      const std::string donor_text = read_text_file(*pairs[pi].donor);
      pd.donor_hash = sha256_hex(donor_text);
      donor = resample(load_pose_trace(donor_text), cfg.rate);
    } else {
      pd.donor_hash = pd.trace_hash;
      donor = pd.trace;
    }
    pd.refs = select_style_references(
        donor, cfg.window.n_ref, cfg.window.T,
        derive_seed(dataset_seed, "refs/" + std::to_string(pi)));

    const int F = static_cast<int>(pd.trace.frames.size());
    for (int i = cfg.window.h; i + cfg.window.T <= F - 1; i += cfg.stride)
      pd.query_frames.push_back(i);
  }

  // flat job list in deterministic order
  struct Job {
    std::size_t pair;
    int frame;
  };
  std::vector<Job> jobs;
  for (std::size_t pi = 0; pi < loaded.size(); ++pi)
    for (int f : loaded[pi].query_frames) jobs.push_back({pi, f});

  std::vector<std::string> records(jobs.size());
  auto work = [&](std::size_t j) {
    const PairData& pd = loaded[jobs[j].pair];
    TrainingExample ex =
        build_training_window(pd.trace, pd.map, static_cast<std::size_t>(jobs[j].frame),
                              cfg.window, cfg.lanes, pd.refs);
    records[j] = encode_record(tensorize(ex), cfg.window);
  };

  if (threads <= 1 || jobs.size() < 2) {
    for (std::size_t j = 0; j < jobs.size(); ++j) work(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&] {
      for (;;) {
        const std::size_t j = next.fetch_add(1);
        if (j >= jobs.size()) return;
        try {
          work(j);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
          return;
        }
      }
    };
    std::vector<std::thread> pool;
    const int count = std::min<int>(threads, static_cast<int>(jobs.size()));
    pool.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (first_error) std::rethrow_exception(first_error);
  }

  BuiltDataset out;
  out.example_count = jobs.size();
  out.data_bytes.append("BPDS");
  put_u32(out.data_bytes, kDatasetVersion);
  put_u32(out.data_bytes, static_cast<std::uint32_t>(cfg.window.h));
  put_u32(out.data_bytes, static_cast<std::uint32_t>(cfg.window.T));
  put_u32(out.data_bytes, static_cast<std::uint32_t>(cfg.window.n));
  put_u32(out.data_bytes, static_cast<std::uint32_t>(cfg.window.n_ref));
  put_u32(out.data_bytes, static_cast<std::uint32_t>(jobs.size()));
  for (const std::string& r : records) out.data_bytes += r;

  nlohmann::json fields = nlohmann::json::array();
  for (const auto& f : detail::record_fields(cfg.window))
    fields.push_back({{"name", f.name}, {"offset", f.offset}, {"count", f.count}});
  nlohmann::json inputs = nlohmann::json::array();
  for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
    nlohmann::json e = {{"trace", pairs[pi].trace.string()},
                        {"trace_sha256", loaded[pi].trace_hash},
                        {"beatmap", pairs[pi].beatmap.string()},
                        {"beatmap_sha256", loaded[pi].beatmap_hash},
                        {"examples", loaded[pi].query_frames.size()}};
    if (pairs[pi].donor) e["donor"] = pairs[pi].donor->string();
    e["donor_sha256"] = loaded[pi].donor_hash;
    inputs.push_back(std::move(e));
  }
  out.manifest = {
      {"layout_version", kDatasetVersion},
      {"cfg",
       {{"h", cfg.window.h},
        {"T", cfg.window.T},
        {"n", cfg.window.n},
        {"n_ref", cfg.window.n_ref},
        {"horizon", cfg.window.horizon},
        {"rate", cfg.rate},
        {"stride", cfg.stride}}},
      {"seed", seed},
      {"counts", {{"pairs", pairs.size()}, {"examples", jobs.size()}}},
      {"inputs", std::move(inputs)},
      {"record", {{"float_count", detail::record_float_count(cfg.window)},
                  {"fields", std::move(fields)}}},
  };
  return out;
}

struct LoadedDataset {
  WindowConfig window;
  std::vector<ExampleTensors> examples;
};

inline LoadedDataset load_dataset(const std::string& bytes) {
  Cursor cur(bytes);
  if (cur.take(4) != "BPDS")
    throw Error(ErrorKind::Parse, "not a dataset file");
  const std::uint32_t version = cur.u32();
  if (version != kDatasetVersion)
    throw Error(ErrorKind::Parse, "unsupported dataset version " + std::to_string(version));
  LoadedDataset d;
  d.window.h = static_cast<int>(cur.u32());
  d.window.T = static_cast<int>(cur.u32());
  d.window.n = static_cast<int>(cur.u32());
  d.window.n_ref = static_cast<int>(cur.u32());
  const std::uint32_t count = cur.u32();
  d.examples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i)
    d.examples.push_back(decode_record(cur, d.window));
  if (cur.remaining() != 0)
    throw Error(ErrorKind::Parse, "trailing bytes after last dataset record");
  return d;
}

inline LoadedDataset load_dataset_file(const std::filesystem::path& path) {
  return load_dataset(read_text_file(path));
}

}  // namespace beatpose
