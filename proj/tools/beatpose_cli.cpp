// Command-line front end: ingest / dataset / train / rollout / eval /
// gradcheck. Every command is a pure function of (inputs, config, seed) to
// output files; sidecars echo the effective config and input hashes. Errors
// leave a single-line JSON envelope on stderr and a nonzero exit code.
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "beatpose/beatmap.hpp"
#include "beatpose/common.hpp"
#include "beatpose/config.hpp"
#include "beatpose/context.hpp"
#include "beatpose/dataset.hpp"
#include "beatpose/eval.hpp"
#include "beatpose/model.hpp"
#include "beatpose/pose.hpp"
#include "beatpose/rollout.hpp"

namespace {

using namespace beatpose;

struct GlobalArgs {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir = "out";
  int threads = 0;  // 0 = take from config
};

PipelineConfig effective_config(const GlobalArgs& g) {
  PipelineConfig c;
  if (!g.config_path.empty()) c = parse_config(read_text_file(g.config_path));
  if (g.seed_set) c.seed = g.seed;
  if (g.threads > 0) c.threads = g.threads;
  c.validate();
  return c;
}

// Reference windows for rollout and eval. Both commands derive the same
// seed label, so given one (seed, donor, dims) they agree on the selection.
StyleReferenceSet donor_refs(const std::string& donor_text, const PipelineConfig& cfg) {
  const PoseTrace donor = resample(load_pose_trace(donor_text), cfg.rate);
  return select_style_references(donor, cfg.window.n_ref, cfg.window.T,
                                 derive_seed(cfg.seed, "rollout/refs"));
}

int cmd_ingest(const std::vector<std::string>& paths) {
  nlohmann::json files = nlohmann::json::array();
  std::size_t total = 0;
  for (const std::string& path : paths) {
    const Beatmap map = parse_beatmap(read_text_file(path));
    const std::vector<Violation> violations = validate_beatmap(map);
    nlohmann::json entry;
    entry["path"] = path;
    entry["notes"] = map.notes.size();
    entry["bombs"] = map.bombs.size();
    entry["obstacles"] = map.obstacles.size();
    nlohmann::json vj = nlohmann::json::array();
    for (const Violation& v : violations) {
      nlohmann::json one = {{"category", v.category},
                            {"field", v.field},
                            {"rule", v.rule},
                            {"message", v.message}};
      if (v.event_index >= 0) one["event_index"] = v.event_index;
      vj.push_back(std::move(one));
    }
    entry["violations"] = std::move(vj);
    files.push_back(std::move(entry));
    total += violations.size();
  }
  const nlohmann::json summary = {{"files", files}, {"total_violations", total}};
  std::cout << summary.dump(2) << "\n";
  return total == 0 ? 0 : 1;
}

int cmd_dataset(const GlobalArgs& g, const std::string& manifest_path) {
  const PipelineConfig cfg = effective_config(g);
  const std::string manifest_text = read_text_file(manifest_path);
  std::vector<DatasetPair> pairs = parse_pairs_manifest(manifest_text);
  // resolve relative paths against the manifest's directory
  const std::filesystem::path base = std::filesystem::path(manifest_path).parent_path();
  for (DatasetPair& p : pairs) {
    if (p.trace.is_relative()) p.trace = base / p.trace;
    if (p.beatmap.is_relative()) p.beatmap = base / p.beatmap;
    if (p.donor && p.donor->is_relative()) p.donor = base / *p.donor;
  }

  DatasetConfig dc;
  dc.window = cfg.window;
  dc.rate = cfg.rate;
  dc.stride = cfg.dataset_stride;
  dc.lanes = cfg.lanes;
  BuiltDataset built = build_dataset(pairs, dc, cfg.seed, cfg.threads);

  built.manifest["pairs_manifest_sha256"] = sha256_hex(manifest_text);
  built.manifest["config"] = cfg.to_json();
  const std::filesystem::path out(g.out_dir);
  write_text_file(out / "dataset.bpds", built.data_bytes);
  write_text_file(out / "dataset_manifest.json", built.manifest.dump(2) + "\n");
  std::cout << "wrote " << (out / "dataset.bpds").string() << " ("
            << built.example_count << " examples)\n";
  return 0;
}

template <class S>
void run_training(const PipelineConfig& cfg, const LoadedDataset& data,
                  const std::string& dataset_hash, const std::filesystem::path& out) {
  ModelDims dims = cfg.model_dims();
  ModelParams<S> params = init_params<S>(dims, derive_seed(cfg.seed, "init"));

  TrainOptions opts;
  opts.steps = cfg.steps;
  opts.batch = cfg.batch;
  opts.lr = cfg.lr;
  opts.momentum = cfg.momentum;
  opts.lambda_match = cfg.lambda_match;
  opts.seed = derive_seed(cfg.seed, "train");
  const std::vector<StepRecord> history = train_loop(params, data.examples, opts);

  std::string csv = "step,recon,match,total\n";
  for (const StepRecord& r : history) {
    csv += std::to_string(r.step);
    csv += ",";
    detail::append_fixed(csv, r.recon);
    csv += ",";
    detail::append_fixed(csv, r.match);
    csv += ",";
    detail::append_fixed(csv, r.total);
    csv += "\n";
  }
  write_text_file(out / "loss_history.csv", csv);

  ModelParams<double> to_save;
  if constexpr (std::is_same_v<S, double>) {
    to_save = params;
  } else {
    to_save.dims = params.dims;
    for (const auto& t : params.tensors)
      to_save.tensors.push_back({t.name, t.value.template cast<double>()});
  }
  nlohmann::json meta = {
      {"config", cfg.to_json()},
      {"seed", cfg.seed},
      {"steps", cfg.steps},
      {"loss_history", "loss_history.csv"},
      {"inputs", {{"dataset_sha256", dataset_hash}}},
  };
  if (!history.empty())
    meta["final_loss"] = {{"recon", history.back().recon},
                          {"match", history.back().match},
                          {"total", history.back().total}};
  save_checkpoint(out / "checkpoint.bpck", to_save, meta);
}

int cmd_train(const GlobalArgs& g, const std::string& dataset_path) {
  const PipelineConfig cfg = effective_config(g);
  const std::string bytes = read_text_file(dataset_path);
  const LoadedDataset data = load_dataset(bytes);
  if (data.window.h != cfg.window.h || data.window.T != cfg.window.T ||
      data.window.n != cfg.window.n || data.window.n_ref != cfg.window.n_ref)
    throw Error(ErrorKind::Config, "config context dims do not match the dataset file",
                {{"key", "context"}});

  const std::filesystem::path out(g.out_dir);
  if (cfg.precision == "f32")
    run_training<float>(cfg, data, sha256_hex(bytes), out);
  else
    run_training<double>(cfg, data, sha256_hex(bytes), out);
  std::cout << "wrote " << (out / "checkpoint.bpck").string() << "\n";
  return 0;
}

int cmd_rollout(const GlobalArgs& g, const std::string& checkpoint_path,
                const std::string& beatmap_path, const std::string& donor_path) {
  const PipelineConfig cfg = effective_config(g);
  const std::string ckpt_bytes = read_text_file(checkpoint_path);
  const std::string map_text = read_text_file(beatmap_path);
  const std::string donor_text = read_text_file(donor_path);

  const ModelParams<double> params = load_checkpoint(checkpoint_path);
  if (params.dims.h != cfg.window.h || params.dims.T != cfg.window.T ||
      params.dims.n != cfg.window.n || params.dims.n_ref != cfg.window.n_ref)
    throw Error(ErrorKind::Config, "config context dims do not match the checkpoint",
                {{"key", "context"}});
  const Beatmap map = parse_beatmap(map_text);
  const StyleReferenceSet refs = donor_refs(donor_text, cfg);

  RolloutConfig rc;
  rc.stride = cfg.rollout_stride;
  rc.blend = cfg.rollout_blend;
  rc.style_per_window = cfg.style_per_window;
  RolloutSetup setup;
  setup.window = cfg.window;
  setup.rate = cfg.rate;
  setup.lanes = cfg.lanes;

  const PoseTrace trace = rollout(params, map, refs, rc, setup);
  const std::filesystem::path out(g.out_dir);
  write_text_file(out / "trace.csv", save_pose_trace(trace));

  const nlohmann::json sidecar = {
      {"config", cfg.to_json()},
      {"seed", cfg.seed},
      {"inputs",
       {{"checkpoint_sha256", sha256_hex(ckpt_bytes)},
        {"beatmap_sha256", sha256_hex(map_text)},
        {"donor_sha256", sha256_hex(donor_text)}}},
      {"frames", trace.frames.size()},
  };
  write_text_file(out / "trace.json", sidecar.dump(2) + "\n");
  std::cout << "wrote " << (out / "trace.csv").string() << " (" << trace.frames.size()
            << " frames)\n";
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& trace_path,
             const std::string& beatmap_path, const std::string& checkpoint_path,
             const std::string& donor_path) {
  const PipelineConfig cfg = effective_config(g);
  const std::string trace_text = read_text_file(trace_path);
  const std::string map_text = read_text_file(beatmap_path);
  const PoseTrace trace = load_pose_trace(trace_text);
  const Beatmap map = parse_beatmap(map_text);

  nlohmann::json inputs = {{"trace_sha256", sha256_hex(trace_text)},
                           {"beatmap_sha256", sha256_hex(map_text)}};

  std::optional<ModelParams<double>> params;
  std::optional<StyleReferenceSet> refs;
  if (!checkpoint_path.empty() != !donor_path.empty())
    throw Error(ErrorKind::Config,
                "--checkpoint and --donor must be given together for style distance");
  if (!checkpoint_path.empty()) {
    const std::string ckpt_bytes = read_text_file(checkpoint_path);
    const std::string donor_text = read_text_file(donor_path);
    params = load_checkpoint(checkpoint_path);
    PipelineConfig ref_cfg = cfg;
    ref_cfg.window.n_ref = params->dims.n_ref;
    ref_cfg.window.T = params->dims.T;
    refs = donor_refs(donor_text, ref_cfg);
    inputs["checkpoint_sha256"] = sha256_hex(ckpt_bytes);
    inputs["donor_sha256"] = sha256_hex(donor_text);
  }

  const HitReport report =
      evaluate(trace, map, cfg.scoring, params ? &*params : nullptr,
               refs ? &*refs : nullptr);
  const std::filesystem::path out(g.out_dir);
  const nlohmann::json j = emit_report(report, trace, cfg.scoring, inputs, out);
  std::cout << "hit_rate " << j["hit_rate"].dump() << ", bomb_touches "
            << report.bomb_touches << ", obstacle_collisions "
            << report.obstacle_collisions << "\n"
            << "wrote " << (out / "report.json").string() << "\n";
  return 0;
}

// Deterministic toy problem for the gradient check: a short random-walk
// trace, a two-note beatmap, toy model dims.
PoseTrace gradcheck_trace(std::uint64_t seed, int frames, double rate) {
  Rng rng(seed);
  PoseTrace trace;
  trace.rate = rate;
  Eigen::Vector3d head{0.0, 1.7, 0.0}, left{-0.3, 1.2, 0.2}, right{0.3, 1.2, 0.2};
  Eigen::Quaterniond qh = Eigen::Quaterniond::Identity();
  Eigen::Quaterniond ql = qh, qr = qh;
  auto jitter = [&rng](Eigen::Quaterniond& q) {
    Eigen::Vector3d axis{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    if (axis.norm() < 1e-6) axis = Eigen::Vector3d::UnitY();
    axis.normalize();
    q = (q * Eigen::Quaterniond(Eigen::AngleAxisd(rng.uniform(-0.2, 0.2), axis)))
            .normalized();
  };
  for (int k = 0; k < frames; ++k) {
    ThreePointPose f;
    f.timestamp = static_cast<double>(k) / rate;
    auto step = [&rng](Eigen::Vector3d& p) {
      p += Eigen::Vector3d{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05),
                           rng.uniform(-0.05, 0.05)};
    };
    step(head);
    step(left);
    step(right);
    jitter(qh);
    jitter(ql);
    jitter(qr);
    f.head = {head, qh};
    f.left_hand = {left, ql};
    f.right_hand = {right, qr};
    trace.frames.push_back(f);
  }
  return trace;
}

int cmd_gradcheck(const GlobalArgs& g) {
  const PipelineConfig cfg = effective_config(g);
  ModelDims dims;
  dims.d_z = 4;
  dims.hidden = 8;
  dims.row_dim = 4;
  dims.h = 2;
  dims.T = 3;
  dims.n = 2;
  dims.n_ref = 2;

  WindowConfig w;
  w.h = dims.h;
  w.T = dims.T;
  w.n = dims.n;
  w.n_ref = dims.n_ref;
  w.horizon = 2.0;

  const std::uint64_t seed = derive_seed(cfg.seed, "gradcheck");
  const double rate = 30.0;
  const PoseTrace trace = gradcheck_trace(derive_seed(seed, "trace"), 16, rate);

  Beatmap map;
  map.bpm = 120.0;
  map.song_length = 2.0;
  map.notes.push_back({0.5, 1, 1, NoteColor::Left, CutDirection::Down});
  map.notes.push_back({0.8, 2, 1, NoteColor::Right, CutDirection::Any});
  sort_events(map);

  const StyleReferenceSet refs =
      select_style_references(trace, w.n_ref, w.T, derive_seed(seed, "refs"));
  const TrainingExample ex = build_training_window(
      trace, map, static_cast<std::size_t>(dims.h + 1), w, LaneGeometry{}, refs);
  const ModelParams<double> params =
      init_params<double>(dims, derive_seed(seed, "init"));

  const double err = gradient_check(params, tensorize(ex), cfg.lambda_match);
  std::cout << "max_relative_error " << err << "\n";
  return err < 1e-4 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"style-conditioned 3-point pose pipeline for rhythm-game beatmaps"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path,
                 "TOML config path (falls back to $BEATPOSE_CONFIG)")
      ->envname("BEATPOSE_CONFIG");
  auto* seed_opt = app.add_option("--seed", g.seed, "root random seed");
  app.add_option("--out", g.out_dir, "output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "worker threads (default 1)");

  auto* ingest = app.add_subcommand("ingest", "parse and validate beatmaps");
  std::vector<std::string> ingest_paths;
  ingest->add_option("paths", ingest_paths, "beatmap JSON files")->required();

  auto* dataset = app.add_subcommand("dataset", "build a training dataset");
  std::string manifest_path;
  dataset->add_option("manifest", manifest_path, "pairs manifest JSON")->required();

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  std::string dataset_path;
  train->add_option("dataset", dataset_path, "dataset file (.bpds)")->required();

  auto* rollout = app.add_subcommand("rollout", "generate a full-song trace");
  std::string ckpt_path, map_path, donor_path;
  rollout->add_option("checkpoint", ckpt_path, "checkpoint file (.bpck)")->required();
  rollout->add_option("beatmap", map_path, "beatmap JSON")->required();
  rollout->add_option("donor", donor_path, "style donor trace CSV")->required();

  auto* eval = app.add_subcommand("eval", "score a trace against a beatmap");
  std::string eval_trace, eval_map, eval_ckpt, eval_donor;
  eval->add_option("trace", eval_trace, "pose trace CSV")->required();
  eval->add_option("beatmap", eval_map, "beatmap JSON")->required();
  eval->add_option("--checkpoint", eval_ckpt, "checkpoint for style distance");
  eval->add_option("--donor", eval_donor, "style donor trace for style distance");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient check");

  for (auto* sub : {ingest, dataset, train, rollout, eval, gradcheck})
    sub->fallthrough();

  CLI11_PARSE(app, argc, argv);
  g.seed_set = seed_opt->count() > 0;

  try {
    if (*ingest) return cmd_ingest(ingest_paths);
    if (*dataset) return cmd_dataset(g, manifest_path);
    if (*train) return cmd_train(g, dataset_path);
    if (*rollout) return cmd_rollout(g, ckpt_path, map_path, donor_path);
    if (*eval) return cmd_eval(g, eval_trace, eval_map, eval_ckpt, eval_donor);
    if (*gradcheck) return cmd_gradcheck(g);
  } catch (const beatpose::Error& e) {
    nlohmann::json j;
    j["error"] = {{"kind", beatpose::to_string(e.kind())}, {"message", e.what()}};
    if (!e.detail().empty()) j["error"]["detail"] = e.detail();
    std::cerr << j.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json j;
    j["error"] = {{"kind", "internal"}, {"message", e.what()}};
    std::cerr << j.dump() << "\n";
    return 1;
  }
  return 0;
}
