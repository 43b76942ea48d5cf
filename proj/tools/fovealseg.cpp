// Copyright 2026 The FovealSeg Authors
// SPDX-License-Identifier: Apache-2.0

// fovealseg: preprocessing, synthetic data, training, evaluation, scheduling
// simulation, trace analysis, FLOP reports and the kernel-size ablation.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fovealseg/fovealseg.hpp"
#include "png_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fovealseg;

namespace {

/// Bad input or configuration; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  UsageError(std::string kind, const std::string& message) : std::runtime_error(message), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

template <class F>
auto as_usage(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw UsageError(std::string(to_string(e.kind())), e.what());
  }
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    out += c == '\n' ? ' ' : c;
  }
  return out + '"';
}

void report_error(const std::string& command, const std::string& kind, const std::string& message) {
  std::cerr << "error: command=" << command << " kind=" << kind << " message=" << quote(message) << '\n';
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

Tensor load_image(const fs::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".ppm") return read_ppm(path);
  return tools::read_png(path);
}

std::string frame_name(const std::string& stem, std::size_t k) {
  std::ostringstream os;
  os << stem << '_' << std::setw(5) << std::setfill('0') << k;
  return os.str();
}

/// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> sets;
  std::map<std::string, std::string> overrides;
  std::map<std::string, CLI::Option*> override_opts;

  void attach(CLI::App* app, const RunConfig& defaults) {
    app->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
    app->add_option("--out", out_dir, "output directory")->capture_default_str();
    app->add_option("--set", sets, "KEY=VALUE override (repeatable)");
    for (const auto& key : defaults.keys()) {
      std::string dashed = key;
      std::replace(dashed.begin(), dashed.end(), '_', '-');
      std::string names = "--" + dashed;
      if (dashed != key) names += ",--" + key;
      override_opts[key] = app->add_option(names, overrides[key], "override config key " + key);
    }
  }

  /// Defaults < config file < --set < per-key flags; then validate.
  RunConfig resolve() {
    return as_usage([&] {
      RunConfig cfg;
      if (!config_path.empty()) cfg.merge_file(config_path);
      for (const auto& s : sets) {
        const auto eq = s.find('=');
        require(eq != std::string::npos, ErrorKind::kParse, "--set expects KEY=VALUE, got '" + s + "'");
        cfg.set(detail::trim(std::string_view(s).substr(0, eq)), std::string_view(s).substr(eq + 1));
      }
      for (const auto& key : cfg.keys()) {
        if (override_opts.at(key)->count() > 0) cfg.set(key, overrides.at(key));
      }
      if (const char* env = std::getenv("FOVEALSEG_THREADS"); env != nullptr && *env != '\0') {
        int cap = 0;
        detail::parse_value("FOVEALSEG_THREADS", env, cap);
        require(cap >= 1, ErrorKind::kConfiguration, "FOVEALSEG_THREADS must be >= 1");
        cfg.threads = std::min(cfg.threads, cap);
        cfg.sync();
      }
      cfg.validate();
      return cfg;
    });
  }

  fs::path prepare_out(const RunConfig& cfg) const {
    const fs::path out(out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    require(!ec, ErrorKind::kIo, "cannot create output directory " + out.string() + ": " + ec.message());
    cfg.write_resolved(out);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Dataset samples

struct SampleSet {
  std::vector<FovealSample> samples;
  std::vector<int> scene_index;
  int scenes = 0;
  int skipped = 0;
};

/// One gaze sample per scene, class-balanced unless `balance` is off. With a
/// trace, scene k takes gaze k (cyclically) and background hits are skipped.
SampleSet sample_dataset(const RunConfig& cfg, bool balance) {
  const auto scenes = as_usage([&] {
    require(!cfg.dataset_dir.empty(), ErrorKind::kConfiguration, "dataset_dir is required");
    require(fs::is_directory(cfg.dataset_dir), ErrorKind::kIo, "dataset directory " + cfg.dataset_dir + " not found");
    return load_dataset_dir(cfg.dataset_dir, load_image, cfg.model.num_classes);
  });
  const std::optional<GazeTrace> trace =
      cfg.trace_path.empty() ? std::nullopt : std::optional(as_usage([&] { return load_trace(cfg.trace_path); }));
  SampleSet set;
  set.scenes = static_cast<int>(scenes.size());
  ClassBalancer balancer(cfg.model.num_classes);
  std::mt19937_64 rng(cfg.seed_for(SeedStream::kGaze));
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    const auto& scene = scenes[k];
    std::optional<GazePoint> gaze;
    if (trace) {
      gaze = trace->gaze(k % trace->size());
      const PixelIndex p = to_pixel(*gaze, scene.height(), scene.width());
      const int owner = instance_owner(scene)[static_cast<std::size_t>(p.row * scene.width() + p.col)];
      if (owner < 0) gaze.reset();
    } else if (balance) {
      gaze = sample_gaze(scene, rng, balancer);
    } else {
      ClassBalancer fresh(cfg.model.num_classes);
      gaze = sample_gaze(scene, rng, fresh);
    }
    if (!gaze) {
      ++set.skipped;
      continue;
    }
    set.samples.push_back(gaze_to_ioi(scene, *gaze, cfg.dataset_dir));
    set.scene_index.push_back(static_cast<int>(k));
  }
  return set;
}

std::vector<int> mask_runs(const Mask& m) {
  std::vector<int> runs;
  std::uint8_t current = 0;
  int length = 0;
  for (auto v : m.data) {
    if ((v != 0) != (current != 0)) {
      runs.push_back(length);
      current = v != 0;
      length = 0;
    }
    ++length;
  }
  runs.push_back(length);
  return runs;
}

ExperimentData experiment_data(const RunConfig& cfg) {
  if (cfg.dataset_dir.empty()) return synthetic_experiment_data(cfg);
  SampleSet set = sample_dataset(cfg, true);
  const int n = static_cast<int>(set.samples.size());
  if (n <= cfg.val_count) {
    throw UsageError("configuration", "dataset yields " + std::to_string(n) + " samples, need more than val_count=" +
                                          std::to_string(cfg.val_count));
  }
  ExperimentData d;
  d.train.assign(set.samples.begin(), set.samples.end() - cfg.val_count);
  d.val.assign(set.samples.end() - cfg.val_count, set.samples.end());
  return d;
}

json stage_json(const StageResult& s) {
  return {{"epochs_run", s.epochs_run},
          {"best_epoch", s.best_epoch},
          {"initial_val_loss", s.initial_val_loss},
          {"best_val_loss", s.best_val_loss},
          {"val_losses", s.val_losses}};
}

// ---------------------------------------------------------------------------
// Commands

int cmd_preprocess(Common& common, bool no_balance) {
  const RunConfig cfg = common.resolve();
  const SampleSet set = sample_dataset(cfg, !no_balance);
  const fs::path out = common.prepare_out(cfg);
  std::ofstream records(out / "samples.jsonl", std::ios::binary);
  std::vector<int> counts(static_cast<std::size_t>(cfg.model.num_classes), 0);
  for (std::size_t k = 0; k < set.samples.size(); ++k) {
    const auto& s = set.samples[k];
    ++counts[static_cast<std::size_t>(s.class_id)];
    const json r{{"index", k},
                 {"scene", set.scene_index[k]},
                 {"gaze", {s.gaze.u, s.gaze.v}},
                 {"class", s.class_id},
                 {"height", s.y_binary.height},
                 {"width", s.y_binary.width},
                 {"mask_runs", mask_runs(s.y_binary)}};
    records << r.dump() << '\n';
  }
  require(static_cast<bool>(records), ErrorKind::kIo, "cannot write samples.jsonl");
  write_json(out / "manifest.json", {{"dataset", cfg.dataset_dir},
                                     {"seed", cfg.seed},
                                     {"balanced", !no_balance},
                                     {"scenes", set.scenes},
                                     {"samples", set.samples.size()},
                                     {"skipped", set.skipped},
                                     {"num_classes", cfg.model.num_classes},
                                     {"per_class_counts", counts},
                                     {"records", "samples.jsonl"}});
  std::cout << "class  samples\n";
  for (std::size_t c = 0; c < counts.size(); ++c) std::cout << std::setw(5) << c << "  " << counts[c] << '\n';
  std::cout << "skipped scenes: " << set.skipped << '\n';
  return 0;
}

int cmd_synth(Common& common, const std::string& kind, bool write_frames) {
  const RunConfig cfg = common.resolve();
  const fs::path out = common.prepare_out(cfg);
  if (kind == "corpus") {
    fs::create_directories(out / "images");
    fs::create_directories(out / "annotations");
    const std::uint64_t base = cfg.seed_for(SeedStream::kTrainData);
    for (int k = 0; k < cfg.train_count; ++k) {
      const auto scene = generate_synthetic_scene(cfg.synthetic, derive_seed(base, {static_cast<std::uint64_t>(k)}));
      const std::string name = frame_name("scene", static_cast<std::size_t>(k));
      tools::write_png(out / "images" / (name + ".png"), scene.image);
      write_json(out / "annotations" / (name + ".json"), scene_to_json(scene, "images/" + name + ".png"));
    }
    std::cout << "wrote " << cfg.train_count << " scenes to " << out.string() << '\n';
    return 0;
  }
  const SyntheticSequence seq = generate_synthetic_sequence(cfg.sequence, cfg.seed_for(SeedStream::kSequence));
  {
    std::ofstream trace(out / "trace.csv", std::ios::binary);
    write_trace_csv(trace, seq.trace);
  }
  const auto seg = segment_frame_diffs(seq.frames, cfg.scheduler.beta);
  const auto cons = consecutive_frame_diffs(seq.frames);
  std::ostringstream diffs;
  diffs << std::setprecision(17) << "frame,segment_diff,consecutive_diff\n";
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    diffs << t << ',' << seg[t] << ',' << (t == 0 ? 0.0 : cons[t - 1]) << '\n';
  }
  write_text(out / "frame_diffs.csv", diffs.str());
  write_json(out / "ground_truth.json", {{"frames", seq.frames.size()},
                                         {"beta", cfg.scheduler.beta},
                                         {"gaze_threshold", cfg.sequence.gaze_threshold},
                                         {"segment_boundaries", seq.segment_boundaries},
                                         {"saccade_frames", seq.saccade_frames},
                                         {"fixation_fraction", seq.fixation_fraction}});
  if (write_frames) {
    fs::create_directories(out / "frames");
    for (std::size_t t = 0; t < seq.frames.size(); ++t) {
      tools::write_png(out / "frames" / (frame_name("frame", t) + ".png"), seq.frames[t]);
    }
  }
  std::cout << "frames " << seq.frames.size() << ", segments " << seq.segment_boundaries.size() << ", saccades "
            << seq.saccade_frames.size() << ", fixation fraction " << seq.fixation_fraction << '\n';
  return 0;
}

int cmd_train(Common& common, bool no_baseline) {
  const RunConfig cfg = common.resolve();
  const ExperimentData data = experiment_data(cfg);
  const fs::path out = common.prepare_out(cfg);
  std::ofstream log(out / "train_log.csv", std::ios::binary);
  log << "step,stage,loss,val_loss,lr\n";
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentOptions opt;
  opt.with_baseline = !no_baseline;
  opt.hooks.checkpoint_dir = out / "checkpoints";
  opt.hooks.on_epoch = [&](const LogEntry& e) {
    log << e.line() << '\n';
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cerr << "[" << std::fixed << std::setprecision(1) << s << "s] " << std::defaultfloat << e.line() << '\n';
  };
  ExperimentResult r = run_experiment(cfg, data, opt);
  r.model.save(out / "model");
  json summary{{"pretrain", stage_json(r.pretrain)}, {"fsnet", r.fsnet.to_json()}};
  summary["stages"] = json::array();
  for (const auto& s : r.alternate.stages) summary["stages"].push_back(stage_json(s));
  summary["checkpoints"] = json::array();
  for (const auto& c : r.alternate.checkpoints) summary["checkpoints"].push_back(fs::relative(c, out).string());
  if (r.baseline) {
    summary["avg"] = r.baseline->to_json();
    summary["avg_stage"] = stage_json(*r.baseline_stage);
  }
  write_json(out / "summary.json", summary);
  std::cout << "FSNet IoU " << r.fsnet.iou << " IoU' " << r.fsnet.iou_prime << '\n';
  if (r.baseline) std::cout << "Avg   IoU " << r.baseline->iou << " IoU' " << r.baseline->iou_prime << '\n';
  return 0;
}

int cmd_evaluate(Common& common, bool oracle, const std::string& sampler) {
  const RunConfig cfg = common.resolve();
  if (sampler != "saliency" && sampler != "uniform") throw UsageError("configuration", "unknown sampler " + sampler);
  std::vector<FovealSample> data;
  if (cfg.dataset_dir.empty()) {
    data = make_corpus(cfg.synthetic, cfg.val_count, cfg.seed_for(SeedStream::kValData));
  } else {
    data = sample_dataset(cfg, true).samples;
  }
  EvalResult r;
  if (oracle) {
    r = evaluate_predictor(OracleModel{cfg.model.num_classes}, data, cfg.model.num_classes);
  } else {
    FSNet model(cfg.model, cfg.seed_for(SeedStream::kModel));
    as_usage([&] {
      require(!cfg.checkpoint.empty(), ErrorKind::kConfiguration, "evaluate needs --checkpoint or --oracle");
      model.load(cfg.checkpoint);
      return 0;
    });
    r = evaluate(model, data, sampler == "uniform" ? SamplerKind::kUniform : SamplerKind::kSaliency);
  }
  const fs::path out = common.prepare_out(cfg);
  write_json(out / "eval.json", r.to_json());
  std::cout << "IoU " << r.iou << " IoU' " << r.iou_prime << " class accuracy " << r.class_accuracy << '\n';
  return 0;
}

std::vector<Tensor> load_frame_dir(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension();
    if (ext == ".png" || ext == ".ppm") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  require(!files.empty(), ErrorKind::kIo, "no frames in " + dir.string());
  std::vector<Tensor> frames;
  for (const auto& f : files) frames.push_back(load_image(f));
  return frames;
}

int cmd_schedule(Common& common, const std::string& fixture) {
  const RunConfig cfg = common.resolve();
  std::vector<Tensor> frames;
  GazeTrace trace;
  if (fixture == "identical") {
    const auto scene = generate_synthetic_scene(cfg.synthetic, cfg.seed_for(SeedStream::kSequence));
    require(!scene.instances.empty(), ErrorKind::kNoInstance, "fixture scene has no instance");
    const Mask region = visible_region(instance_owner(scene), scene.height(), scene.width(),
                                       static_cast<int>(scene.instances.size()) - 1);
    PixelIndex p{};
    for (int i = 0, found = 0; i < region.height && !found; ++i) {
      for (int j = 0; j < region.width && !found; ++j) {
        if (region(i, j)) p = {i, j}, found = 1;
      }
    }
    std::vector<GazeSample> g;
    for (int t = 0; t < cfg.sequence.frames; ++t) {
      frames.push_back(scene.image);
      g.push_back({t / cfg.sequence.fps, from_pixel(p, scene.height(), scene.width())});
    }
    trace = GazeTrace::make(std::move(g));
  } else if (fixture == "synthetic") {
    SyntheticSequence seq = generate_synthetic_sequence(cfg.sequence, cfg.seed_for(SeedStream::kSequence));
    frames = std::move(seq.frames);
    trace = std::move(seq.trace);
  } else if (fixture == "files") {
    as_usage([&] {
      require(!cfg.trace_path.empty() && !cfg.frames_path.empty(), ErrorKind::kConfiguration,
              "files fixture needs trace_path and frames_path");
      trace = load_trace(cfg.trace_path);
      frames = load_frame_dir(cfg.frames_path);
      return 0;
    });
  } else {
    throw UsageError("configuration", "unknown fixture " + fixture);
  }
  ScheduleReport report;
  SchedulerConfig sc = cfg.scheduler;
  if (cfg.checkpoint.empty()) {
    report = run_trace(frames, trace, FloodFillSegmenter{}, sc);
  } else {
    FSNet model(cfg.model, cfg.seed_for(SeedStream::kModel));
    as_usage([&] {
      model.load(cfg.checkpoint);
      return 0;
    });
    report = run_trace(frames, trace, model, sc);
  }
  const fs::path out = common.prepare_out(cfg);
  write_json(out / "schedule.json", report.to_json());
  std::cout << "decision          frames\n";
  for (std::size_t d = 0; d < kDecisionNames.size(); ++d) {
    std::cout << std::left << std::setw(18) << kDecisionNames[d] << report.count(static_cast<Decision>(d)) << '\n';
  }
  std::cout << std::right << "NS/FovealSeg FLOP ratio  " << report.ns_ratio() << '\n'
            << "ND/FovealSeg FLOP ratio  " << report.nd_ratio() << '\n';
  return 0;
}

Tensor histogram_image(const std::vector<double>& hist) {
  constexpr int kBarWidth = 4, kHeight = 100;
  Tensor img(1, kHeight, static_cast<int>(hist.size()) * kBarWidth, 1.0);
  const double top = std::max(1e-12, *std::max_element(hist.begin(), hist.end()));
  for (std::size_t b = 0; b < hist.size(); ++b) {
    const int bar = static_cast<int>(std::lround(hist[b] / top * (kHeight - 1)));
    for (int i = kHeight - bar; i < kHeight; ++i) {
      for (int j = 0; j + 1 < kBarWidth; ++j) img(0, i, static_cast<int>(b) * kBarWidth + j) = 0.0;
    }
  }
  return img;
}

int cmd_analyze_trace(Common& common, bool plot) {
  const RunConfig cfg = common.resolve();
  GazeTrace trace;
  FrameDiffs diffs;
  as_usage([&] {
    require(!cfg.trace_path.empty(), ErrorKind::kConfiguration, "analyze-trace needs trace_path");
    require(!cfg.frames_path.empty(), ErrorKind::kConfiguration,
            "analyze-trace needs frames_path (frame directory or frame_diffs.csv)");
    trace = load_trace(cfg.trace_path);
    if (fs::is_directory(cfg.frames_path)) {
      const auto frames = load_frame_dir(cfg.frames_path);
      diffs = {segment_frame_diffs(frames, cfg.scheduler.beta), consecutive_frame_diffs(frames)};
    } else {
      diffs = load_frame_diffs(cfg.frames_path);
    }
    require(diffs.segment.size() == trace.size(), ErrorKind::kShape,
            std::to_string(diffs.segment.size()) + " frames but " + std::to_string(trace.size()) + " gaze samples");
    return 0;
  });
  const SegmentPartition p = partition_segments(diffs.segment, cfg.scheduler.beta);
  const TraceStats stats =
      gaze_stats(trace, p, cfg.sequence.gaze_threshold, diffs.consecutive, cfg.scheduler.beta);
  const fs::path out = common.prepare_out(cfg);
  json j = stats.to_json();
  j["segment_boundaries"] = p.boundaries;
  write_json(out / "trace_stats.json", j);
  if (plot) tools::write_png(out / "gaze_histogram.png", histogram_image(stats.histogram));
  std::cout << stats.to_table();
  return 0;
}

int cmd_flops(Common& common, int kernel_size) {
  const RunConfig cfg = common.resolve();
  DeploymentSpec d;
  d.backbone = reference_fcn(cfg.model.num_classes);
  d.heads = {4, cfg.model.head_width, cfg.model.num_classes};
  if (kernel_size > 0) d.kernel_size = kernel_size;
  const fs::path out = common.prepare_out(cfg);
  std::ostringstream csv;
  csv << "component,flops\n";
  json j;
  std::cout << std::left << std::setw(22) << "component" << std::right << std::setw(16) << "FLOPs" << '\n';
  for (const auto& [c, name] : kComponentNames) {
    const Flops f = count_flops(c, d);
    csv << name << ',' << f << '\n';
    j["components"][std::string(name)] = f;
    std::cout << std::left << std::setw(22) << name << std::right << std::setw(16) << f << '\n';
  }
  const CostModel costs = CostModel::from(d);
  j["cost_model"] = {{"fsnet", costs.fsnet},
                     {"fullres_backbone", costs.fullres_backbone},
                     {"reuse_check", costs.reuse_check()}};
  write_text(out / "flops.csv", csv.str());
  write_json(out / "flops.json", j);
  std::cout << std::left << std::setw(22) << "fsnet inference" << std::right << std::setw(16) << costs.fsnet << '\n'
            << std::left << std::setw(22) << "reuse check" << std::right << std::setw(16) << costs.reuse_check()
            << '\n';
  return 0;
}

int cmd_ablate(Common& common, int grid_height, int grid_width) {
  const RunConfig cfg = common.resolve();
  if (grid_height < 1 || grid_width < 1) throw UsageError("configuration", "grid dims must be >= 1");
  const ExperimentData data = experiment_data(cfg);
  const fs::path out = common.prepare_out(cfg);
  std::ostringstream csv;
  csv << std::setprecision(10) << "sigma,kernel_size,iou,iou_prime,grid_flops\n";
  for (int sigma : cfg.ablation_sigmas) {
    RunConfig run = cfg;
    run.model.kernel.sigma = sigma;
    ExperimentOptions opt;
    opt.with_baseline = false;
    const ExperimentResult r = run_experiment(run, data, opt);
    const int size = run.model.kernel.size();
    csv << sigma << ',' << size << ',' << r.fsnet.iou << ',' << r.fsnet.iou_prime << ','
        << grid_flops(grid_height, grid_width, size) << '\n';
    std::cerr << "sigma " << sigma << " done\n";
  }
  write_text(out / "ablation.csv", csv.str());
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FovealSeg gaze-driven segmentation toolkit"};
  app.require_subcommand(1);
  const RunConfig defaults;

  Common c_pre, c_synth, c_train, c_eval, c_sched, c_trace, c_flops, c_ablate;
  bool no_balance = false, write_frames = false, no_baseline = false, oracle = false, plot = false;
  std::string synth_kind = "sequence", sampler = "saliency", fixture = "synthetic";
  int kernel_size = 0, grid_h = 64, grid_w = 128;

  auto* pre = app.add_subcommand("preprocess", "Sample gaze points and write FovealSample records");
  c_pre.attach(pre, defaults);
  pre->add_option("--dataset", c_pre.overrides["dataset_dir"], "alias for --dataset-dir");
  pre->add_flag("--no-balance", no_balance, "disable class balancing");

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus or gaze/frame sequence");
  c_synth.attach(synth, defaults);
  synth->add_option("--kind", synth_kind, "corpus or sequence")->check(CLI::IsMember({"corpus", "sequence"}));
  synth->add_flag("--frames", write_frames, "also write sequence frames as PNG");

  auto* train = app.add_subcommand("train", "Pretrain, train the Avg baseline and run alternate training");
  c_train.attach(train, defaults);
  train->add_flag("--no-baseline", no_baseline, "skip the uniform-grid baseline");

  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint on validation data");
  c_eval.attach(eval, defaults);
  eval->add_flag("--oracle", oracle, "evaluate the ground-truth oracle predictor");
  eval->add_option("--sampler", sampler, "saliency or uniform");

  auto* sched = app.add_subcommand("schedule", "Simulate the frame scheduler");
  c_sched.attach(sched, defaults);
  sched->add_option("--fixture", fixture, "identical, synthetic or files");

  auto* trace = app.add_subcommand("analyze-trace", "Segment and gaze statistics of a trace");
  c_trace.attach(trace, defaults);
  trace->add_flag("--plot", plot, "write the gaze-difference histogram as PNG");

  auto* flops = app.add_subcommand("flops", "Analytic FLOP table of the deployment pipeline");
  c_flops.attach(flops, defaults);
  flops->add_option("--kernel-size", kernel_size, "grid kernel size (default 33)");

  auto* ablate = app.add_subcommand("ablate-kernel", "Train and evaluate per kernel sigma");
  c_ablate.attach(ablate, defaults);
  ablate->add_option("--grid-height", grid_h, "target height for the FLOP column")->capture_default_str();
  ablate->add_option("--grid-width", grid_w, "target width for the FLOP column")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  // --dataset writes into the override map without touching the option count.
  if (pre->parsed() && pre->get_option("--dataset")->count() > 0) {
    c_pre.sets.push_back("dataset_dir=" + c_pre.overrides["dataset_dir"]);
  }

  const std::vector<std::pair<CLI::App*, std::function<int()>>> commands{
      {pre, [&] { return cmd_preprocess(c_pre, no_balance); }},
      {synth, [&] { return cmd_synth(c_synth, synth_kind, write_frames); }},
      {train, [&] { return cmd_train(c_train, no_baseline); }},
      {eval, [&] { return cmd_evaluate(c_eval, oracle, sampler); }},
      {sched, [&] { return cmd_schedule(c_sched, fixture); }},
      {trace, [&] { return cmd_analyze_trace(c_trace, plot); }},
      {flops, [&] { return cmd_flops(c_flops, kernel_size); }},
      {ablate, [&] { return cmd_ablate(c_ablate, grid_h, grid_w); }},
  };
  std::string command = "unknown";
  try {
    for (const auto& [sub, run] : commands) {
      if (!sub->parsed()) continue;
      command = sub->get_name();
      return run();
    }
  } catch (const UsageError& e) {
    report_error(command, e.kind(), e.what());
    return 2;
  } catch (const Error& e) {
    report_error(command, std::string(to_string(e.kind())), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(command, "internal", e.what());
    return 1;
  }
  return 1;
}
