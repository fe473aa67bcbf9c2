#include "crfp/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "crfp/trainer.hpp"

namespace fs = std::filesystem;

namespace crfp {

namespace {

bool key_explicit(const RunConfig& cfg, const std::string& key) {
  return std::find(cfg.explicit_keys.begin(), cfg.explicit_keys.end(), key) !=
         cfg.explicit_keys.end();
}

// The checkpoint's embedded config is authoritative for everything that fixes
// parameter shapes; a config file that explicitly disagrees on one of those
// keys is an error rather than a silent reinterpretation. Runtime behavior
// (fovea geometry, fast region, loss eps) stays overridable per run.
RunConfig merge_checkpoint_config(const RunConfig& user, const Checkpoint& ck) {
  RunConfig saved = parse_config_text(ck.config, "checkpoint");
  RunConfig out = user;

  auto arch_i = [&](int uv, int cv, const char* key, int& dst) {
    if (key_explicit(user, key) && uv != cv)
      throw ConfigError(std::string(key) + " = " + std::to_string(uv) +
                        " disagrees with the checkpoint (" + std::to_string(cv) + ")");
    dst = cv;
  };
  auto arch_f = [&](float uv, float cv, const char* key, float& dst) {
    if (key_explicit(user, key) && uv != cv)
      throw ConfigError(std::string(key) + " disagrees with the checkpoint");
    dst = cv;
  };
  arch_i(user.crfp.scale, saved.crfp.scale, "crfp.scale", out.crfp.scale);
  arch_i(user.crfp.base_channels, saved.crfp.base_channels, "crfp.base_channels",
         out.crfp.base_channels);
  arch_i(user.crfp.hr_channels, saved.crfp.hr_channels, "crfp.hr_channels", out.crfp.hr_channels);
  arch_i(user.crfp.pass_channels, saved.crfp.pass_channels, "crfp.pass_channels",
         out.crfp.pass_channels);
  arch_i(user.crfp.dsv_channels, saved.crfp.dsv_channels, "crfp.dsv_channels",
         out.crfp.dsv_channels);
  arch_f(user.crfp.offset_range, saved.crfp.offset_range, "crfp.offset_range",
         out.crfp.offset_range);
  arch_i(user.crfp.flow.channels, saved.crfp.flow.channels, "flow.channels",
         out.crfp.flow.channels);
  arch_f(user.crfp.flow.flow_range, saved.crfp.flow.flow_range, "flow.range",
         out.crfp.flow.flow_range);

  if (!key_explicit(user, "crfp.fovea_size")) out.crfp.fovea_size = saved.crfp.fovea_size;
  if (!key_explicit(user, "crfp.fast_region")) out.crfp.fast_region = saved.crfp.fast_region;
  if (!key_explicit(user, "crfp.charbonnier_eps"))
    out.crfp.charbonnier_eps = saved.crfp.charbonnier_eps;
  if (!key_explicit(user, "train.seed")) out.train.seed = saved.train.seed;
  return out;
}

void write_resolved(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream f(dir / "config.resolved", std::ios::trunc);
  if (!f) throw IoError("cannot write " + (dir / "config.resolved").string());
  f << serialize_config(cfg);
}

std::string frame_name(size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04zu.ppm", i);
  return buf;
}

void write_eval_outputs(const std::vector<EvalClipResult>& results, const fs::path& dir,
                        bool write_frames) {
  MetricReport merged;
  fs::create_directories(dir / "traces");
  for (const auto& r : results) {
    merged.rows.insert(merged.rows.end(), r.report.rows.begin(), r.report.rows.end());
    save_trace(r.trace, (dir / "traces" / (r.clip_id + ".trace")).string());
    if (write_frames) {
      fs::path fdir = dir / "frames" / r.clip_id;
      fs::create_directories(fdir);
      for (size_t t = 0; t < r.outputs.size(); ++t)
        write_image(r.outputs[t], (fdir / frame_name(t)).string());
    }
  }
  write_report(merged, (dir / "report.csv").string());
}

void print_mean_rows(const std::vector<EvalClipResult>& results) {
  for (const auto& r : results)
    for (const auto& row : r.report.rows)
      if (row.frame == "mean")
        std::printf("%s %-11s psnr %7.3f  ssim %.4f\n", row.clip.c_str(), row.region.c_str(),
                    row.psnr, row.ssim);
}

FrameSequence load_clip_checked(const std::string& dir) {
  FrameSequence seq = load_sequence(dir);
  degrade_sequence(seq);
  return seq;
}

struct EvalArgs {
  std::string config, checkpoint, trace_kind;
  double sigma = 0.0;
  bool sigma_set = false;
  int jobs = 1;
};

int cmd_train(const std::string& config_path, const std::string& resume) {
  RunConfig cfg = parse_config_file(config_path);
  cfg.validate();
  std::string model = train_loop(cfg, resume);
  std::printf("model written: %s\n", model.c_str());
  return 0;
}

int cmd_eval(const EvalArgs& a) {
  Checkpoint ck = load_checkpoint(a.checkpoint);
  RunConfig cfg = merge_checkpoint_config(parse_config_file(a.config), ck);
  if (!a.trace_kind.empty()) cfg.trace_kind = a.trace_kind;
  if (a.sigma_set) {
    if (cfg.trace_kind != "tracker")
      throw UsageError("--sigma only applies to --trace tracker (got " + cfg.trace_kind + ")");
    cfg.trace_sigma = a.sigma;
  }
  cfg.validate();

  CrfpModel model(cfg.crfp, cfg.train.seed);
  model.import_records(ck);
  std::vector<EvalClipResult> results = run_eval(cfg, &model, a.jobs);

  fs::path dir = fs::path(cfg.output_dir) / "eval";
  write_resolved(cfg, dir);
  write_eval_outputs(results, dir, cfg.write_frames);
  print_mean_rows(results);
  std::printf("report: %s\n", (dir / "report.csv").string().c_str());
  return 0;
}

int cmd_baseline(const std::string& config_path, int jobs) {
  RunConfig cfg = parse_config_file(config_path);
  cfg.validate();
  std::vector<EvalClipResult> results = run_eval(cfg, nullptr, jobs);

  fs::path dir = fs::path(cfg.output_dir) / "baseline";
  write_resolved(cfg, dir);
  write_eval_outputs(results, dir, cfg.write_frames);
  print_mean_rows(results);
  std::printf("report: %s\n", (dir / "report.csv").string().c_str());
  return 0;
}

int cmd_infer(const std::string& config_path, const std::string& checkpoint,
              const std::string& clip_dir, const std::string& trace_path) {
  Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig cfg = merge_checkpoint_config(parse_config_file(config_path), ck);
  cfg.validate();

  FrameSequence seq = load_clip_checked(clip_dir);
  GazeTrace trace = load_trace(trace_path);
  if (trace.boxes.size() != seq.hr.size())
    throw UsageError("trace has " + std::to_string(trace.boxes.size()) + " frames, clip has " +
                     std::to_string(seq.hr.size()));
  for (const FovBox& b : trace.boxes)
    if (b.side != cfg.crfp.fovea_size)
      throw UsageError("trace box side " + std::to_string(b.side) +
                       " does not match crfp.fovea_size " + std::to_string(cfg.crfp.fovea_size));

  CrfpModel model(cfg.crfp, cfg.train.seed);
  model.import_records(ck);
  EvalClipResult res = eval_clip(&model, seq, trace);

  fs::path dir = fs::path(cfg.output_dir) / "infer" / res.clip_id;
  write_resolved(cfg, dir);
  fs::create_directories(dir / "frames");
  for (size_t t = 0; t < res.outputs.size(); ++t)
    write_image(res.outputs[t], (dir / "frames" / frame_name(t)).string());
  write_report(res.report, (dir / "report.csv").string());
  print_mean_rows({res});
  std::printf("frames: %s\n", (dir / "frames").string().c_str());
  return 0;
}

int cmd_simulate(const std::string& config_path, const std::string& checkpoint,
                 const std::string& clip_dir, double sigma) {
  Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig cfg = merge_checkpoint_config(parse_config_file(config_path), ck);
  cfg.trace_kind = "tracker";
  cfg.trace_sigma = sigma;
  cfg.validate();

  FrameSequence seq = load_clip_checked(clip_dir);
  GazeTrace trace = tracker_trajectory(seq.width, seq.height, cfg.crfp.fovea_size,
                                       static_cast<int>(seq.hr.size()), seq.width / 2,
                                       seq.height / 2, sigma, mix_seed(cfg.train.seed, 7700));

  CrfpModel model(cfg.crfp, cfg.train.seed);
  model.import_records(ck);
  EvalClipResult res = eval_clip(&model, seq, trace);

  char tag[32];
  std::snprintf(tag, sizeof(tag), "sigma-%g", sigma);
  fs::path dir = fs::path(cfg.output_dir) / "simulate" / tag;
  write_resolved(cfg, dir);
  write_eval_outputs({res}, dir, cfg.write_frames);
  print_mean_rows({res});
  std::printf("trace: %s\n", (dir / "traces" / (res.clip_id + ".trace")).string().c_str());
  return 0;
}

int cmd_synth(const std::string& out_dir, int frames, int width, int height, uint64_t seed) {
  FrameSequence seq = synth_clip(width, height, frames, seed);
  fs::create_directories(out_dir);
  for (size_t t = 0; t < seq.hr.size(); ++t)
    write_image(seq.hr[t], (fs::path(out_dir) / frame_name(t)).string());
  std::printf("%d frames (%dx%d) written to %s\n", frames, width, height, out_dir.c_str());
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Foveated 8x video super-resolution: training, evaluation and simulation"};
  app.require_subcommand(1);
  int rc = 0;

  std::string config_path, resume, checkpoint, clip_dir, trace_path, out_dir;
  EvalArgs ea;
  int jobs = 1, frames = 30, width = 96, height = 96;
  double sigma = 0.0;
  uint64_t seed = 1;

  CLI::App* train = app.add_subcommand("train", "Train a model from a run config");
  train->add_option("--config", config_path, "run config file")->required();
  train->add_option("--resume", resume, "checkpoint to continue from");
  train->callback([&] { rc = cmd_train(config_path, resume); });

  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint over data.eval_dir");
  eval->add_option("--config", ea.config, "run config file")->required();
  eval->add_option("--checkpoint", ea.checkpoint, "model checkpoint")->required();
  eval->add_option("--trace", ea.trace_kind, "trace family override")
      ->check(CLI::IsMember({"raster", "horizontal", "tracker"}));
  eval->add_option("--sigma", ea.sigma, "tracker noise std, HR px");
  eval->add_option("--jobs", ea.jobs, "clip-level worker threads");
  eval->callback([&] {
    ea.sigma_set = eval->count("--sigma") > 0;
    rc = cmd_eval(ea);
  });

  CLI::App* base = app.add_subcommand("baseline-bicubic",
                                      "Evaluate plain bicubic 8x upsampling over data.eval_dir");
  base->add_option("--config", config_path, "run config file")->required();
  base->add_option("--jobs", jobs, "clip-level worker threads");
  base->callback([&] { rc = cmd_baseline(config_path, jobs); });

  CLI::App* infer = app.add_subcommand("infer", "Reconstruct one clip along a saved trace");
  infer->add_option("--config", config_path, "run config file")->required();
  infer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  infer->add_option("--clip", clip_dir, "clip directory (HR frames)")->required();
  infer->add_option("--trace-file", trace_path, "realized trace file")->required();
  infer->callback([&] { rc = cmd_infer(config_path, checkpoint, clip_dir, trace_path); });

  CLI::App* sim = app.add_subcommand("simulate", "Run one clip under noisy gaze tracking");
  sim->add_option("--config", config_path, "run config file")->required();
  sim->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  sim->add_option("--clip", clip_dir, "clip directory (HR frames)")->required();
  sim->add_option("--sigma", sigma, "tracker noise std, HR px")->required();
  sim->callback([&] { rc = cmd_simulate(config_path, checkpoint, clip_dir, sigma); });

  CLI::App* synth = app.add_subcommand("synth", "Generate a procedural test clip");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--frames", frames, "frame count");
  synth->add_option("--width", width, "frame width (multiple of 8)");
  synth->add_option("--height", height, "frame height (multiple of 8)");
  synth->add_option("--seed", seed, "generator seed");
  synth->callback([&] { rc = cmd_synth(out_dir, frames, width, height, seed); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}

}  // namespace crfp
