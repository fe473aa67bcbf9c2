#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "crfp/crfp_net.hpp"
#include "crfp/data_io.hpp"
#include "crfp/metrics.hpp"
#include "crfp/run_config.hpp"

namespace crfp {

// Adam moments keyed by parameter name plus the shared step counter for bias
// correction. Serialized into checkpoints so a resumed run continues the
// optimizer trajectory exactly.
struct AdamState {
  std::unordered_map<std::string, std::vector<float>> m, v;
  long t = 0;
  bool pretrain_done = false;
};

// One Adam update (beta 0.9/0.999, eps 1e-8) over the named parameters after
// backward() has filled their gradients. Gradients are jointly global-norm
// clipped at clip_norm first. Names under "flow." update with lr_flow, the
// rest with lr_model. A named parameter whose gradient never materialized on
// the tape is a usage error — it means the loss never saw the parameter.
void adam_step(ParamStore& store, const std::vector<std::string>& names, AdamState& st,
               float lr_model, float lr_flow, float clip_norm = 10.0f);

// Loads every clip directory under root (sorted by name); a root that holds
// frames directly is treated as a single clip. LR is derived on load.
std::vector<FrameSequence> load_dataset(const std::string& root);

// Full training run into cfg.output_dir: flow warmup on synthetic motion,
// then the Adam/BPTT main loop. Writes config.resolved, loss.csv, periodic
// ckpt-<iter>.crfp files and the final model.crfp, whose path is returned.
// resume_path ("" = fresh start) restores parameters, optimizer state and the
// iteration counter from an earlier checkpoint of the same architecture.
std::string train_loop(const RunConfig& cfg, const std::string& resume_path = "");

struct EvalClipResult {
  std::string clip_id;
  GazeTrace trace;
  std::vector<Tensor> outputs;  // (1,3,H,W), clamped to [0,1]
  MetricReport report;
};

// Runs one clip against a realized trace. model = nullptr selects the bicubic
// upsampling baseline; metrics use the same regional masks either way.
EvalClipResult eval_clip(CrfpModel* model, const FrameSequence& seq, const GazeTrace& trace);

// Evaluates every clip under cfg.eval_dir with the configured trace family
// (raster / horizontal / tracker; tracker seeds derive from train.seed and
// the clip index). jobs > 1 spreads clips across worker threads; results come
// back in clip order regardless.
std::vector<EvalClipResult> run_eval(const RunConfig& cfg, CrfpModel* model, int jobs = 1);

}  // namespace crfp
