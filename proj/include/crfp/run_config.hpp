#pragma once

#include <string>
#include <vector>

#include "crfp/crfp_net.hpp"

namespace crfp {

struct TrainConfig {
  float lr_model = 1e-4f;
  float lr_flow = 2.5e-5f;
  int batch = 8;
  int iterations = 2000;
  int unroll = 10;
  uint64_t seed = 1;
  int checkpoint_every = 500;
  int patch = 256;         // HR crop side; 0 = train on full frames
  int flow_pretrain = 200; // synthetic-motion warmup iterations for the flow net
};

// Parsed "section.key = value" run configuration. Parsing is fail-closed:
// unknown or duplicate keys and unparseable values are configuration errors.
struct RunConfig {
  CrfpConfig crfp;  // includes the flow net settings
  TrainConfig train;
  std::string train_dir;
  std::string eval_dir;
  std::string output_dir;  // defaults to $CRFP_OUTPUT_ROOT when unset
  std::string trace_kind = "raster";
  double trace_sigma = 0.0;
  int trace_cy = -1;  // horizontal sweep center row; -1 = frame center
  bool write_frames = false;

  std::vector<std::string> explicit_keys;  // keys actually present in the source text

  void validate() const;
};

RunConfig parse_config_text(const std::string& text, const std::string& origin);
RunConfig parse_config_file(const std::string& path);

// Canonical full serialization (every key, fixed order); parses back to an
// identical config. This text is embedded in checkpoints and written next to
// run outputs.
std::string serialize_config(const RunConfig& cfg);

}  // namespace crfp
