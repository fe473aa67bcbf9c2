#pragma once

#include <utility>
#include <vector>

#include "crfp/checkpoint.hpp"
#include "crfp/flow_net.hpp"
#include "crfp/foveation.hpp"
#include "crfp/tensor.hpp"

namespace crfp {

// Recurrent 8x foveated super-resolution network: three feature aggregators
// at 2x-LR resolution, one at HR, flow-guided deformable alignment of the
// fed-back HR features, and an output block fusing the encoded fovea crop.
struct CrfpConfig {
  int scale = 8;
  int num_aggregators = 4;
  int base_channels = 32;  // working width of the 2x-LR aggregators
  int hr_channels = 4;     // width of the HR pathway
  int fovea_size = 96;     // HR px
  int pass_channels = 24;  // h part of the aggregator output split
  int dsv_channels = 8;    // carried DCN-state part
  int fast_region = 0;     // HR px; > 0 restricts the DCN branch to a centered square
  float offset_range = 10.0f;   // max deformable offset, px at working resolution
  float charbonnier_eps = 1e-3f;
  FlowConfig flow;

  void validate() const;  // ConfigError on violated constraints
};

struct RecurrentState {
  Tensor feedback;            // (B, hr_channels, 8h, 8w)
  std::vector<Tensor> dsv;    // per aggregator; empty tensors when dsv_channels = 0
  Tensor prev_lr;             // (B, 3, h, w)
  std::vector<FovBox> boxes;  // realized fovea history in HR coordinates
};

// Probe for structural tests: per-aggregator inputs/outputs of interest.
struct StepDebug {
  std::vector<Tensor> d_prev;  // the D fed into each aggregator (index 0 is the per-frame zero)
  std::vector<Tensor> hdot;    // DCN branch output per aggregator
  Tensor flow;                 // (B,2,h,w) LR flow
};

class CrfpModel {
 public:
  CrfpModel(const CrfpConfig& cfg, uint64_t seed);

  const CrfpConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  long param_count() const { return store_.total_params(); }

  // Zero feedback/DSV, prev_lr = the first frame, empty box history.
  RecurrentState reset_state(const Tensor& first_lr) const;

  // One recurrent step. x_lr (B,3,h,w), x_fov (B,3,side,side) with
  // box.side = fovea_size; returns the HR frame and the successor state.
  std::pair<Tensor, RecurrentState> step(const RecurrentState& state, const Tensor& x_lr,
                                         const Tensor& x_fov, const FovBox& box,
                                         StepDebug* debug = nullptr);

  std::vector<CkptRecord> export_records() const;
  void import_records(const Checkpoint& ck);  // by name; shape mismatch -> DataError

 private:
  CrfpConfig cfg_;
  ParamStore store_;
};

}  // namespace crfp
