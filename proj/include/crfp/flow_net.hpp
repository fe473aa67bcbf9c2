#pragma once

#include "crfp/tensor.hpp"

namespace crfp {

// Compact UNet-style optical-flow estimator between consecutive LR frames:
// 3 encoder blocks (2 convs + 2x avg-pool each), 3 decoder blocks (bilinear
// up + skip concat + 2 convs), and a 2-conv head whose tanh output is scaled
// to flow_range LR pixels. All interior convs are 3x3 + ReLU.
struct FlowConfig {
  int channels = 64;        // base width F
  float flow_range = 10.0f; // max |displacement| in LR px
};

// Creates the "flow.*" parameter group.
void build_flow_params(const FlowConfig& cfg, ParamStore& store);

// cur/prev: (B,3,H,W) with H, W divisible by 8 -> flow (B,2,H,W), channels
// (dx, dy) in LR pixels.
Tensor flow_forward(const FlowConfig& cfg, ParamStore& store, const Tensor& cur, const Tensor& prev);

// Reflect-pads bottom/right to the next multiple of 8, runs flow_forward,
// crops back.
Tensor flow_forward_padded(const FlowConfig& cfg, ParamStore& store, const Tensor& cur,
                           const Tensor& prev);

}  // namespace crfp
