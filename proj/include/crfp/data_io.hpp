#pragma once

#include <string>
#include <vector>

#include "crfp/foveation.hpp"
#include "crfp/rng.hpp"
#include "crfp/tensor.hpp"

namespace crfp {

// Frames travel as untracked (1,3,H,W) tensors with values in [0,1].
// Images on disk are binary PPM (P6), 8-bit RGB — lossless, so a loaded
// frame re-encodes bitwise.
Tensor read_image(const std::string& path);
void write_image(const Tensor& frame, const std::string& path);

struct FrameSequence {
  std::string clip_id;
  std::vector<Tensor> hr;  // (1,3,H,W)
  std::vector<Tensor> lr;  // (1,3,H/8,W/8) after degrade_sequence
  int width = 0, height = 0;
};

// Loads every file in the directory in lexicographic filename order.
FrameSequence load_sequence(const std::string& dir);

// Fills seq.lr with 8x bicubic-downsampled copies of seq.hr.
void degrade_sequence(FrameSequence& seq);

struct TrainingSample {
  std::vector<Tensor> hr;     // (1,3,P,P) per window frame
  std::vector<Tensor> lr;     // (1,3,P/8,P/8), recomputed from the HR patch
  std::vector<FovBox> fovea;  // per-frame box in patch coordinates
};

// One shared random P x P crop across a window of consecutive frames starting
// at t0, with an independent clamped fovea box per frame.
TrainingSample sample_training_patch(const FrameSequence& seq, int t0, int window, int patch,
                                     int fovea_side, Rng& rng);

// Procedural test footage: a drifting crop of a fixed master canvas that mixes
// smooth color gradients with detail too fine to survive 8x downsampling.
// Deterministic in (w, h, frames, seed). HR only; run degrade_sequence after.
FrameSequence synth_clip(int w, int h, int frames, std::uint64_t seed);

}  // namespace crfp
