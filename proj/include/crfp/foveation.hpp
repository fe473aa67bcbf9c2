#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crfp/errors.hpp"
#include "crfp/rng.hpp"

namespace crfp {

// Realized fovea box in HR pixels: origin (x0, y0), square side.
struct FovBox {
  int x0 = 0, y0 = 0, side = 0;

  bool operator==(const FovBox&) const = default;
};

// One realized box per frame plus the parameters that produced it.
struct GazeTrace {
  std::vector<FovBox> boxes;
  double sigma = 0.0;  // tracker noise std in HR px (0 for deterministic traces)
  uint64_t seed = 0;
};

// Box centered at (cx, cy), translated minimally to lie inside the frame.
FovBox clamp_crop(int frame_w, int frame_h, int cx, int cy, int side);

// Gaze center corrupted by N(0, sigma^2) per axis (x drawn first), rounded
// half away from zero to integer pixels.
std::pair<int, int> sample_gaze(int mu_x, int mu_y, double sigma_t, Rng& rng);

// Left-to-right sweep stepping by one side per frame, then down a row,
// wrapping when the sweep is exhausted. Rows step by side; a final row
// clamped to the bottom edge is appended when side does not divide the
// height, so a full sweep covers every row of the frame.
GazeTrace raster_trajectory(int frame_w, int frame_h, int side, int n_frames);

// Equally spaced left-to-right centers across the clip at vertical center cy;
// the first and last frames sit at the leftmost and rightmost valid positions.
GazeTrace horizontal_trajectory(int frame_w, int frame_h, int side, int n_frames, int cy);

// Fixed intended center with per-frame Gaussian tracker noise.
GazeTrace tracker_trajectory(int frame_w, int frame_h, int side, int n_frames, int mu_x, int mu_y,
                             double sigma_t, uint64_t seed);

// Plain-text trace files: one line "frame_index x0 y0 side" per frame.
void save_trace(const GazeTrace& trace, const std::string& path);
GazeTrace load_trace(const std::string& path);

}  // namespace crfp
