#include "crfp/foveation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace crfp {

FovBox clamp_crop(int frame_w, int frame_h, int cx, int cy, int side) {
  if (side < 1) throw ConfigError("clamp_crop: side must be >= 1");
  if (side > frame_w || side > frame_h)
    throw ConfigError("clamp_crop: fovea side exceeds frame dimensions");
  int x0 = std::clamp(cx - side / 2, 0, frame_w - side);
  int y0 = std::clamp(cy - side / 2, 0, frame_h - side);
  return {x0, y0, side};
}

std::pair<int, int> sample_gaze(int mu_x, int mu_y, double sigma_t, Rng& rng) {
  if (sigma_t < 0.0) throw ConfigError("sample_gaze: sigma must be >= 0");
  if (sigma_t == 0.0) return {mu_x, mu_y};
  double gx = rng.gaussian();
  double gy = rng.gaussian();
  return {static_cast<int>(std::llround(mu_x + sigma_t * gx)),
          static_cast<int>(std::llround(mu_y + sigma_t * gy))};
}

GazeTrace raster_trajectory(int frame_w, int frame_h, int side, int n_frames) {
  if (n_frames < 1) throw ConfigError("raster_trajectory: n_frames must be >= 1");
  if (side > frame_w || side > frame_h)
    throw ConfigError("raster_trajectory: fovea side exceeds frame dimensions");
  std::vector<int> rows;
  for (int y = 0; y + side <= frame_h; y += side) rows.push_back(y);
  if (frame_h % side != 0) rows.push_back(frame_h - side);
  int cols = frame_w / side;
  GazeTrace trace;
  trace.boxes.reserve(static_cast<size_t>(n_frames));
  int total = static_cast<int>(rows.size()) * cols;
  for (int t = 0; t < n_frames; ++t) {
    int k = t % total;
    trace.boxes.push_back({(k % cols) * side, rows[static_cast<size_t>(k / cols)], side});
  }
  return trace;
}

GazeTrace horizontal_trajectory(int frame_w, int frame_h, int side, int n_frames, int cy) {
  if (n_frames < 1) throw ConfigError("horizontal_trajectory: n_frames must be >= 1");
  if (cy < 0 || cy >= frame_h) throw ConfigError("horizontal_trajectory: cy outside frame");
  GazeTrace trace;
  trace.boxes.reserve(static_cast<size_t>(n_frames));
  double c0 = side / 2.0;
  double c1 = frame_w - side / 2.0;
  for (int t = 0; t < n_frames; ++t) {
    double f = n_frames == 1 ? 0.0 : static_cast<double>(t) / (n_frames - 1);
    int cx = static_cast<int>(std::llround(c0 + f * (c1 - c0)));
    trace.boxes.push_back(clamp_crop(frame_w, frame_h, cx, cy, side));
  }
  return trace;
}

GazeTrace tracker_trajectory(int frame_w, int frame_h, int side, int n_frames, int mu_x, int mu_y,
                             double sigma_t, uint64_t seed) {
  if (n_frames < 1) throw ConfigError("tracker_trajectory: n_frames must be >= 1");
  GazeTrace trace;
  trace.sigma = sigma_t;
  trace.seed = seed;
  trace.boxes.reserve(static_cast<size_t>(n_frames));
  Rng rng(seed);
  for (int t = 0; t < n_frames; ++t) {
    auto [px, py] = sample_gaze(mu_x, mu_y, sigma_t, rng);
    trace.boxes.push_back(clamp_crop(frame_w, frame_h, px, py, side));
  }
  return trace;
}

void save_trace(const GazeTrace& trace, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  for (size_t t = 0; t < trace.boxes.size(); ++t) {
    const FovBox& b = trace.boxes[t];
    f << t << ' ' << b.x0 << ' ' << b.y0 << ' ' << b.side << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

GazeTrace load_trace(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  GazeTrace trace;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    long frame = -1;
    FovBox b;
    if (!(ss >> frame >> b.x0 >> b.y0 >> b.side))
      throw DataError("malformed trace line " + std::to_string(lineno) + " in " + path);
    std::string rest;
    if (ss >> rest) throw DataError("trailing tokens on trace line " + std::to_string(lineno) + " in " + path);
    if (frame != static_cast<long>(trace.boxes.size()))
      throw DataError("trace frame indices must start at 0 and be consecutive: " + path);
    if (b.side < 1 || b.x0 < 0 || b.y0 < 0)
      throw DataError("invalid box on trace line " + std::to_string(lineno) + " in " + path);
    trace.boxes.push_back(b);
    ++lineno;
  }
  if (trace.boxes.empty()) throw DataError("empty trace file: " + path);
  return trace;
}

}  // namespace crfp
