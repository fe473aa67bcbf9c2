#include "crfp/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace crfp {

namespace {

int read_ppm_token(std::istream& in, const std::string& path) {
  // whitespace- and comment-tolerant integer field
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    } else {
      c = in.get();
    }
  }
  if (c == EOF || !std::isdigit(c)) throw DataError("malformed PPM header: " + path);
  long v = 0;
  while (c != EOF && std::isdigit(c)) {
    v = v * 10 + (c - '0');
    if (v > 1 << 30) throw DataError("implausible PPM field: " + path);
    c = in.get();
  }
  if (c != EOF) in.unget();
  return static_cast<int>(v);
}

}  // namespace

Tensor read_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char m0 = 0, m1 = 0;
  f.get(m0);
  f.get(m1);
  if (m0 != 'P' || m1 != '6') throw DataError("not a P6 PPM file: " + path);
  int w = read_ppm_token(f, path);
  int h = read_ppm_token(f, path);
  int maxval = read_ppm_token(f, path);
  if (w < 1 || h < 1) throw DataError("empty PPM image: " + path);
  if (maxval != 255) throw DataError("only 8-bit PPM supported: " + path);
  f.get();  // single whitespace separating header from raster
  std::vector<char> raw(static_cast<size_t>(w) * h * 3);
  f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (f.gcount() != static_cast<std::streamsize>(raw.size()))
    throw DataError("truncated PPM raster: " + path);

  Tensor t = zeros({1, 3, h, w});
  float* tp = t.ptr();
  long plane = static_cast<long>(h) * w;
  const unsigned char* rp = reinterpret_cast<const unsigned char*>(raw.data());
  for (long p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) tp[c * plane + p] = static_cast<float>(rp[p * 3 + c]) * (1.0f / 255.0f);
  return t;
}

void write_image(const Tensor& frame, const std::string& path) {
  if (frame.rank() != 4 || frame.dim(0) != 1 || frame.dim(1) != 3)
    throw ConfigError("write_image: frame must be (1,3,H,W)");
  int h = frame.dim(2), w = frame.dim(3);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<char> raw(static_cast<size_t>(w) * h * 3);
  const float* tp = frame.ptr();
  long plane = static_cast<long>(h) * w;
  for (long p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) {
      float v = std::clamp(tp[c * plane + p], 0.0f, 1.0f);
      raw[static_cast<size_t>(p * 3 + c)] =
          static_cast<char>(static_cast<unsigned char>(std::floor(v * 255.0f + 0.5f)));
    }
  f.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!f) throw IoError("write failed: " + path);
}

FrameSequence load_sequence(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string name = e.path().filename().string();
    if (!name.empty() && name[0] == '.') continue;
    names.push_back(name);
  }
  if (names.empty()) throw DataError("no frames in directory: " + dir);
  std::sort(names.begin(), names.end());

  FrameSequence seq;
  seq.clip_id = fs::path(dir).filename().string();
  for (const auto& name : names) {
    Tensor t = read_image((fs::path(dir) / name).string());
    if (seq.hr.empty()) {
      seq.height = t.dim(2);
      seq.width = t.dim(3);
    } else if (t.dim(2) != seq.height || t.dim(3) != seq.width) {
      throw DataError("frame dimensions differ within clip: " + name);
    }
    seq.hr.push_back(std::move(t));
  }
  return seq;
}

void degrade_sequence(FrameSequence& seq) {
  if (seq.width % 8 != 0 || seq.height % 8 != 0)
    throw ConfigError("degrade_sequence: frame dims must be divisible by 8");
  seq.lr.clear();
  seq.lr.reserve(seq.hr.size());
  for (const Tensor& f : seq.hr) seq.lr.push_back(bicubic_resize(f, 0.125));
}

TrainingSample sample_training_patch(const FrameSequence& seq, int t0, int window, int patch,
                                     int fovea_side, Rng& rng) {
  if (window < 1) throw ConfigError("sample_training_patch: window must be >= 1");
  if (t0 < 0 || t0 + window > static_cast<int>(seq.hr.size()))
    throw ConfigError("sample_training_patch: window exceeds clip");
  if (patch % 8 != 0) throw ConfigError("sample_training_patch: patch size must be divisible by 8");
  if (patch > seq.width || patch > seq.height)
    throw ConfigError("sample_training_patch: frames smaller than patch size");
  if (fovea_side > patch) throw ConfigError("sample_training_patch: fovea larger than patch");

  int py = rng.uniform_int(0, seq.height - patch);
  int px = rng.uniform_int(0, seq.width - patch);
  TrainingSample s;
  for (int t = t0; t < t0 + window; ++t) {
    Tensor hr = crop_spatial(seq.hr[static_cast<size_t>(t)], py, px, patch, patch);
    s.lr.push_back(bicubic_resize(hr, 0.125));
    s.hr.push_back(std::move(hr));
    int cx = rng.uniform_int(0, patch - 1);
    int cy = rng.uniform_int(0, patch - 1);
    s.fovea.push_back(clamp_crop(patch, patch, cx, cy, fovea_side));
  }
  return s;
}

FrameSequence synth_clip(int w, int h, int frames, std::uint64_t seed) {
  if (w < 16 || h < 16 || w % 8 != 0 || h % 8 != 0)
    throw ConfigError("synth_clip: dims must be >= 16 and divisible by 8");
  if (frames < 1) throw ConfigError("synth_clip: need at least one frame");

  Rng rng(seed);
  const double two_pi = 6.283185307179586;
  int margin = 6 * frames + 64;
  int cw = w + margin, chh = h + margin;
  long plane = static_cast<long>(chh) * cw;
  std::vector<float> canvas(3 * static_cast<size_t>(plane));

  // Smooth per-channel waves: coarse enough to survive 8x downsampling, so
  // they anchor what the model can recover from LR alone.
  for (int c = 0; c < 3; ++c) {
    double a1 = rng.uniform() * two_pi, l1 = 24.0 + rng.uniform() * 24.0, p1 = rng.uniform() * two_pi;
    double a2 = rng.uniform() * two_pi, l2 = 24.0 + rng.uniform() * 24.0, p2 = rng.uniform() * two_pi;
    double c1x = std::cos(a1) / l1, c1y = std::sin(a1) / l1;
    double c2x = std::cos(a2) / l2, c2y = std::sin(a2) / l2;
    for (int y = 0; y < chh; ++y)
      for (int x = 0; x < cw; ++x)
        canvas[static_cast<size_t>(c * plane + static_cast<long>(y) * cw + x)] = static_cast<float>(
            0.5 + 0.2 * std::sin(two_pi * (c1x * x + c1y * y) + p1) +
            0.13 * std::sin(two_pi * (c2x * x + c2y * y) + p2));
  }

  // 2px checker across the whole canvas: gone entirely at 8x, and bicubic
  // upsampling can never reinvent it.
  int cph = rng.uniform_int(0, 1);
  for (int y = 0; y < chh; ++y)
    for (int x = 0; x < cw; ++x) {
      float s = (((x / 2) + (y / 2) + cph) % 2 == 0) ? 0.04f : -0.04f;
      for (int c = 0; c < 3; ++c) canvas[static_cast<size_t>(c * plane + static_cast<long>(y) * cw + x)] += s;
    }

  // Striped discs: fine texture (wavelength 6..12) that only the fovea sees
  // sharply; recovering it outside the current fovea takes carried state.
  int discs = 6 + rng.uniform_int(0, 4);
  for (int d = 0; d < discs; ++d) {
    double dcx = rng.uniform() * cw, dcy = rng.uniform() * chh;
    double rad = 18.0 + rng.uniform() * 30.0;
    double ang = rng.uniform() * two_pi, lam = 6.0 + rng.uniform() * 6.0, ph = rng.uniform() * two_pi;
    double kx = std::cos(ang) / lam, ky = std::sin(ang) / lam;
    float shift[3];
    for (int c = 0; c < 3; ++c) shift[c] = rng.uniform_range(-0.12f, 0.12f);
    int y0 = std::max(0, static_cast<int>(dcy - rad)), y1 = std::min(chh - 1, static_cast<int>(dcy + rad));
    int x0 = std::max(0, static_cast<int>(dcx - rad)), x1 = std::min(cw - 1, static_cast<int>(dcx + rad));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        double dx = x - dcx, dy = y - dcy;
        if (dx * dx + dy * dy > rad * rad) continue;
        float tex = static_cast<float>(0.16 * std::sin(two_pi * (kx * x + ky * y) + ph));
        for (int c = 0; c < 3; ++c)
          canvas[static_cast<size_t>(c * plane + static_cast<long>(y) * cw + x)] += shift[c] + tex;
      }
  }

  for (float& v : canvas) v = std::clamp(v, 0.0f, 1.0f);

  // Camera path: integer-origin drift (keeps frames resampling-free) with a
  // slow wobble so flow varies over time.
  double vx = rng.uniform_range(-2.5f, 2.5f), vy = rng.uniform_range(-2.5f, 2.5f);
  double wx = rng.uniform_range(1.5f, 3.0f), wy = rng.uniform_range(1.5f, 3.0f);
  double fx = rng.uniform_range(0.15f, 0.35f), fy = rng.uniform_range(0.15f, 0.35f);

  FrameSequence seq;
  seq.clip_id = "synth";
  seq.width = w;
  seq.height = h;
  for (int t = 0; t < frames; ++t) {
    int ox = margin / 2 + static_cast<int>(std::llround(vx * t + wx * std::sin(fx * t)));
    int oy = margin / 2 + static_cast<int>(std::llround(vy * t + wy * std::sin(fy * t)));
    ox = std::clamp(ox, 0, cw - w);
    oy = std::clamp(oy, 0, chh - h);
    Tensor f = zeros({1, 3, h, w});
    float* fp = f.ptr();
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y) {
        const float* src = canvas.data() + c * plane + static_cast<long>(oy + y) * cw + ox;
        std::copy(src, src + w, fp + (static_cast<long>(c) * h + y) * w);
      }
    seq.hr.push_back(std::move(f));
  }
  return seq;
}

}  // namespace crfp
