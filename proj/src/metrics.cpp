#include "crfp/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace crfp {

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const double* gauss_window() {
  static double w[kWin];
  static bool init = [] {
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
      double d = i - kHalf;
      w[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      sum += w[i];
    }
    for (int i = 0; i < kWin; ++i) w[i] /= sum;
    return true;
  }();
  (void)init;
  return w;
}

void check_pair(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || a.dim(0) != 1 || a.dim(1) != 3)
    throw ConfigError("metrics: images must be (1,3,H,W)");
  if (a.shape != b.shape) throw ConfigError("metrics: image dimensions differ");
}

// Separable 11-tap Gaussian; output defined only at centers whose full window
// fits inside the image, zero elsewhere.
std::vector<double> filter_valid(const std::vector<double>& img, int h, int w) {
  const double* g = gauss_window();
  std::vector<double> tmp(static_cast<size_t>(h) * w, 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = kHalf; x < w - kHalf; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWin; ++k) acc += g[k] * img[static_cast<size_t>(y) * w + x - kHalf + k];
      tmp[static_cast<size_t>(y) * w + x] = acc;
    }
  std::vector<double> out(static_cast<size_t>(h) * w, 0.0);
  for (int y = kHalf; y < h - kHalf; ++y)
    for (int x = kHalf; x < w - kHalf; ++x) {
      double acc = 0.0;
      for (int k = 0; k < kWin; ++k) acc += g[k] * tmp[static_cast<size_t>(y - kHalf + k) * w + x];
      out[static_cast<size_t>(y) * w + x] = acc;
    }
  return out;
}

// Per-channel SSIM value at every valid center.
std::vector<double> ssim_channel_map(const float* a, const float* b, int h, int w) {
  size_t n = static_cast<size_t>(h) * w;
  std::vector<double> da(n), db(n), daa(n), dbb(n), dab(n);
  for (size_t i = 0; i < n; ++i) {
    double va = a[i], vb = b[i];
    da[i] = va;
    db[i] = vb;
    daa[i] = va * va;
    dbb[i] = vb * vb;
    dab[i] = va * vb;
  }
  std::vector<double> mu_a = filter_valid(da, h, w);
  std::vector<double> mu_b = filter_valid(db, h, w);
  std::vector<double> e_aa = filter_valid(daa, h, w);
  std::vector<double> e_bb = filter_valid(dbb, h, w);
  std::vector<double> e_ab = filter_valid(dab, h, w);
  std::vector<double> out(n, 0.0);
  for (int y = kHalf; y < h - kHalf; ++y)
    for (int x = kHalf; x < w - kHalf; ++x) {
      size_t i = static_cast<size_t>(y) * w + x;
      double ma = mu_a[i], mb = mu_b[i];
      double va = e_aa[i] - ma * ma;
      double vb = e_bb[i] - mb * mb;
      double cab = e_ab[i] - ma * mb;
      out[i] = ((2.0 * ma * mb + kC1) * (2.0 * cab + kC2)) /
               ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
  return out;
}

}  // namespace

RegionMasks build_region_masks(const GazeTrace& trace, int t, int width, int height) {
  if (t < 0 || t >= static_cast<int>(trace.boxes.size()))
    throw ConfigError("build_region_masks: frame outside trace");
  RegionMasks m;
  m.width = width;
  m.height = height;
  size_t n = static_cast<size_t>(width) * height;
  m.fovea.assign(n, 0);
  m.past_fovea.assign(n, 0);
  m.whole.assign(n, 1);
  auto fill = [&](std::vector<uint8_t>& mask, const FovBox& b, uint8_t v) {
    for (int y = b.y0; y < b.y0 + b.side && y < height; ++y)
      for (int x = b.x0; x < b.x0 + b.side && x < width; ++x)
        mask[static_cast<size_t>(y) * width + x] = v;
  };
  for (int k = 0; k < t; ++k) fill(m.past_fovea, trace.boxes[static_cast<size_t>(k)], 1);
  const FovBox& cur = trace.boxes[static_cast<size_t>(t)];
  fill(m.fovea, cur, 1);
  fill(m.past_fovea, cur, 0);
  return m;
}

std::optional<double> masked_psnr(const Tensor& a, const Tensor& b, const std::vector<uint8_t>& mask) {
  check_pair(a, b);
  int h = a.dim(2), w = a.dim(3);
  if (mask.size() != static_cast<size_t>(h) * w) throw ConfigError("masked_psnr: mask size mismatch");
  const float* ap = a.ptr();
  const float* bp = b.ptr();
  long plane = static_cast<long>(h) * w;
  double se = 0.0;
  long count = 0;
  for (long i = 0; i < plane; ++i) {
    if (!mask[static_cast<size_t>(i)]) continue;
    ++count;
    for (int c = 0; c < 3; ++c) {
      double d = static_cast<double>(ap[c * plane + i]) - bp[c * plane + i];
      se += d * d;
    }
  }
  if (count == 0) return std::nullopt;
  double mse = se / (3.0 * count);
  if (mse <= 0.0) return 99.0;
  return std::min(10.0 * std::log10(1.0 / mse), 99.0);
}

std::optional<double> masked_ssim(const Tensor& a, const Tensor& b, const std::vector<uint8_t>& mask) {
  check_pair(a, b);
  int h = a.dim(2), w = a.dim(3);
  if (mask.size() != static_cast<size_t>(h) * w) throw ConfigError("masked_ssim: mask size mismatch");
  long plane = static_cast<long>(h) * w;
  double total = 0.0;
  long count = 0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> map = ssim_channel_map(a.ptr() + c * plane, b.ptr() + c * plane, h, w);
    double acc = 0.0;
    long cnt = 0;
    for (int y = kHalf; y < h - kHalf; ++y)
      for (int x = kHalf; x < w - kHalf; ++x) {
        size_t i = static_cast<size_t>(y) * w + x;
        if (!mask[i]) continue;
        acc += map[i];
        ++cnt;
      }
    if (cnt == 0) return std::nullopt;
    total += acc / cnt;
    count = cnt;
  }
  (void)count;
  return total / 3.0;
}

std::vector<float> ssim_map(const Tensor& a, const Tensor& b) {
  check_pair(a, b);
  int h = a.dim(2), w = a.dim(3);
  long plane = static_cast<long>(h) * w;
  std::vector<double> sum(static_cast<size_t>(plane), 0.0);
  for (int c = 0; c < 3; ++c) {
    std::vector<double> map = ssim_channel_map(a.ptr() + c * plane, b.ptr() + c * plane, h, w);
    for (long i = 0; i < plane; ++i) sum[static_cast<size_t>(i)] += map[static_cast<size_t>(i)];
  }
  std::vector<float> out(static_cast<size_t>(plane), std::numeric_limits<float>::quiet_NaN());
  for (int y = kHalf; y < h - kHalf; ++y)
    for (int x = kHalf; x < w - kHalf; ++x) {
      size_t i = static_cast<size_t>(y) * w + x;
      out[i] = static_cast<float>(sum[i] / 3.0);
    }
  return out;
}

MetricReport evaluate_clip(const std::string& clip_id, const std::vector<Tensor>& outputs,
                           const std::vector<Tensor>& ground_truth, const GazeTrace& trace) {
  if (outputs.size() != ground_truth.size())
    throw UsageError("evaluate_clip: output/ground-truth lengths differ");
  if (outputs.empty()) throw UsageError("evaluate_clip: empty sequences");
  if (trace.boxes.size() < outputs.size())
    throw UsageError("evaluate_clip: trace shorter than clip");

  int h = ground_truth[0].dim(2), w = ground_truth[0].dim(3);
  MetricReport rep;
  struct Agg {
    double psnr = 0.0, ssim = 0.0;
    long n = 0;
  } agg[3];
  const char* names[3] = {"fovea", "past_fovea", "whole"};
  for (size_t t = 0; t < outputs.size(); ++t) {
    RegionMasks masks = build_region_masks(trace, static_cast<int>(t), w, h);
    const std::vector<uint8_t>* sel[3] = {&masks.fovea, &masks.past_fovea, &masks.whole};
    for (int r = 0; r < 3; ++r) {
      auto p = masked_psnr(outputs[t], ground_truth[t], *sel[r]);
      auto s = masked_ssim(outputs[t], ground_truth[t], *sel[r]);
      if (!p || !s) continue;
      rep.rows.push_back({clip_id, std::to_string(t), names[r], *p, *s});
      agg[r].psnr += *p;
      agg[r].ssim += *s;
      ++agg[r].n;
    }
  }
  for (int r = 0; r < 3; ++r)
    if (agg[r].n > 0)
      rep.rows.push_back({clip_id, "mean", names[r], agg[r].psnr / agg[r].n, agg[r].ssim / agg[r].n});
  return rep;
}

void write_report(const MetricReport& report, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "clip,frame,region,psnr,ssim\n";
  char buf[64];
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f", r.psnr, r.ssim);
    f << r.clip << ',' << r.frame << ',' << r.region << ',' << buf << '\n';
  }
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace crfp
