#pragma once

#include <optional>
#include <string>
#include <vector>

#include "crfp/foveation.hpp"
#include "crfp/tensor.hpp"

namespace crfp {

// Binary HR-sized masks (row-major, 1 = member).
struct RegionMasks {
  int width = 0, height = 0;
  std::vector<uint8_t> fovea;       // current box
  std::vector<uint8_t> past_fovea;  // union of prior boxes minus current box
  std::vector<uint8_t> whole;       // all ones
};

RegionMasks build_region_masks(const GazeTrace& trace, int t, int width, int height);

// PSNR over masked pixels of a (1,3,H,W) pair, all channels pooled, peak 1.0,
// capped at 99 dB. Empty mask -> nullopt.
std::optional<double> masked_psnr(const Tensor& a, const Tensor& b, const std::vector<uint8_t>& mask);

// SSIM with an 11x11 Gaussian window (sigma 1.5), C1 = 0.01^2, C2 = 0.03^2,
// per channel then channel-averaged. Window centers are the masked pixels
// whose full window fits inside the image; no valid center -> nullopt.
std::optional<double> masked_ssim(const Tensor& a, const Tensor& b, const std::vector<uint8_t>& mask);

// Channel-mean SSIM per valid window center, NaN in the 5-pixel border.
std::vector<float> ssim_map(const Tensor& a, const Tensor& b);

struct MetricRow {
  std::string clip;
  std::string frame;  // frame index, or "mean" for aggregates
  std::string region;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  std::vector<MetricRow> rows;
};

// Per-frame rows for fovea / past_fovea / whole (regions where either metric
// is undefined are skipped), then per-region mean rows over the frames that
// had the region defined.
MetricReport evaluate_clip(const std::string& clip_id, const std::vector<Tensor>& outputs,
                           const std::vector<Tensor>& ground_truth, const GazeTrace& trace);

// CSV with header "clip,frame,region,psnr,ssim".
void write_report(const MetricReport& report, const std::string& path);

}  // namespace crfp
