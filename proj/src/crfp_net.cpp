#include "crfp/crfp_net.hpp"

#include <string>

namespace crfp {

void CrfpConfig::validate() const {
  if (scale != 8) throw ConfigError("crfp.scale: only 8x is supported");
  if (num_aggregators != 4) throw ConfigError("crfp.num_aggregators: architecture is fixed at 4");
  if (base_channels < 2) throw ConfigError("crfp.base_channels must be >= 2");
  if (hr_channels < 1) throw ConfigError("crfp.hr_channels must be >= 1");
  if (fovea_size < 1) throw ConfigError("crfp.fovea_size must be >= 1");
  if (pass_channels < 1) throw ConfigError("crfp.pass_channels must be >= 1");
  if (dsv_channels < 0) throw ConfigError("crfp.dsv_channels must be >= 0");
  if (pass_channels + dsv_channels != base_channels)
    throw ConfigError("crfp.pass_channels + crfp.dsv_channels must equal crfp.base_channels");
  if (fast_region != 0 && (fast_region < 4 || fast_region % 4 != 0))
    throw ConfigError("crfp.fast_region must be 0 or a positive multiple of 4");
  if (offset_range <= 0.0f) throw ConfigError("crfp.offset_range must be positive");
  if (charbonnier_eps <= 0.0f) throw ConfigError("crfp.charbonnier_eps must be positive");
  if (flow.channels < 2) throw ConfigError("flow.channels must be >= 2");
  if (flow.flow_range <= 0.0f) throw ConfigError("flow.flow_range must be positive");
}

namespace {

Tensor conv_p(ParamStore& s, const std::string& name, const Tensor& x) {
  return conv2d(x, s.at(name + ".w"), s.at(name + ".b"));
}

Tensor conv_lrelu(ParamStore& s, const std::string& name, const Tensor& x) {
  return leaky_relu(conv_p(s, name, x));
}

}  // namespace

CrfpModel::CrfpModel(const CrfpConfig& cfg, uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  int bc = cfg_.base_channels, hc = cfg_.hr_channels;
  int pc = cfg_.pass_channels, dc = cfg_.dsv_channels;

  store_.create_conv("crfp.enc_lr.c1", bc, 3, 3, 3);
  store_.create_conv("crfp.enc_lr.c2", bc, bc, 3, 3);
  store_.create_conv("crfp.up2.c", 4 * bc, bc, 3, 3);
  store_.create_conv("crfp.down4.c", bc, 16 * hc, 3, 3);
  store_.create_conv("crfp.enc_fv.c1", hc, 6, 3, 3);
  store_.create_conv("crfp.enc_fv.c2", hc, hc, 3, 3);
  store_.create_conv("crfp.up4h.c", 16 * hc, pc, 3, 3);
  store_.create_conv("crfp.up4d.c", 16 * hc, bc, 3, 3);
  for (int l = 0; l < 4; ++l) {
    std::string p = "crfp.fa" + std::to_string(l) + ".";
    bool last = l == 3;
    int width = last ? hc : bc;           // C_in/C_FA working width
    int h_in = l == 0 ? bc : (last ? hc : pc);
    int warped = last ? hc : bc;          // warped feedback channels at this level
    int res_w = last ? hc + dc : bc;      // residual width carries the h/dsv split
    store_.create_conv(p + "cin", width, warped + h_in + 2 + dc, 3, 3);
    store_.create_conv(p + "cfa", width, 2 * width, 3, 3);
    store_.create_conv(p + "cm", 1, width, 3, 3);
    store_.create_conv(p + "co", 2, width, 3, 3);
    store_.create_conv(p + "dcn", warped, warped, 3, 3);
    store_.create_conv(p + "res_in", res_w, warped + warped + h_in, 3, 3);
    store_.create_conv(p + "res_c1", res_w, res_w, 3, 3);
    store_.create_conv(p + "res_c2", res_w, res_w, 3, 3);
  }
  store_.create_conv("crfp.ob.cfb", hc, 2 * hc, 3, 3);
  store_.create_conv("crfp.ob.cout", 3, hc, 3, 3);

  build_flow_params(cfg_.flow, store_);
}

RecurrentState CrfpModel::reset_state(const Tensor& first_lr) const {
  if (first_lr.rank() != 4 || first_lr.dim(1) != 3)
    throw ConfigError("reset_state: frame must be (B,3,h,w)");
  int b = first_lr.dim(0), h = first_lr.dim(2), w = first_lr.dim(3);
  RecurrentState st;
  st.feedback = zeros({b, cfg_.hr_channels, 8 * h, 8 * w});
  st.dsv.resize(4);
  for (int l = 0; l < 3; ++l) st.dsv[static_cast<size_t>(l)] = zeros({b, cfg_.dsv_channels, 2 * h, 2 * w});
  st.dsv[3] = zeros({b, cfg_.dsv_channels, 8 * h, 8 * w});
  st.prev_lr = detach(first_lr);
  return st;
}

namespace {

// One feature aggregator. d_prev is reset to zero by the caller at the start
// of every frame; dsv comes from the previous frame at this level.
struct FaOut {
  Tensor h, d, dsv;
};

FaOut fa_forward(ParamStore& s, const CrfpConfig& cfg, int l, const Tensor& h_l,
                 const Tensor& feedback, const Tensor& warped, const Tensor& flow_up,
                 const Tensor& d_prev, const Tensor& dsv, StepDebug* debug) {
  std::string p = "crfp.fa" + std::to_string(l) + ".";
  if (debug) debug->d_prev.push_back(d_prev);

  std::vector<Tensor> parts = {warped, h_l, flow_up};
  if (cfg.dsv_channels > 0) parts.push_back(warp_bilinear(dsv, flow_up));
  Tensor cin = conv_lrelu(s, p + "cin", channel_concat(parts));
  Tensor D = conv_p(s, p + "cfa", channel_concat({cin, d_prev}));

  Tensor hdot;
  if (cfg.fast_region > 0) {
    // CRFP-Fast: the trunk runs everywhere, only the deformable branch is
    // evaluated inside a centered square (scaled to this level's resolution)
    int side = l == 3 ? cfg.fast_region : cfg.fast_region / 4;
    int fh = feedback.dim(2), fw = feedback.dim(3);
    if (side > fh || side > fw) throw ConfigError("crfp.fast_region exceeds frame size");
    int ry = (fh - side) / 2, rx = (fw - side) / 2;
    Tensor Dr = crop_spatial(D, ry, rx, side, side);
    Tensor M = sigmoid(conv_p(s, p + "cm", Dr));
    Tensor O = mul_scalar(tanh_act(conv_p(s, p + "co", Dr)), cfg.offset_range);
    Tensor region = dcn_lite_region(feedback, O, M, s.at(p + "dcn.w"), s.at(p + "dcn.b"), ry, rx);
    hdot = paste_spatial(zeros({feedback.dim(0), feedback.dim(1), fh, fw}), region, ry, rx);
  } else {
    Tensor M = sigmoid(conv_p(s, p + "cm", D));
    Tensor O = mul_scalar(tanh_act(conv_p(s, p + "co", D)), cfg.offset_range);
    hdot = dcn_lite(feedback, O, M, s.at(p + "dcn.w"), s.at(p + "dcn.b"));
  }
  if (debug) debug->hdot.push_back(hdot);

  Tensor r = conv_lrelu(s, p + "res_in", channel_concat({hdot, warped, h_l}));
  Tensor rr = add(r, conv_p(s, p + "res_c2", conv_lrelu(s, p + "res_c1", r)));

  FaOut out;
  int split = l == 3 ? cfg.hr_channels : cfg.pass_channels;
  out.h = slice_channels(rr, 0, split);
  out.dsv = cfg.dsv_channels > 0 ? slice_channels(rr, split, split + cfg.dsv_channels)
                                 : zeros({rr.dim(0), 0, rr.dim(2), rr.dim(3)});
  out.d = D;
  return out;
}

}  // namespace

std::pair<Tensor, RecurrentState> CrfpModel::step(const RecurrentState& state, const Tensor& x_lr,
                                                  const Tensor& x_fov, const FovBox& box,
                                                  StepDebug* debug) {
  if (x_lr.rank() != 4 || x_lr.dim(1) != 3) throw ConfigError("step: x_lr must be (B,3,h,w)");
  int b = x_lr.dim(0), h = x_lr.dim(2), w = x_lr.dim(3);
  int H = 8 * h, W = 8 * w;
  if (state.prev_lr.shape != x_lr.shape) throw ConfigError("step: state/frame dimensions differ");
  if (state.feedback.shape != std::vector<int>{b, cfg_.hr_channels, H, W})
    throw ConfigError("step: feedback shape does not match frame dimensions");
  if (box.side != cfg_.fovea_size) throw UsageError("step: fovea box side differs from configured size");
  if (box.x0 < 0 || box.y0 < 0 || box.x0 + box.side > W || box.y0 + box.side > H)
    throw UsageError("step: fovea box exceeds frame bounds");
  if (x_fov.rank() != 4 || x_fov.dim(0) != b || x_fov.dim(1) != 3 || x_fov.dim(2) != box.side ||
      x_fov.dim(3) != box.side)
    throw ConfigError("step: x_fov must be (B,3,side,side)");

  ParamStore& s = store_;
  Tensor F = flow_forward_padded(cfg_.flow, s, x_lr, state.prev_lr);
  if (debug) debug->flow = F;
  Tensor flow2 = mul_scalar(bilinear_resize(F, 2.0), 2.0f);
  Tensor flow8 = mul_scalar(bilinear_resize(F, 8.0), 8.0f);

  Tensor fb_warp = warp_bilinear(state.feedback, flow8);
  auto down4 = [&](const Tensor& t) {
    return conv_lrelu(s, "crfp.down4.c", pixel_unshuffle_down(t, 4));
  };
  Tensor fb_ds = down4(state.feedback);
  Tensor warp_ds = down4(fb_warp);

  Tensor henc = conv_lrelu(s, "crfp.enc_lr.c2", conv_lrelu(s, "crfp.enc_lr.c1", x_lr));
  Tensor hcur = pixel_shuffle_up(conv_lrelu(s, "crfp.up2.c", henc), 2);
  Tensor d = zeros({b, cfg_.base_channels, 2 * h, 2 * w});

  RecurrentState ns;
  ns.dsv.resize(4);
  for (int l = 0; l < 3; ++l) {
    FaOut o = fa_forward(s, cfg_, l, hcur, fb_ds, warp_ds, flow2, d, state.dsv[static_cast<size_t>(l)],
                         debug);
    hcur = o.h;
    d = o.d;
    ns.dsv[static_cast<size_t>(l)] = o.dsv;
  }

  Tensor h_hr = pixel_shuffle_up(conv_lrelu(s, "crfp.up4h.c", hcur), 4);
  Tensor d_hr = pixel_shuffle_up(conv_p(s, "crfp.up4d.c", d), 4);
  FaOut fin = fa_forward(s, cfg_, 3, h_hr, state.feedback, fb_warp, flow8, d_hr, state.dsv[3], debug);
  ns.dsv[3] = fin.dsv;

  Tensor up_lr = bilinear_resize(x_lr, 8.0);
  Tensor fov_in =
      channel_concat({x_fov, crop_spatial(up_lr, box.y0, box.x0, box.side, box.side)});
  Tensor fo = conv_lrelu(s, "crfp.enc_fv.c2", conv_lrelu(s, "crfp.enc_fv.c1", fov_in));
  Tensor plane = paste_spatial(zeros({b, cfg_.hr_channels, H, W}), fo, box.y0, box.x0);

  Tensor fbk = conv_lrelu(s, "crfp.ob.cfb", channel_concat({fin.h, plane}));
  Tensor x_hat = add(conv_p(s, "crfp.ob.cout", fbk), up_lr);

  ns.feedback = fbk;
  ns.prev_lr = detach(x_lr);
  ns.boxes = state.boxes;
  ns.boxes.push_back(box);
  return {x_hat, ns};
}

std::vector<CkptRecord> CrfpModel::export_records() const {
  std::vector<CkptRecord> recs;
  for (const auto& name : store_.names()) {
    const Tensor& t = store_.at(name);
    recs.push_back({name, t.shape, *t.data});
  }
  return recs;
}

void CrfpModel::import_records(const Checkpoint& ck) {
  for (const auto& name : store_.names()) {
    const CkptRecord& rec = ck.require(name);
    Tensor& t = store_.at(name);
    if (rec.shape != t.shape) throw DataError("checkpoint shape mismatch for " + name);
    *t.data = rec.data;
  }
}

}  // namespace crfp
