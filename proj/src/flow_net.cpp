#include "crfp/flow_net.hpp"

#include <algorithm>

namespace crfp {

void build_flow_params(const FlowConfig& cfg, ParamStore& store) {
  int f = cfg.channels;
  if (f < 2) throw ConfigError("flow net width must be >= 2");
  store.create_conv("flow.enc1.c1", f, 6, 3, 3);
  store.create_conv("flow.enc1.c2", f, f, 3, 3);
  store.create_conv("flow.enc2.c1", 2 * f, f, 3, 3);
  store.create_conv("flow.enc2.c2", 2 * f, 2 * f, 3, 3);
  store.create_conv("flow.enc3.c1", 2 * f, 2 * f, 3, 3);
  store.create_conv("flow.enc3.c2", 2 * f, 2 * f, 3, 3);
  store.create_conv("flow.dec3.c1", 2 * f, 4 * f, 3, 3);
  store.create_conv("flow.dec3.c2", 2 * f, 2 * f, 3, 3);
  store.create_conv("flow.dec2.c1", 2 * f, 4 * f, 3, 3);
  store.create_conv("flow.dec2.c2", f, 2 * f, 3, 3);
  store.create_conv("flow.dec1.c1", f, 2 * f, 3, 3);
  store.create_conv("flow.dec1.c2", f, f, 3, 3);
  store.create_conv("flow.head.c1", f, f, 3, 3);
  store.create_conv("flow.head.c2", 2, f, 3, 3);
}

namespace {

Tensor conv_relu(ParamStore& s, const std::string& name, const Tensor& x) {
  return relu(conv2d(x, s.at(name + ".w"), s.at(name + ".b")));
}

}  // namespace

Tensor flow_forward(const FlowConfig& cfg, ParamStore& store, const Tensor& cur, const Tensor& prev) {
  if (cur.rank() != 4 || cur.dim(1) != 3) throw ConfigError("flow_forward: frames must be (B,3,H,W)");
  if (cur.shape != prev.shape) throw ConfigError("flow_forward: frame shapes differ");
  if (cur.dim(2) % 8 != 0 || cur.dim(3) % 8 != 0)
    throw ConfigError("flow_forward: dims must be divisible by 8");

  Tensor x = channel_concat({cur, prev});
  Tensor e1 = conv_relu(store, "flow.enc1.c2", conv_relu(store, "flow.enc1.c1", x));
  Tensor p1 = avg_pool2(e1);
  Tensor e2 = conv_relu(store, "flow.enc2.c2", conv_relu(store, "flow.enc2.c1", p1));
  Tensor p2 = avg_pool2(e2);
  Tensor e3 = conv_relu(store, "flow.enc3.c2", conv_relu(store, "flow.enc3.c1", p2));
  Tensor p3 = avg_pool2(e3);

  Tensor d3 = channel_concat({bilinear_resize(p3, 2.0), e3});
  d3 = conv_relu(store, "flow.dec3.c2", conv_relu(store, "flow.dec3.c1", d3));
  Tensor d2 = channel_concat({bilinear_resize(d3, 2.0), e2});
  d2 = conv_relu(store, "flow.dec2.c2", conv_relu(store, "flow.dec2.c1", d2));
  Tensor d1 = channel_concat({bilinear_resize(d2, 2.0), e1});
  d1 = conv_relu(store, "flow.dec1.c2", conv_relu(store, "flow.dec1.c1", d1));

  Tensor h = conv_relu(store, "flow.head.c1", d1);
  Tensor raw = conv2d(h, store.at("flow.head.c2.w"), store.at("flow.head.c2.b"));
  return mul_scalar(tanh_act(raw), cfg.flow_range);
}

namespace {

// Reflect-pads bottom/right up to (th, tw). Reflection needs pad < dim, so
// frames smaller than the pad grow over several passes.
Tensor pad_to(const Tensor& x, int th, int tw) {
  Tensor cur = x;
  while (cur.dim(2) < th || cur.dim(3) < tw) {
    if (cur.dim(2) < 2 || cur.dim(3) < 2)
      throw ConfigError("flow_forward_padded: frames must be at least 2x2");
    int pb = std::min(th - cur.dim(2), cur.dim(2) - 1);
    int pr = std::min(tw - cur.dim(3), cur.dim(3) - 1);
    cur = reflect_pad(cur, 0, pb, 0, pr);
  }
  return cur;
}

}  // namespace

Tensor flow_forward_padded(const FlowConfig& cfg, ParamStore& store, const Tensor& cur,
                           const Tensor& prev) {
  int h = cur.dim(2), w = cur.dim(3);
  if (h % 8 == 0 && w % 8 == 0) return flow_forward(cfg, store, cur, prev);
  int th = h + (8 - h % 8) % 8, tw = w + (8 - w % 8) % 8;
  Tensor f = flow_forward(cfg, store, pad_to(cur, th, tw), pad_to(prev, th, tw));
  return crop_spatial(f, 0, 0, h, w);
}

}  // namespace crfp
