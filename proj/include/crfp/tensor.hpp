#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "crfp/errors.hpp"
#include "crfp/rng.hpp"

namespace crfp {

class Tape;

// Dense float32 tensor, row-major, layout (B, C, H, W) for rank-4 data.
// A tensor is tracked when it carries a tape and a node id; gradients live on
// the tape, keyed by node, and are lazily allocated as zeros on first touch.
struct Tensor {
  std::vector<int> shape;
  std::shared_ptr<std::vector<float>> data;
  Tape* tape = nullptr;
  int node = -1;

  Tensor() = default;

  bool defined() const { return static_cast<bool>(data); }
  bool tracked() const { return tape != nullptr && node >= 0; }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }
  long numel() const {
    long n = 1;
    for (int d : shape) n *= d;
    return n;
  }
  float* ptr() { return data->data(); }
  const float* ptr() const { return data->data(); }
};

Tensor zeros(std::vector<int> shape);
Tensor full(std::vector<int> shape, float value);
Tensor from_vec(std::vector<int> shape, std::vector<float> values);
Tensor uniform_tensor(std::vector<int> shape, float lo, float hi, Rng& rng);

// Reverse-mode tape. Nodes are appended in execution order; backward replays
// them in exact reverse order, once each. Gradients of nodes the loss never
// reached stay unallocated and read back as zero.
class Tape {
 public:
  int add_node(long numel);
  void set_backward(int node, std::function<void()> fn);

  // Lazy-zero gradient buffer for writing.
  std::vector<float>& grad(int node);
  // Read-only; nullptr when the node was never reached.
  const std::vector<float>* grad_if(int node) const;

  // Registers t's current payload as a tracked leaf on this tape and returns
  // the tracked view. The data buffer is shared, not copied.
  Tensor leaf(Tensor t);

  // Seeds d(loss)/d(loss) = 1 and replays the tape. loss must be a scalar
  // recorded on this tape (UsageError otherwise).
  void backward(const Tensor& loss);

  void clear();
  size_t num_nodes() const { return nodes_.size(); }
  // Number of backward closures invoked by the last backward() call.
  long replay_count() const { return replay_count_; }

 private:
  struct Node {
    long numel = 0;
    std::function<void()> back;
    std::unique_ptr<std::vector<float>> grad;
  };
  std::vector<Node> nodes_;
  long replay_count_ = 0;
};

// Gradient of a tracked tensor after backward; nullptr when untracked/unreached.
const std::vector<float>* grad_of(const Tensor& t);

// ---- elementwise & reductions ------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, float s);
Tensor mul_scalar(const Tensor& a, float s);
Tensor leaky_relu(const Tensor& x, float slope = 0.1f);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh_act(const Tensor& x);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// mean over elements of sqrt((pred-target)^2 + eps^2)
Tensor charbonnier_loss(const Tensor& pred, const Tensor& target, float eps);

// ---- structural ops ----------------------------------------------------------
Tensor channel_concat(const std::vector<Tensor>& xs);
Tensor slice_channels(const Tensor& x, int c0, int c1);
Tensor crop_spatial(const Tensor& x, int y0, int x0, int h, int w);
// base with the patch written over [y0, y0+ph) x [x0, x0+pw)
Tensor paste_spatial(const Tensor& base, const Tensor& patch, int y0, int x0);
Tensor reflect_pad(const Tensor& x, int top, int bottom, int left, int right);
Tensor detach(const Tensor& x);
Tensor clamp01(const Tensor& x);  // untracked copy clamped to [0,1]

// ---- spatial kernels ---------------------------------------------------------
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride = 1,
              int padding = 1);
Tensor pixel_shuffle_up(const Tensor& x, int r);
Tensor pixel_unshuffle_down(const Tensor& x, int r);
Tensor avg_pool2(const Tensor& x);
// align-corners-false, border-clamped; output dims round(H*scale), round(W*scale)
Tensor bilinear_resize(const Tensor& x, double scale);
Tensor bilinear_resize_to(const Tensor& x, int oh, int ow);
// Catmull-Rom a=-0.5; antialiased (support widened by 1/scale) when downscaling
Tensor bicubic_resize(const Tensor& x, double scale);
// output(p) = bilinear sample of x at p + flow(p); flow channels (dx, dy) in
// pixels at x's resolution; out-of-frame taps read as zero
Tensor warp_bilinear(const Tensor& x, const Tensor& flow);
// Shared per-position offset/mask deformable 3x3 conv:
//   out(p) = bias + M(p) * sum_k w_k * x(p + p_k + O(p))
Tensor dcn_lite(const Tensor& x, const Tensor& offsets, const Tensor& masks,
                const Tensor& w, const Tensor& b);
// Same arithmetic, but offsets/masks cover only a region whose top-left corner
// in x's coordinates is (x0, y0); output has the region's spatial dims and
// samples reach into the full x.
Tensor dcn_lite_region(const Tensor& x, const Tensor& offsets, const Tensor& masks,
                       const Tensor& w, const Tensor& b, int y0, int x0);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// ---- verification harness ----------------------------------------------------
// Central-difference check of d f / d x against the tape gradient. Non-scalar
// outputs are collapsed through a fixed random projection: the analytic side
// differentiates sum(f(x) * proj) on the tape, the numeric side accumulates
// dot(proj, f(x +- eps e_i)) in double so output coordinates the perturbation
// never touches cancel exactly instead of leaving float32 summation noise.
// Returns the max over sampled input coordinates of |a - n| / max(|a|, |n|,
// 1e-8). Coordinates the estimate cannot resolve are skipped: where both |a|
// and |n| sit below a 1e-4 floor, and where |a - n| is within what float32
// forward rounding alone can produce (tens of ulps at the data's magnitude
// over 2 eps) — the ratio there measures rounding, not the gradient rule.
// max_coords = 0 checks every coordinate; seed fixes both the projection and
// the coordinate sample.
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f,
                         const Tensor& x0, float eps = 1e-3f, int max_coords = 0,
                         uint64_t seed = 17);

// ---- parameters --------------------------------------------------------------
// Named parameter registry with stable insertion order (defines checkpoint
// record order). Conv weights get fan-in-scaled uniform init, biases zeros.
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 0) : rng_(seed) {}

  Tensor& create_conv(const std::string& name_prefix, int out_ch, int in_ch, int kh,
                      int kw);  // creates name_prefix+".w" and ".b"
  Tensor& create(const std::string& name, std::vector<int> shape);  // zeros

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;
  const std::vector<std::string>& names() const { return order_; }

  long total_params() const;
  long group_params(const std::string& prefix) const;

  // Fresh-iteration lifecycle: register every parameter as a leaf on the tape
  // (or drop tracking for inference).
  void attach_all(Tape& tape);
  void detach_all();

 private:
  Rng rng_;
  std::vector<std::string> order_;
  std::unordered_map<std::string, Tensor> map_;
};

}  // namespace crfp
