#include <algorithm>
#include <cmath>
#include <vector>

#include "crfp/tensor.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace crfp;
using crfp::test::bitwise_equal;
using crfp::test::max_abs_diff;
using crfp::test::rand_tensor;

namespace {

double cubic_cr(double t) {
  // Catmull-Rom, a = -0.5
  t = std::abs(t);
  if (t < 1.0) return 1.5 * t * t * t - 2.5 * t * t + 1.0;
  if (t < 2.0) return -0.5 * t * t * t + 2.5 * t * t - 4.0 * t + 2.0;
  return 0.0;
}

// Direct (non-separable) reference: full 2D weighted sum per output pixel in
// double, clamped tap indices, antialiased support on downscale.
Tensor bicubic_reference(const Tensor& x, int oh, int ow) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  double ry = static_cast<double>(H) / oh, rx = static_cast<double>(W) / ow;
  double sy = std::min(1.0 / ry, 1.0), sx = std::min(1.0 / rx, 1.0);
  Tensor out = zeros({B, C, oh, ow});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double cy = (oy + 0.5) * ry - 0.5, cx = (ox + 0.5) * rx - 0.5;
          int y0 = static_cast<int>(std::ceil(cy - 2.0 / sy));
          int y1 = static_cast<int>(std::floor(cy + 2.0 / sy));
          int x0 = static_cast<int>(std::ceil(cx - 2.0 / sx));
          int x1 = static_cast<int>(std::floor(cx + 2.0 / sx));
          double acc = 0.0, wsum = 0.0;
          for (int iy = y0; iy <= y1; ++iy)
            for (int ix = x0; ix <= x1; ++ix) {
              double wv = cubic_cr((iy - cy) * sy) * cubic_cr((ix - cx) * sx);
              int ty = std::clamp(iy, 0, H - 1), tx = std::clamp(ix, 0, W - 1);
              acc += wv * x.ptr()[((static_cast<long>(b) * C + c) * H + ty) * W + tx];
              wsum += wv;
            }
          out.ptr()[((static_cast<long>(b) * C + c) * oh + oy) * ow + ox] =
              static_cast<float>(acc / wsum);
        }
  return out;
}

Tensor bilinear_reference(const Tensor& x, int oh, int ow) {
  int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  double ry = static_cast<double>(H) / oh, rx = static_cast<double>(W) / ow;
  Tensor out = zeros({B, C, oh, ow});
  for (int b = 0; b < B; ++b)
    for (int c = 0; c < C; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double cy = std::clamp((oy + 0.5) * ry - 0.5, 0.0, static_cast<double>(H - 1));
          double cx = std::clamp((ox + 0.5) * rx - 0.5, 0.0, static_cast<double>(W - 1));
          int iy = std::min(static_cast<int>(cy), H - 1), ix = std::min(static_cast<int>(cx), W - 1);
          int iy1 = std::min(iy + 1, H - 1), ix1 = std::min(ix + 1, W - 1);
          double fy = cy - iy, fx = cx - ix;
          auto at = [&](int yy, int xx) {
            return static_cast<double>(x.ptr()[((static_cast<long>(b) * C + c) * H + yy) * W + xx]);
          };
          double v = (1 - fy) * ((1 - fx) * at(iy, ix) + fx * at(iy, ix1)) +
                     fy * ((1 - fx) * at(iy1, ix) + fx * at(iy1, ix1));
          out.ptr()[((static_cast<long>(b) * C + c) * oh + oy) * ow + ox] = static_cast<float>(v);
        }
  return out;
}

}  // namespace

TEST_CASE("pixel shuffle: exact channel/position mapping and inverse") {
  Tensor x = from_vec({1, 4, 1, 1}, {0.0f, 1.0f, 2.0f, 3.0f});
  Tensor up = pixel_shuffle_up(x, 2);
  REQUIRE(up.shape == std::vector<int>{1, 1, 2, 2});
  CHECK(up.ptr()[0] == 0.0f);  // (dy=0, dx=0) <- channel 0
  CHECK(up.ptr()[1] == 1.0f);
  CHECK(up.ptr()[2] == 2.0f);
  CHECK(up.ptr()[3] == 3.0f);
  CHECK(bitwise_equal(pixel_unshuffle_down(up, 2), x));

  Tensor big = rand_tensor({2, 8, 3, 5}, 41);
  CHECK(bitwise_equal(pixel_unshuffle_down(pixel_shuffle_up(big, 2), 2), big));
  Tensor big4 = rand_tensor({1, 16, 2, 3}, 42);
  CHECK(bitwise_equal(pixel_unshuffle_down(pixel_shuffle_up(big4, 4), 4), big4));
  CHECK_THROWS_AS(pixel_shuffle_up(rand_tensor({1, 3, 2, 2}, 43), 2), ConfigError);
  CHECK_THROWS_AS(pixel_unshuffle_down(rand_tensor({1, 1, 3, 4}, 44), 2), ConfigError);
}

TEST_CASE("avg_pool2 averages 2x2 blocks") {
  Tensor x = from_vec({1, 1, 2, 4}, {1.0f, 3.0f, 5.0f, 7.0f, 2.0f, 6.0f, 1.0f, 3.0f});
  Tensor y = avg_pool2(x);
  REQUIRE(y.shape == std::vector<int>{1, 1, 1, 2});
  CHECK(y.ptr()[0] == 3.0f);
  CHECK(y.ptr()[1] == 4.0f);
  CHECK_THROWS_AS(avg_pool2(zeros({1, 1, 3, 4})), ConfigError);
}

TEST_CASE("bilinear resize matches the direct reference") {
  Tensor x = rand_tensor({1, 2, 5, 7}, 51, 0.0f, 1.0f);
  CHECK(max_abs_diff(bilinear_resize(x, 2.0), bilinear_reference(x, 10, 14)) < 1e-6);
  CHECK(max_abs_diff(bilinear_resize(x, 0.6), bilinear_reference(x, 3, 4)) < 1e-6);
  CHECK(max_abs_diff(bilinear_resize_to(x, 9, 5), bilinear_reference(x, 9, 5)) < 1e-6);
  CHECK(bitwise_equal(bilinear_resize(x, 1.0), x));
}

TEST_CASE("bicubic resize matches the direct reference up and down") {
  Tensor x = rand_tensor({1, 3, 9, 11}, 52, 0.0f, 1.0f);
  CHECK(max_abs_diff(bicubic_resize(x, 2.0), bicubic_reference(x, 18, 22)) < 1e-5);
  Tensor big = rand_tensor({1, 1, 24, 16}, 53, 0.0f, 1.0f);
  CHECK(max_abs_diff(bicubic_resize(big, 0.5), bicubic_reference(big, 12, 8)) < 1e-5);
  CHECK(max_abs_diff(bicubic_resize(big, 0.125), bicubic_reference(big, 3, 2)) < 1e-5);
}

TEST_CASE("bicubic downscale interior agrees with an external resampler") {
  // 48x48 -> 6x6; interior output pixels (2..3, 2..3) keep the full
  // antialiased window inside the frame, where border conventions cannot
  // differ. Reference values from an independent image library.
  Tensor x = zeros({1, 1, 48, 48});
  for (int y = 0; y < 48; ++y)
    for (int xx = 0; xx < 48; ++xx)
      x.ptr()[y * 48 + xx] = static_cast<float>(((xx * 7 + y * 3) % 13) / 12.0);
  Tensor d = bicubic_resize(x, 0.125);
  REQUIRE(d.dim(2) == 6);
  const double expect[2][2] = {{0.49991241, 0.49989060}, {0.50000000, 0.50014234}};
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      CHECK(d.ptr()[(r + 2) * 6 + (c + 2)] == doctest::Approx(expect[r][c]).epsilon(5e-5));
}

TEST_CASE("bicubic upscale interior agrees with an external resampler") {
  Tensor x = zeros({1, 1, 1, 12});
  for (int i = 0; i < 12; ++i) x.ptr()[i] = static_cast<float>(((i * 5) % 11) / 10.0);
  Tensor u = bicubic_resize(x, 2.0);
  REQUIRE(u.dim(3) == 24);
  const double expect[14] = {0.90156251, 0.49843749, 0.47343749, 0.82656246, 0.80156249,
                             0.39843750, 0.37343752, 0.72656250, 0.70156252, 0.29843751,
                             0.27343750, 0.62656248, 0.60156250, 0.19843750};
  for (int i = 0; i < 14; ++i)
    CHECK(u.ptr()[5 + i] == doctest::Approx(expect[i]).epsilon(5e-5));
}

TEST_CASE("warp with zero flow is a bitwise copy") {
  Tensor x = rand_tensor({2, 3, 6, 5}, 61);
  Tensor flow = zeros({2, 2, 6, 5});
  CHECK(bitwise_equal(warp_bilinear(x, flow), x));
}

TEST_CASE("warp with integer flow shifts and zero-fills") {
  Tensor x = rand_tensor({1, 1, 4, 4}, 62);
  Tensor flow = zeros({1, 2, 4, 4});
  for (int i = 0; i < 16; ++i) flow.ptr()[i] = 1.0f;  // dx = 1: sample from the right
  Tensor y = warp_bilinear(x, flow);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 3; ++c) CHECK(y.ptr()[r * 4 + c] == x.ptr()[r * 4 + c + 1]);
    CHECK(y.ptr()[r * 4 + 3] == 0.0f);  // samples past the right edge
  }
}

TEST_CASE("warp with fractional flow bilinearly blends neighbors") {
  Tensor x = from_vec({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 5.0f});
  Tensor flow = zeros({1, 2, 2, 2});
  flow.ptr()[0] = 0.25f;              // dx at (0,0)
  flow.ptr()[4] = 0.5f;               // dy at (0,0)
  Tensor y = warp_bilinear(x, flow);  // sample at (x=0.25, y=0.5)
  double expect = 0.5 * (0.75 * 1.0 + 0.25 * 2.0) + 0.5 * (0.75 * 3.0 + 0.25 * 5.0);
  CHECK(y.ptr()[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("warp shape validation") {
  Tensor x = zeros({1, 3, 4, 4});
  CHECK_THROWS_AS(warp_bilinear(x, zeros({1, 3, 4, 4})), ConfigError);
  CHECK_THROWS_AS(warp_bilinear(x, zeros({1, 2, 4, 5})), ConfigError);
}
