#include <algorithm>
#include <cmath>
#include <vector>

#include "crfp/tensor.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace crfp;
using crfp::test::max_abs_diff;
using crfp::test::rand_tensor;

TEST_CASE("dcn_lite degenerates to conv2d with zero offsets and unit masks") {
  // The deformable op with O = 0, M = 1 must reproduce plain 3x3 convolution
  // (padding 1) elementwise; 100 random instances.
  Rng shapes(2024);
  int seed = 500;
  for (int inst = 0; inst < 100; ++inst) {
    int B = shapes.uniform_int(1, 2);
    int C = shapes.uniform_int(1, 4);
    int OC = shapes.uniform_int(1, 4);
    int H = shapes.uniform_int(3, 8);
    int W = shapes.uniform_int(3, 8);
    Tensor x = rand_tensor({B, C, H, W}, static_cast<uint64_t>(seed++));
    Tensor w = rand_tensor({OC, C, 3, 3}, static_cast<uint64_t>(seed++));
    Tensor b = rand_tensor({OC}, static_cast<uint64_t>(seed++));
    Tensor off = zeros({B, 2, H, W});
    Tensor msk = full({B, 1, H, W}, 1.0f);
    CAPTURE(inst);
    CHECK(max_abs_diff(dcn_lite(x, off, msk, w, b), conv2d(x, w, b, 1, 1)) < 1e-5);
  }
}

TEST_CASE("masks scale the weighted sum but not the bias") {
  Tensor x = rand_tensor({1, 2, 5, 5}, 601);
  Tensor w = rand_tensor({3, 2, 3, 3}, 602);
  Tensor b0 = zeros({3});
  Tensor off = zeros({1, 2, 5, 5});
  Tensor m1 = full({1, 1, 5, 5}, 1.0f);
  Tensor mh = full({1, 1, 5, 5}, 0.5f);
  Tensor y1 = dcn_lite(x, off, m1, w, b0);
  Tensor yh = dcn_lite(x, off, mh, w, b0);
  CHECK(max_abs_diff(yh, mul_scalar(y1, 0.5f)) < 1e-6);

  Tensor b = from_vec({3}, {1.0f, -2.0f, 0.25f});
  Tensor zero_in = zeros({1, 2, 5, 5});
  Tensor yb = dcn_lite(zero_in, off, mh, w, b);
  for (int oc = 0; oc < 3; ++oc)
    for (int p = 0; p < 25; ++p) CHECK(yb.ptr()[oc * 25 + p] == b.ptr()[oc]);
}

TEST_CASE("constant integer offset equals convolution of the shifted input") {
  Tensor x = rand_tensor({1, 2, 6, 6}, 611);
  Tensor w = rand_tensor({2, 2, 3, 3}, 612);
  Tensor b = rand_tensor({2}, 613);
  Tensor off = zeros({1, 2, 6, 6});
  for (int i = 0; i < 36; ++i) {
    off.ptr()[i] = 1.0f;       // dx
    off.ptr()[36 + i] = 2.0f;  // dy
  }
  Tensor msk = full({1, 1, 6, 6}, 1.0f);

  // shifted(q) = x(q + (1,2)), zero outside
  Tensor shifted = zeros({1, 2, 6, 6});
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y + 2 < 6; ++y)
      for (int xx = 0; xx + 1 < 6; ++xx)
        shifted.ptr()[(c * 6 + y) * 6 + xx] = x.ptr()[(c * 6 + y + 2) * 6 + xx + 1];
  // At the border the two disagree by construction: convolution pads the
  // shifted image with zeros, while the deformable op still samples real
  // pixels there. Interior positions must match exactly.
  Tensor dcn = dcn_lite(x, off, msk, w, b);
  Tensor ref = conv2d(shifted, w, b, 1, 1);
  float worst = 0.0f;
  for (int c = 0; c < 2; ++c)
    for (int y = 1; y <= 4; ++y)
      for (int xx = 1; xx <= 4; ++xx) {
        long i = (c * 6 + y) * 6 + xx;
        worst = std::max(worst, std::fabs(dcn.ptr()[i] - ref.ptr()[i]));
      }
  CHECK(worst < 1e-5);
}

TEST_CASE("fractional offsets bilinearly sample; a half-pixel shift averages") {
  // One input channel that is a horizontal ramp: sampling at +0.5 px yields
  // the midpoint values everywhere the support is interior.
  Tensor x = zeros({1, 1, 5, 5});
  for (int y = 0; y < 5; ++y)
    for (int xx = 0; xx < 5; ++xx) x.ptr()[y * 5 + xx] = static_cast<float>(xx);
  Tensor w = zeros({1, 1, 3, 3});
  w.ptr()[4] = 1.0f;  // identity tap
  Tensor b = zeros({1});
  Tensor off = zeros({1, 2, 5, 5});
  for (int i = 0; i < 25; ++i) off.ptr()[i] = 0.5f;
  Tensor msk = full({1, 1, 5, 5}, 1.0f);
  Tensor y = dcn_lite(x, off, msk, w, b);
  CHECK(y.ptr()[2 * 5 + 1] == doctest::Approx(1.5));
  CHECK(y.ptr()[2 * 5 + 3] == doctest::Approx(3.5));
}

TEST_CASE("dcn_lite_region matches a crop of the full operator") {
  Tensor x = rand_tensor({1, 3, 8, 9}, 621);
  Tensor w = rand_tensor({2, 3, 3, 3}, 622);
  Tensor b = rand_tensor({2}, 623);
  int y0 = 2, x0 = 3, rh = 4, rw = 5;

  Tensor off_full = rand_tensor({1, 2, 8, 9}, 624, -1.5f, 1.5f);
  Tensor msk_full = rand_tensor({1, 1, 8, 9}, 625, 0.0f, 1.0f);
  Tensor full_out = dcn_lite(x, off_full, msk_full, w, b);

  Tensor off_r = crop_spatial(off_full, y0, x0, rh, rw);
  Tensor msk_r = crop_spatial(msk_full, y0, x0, rh, rw);
  Tensor region = dcn_lite_region(x, off_r, msk_r, w, b, y0, x0);
  CHECK(max_abs_diff(region, crop_spatial(full_out, y0, x0, rh, rw)) < 1e-6);
}

TEST_CASE("dcn shape validation") {
  Tensor x = zeros({1, 2, 4, 4});
  Tensor w = zeros({2, 2, 3, 3});
  Tensor b = zeros({2});
  CHECK_THROWS_AS(dcn_lite(x, zeros({1, 1, 4, 4}), zeros({1, 1, 4, 4}), w, b), ConfigError);
  CHECK_THROWS_AS(dcn_lite(x, zeros({1, 2, 4, 4}), zeros({1, 2, 4, 4}), w, b), ConfigError);
  CHECK_THROWS_AS(dcn_lite(x, zeros({1, 2, 3, 4}), zeros({1, 1, 3, 4}), w, b), ConfigError);
  CHECK_THROWS_AS(dcn_lite(x, zeros({1, 2, 4, 4}), zeros({1, 1, 4, 4}), zeros({2, 3, 3, 3}), b),
                  ConfigError);
  // region outside the input
  CHECK_THROWS_AS(dcn_lite_region(x, zeros({1, 2, 3, 3}), zeros({1, 1, 3, 3}), w, b, 2, 2),
                  ConfigError);
}
