#include <cmath>

#include "crfp/tensor.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace crfp;
using crfp::test::bitwise_equal;
using crfp::test::max_abs_diff;
using crfp::test::rand_tensor;

TEST_CASE("tensor construction and elementwise arithmetic") {
  Tensor a = from_vec({1, 2, 1, 2}, {1.0f, -2.0f, 3.0f, 0.5f});
  CHECK(a.rank() == 4);
  CHECK(a.numel() == 4);
  CHECK(a.dim(1) == 2);

  Tensor b = full({1, 2, 1, 2}, 2.0f);
  CHECK(add(a, b).ptr()[1] == 0.0f);
  CHECK(sub(a, b).ptr()[0] == -1.0f);
  CHECK(mul(a, b).ptr()[2] == 6.0f);
  CHECK(add_scalar(a, 1.0f).ptr()[3] == 1.5f);
  CHECK(mul_scalar(a, -2.0f).ptr()[0] == -2.0f);
  CHECK_THROWS_AS(add(a, zeros({1, 2, 1, 3})), ConfigError);
}

TEST_CASE("activations match closed forms") {
  Tensor x = from_vec({1, 1, 1, 5}, {-2.0f, -0.5f, 0.0f, 0.5f, 2.0f});
  Tensor lr = leaky_relu(x);
  CHECK(lr.ptr()[0] == doctest::Approx(-0.2).epsilon(1e-6));
  CHECK(lr.ptr()[2] == 0.0f);
  CHECK(lr.ptr()[4] == 2.0f);
  CHECK(relu(x).ptr()[1] == 0.0f);
  CHECK(relu(x).ptr()[3] == 0.5f);
  CHECK(sigmoid(x).ptr()[2] == doctest::Approx(0.5));
  CHECK(sigmoid(x).ptr()[4] == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))));
  CHECK(tanh_act(x).ptr()[0] == doctest::Approx(std::tanh(-2.0)));
}

TEST_CASE("reductions and charbonnier") {
  Tensor x = from_vec({1, 1, 2, 2}, {1.0f, 2.0f, 3.0f, 4.0f});
  CHECK(sum_all(x).ptr()[0] == 10.0f);
  CHECK(mean_all(x).ptr()[0] == 2.5f);

  Tensor p = from_vec({1, 1, 1, 2}, {1.0f, 0.0f});
  Tensor t = from_vec({1, 1, 1, 2}, {0.0f, 0.0f});
  // mean of sqrt(d^2 + eps^2): (sqrt(1 + 1e-4) + 1e-2) / 2
  double expect = (std::sqrt(1.0 + 1e-4) + 1e-2) / 2.0;
  CHECK(charbonnier_loss(p, t, 1e-2f).ptr()[0] == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("tape backward accumulates fan-out and replays once") {
  Tape tape;
  Tensor x = tape.leaf(from_vec({1, 1, 1, 2}, {3.0f, -1.0f}));
  // y = sum(x*x + 3x) -> dy/dx = 2x + 3
  Tensor y = sum_all(add(mul(x, x), mul_scalar(x, 3.0f)));
  tape.backward(y);
  const std::vector<float>* g = grad_of(x);
  REQUIRE(g != nullptr);
  CHECK((*g)[0] == doctest::Approx(9.0));
  CHECK((*g)[1] == doctest::Approx(1.0));
  CHECK(tape.replay_count() > 0);
  CHECK(tape.replay_count() <= static_cast<long>(tape.num_nodes()));
}

TEST_CASE("backward requires a scalar recorded on the tape") {
  Tape tape;
  Tensor x = tape.leaf(from_vec({1, 1, 1, 2}, {1.0f, 2.0f}));
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), UsageError);
  Tensor loose = from_vec({1, 1, 1, 1}, {1.0f});
  CHECK_THROWS_AS(tape.backward(loose), UsageError);
}

TEST_CASE("gradients of unreached nodes read back as null") {
  Tape tape;
  Tensor used = tape.leaf(from_vec({1, 1, 1, 1}, {2.0f}));
  Tensor unused = tape.leaf(from_vec({1, 1, 1, 1}, {5.0f}));
  tape.backward(sum_all(mul(used, used)));
  CHECK(grad_of(used) != nullptr);
  CHECK(grad_of(unused) == nullptr);
}

TEST_CASE("channel concat and slice round-trip") {
  Tensor a = rand_tensor({2, 3, 4, 5}, 11);
  Tensor b = rand_tensor({2, 2, 4, 5}, 12);
  Tensor cat = channel_concat({a, b});
  CHECK(cat.dim(1) == 5);
  CHECK(bitwise_equal(slice_channels(cat, 0, 3), a));
  CHECK(bitwise_equal(slice_channels(cat, 3, 5), b));
  CHECK_THROWS_AS(channel_concat({a, rand_tensor({2, 2, 3, 5}, 13)}), ConfigError);
}

TEST_CASE("crop and paste are spatial inverses") {
  Tensor x = rand_tensor({1, 2, 6, 7}, 21);
  Tensor patch = crop_spatial(x, 2, 3, 3, 4);
  CHECK(patch.dim(2) == 3);
  CHECK(patch.ptr()[0] == x.ptr()[2 * 7 + 3]);
  Tensor back = paste_spatial(x, patch, 2, 3);
  CHECK(bitwise_equal(back, x));
  CHECK_THROWS_AS(crop_spatial(x, 4, 4, 3, 4), ConfigError);
}

TEST_CASE("reflect padding mirrors without repeating the edge") {
  Tensor x = from_vec({1, 1, 1, 4}, {1.0f, 2.0f, 3.0f, 4.0f});
  Tensor p = reflect_pad(x, 0, 0, 2, 1);
  const float expect[7] = {3.0f, 2.0f, 1.0f, 2.0f, 3.0f, 4.0f, 3.0f};
  for (int i = 0; i < 7; ++i) CHECK(p.ptr()[i] == expect[i]);
  CHECK_THROWS_AS(reflect_pad(x, 0, 0, 4, 0), ConfigError);
}

TEST_CASE("detach shares data but drops tracking; clamp01 copies") {
  Tape tape;
  Tensor x = tape.leaf(from_vec({1, 1, 1, 3}, {-0.5f, 0.25f, 1.75f}));
  Tensor d = detach(x);
  CHECK(!d.tracked());
  CHECK(d.data == x.data);

  Tensor c = clamp01(x);
  CHECK(!c.tracked());
  CHECK(c.data != x.data);
  CHECK(c.ptr()[0] == 0.0f);
  CHECK(c.ptr()[1] == 0.25f);
  CHECK(c.ptr()[2] == 1.0f);
}

TEST_CASE("param store: ordering, counting, attach lifecycle") {
  ParamStore store(7);
  store.create_conv("a.c1", 4, 3, 3, 3);
  store.create_conv("b.c1", 2, 4, 1, 1);
  store.create("b.extra", {5});
  REQUIRE(store.names().size() == 5);
  CHECK(store.names()[0] == "a.c1.w");
  CHECK(store.names()[1] == "a.c1.b");
  CHECK(store.total_params() == 4 * 3 * 9 + 4 + 2 * 4 + 2 + 5);
  CHECK(store.group_params("b.") == 2 * 4 + 2 + 5);
  CHECK(store.has("b.extra"));
  CHECK(!store.has("missing"));
  CHECK_THROWS_AS(store.at("missing"), ConfigError);

  Tape tape;
  store.attach_all(tape);
  CHECK(store.at("a.c1.w").tracked());
  Tensor loss = sum_all(mul(store.at("a.c1.w"), store.at("a.c1.w")));
  tape.backward(loss);
  CHECK(grad_of(store.at("a.c1.w")) != nullptr);
  store.detach_all();
  CHECK(!store.at("a.c1.w").tracked());
}

TEST_CASE("param init is deterministic in the seed") {
  ParamStore s1(99), s2(99), s3(100);
  s1.create_conv("c", 3, 2, 3, 3);
  s2.create_conv("c", 3, 2, 3, 3);
  s3.create_conv("c", 3, 2, 3, 3);
  CHECK(bitwise_equal(s1.at("c.w"), s2.at("c.w")));
  CHECK(max_abs_diff(s1.at("c.w"), s3.at("c.w")) > 0.0);
}

TEST_CASE("rng recipe is pinned") {
  Rng r(42);
  Rng r2(42);
  for (int i = 0; i < 10; ++i) CHECK(r.uniform() == r2.uniform());
  Rng r3(42);
  double mn = 1.0, mx = 0.0;
  for (int i = 0; i < 1000; ++i) {
    double u = r3.uniform();
    mn = std::min(mn, u);
    mx = std::max(mx, u);
  }
  CHECK(mn > 0.0);
  CHECK(mx < 1.0);

  Rng r4(7);
  for (int i = 0; i < 200; ++i) {
    int k = r4.uniform_int(2, 5);
    CHECK(k >= 2);
    CHECK(k <= 5);
  }
}
