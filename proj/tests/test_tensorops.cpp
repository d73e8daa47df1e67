// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "common/gradcheck.hpp"
#include "common/gradsuite.hpp"
#include "common/oracles.hpp"
#include "iterflow/ops.hpp"

using namespace iterflow;
using namespace iterflow::testing;

namespace {

Tensor4f ones_f(int n, int c, int h, int w) {
    Tensor4f t(n, c, h, w);
    t.fill(1.0f);
    return t;
}

template <typename T>
double max_abs_diff(const Tensor4T<T>& a, const Tensor4T<T>& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0;
    for (size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

}  // namespace

TEST_CASE("conv2d: all-ones 3x3 kernel sums the window") {
    Tape tape;
    Var x = constant(tape, ones_f(1, 1, 3, 3));
    Var w = constant(tape, ones_f(1, 1, 3, 3));
    Var b = constant(tape, Tensor4f(1, 1, 1, 1));
    Var y = conv2d(x, w, b, 1, 0);
    REQUIRE(y.value().shape == std::array<int, 4>{1, 1, 1, 1});
    CHECK(y.value().data[0] == doctest::Approx(9.0f));
}

TEST_CASE("conv2d: identity 1x1 kernel reproduces the input exactly") {
    Rng rng(7);
    Tape tape;
    Tensor4f xin = rand_tensor_f(2, 1, 5, 4, rng);
    Var x = constant(tape, xin);
    Tensor4f w(1, 1, 1, 1);
    w.data[0] = 1.0f;
    Var y = conv2d(x, constant(tape, w), constant(tape, Tensor4f(1, 1, 1, 1)), 1, 0);
    CHECK(max_abs_diff(y.value(), xin) == 0.0);
}

TEST_CASE("conv2d: random instance matches the nested-loop oracle") {
    Rng rng(11);
    Tensor4f x = rand_tensor_f(2, 3, 8, 8, rng);
    Tensor4f w = rand_tensor_f(4, 3, 3, 3, rng);
    Tensor4f b = rand_tensor_f(1, 4, 1, 1, rng);
    for (int stride : {1, 2}) {
        for (int pad : {0, 1}) {
            Tape tape;
            Var y = conv2d(constant(tape, x), constant(tape, w), constant(tape, b), stride, pad);
            Tensor4f ref = conv2d_oracle(x, w, b, stride, pad);
            REQUIRE(y.value().shape == ref.shape);
            double worst = 0;
            for (size_t i = 0; i < ref.numel(); ++i) {
                const double denom = std::max(1.0, std::abs(static_cast<double>(ref.data[i])));
                worst = std::max(worst, std::abs(y.value().data[i] - ref.data[i]) / denom);
            }
            CHECK(worst < 1e-6);
        }
    }
}

TEST_CASE("conv2d: shape mismatches are rejected with descriptive errors") {
    Tape tape;
    Var x = constant(tape, ones_f(1, 3, 4, 4));
    Var w = constant(tape, ones_f(2, 4, 3, 3));  // wrong channel count
    Var b = constant(tape, Tensor4f(1, 2, 1, 1));
    CHECK_THROWS_WITH_AS(conv2d(x, w, b, 1, 1),
                         doctest::Contains("kernel channels"), std::invalid_argument);
    Var w2 = constant(tape, ones_f(2, 3, 3, 3));
    CHECK_THROWS_AS(conv2d(x, w2, b, 0, 1), std::invalid_argument);
    Var bbad = constant(tape, Tensor4f(1, 3, 1, 1));
    CHECK_THROWS_AS(conv2d(x, w2, bbad, 1, 1), std::invalid_argument);
}

TEST_CASE("conv2d and avg_pool2 are linear operators") {
    Rng rng(13);
    Tensor4f xa = rand_tensor_f(1, 2, 6, 6, rng);
    Tensor4f xb = rand_tensor_f(1, 2, 6, 6, rng);
    Tensor4f w = rand_tensor_f(3, 2, 3, 3, rng);
    Tensor4f zb(1, 3, 1, 1);
    const float a = 1.7f, bb = -0.6f;
    Tensor4f combo(1, 2, 6, 6);
    for (size_t i = 0; i < combo.numel(); ++i) combo.data[i] = a * xa.data[i] + bb * xb.data[i];

    Tape tape;
    auto apply_conv = [&](const Tensor4f& in) {
        return conv2d(constant(tape, in), constant(tape, w), constant(tape, zb), 1, 1).value();
    };
    Tensor4f ya = apply_conv(xa), yb = apply_conv(xb), yc = apply_conv(combo);
    double worst = 0;
    for (size_t i = 0; i < yc.numel(); ++i)
        worst = std::max(worst,
                         std::abs(static_cast<double>(yc.data[i]) - (a * ya.data[i] + bb * yb.data[i])));
    CHECK(worst < 1e-5);

    auto apply_pool = [&](const Tensor4f& in) { return avg_pool2(constant(tape, in), 2).value(); };
    Tensor4f pa = apply_pool(xa), pb = apply_pool(xb), pc = apply_pool(combo);
    worst = 0;
    for (size_t i = 0; i < pc.numel(); ++i)
        worst = std::max(worst,
                         std::abs(static_cast<double>(pc.data[i]) - (a * pa.data[i] + bb * pb.data[i])));
    CHECK(worst < 1e-6);
}

TEST_CASE("avg_pool2: identity at factor 1, block mean at factor 2") {
    Tape tape;
    Tensor4f x(1, 1, 2, 2);
    x.data = {1, 2, 3, 4};
    Var p1 = avg_pool2(constant(tape, x), 1);
    CHECK(max_abs_diff(p1.value(), x) == 0.0);
    Var p2 = avg_pool2(constant(tape, x), 2);
    REQUIRE(p2.value().shape == std::array<int, 4>{1, 1, 1, 1});
    CHECK(p2.value().data[0] == doctest::Approx(2.5f));
    CHECK_THROWS_AS(avg_pool2(constant(tape, x), 0), std::invalid_argument);
}

TEST_CASE("avg_pool2: random instance matches the block-mean oracle") {
    Rng rng(17);
    Tensor4f x = rand_tensor_f(1, 2, 8, 8, rng);
    Tape tape;
    Var y = avg_pool2(constant(tape, x), 4);
    Tensor4f ref = block_mean_oracle(x, 4);
    CHECK(max_abs_diff(y.value(), ref) < 1e-6);

    // replicate-pad path on non-divisible extents
    Tensor4f xr = rand_tensor_f(1, 1, 7, 5, rng);
    Var yr = avg_pool2(constant(tape, xr), 2);
    Tensor4f refr = block_mean_oracle(xr, 2);
    REQUIRE(yr.value().shape == refr.shape);
    CHECK(max_abs_diff(yr.value(), refr) < 1e-6);
}

TEST_CASE("grid_sample: integer coordinates gather exactly") {
    Rng rng(19);
    Tensor4f map = rand_tensor_f(1, 3, 5, 6, rng);
    Tensor4f coords(1, 2, 2, 2);
    coords.data = {1, 4, 0, 3,   // x
                   2, 0, 4, 1};  // y
    Tape tape;
    Var y = grid_sample(constant(tape, map), constant(tape, coords));
    for (int c = 0; c < 3; ++c) {
        CHECK(y.value().at(0, c, 0, 0) == map.at(0, c, 2, 1));
        CHECK(y.value().at(0, c, 0, 1) == map.at(0, c, 0, 4));
        CHECK(y.value().at(0, c, 1, 0) == map.at(0, c, 4, 0));
        CHECK(y.value().at(0, c, 1, 1) == map.at(0, c, 1, 3));
    }
}

TEST_CASE("grid_sample: midpoint between 0 and 1 reads 0.5; OOB reads zero") {
    Tensor4f map(1, 1, 1, 2);
    map.data = {0.0f, 1.0f};
    Tensor4f coords(1, 2, 1, 2);
    coords.data = {0.5f, 25.0f, 0.0f, 0.0f};
    Tape tape;
    Var y = grid_sample(constant(tape, map), constant(tape, coords));
    CHECK(y.value().at(0, 0, 0, 0) == doctest::Approx(0.5f));
    CHECK(y.value().at(0, 0, 0, 1) == 0.0f);
}

TEST_CASE("grid_sample: random coords match the four-tap oracle") {
    Rng rng(23);
    Tensor4f map = rand_tensor_f(2, 2, 6, 7, rng);
    Tensor4f coords(2, 2, 3, 4);
    for (int n = 0; n < 2; ++n)
        for (int i = 0; i < 12; ++i) {
            coords.data[coords.index(n, 0, 0, 0) + i] = static_cast<float>(rng.uniform(-1.5, 8.0));
            coords.data[coords.index(n, 1, 0, 0) + i] = static_cast<float>(rng.uniform(-1.5, 7.0));
        }
    Tape tape;
    Var y = grid_sample(constant(tape, map), constant(tape, coords));
    double worst = 0;
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            for (int oy = 0; oy < 3; ++oy)
                for (int ox = 0; ox < 4; ++ox) {
                    const float ref = bilinear_tap_oracle(map, n, c, coords.at(n, 0, oy, ox),
                                                          coords.at(n, 1, oy, ox));
                    worst = std::max(worst,
                                     std::abs(static_cast<double>(y.value().at(n, c, oy, ox)) - ref));
                }
    CHECK(worst < 1e-6);
}

TEST_CASE("backward: sum gradient is all ones; misuse is rejected") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(0, Tensor4f(1, 1, 1, 1)), std::logic_error);
    Rng rng(29);
    Var x = leaf(tape, rand_tensor_f(1, 2, 3, 3, rng));
    Var s = sum_all(x);
    Tensor4f bad_seed(1, 1, 2, 1);
    CHECK_THROWS_AS(tape.backward(s.id, bad_seed), std::invalid_argument);
    Tensor4f seed(1, 1, 1, 1);
    seed.data[0] = 1.0f;
    tape.backward(s.id, seed);
    for (float g : x.grad().data) CHECK(g == 1.0f);
}

TEST_CASE("backward: conv kernel gradient on all-ones data counts valid positions") {
    // 4x4 input, 3x3 kernel, stride 1, pad 0 -> every kernel weight sees all
    // 2x2=4 output positions with input value 1.
    Tape tape;
    Var x = constant(tape, ones_f(1, 1, 4, 4));
    Var w = leaf(tape, ones_f(1, 1, 3, 3));
    Var b = leaf(tape, Tensor4f(1, 1, 1, 1));
    Var s = sum_all(conv2d(x, w, b, 1, 0));
    Tensor4f seed(1, 1, 1, 1);
    seed.data[0] = 1.0f;
    tape.backward(s.id, seed);
    for (float g : w.grad().data) CHECK(g == doctest::Approx(4.0f));
    CHECK(b.grad().data[0] == doctest::Approx(4.0f));
}

TEST_CASE("clamp boundary policy: outward gradients are dropped, inward pass") {
    Tape tape;
    Tensor4f x(1, 1, 1, 4);
    x.data = {0.0f, 10.0f, -1.0f, 11.0f};  // at lo, at hi, below, above
    Var xv = leaf(tape, x);
    Var y = clamp(xv, 0.0f, 10.0f);
    // upstream gradient +1 everywhere: at lo that points outward (update
    // w -= g would exit), so it must be dropped; at hi it points inward.
    Var s = sum_all(y);
    Tensor4f seed(1, 1, 1, 1);
    seed.data[0] = 1.0f;
    tape.backward(s.id, seed);
    CHECK(xv.grad().data[0] == 0.0f);   // at lower bound, g>0 exits
    CHECK(xv.grad().data[1] == 1.0f);   // at upper bound, g>0 points inside
    CHECK(xv.grad().data[2] == 0.0f);   // strictly outside
    CHECK(xv.grad().data[3] == 0.0f);

    Tape tape2;
    Var xv2 = leaf(tape2, x);
    Var y2 = scale(clamp(xv2, 0.0f, 10.0f), -1.0);  // upstream gradient -1
    Var s2 = sum_all(y2);
    tape2.backward(s2.id, seed);
    CHECK(xv2.grad().data[0] == -1.0f);  // inward at the lower bound
    CHECK(xv2.grad().data[1] == 0.0f);   // outward at the upper bound
}

TEST_CASE("softmax_groups normalizes each group") {
    Rng rng(31);
    Tape tape;
    Var x = constant(tape, rand_tensor_f(2, 6, 3, 3, rng, -3, 3));
    Var y = softmax_groups(x, 3);
    for (int n = 0; n < 2; ++n)
        for (int g = 0; g < 2; ++g)
            for (int hw = 0; hw < 9; ++hw) {
                float s = 0;
                for (int k = 0; k < 3; ++k) s += y.value().at(n, g * 3 + k, hw / 3, hw % 3);
                CHECK(s == doctest::Approx(1.0f).epsilon(1e-5));
            }
    CHECK_THROWS_AS(softmax_groups(x, 4), std::invalid_argument);
}

TEST_CASE("normalization: affine identity maps constants to beta") {
    Tape tape;
    Tensor4f x = ones_f(1, 2, 4, 4);
    Tensor4f g(1, 2, 1, 1);
    g.fill(1.0f);
    Tensor4f be(1, 2, 1, 1);
    be.data = {0.25f, -0.5f};
    Var y = instance_norm(constant(tape, x), constant(tape, g), constant(tape, be));
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 16; ++i)
            CHECK(y.value().at(0, c, i / 4, i % 4) == doctest::Approx(be.data[c]));

    Rng rng(37);
    Tensor4f xr = rand_tensor_f(2, 3, 4, 4, rng);
    Tensor4f g3 = ones_f(1, 3, 1, 1), b3(1, 3, 1, 1);
    Var yr = instance_norm(constant(tape, xr), constant(tape, g3), constant(tape, b3));
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 3; ++c) {
            double mean = 0, var = 0;
            for (int i = 0; i < 16; ++i) mean += yr.value().at(n, c, i / 4, i % 4);
            mean /= 16;
            for (int i = 0; i < 16; ++i)
                var += std::pow(yr.value().at(n, c, i / 4, i % 4) - mean, 2.0);
            var /= 16;
            CHECK(std::abs(mean) < 1e-5);
            CHECK(var == doctest::Approx(1.0).epsilon(1e-2));
        }
}

TEST_CASE("resize: identity when extents match; nearest picks centers") {
    Rng rng(41);
    Tape tape;
    Tensor4f x = rand_tensor_f(1, 2, 5, 7, rng);
    Var same = resize_bilinear(constant(tape, x), 5, 7);
    CHECK(max_abs_diff(same.value(), x) == 0.0);
    Var up = resize_nearest(constant(tape, x), 10, 14);
    for (int y = 0; y < 10; ++y)
        for (int xx = 0; xx < 14; ++xx)
            CHECK(up.value().at(0, 0, y, xx) == x.at(0, 0, y / 2, xx / 2));
}

TEST_CASE("forward determinism: identical inputs give bit-identical outputs") {
    Rng rng(43);
    Tensor4f x = rand_tensor_f(2, 3, 8, 8, rng);
    Tensor4f w = rand_tensor_f(4, 3, 3, 3, rng);
    Tensor4f b = rand_tensor_f(1, 4, 1, 1, rng);
    Tape t1, t2;
    Var y1 = conv2d(constant(t1, x), constant(t1, w), constant(t1, b), 1, 1);
    Var y2 = conv2d(constant(t2, x), constant(t2, w), constant(t2, b), 1, 1);
    CHECK(y1.value().data == y2.value().data);
}

TEST_CASE("tensor dump: little-endian round trip and header") {
    Rng rng(47);
    Tensor4f x = rand_tensor_f(2, 3, 4, 5, rng);
    std::ostringstream os(std::ios::binary);
    save_tensor(os, x);
    const std::string bytes = os.str();
    CHECK(bytes.size() == 16 + x.numel() * 4);
    // little-endian extent 2 in the first word
    CHECK(static_cast<unsigned char>(bytes[0]) == 2);
    CHECK(static_cast<unsigned char>(bytes[1]) == 0);
    std::istringstream is(bytes, std::ios::binary);
    Tensor4f back = load_tensor(is);
    REQUIRE(back.shape == x.shape);
    CHECK(back.data == x.data);
}

TEST_CASE("gradient suite: every primitive passes 20+ randomized FD checks") {
    auto results = run_primitive_grad_suite(20);
    for (const auto& e : results) {
        INFO(e.name, ": ", e.worst.detail, " max_rel=", e.worst.max_rel);
        CHECK(e.worst.ok);
    }
    CHECK(results.size() >= 18);  // the full primitive inventory is covered
}
