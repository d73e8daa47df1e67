// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "common/gradcheck.hpp"
#include "iterflow/flowio.hpp"
#include "iterflow/rng.hpp"

using namespace iterflow;
using namespace iterflow::testing;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("iterflow_test_" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("flo: write-read round trip is bit exact, invalid pixels survive") {
    TempDir td;
    Rng rng(3);
    FlowField f(13, 17);
    for (float& v : f.uv.data) v = static_cast<float>(rng.uniform(-50, 50));
    f.valid.at(0, 0, 4, 5) = 0.0f;
    f.valid.at(0, 0, 12, 16) = 0.0f;
    write_flo(f, td.file("a.flo"));
    FlowField back = read_flo(td.file("a.flo"));
    REQUIRE(back.height() == 13);
    REQUIRE(back.width() == 17);
    for (int y = 0; y < 13; ++y)
        for (int x = 0; x < 17; ++x) {
            CHECK(back.is_valid(y, x) == f.is_valid(y, x));
            if (f.is_valid(y, x)) {
                CHECK(back.u(y, x) == f.u(y, x));
                CHECK(back.v(y, x) == f.v(y, x));
            }
        }
    // second trip: byte-identical files
    write_flo(back, td.file("b.flo"));
    std::ifstream fa(td.file("a.flo"), std::ios::binary), fb(td.file("b.flo"), std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("flo: bad magic and truncation are format errors") {
    TempDir td;
    {
        std::ofstream f(td.file("bad.flo"), std::ios::binary);
        const float zero = 0.0f;
        f.write(reinterpret_cast<const char*>(&zero), 4);
        const int32_t wh[2] = {2, 2};
        f.write(reinterpret_cast<const char*>(wh), 8);
    }
    CHECK_THROWS_WITH_AS(read_flo(td.file("bad.flo")), doctest::Contains("magic"),
                         std::runtime_error);
    {
        FlowField f(4, 4);
        write_flo(f, td.file("trunc.flo"));
        std::filesystem::resize_file(td.file("trunc.flo"), 20);
    }
    CHECK_THROWS_AS(read_flo(td.file("trunc.flo")), std::runtime_error);
    CHECK_THROWS_AS(read_flo(td.file("missing.flo")), std::runtime_error);
}

TEST_CASE("flo: 2x1 field serializes to exactly 28 bytes") {
    TempDir td;
    FlowField f(1, 2);  // height 1, width 2
    f.set(0, 0, 1.0f, 2.0f);
    f.set(0, 1, 3.0f, 4.0f);
    write_flo(f, td.file("two.flo"));
    CHECK(std::filesystem::file_size(td.file("two.flo")) == 28);  // 12 header + 16 payload
}

TEST_CASE("flo: zero field payload is all zero bytes after the header") {
    TempDir td;
    FlowField f(2, 2);
    write_flo(f, td.file("zero.flo"));
    std::ifstream in(td.file("zero.flo"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() == 12 + 2 * 2 * 2 * 4);
    for (size_t i = 12; i < bytes.size(); ++i) CHECK(bytes[i] == 0);
}

TEST_CASE("flow_to_color: zero flow is white, invalid is black") {
    FlowField f(2, 2);
    f.valid.at(0, 0, 1, 1) = 0.0f;
    Tensor4f img = flow_to_color(f, 1.0f);
    for (int c = 0; c < 3; ++c) {
        CHECK(img.at(0, c, 0, 0) == doctest::Approx(1.0f));
        CHECK(img.at(0, c, 1, 1) == 0.0f);
    }
}

TEST_CASE("flow_to_color: antipodal vectors get equal saturation, different hue") {
    FlowField f(1, 2);
    f.set(0, 0, 2.0f, 1.0f);
    f.set(0, 1, -2.0f, -1.0f);
    Tensor4f img = flow_to_color(f, 4.0f);
    auto sat = [&](int x) {
        float mx = 0, mn = 1;
        for (int c = 0; c < 3; ++c) {
            mx = std::max(mx, img.at(0, c, 0, x));
            mn = std::min(mn, img.at(0, c, 0, x));
        }
        return mx - mn;
    };
    CHECK(sat(0) == doctest::Approx(sat(1)).epsilon(1e-3));
    double dist = 0;
    for (int c = 0; c < 3; ++c) dist += std::abs(img.at(0, c, 0, 0) - img.at(0, c, 0, 1));
    CHECK(dist > 0.2);  // clearly different hues
}

TEST_CASE("flow_to_color: invariant under joint flow / max_norm scaling") {
    Rng rng(7);
    FlowField a(6, 6);
    for (float& v : a.uv.data) v = static_cast<float>(rng.uniform(-3, 3));
    FlowField b = a;
    for (float& v : b.uv.data) v *= 5.0f;
    Tensor4f ia = flow_to_color(a, 3.0f);
    Tensor4f ib = flow_to_color(b, 15.0f);
    double worst = 0;
    for (size_t i = 0; i < ia.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(ia.data[i]) - ib.data[i]));
    CHECK(worst < 1e-5);
}

TEST_CASE("ppm round trip preserves 8-bit content") {
    TempDir td;
    Rng rng(11);
    Tensor4f img = rand_tensor_f(1, 3, 9, 7, rng, 0.0, 1.0);
    write_ppm(img, td.file("img.ppm"));
    Tensor4f back = read_ppm(td.file("img.ppm"));
    REQUIRE(back.shape == img.shape);
    for (size_t i = 0; i < img.numel(); ++i)
        CHECK(std::abs(back.data[i] - img.data[i]) <= 0.5f / 255.0f + 1e-6f);
    // exact 8-bit stability on the second trip
    write_ppm(back, td.file("img2.ppm"));
    Tensor4f back2 = read_ppm(td.file("img2.ppm"));
    CHECK(back.data == back2.data);
}

TEST_CASE("error_map_image renders a grayscale map with black invalid pixels") {
    FlowField gt(4, 4), pred(4, 4);
    pred.set(1, 1, 3.0f, 4.0f);
    gt.valid.at(0, 0, 2, 2) = 0.0f;
    Tensor4f img = error_map_image(pred, gt);
    CHECK(img.at(0, 0, 1, 1) == doctest::Approx(1.0f));  // the 5px error dominates
    CHECK(img.at(0, 0, 2, 2) == 0.0f);
    CHECK(img.at(0, 1, 0, 0) == 0.0f);
}
