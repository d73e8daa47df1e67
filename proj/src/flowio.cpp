// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "iterflow/flowio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace iterflow {

namespace {

constexpr float kFloMagic = 202021.25f;

// Middlebury color wheel: 55 hue bins split into six arcs.
struct ColorWheel {
    std::vector<std::array<float, 3>> cols;

    ColorWheel() {
        const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
        cols.reserve(RY + YG + GC + CB + BM + MR);
        auto arc = [&](int n, int from, int to, bool up) {
            // one wheel arc: ramp channel `to` up (or `from` down)
            for (int i = 0; i < n; ++i) {
                std::array<float, 3> c{0, 0, 0};
                c[from] = up ? 1.0f : 1.0f - static_cast<float>(i) / n;
                c[to] = up ? static_cast<float>(i) / n : 1.0f;
                cols.push_back(c);
            }
        };
        arc(RY, 0, 1, true);   // red -> yellow
        arc(YG, 0, 1, false);  // yellow -> green
        arc(GC, 1, 2, true);   // green -> cyan
        arc(CB, 1, 2, false);  // cyan -> blue
        arc(BM, 2, 0, true);   // blue -> magenta
        arc(MR, 2, 0, false);  // magenta -> red
    }
};

const ColorWheel& wheel() {
    static ColorWheel w;
    return w;
}

}  // namespace

FlowField read_flo(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_flo: cannot open " + path);
    const float magic = detail::get_f32(f);
    if (!f || magic != kFloMagic)
        throw std::runtime_error("read_flo: bad magic in " + path + " (not a .flo file)");
    const int32_t w = detail::get_i32(f);
    const int32_t h = detail::get_i32(f);
    if (!f || w <= 0 || h <= 0 || w > 1 << 20 || h > 1 << 20)
        throw std::runtime_error("read_flo: implausible extents in " + path);
    FlowField field(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float u = detail::get_f32(f);
            const float v = detail::get_f32(f);
            if (!f) throw std::runtime_error("read_flo: truncated payload in " + path);
            const bool ok = std::abs(u) < kFloInvalidSentinel && std::abs(v) < kFloInvalidSentinel;
            field.set(y, x, u, v, ok);
        }
    return field;
}

void write_flo(const FlowField& field, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_flo: cannot open " + path);
    detail::put_f32(f, kFloMagic);
    detail::put_i32(f, field.width());
    detail::put_i32(f, field.height());
    for (int y = 0; y < field.height(); ++y)
        for (int x = 0; x < field.width(); ++x) {
            if (field.is_valid(y, x)) {
                detail::put_f32(f, field.u(y, x));
                detail::put_f32(f, field.v(y, x));
            } else {
                detail::put_f32(f, kFloInvalidSentinel);
                detail::put_f32(f, kFloInvalidSentinel);
            }
        }
    if (!f) throw std::runtime_error("write_flo: write failed for " + path);
}

Tensor4f flow_to_color(const FlowField& field, float max_norm) {
    const int h = field.height(), w = field.width();
    float mn = max_norm;
    if (mn <= 0.0f) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (field.is_valid(y, x))
                    mn = std::max(mn, std::hypot(field.u(y, x), field.v(y, x)));
        if (mn <= 0.0f) mn = 1.0f;
    }
    const auto& cols = wheel().cols;
    const int ncols = static_cast<int>(cols.size());
    Tensor4f img(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!field.is_valid(y, x)) continue;  // black
            const float u = field.u(y, x) / mn;
            const float v = field.v(y, x) / mn;
            const float rad = std::min(std::hypot(u, v), 1.0f);
            const float a = std::atan2(-v, -u) / 3.14159265358979323846f;
            const float fk = (a + 1.0f) / 2.0f * (ncols - 1);
            const int k0 = static_cast<int>(std::floor(fk)) % ncols;
            const int k1 = (k0 + 1) % ncols;
            const float fr = fk - std::floor(fk);
            for (int c = 0; c < 3; ++c) {
                float col = (1.0f - fr) * cols[k0][c] + fr * cols[k1][c];
                col = 1.0f - rad * (1.0f - col);  // saturate toward white at zero motion
                img.at(0, c, y, x) = col;
            }
        }
    return img;
}

Tensor4f error_map_image(const FlowField& pred, const FlowField& gt, float max_err) {
    if (pred.uv.shape != gt.uv.shape)
        throw std::invalid_argument("error_map_image: field shapes differ");
    const int h = gt.height(), w = gt.width();
    Tensor4f err(1, 1, h, w);
    float top = max_err;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (gt.is_valid(y, x)) {
                const float e = std::hypot(pred.u(y, x) - gt.u(y, x), pred.v(y, x) - gt.v(y, x));
                err.at(0, 0, y, x) = e;
                if (max_err <= 0.0f) top = std::max(top, e);
            }
    if (top <= 0.0f) top = 1.0f;
    Tensor4f img(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const float g = gt.is_valid(y, x) ? std::min(err.at(0, 0, y, x) / top, 1.0f) : 0.0f;
            for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = g;
        }
    return img;
}

void write_ppm(const Tensor4f& image, const std::string& path) {
    if (image.n() != 1 || image.c() != 3)
        throw std::invalid_argument("write_ppm: expected (1,3,H,W), got " + shape_str(image.shape));
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
    f << "P6\n" << image.w() << " " << image.h() << "\n255\n";
    for (int y = 0; y < image.h(); ++y)
        for (int x = 0; x < image.w(); ++x)
            for (int c = 0; c < 3; ++c) {
                const float v = std::clamp(image.at(0, c, y, x), 0.0f, 1.0f);
                f.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0f))));
            }
    if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor4f read_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw std::runtime_error("read_ppm: not a binary PPM: " + path);
    int w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (!f || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("read_ppm: unsupported header in " + path);
    f.get();  // single whitespace after header
    Tensor4f img(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) {
                const int v = f.get();
                if (v < 0) throw std::runtime_error("read_ppm: truncated payload in " + path);
                img.at(0, c, y, x) = static_cast<float>(v) / 255.0f;
            }
    return img;
}

}  // namespace iterflow
