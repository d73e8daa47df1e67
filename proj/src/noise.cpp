// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "iterflow/noise.hpp"

#include <cmath>

#include "iterflow/rng.hpp"

namespace iterflow {

namespace {

// Lattice value in [0,1) from hashed integer coordinates.
double lattice(int64_t ix, int64_t iy, uint64_t seed) {
    uint64_t h = mix64(static_cast<uint64_t>(ix) * 0x8da6b343ull ^
                       static_cast<uint64_t>(iy) * 0xd8163841ull ^ seed);
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double quintic(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

// Near-integer sample locations snap to the lattice so that integer-coordinate
// reads are bit-stable regardless of how the coordinate was computed.
double snap(double x) {
    const double r = std::round(x);
    return (std::abs(x - r) < 1e-9) ? r : x;
}

}  // namespace

double value_noise(double x, double y, uint64_t seed) {
    x = snap(x);
    y = snap(y);
    const double fx = std::floor(x), fy = std::floor(y);
    const int64_t ix = static_cast<int64_t>(fx), iy = static_cast<int64_t>(fy);
    const double tx = quintic(x - fx), ty = quintic(y - fy);
    const double v00 = lattice(ix, iy, seed), v01 = lattice(ix + 1, iy, seed);
    const double v10 = lattice(ix, iy + 1, seed), v11 = lattice(ix + 1, iy + 1, seed);
    return (1.0 - ty) * ((1.0 - tx) * v00 + tx * v01) + ty * ((1.0 - tx) * v10 + tx * v11);
}

double fbm(double x, double y, uint64_t seed, int octaves, double base_wavelength, double gain) {
    double acc = 0.0, amp = 1.0, norm = 0.0, freq = 1.0 / base_wavelength;
    for (int k = 0; k < octaves; ++k) {
        acc += amp * value_noise(x * freq, y * freq, hash_combine(seed, static_cast<uint64_t>(k)));
        norm += amp;
        amp *= gain;
        freq *= 2.0;
    }
    return acc / norm;
}

ProceduralTexture::ProceduralTexture(uint64_t seed) : seed_(seed) {
    Rng rng(hash_combine(seed, 0x7e37u));
    for (int c = 0; c < 3; ++c) {
        pal_a_[c] = rng.uniform(0.35, 0.65);
        pal_b_[c] = rng.uniform(0.15, 0.30);
        pal_c_[c] = rng.uniform(0.6, 1.0);
        pal_d_[c] = rng.uniform(0.0, 1.0);
    }
}

std::array<float, 3> ProceduralTexture::rgb(double x, double y) const {
    // Wavelengths 32/16/8 px keep the texture smooth enough that bilinear
    // resampling of a rasterized frame stays photometrically consistent.
    const double t = fbm(x, y, seed_, 3, 32.0, 0.6);
    std::array<float, 3> out;
    for (int c = 0; c < 3; ++c) {
        const double v =
            pal_a_[c] + pal_b_[c] * std::cos(6.283185307179586 * (pal_c_[c] * t + pal_d_[c]));
        out[static_cast<size_t>(c)] = static_cast<float>(std::min(std::max(v, 0.0), 1.0));
    }
    return out;
}

Tensor4f ProceduralTexture::rasterize(int h, int w) const {
    Tensor4f img(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const auto c = rgb(x, y);
            for (int k = 0; k < 3; ++k) img.at(0, k, y, x) = c[static_cast<size_t>(k)];
        }
    return img;
}

Tensor4f smooth_field(int h, int w, uint64_t seed, double lo, double hi, double base_wavelength,
                      int octaves) {
    Tensor4f out(1, 1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            out.at(0, 0, y, x) =
                static_cast<float>(lo + (hi - lo) * fbm(x, y, seed, octaves, base_wavelength, 0.55));
    return out;
}

}  // namespace iterflow
