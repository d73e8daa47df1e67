// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Stateless procedural value noise over an infinite continuous domain.
// Everything is a pure function of (coordinates, seed), which is what makes
// generated datasets reproducible without storing any lattice.

#pragma once

#include <array>
#include <cstdint>

#include "iterflow/tensor.hpp"

namespace iterflow {

// Single octave of value noise with unit wavelength, quintic-smoothed, in [0,1].
double value_noise(double x, double y, uint64_t seed);

// Multi-octave value noise; octave k has wavelength base_wavelength / 2^k and
// amplitude gain^k. Normalized back to [0,1].
double fbm(double x, double y, uint64_t seed, int octaves, double base_wavelength, double gain);

// Smooth colored texture: multi-octave noise mapped through a random cosine
// palette. Coordinates are in pixel units; the domain is unbounded.
class ProceduralTexture {
public:
    explicit ProceduralTexture(uint64_t seed);

    std::array<float, 3> rgb(double x, double y) const;

    // Rasterize a window [0,w) x [0,h) at integer pixel centers.
    Tensor4f rasterize(int h, int w) const;

private:
    uint64_t seed_;
    double pal_a_[3], pal_b_[3], pal_c_[3], pal_d_[3];
};

// Smooth scalar field in [lo, hi] rasterized on an h x w grid.
Tensor4f smooth_field(int h, int w, uint64_t seed, double lo, double hi,
                      double base_wavelength = 24.0, int octaves = 3);

}  // namespace iterflow
