// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Middlebury .flo interchange, flow color rendering, and PPM image IO.

#pragma once

#include <string>

#include "iterflow/flowfield.hpp"

namespace iterflow {

// Sentinel written for invalid pixels; reads back as invalid.
constexpr float kFloInvalidSentinel = 1e9f;

FlowField read_flo(const std::string& path);
void write_flo(const FlowField& field, const std::string& path);

// Color-wheel rendering: hue encodes direction, saturation encodes
// magnitude / max_norm (clamped to 1). Zero flow renders white, invalid
// pixels black. Output is (1,3,H,W) RGB in [0,1].
Tensor4f flow_to_color(const FlowField& field, float max_norm = 0.0f);

// Grayscale endpoint-error map, normalized by max_err (or the field max).
Tensor4f error_map_image(const FlowField& pred, const FlowField& gt, float max_err = 0.0f);

// Binary 8-bit PPM (P6). Input (1,3,H,W) in [0,1], values clamped.
void write_ppm(const Tensor4f& image, const std::string& path);
Tensor4f read_ppm(const std::string& path);

}  // namespace iterflow
