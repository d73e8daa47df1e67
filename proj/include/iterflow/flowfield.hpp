// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "iterflow/tensor.hpp"

namespace iterflow {

// Dense per-pixel 2D motion. Channel 0 of uv holds the x-displacement u,
// channel 1 the y-displacement v, in pixels at the field's own resolution.
// valid marks pixels whose ground truth (or prediction) is meaningful.
struct FlowField {
    Tensor4f uv;     // (1, 2, H, W)
    Tensor4f valid;  // (1, 1, H, W), entries 0 or 1

    FlowField() = default;
    FlowField(int h, int w) : uv(1, 2, h, w), valid(1, 1, h, w) { valid.fill(1.0f); }

    int height() const { return uv.h(); }
    int width() const { return uv.w(); }

    float u(int y, int x) const { return uv.at(0, 0, y, x); }
    float v(int y, int x) const { return uv.at(0, 1, y, x); }
    bool is_valid(int y, int x) const { return valid.at(0, 0, y, x) != 0.0f; }

    void set(int y, int x, float du, float dv, bool ok = true) {
        uv.at(0, 0, y, x) = du;
        uv.at(0, 1, y, x) = dv;
        valid.at(0, 0, y, x) = ok ? 1.0f : 0.0f;
    }
};

// Per-pixel mixture parameters attached to a flow prediction. The narrow
// component's scale is pinned (beta1 = 0) and not stored.
struct MoLParams {
    Tensor4f alpha;  // (1, 1, H, W), in [0, 1]
    Tensor4f beta2;  // (1, 1, H, W), in [0, beta_upper]

    MoLParams() = default;
    MoLParams(int h, int w) : alpha(1, 1, h, w), beta2(1, 1, h, w) {}
};

}  // namespace iterflow
