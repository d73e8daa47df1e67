// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic training data with exact ground truth: rigid-scene flow from
// depth + camera motion, and 2D affine warps. Generation is a pure function
// of (seed, config), O(H*W) memory per sample.

#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>

#include "iterflow/flowfield.hpp"
#include "iterflow/tensor.hpp"

namespace iterflow {

struct CameraIntrinsics {
    double fx = 0, fy = 0, cx = 0, cy = 0;
};

// Static scene observed from two camera poses. R, t map frame-1 camera
// coordinates into frame 2.
struct RigidScene {
    Tensor4f depth;  // (1,1,H,W), meters, strictly positive
    CameraIntrinsics intrinsics;
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();
    uint64_t seed = 0;

    int height() const { return depth.h(); }
    int width() const { return depth.w(); }
};

// Throws if depth is non-positive anywhere or the rotation is not a proper
// orthonormal matrix (tolerance 1e-9).
void validate_scene(const RigidScene& scene);

struct SamplePair {
    Tensor4f i1, i2;  // (1,3,H,W) in [0,1]
    FlowField gt;
    uint64_t seed = 0;
    std::string meta;  // generator tag + parameters, for dataset manifests
};

struct RigidSceneConfig {
    int height = 64;
    int width = 64;
    double motion_scale = 1.0;   // 0 gives the identity pose
    double max_flow_frac = 0.15; // cap on max |flow| as a fraction of min extent
    double depth_min = 2.0;      // meters
    double depth_max = 20.0;
    double max_translation = 0.5;      // meters
    double max_rotation_deg = 10.0;
};

struct AffinePairConfig {
    int height = 64;
    int width = 64;
    double max_disp = 6.0;  // px, bound on |flow| over the frame
};

// Back-project / transform / re-project per pixel. Pixels that land behind
// the camera or outside frame 2 are marked invalid (flow stored as zero).
FlowField rigid_flow(const RigidScene& scene);

// Random smooth depth plus a small random SE(3) pose; deterministic in seed.
// The pose is shrunk until the induced flow respects max_flow_frac.
RigidScene synth_scene(uint64_t seed, const RigidSceneConfig& cfg);

// Renders the two frames of a scene over a procedural texture. Frame 2 is the
// texture at rest; frame 1 reads the texture along the rigid correspondence,
// so the pair is photometrically consistent by construction. Occlusions are
// detected by a forward-splat z-test (1-pixel z-buffer, 1% relative depth).
SamplePair render_pair(const RigidScene& scene, uint64_t texture_seed);

// 2D warp pair with exact analytic flow: map(p) = A (p - c) + c + t.
SamplePair affine_pair_from(const Eigen::Matrix2d& a, const Eigen::Vector2d& t, int height,
                            int width, uint64_t texture_seed);

// Random affine + translation, flow magnitude capped at cfg.max_disp.
SamplePair affine_pair(uint64_t seed, const AffinePairConfig& cfg);

// Integer translation with wraparound; gt flow is constant (dx, dy).
SamplePair translate_pair_wrap(uint64_t texture_seed, int height, int width, int dx, int dy);

}  // namespace iterflow
