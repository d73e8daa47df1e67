// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "iterflow/datagen.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "iterflow/noise.hpp"
#include "iterflow/rng.hpp"

namespace iterflow {

namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor4f paint_frame2(const ProceduralTexture& tex, int h, int w) { return tex.rasterize(h, w); }

// Frame 1 reads the texture at p + flow(p); invalid pixels (no correspondence)
// fall back to an independent texture so they carry no matchable signal.
Tensor4f paint_frame1(const ProceduralTexture& tex, const ProceduralTexture& fresh,
                      const FlowField& flow, const Tensor4f& has_corr) {
    const int h = flow.height(), w = flow.width();
    Tensor4f img(1, 3, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            std::array<float, 3> c;
            if (has_corr.at(0, 0, y, x) != 0.0f)
                c = tex.rgb(x + static_cast<double>(flow.u(y, x)),
                            y + static_cast<double>(flow.v(y, x)));
            else
                c = fresh.rgb(x, y);
            for (int k = 0; k < 3; ++k) img.at(0, k, y, x) = c[static_cast<size_t>(k)];
        }
    return img;
}

}  // namespace

void validate_scene(const RigidScene& scene) {
    if (scene.depth.n() != 1 || scene.depth.c() != 1 || scene.depth.h() < 1 || scene.depth.w() < 1)
        throw std::invalid_argument("RigidScene: depth must be (1,1,H,W)");
    for (float d : scene.depth.data)
        if (!(d > 0.0f)) throw std::invalid_argument("RigidScene: depth must be strictly positive");
    const Eigen::Matrix3d err = scene.rotation.transpose() * scene.rotation -
                                Eigen::Matrix3d::Identity();
    if (err.cwiseAbs().maxCoeff() > 1e-9)
        throw std::invalid_argument("RigidScene: rotation is not orthonormal");
    if (std::abs(scene.rotation.determinant() - 1.0) > 1e-9)
        throw std::invalid_argument("RigidScene: rotation determinant is not +1");
    if (scene.intrinsics.fx <= 0 || scene.intrinsics.fy <= 0)
        throw std::invalid_argument("RigidScene: focal lengths must be positive");
}

FlowField rigid_flow(const RigidScene& scene) {
    validate_scene(scene);
    const int h = scene.height(), w = scene.width();
    const CameraIntrinsics& k = scene.intrinsics;
    FlowField flow(h, w);
    // identity pose means exactly zero flow; skip the round trip so the
    // algebraic identity holds bit-exactly
    if (scene.rotation == Eigen::Matrix3d::Identity() && scene.translation.isZero(0.0))
        return flow;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double d = scene.depth.at(0, 0, y, x);
            const Eigen::Vector3d p1((x - k.cx) / k.fx * d, (y - k.cy) / k.fy * d, d);
            const Eigen::Vector3d p2 = scene.rotation * p1 + scene.translation;
            if (p2.z() <= 0.0) {
                flow.set(y, x, 0.0f, 0.0f, false);
                continue;
            }
            const double x2 = k.fx * p2.x() / p2.z() + k.cx;
            const double y2 = k.fy * p2.y() / p2.z() + k.cy;
            const bool inside = x2 >= 0.0 && x2 <= w - 1.0 && y2 >= 0.0 && y2 <= h - 1.0;
            flow.set(y, x, static_cast<float>(x2 - x), static_cast<float>(y2 - y), inside);
        }
    return flow;
}

RigidScene synth_scene(uint64_t seed, const RigidSceneConfig& cfg) {
    if (cfg.motion_scale < 0.0) throw std::invalid_argument("synth_scene: negative motion_scale");
    RigidScene scene;
    scene.seed = seed;
    scene.depth = smooth_field(cfg.height, cfg.width, hash_combine(seed, 1), cfg.depth_min,
                               cfg.depth_max, 24.0, 3);
    const double f = 0.8 * std::max(cfg.height, cfg.width);
    scene.intrinsics = {f, f, (cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0};

    if (cfg.motion_scale == 0.0) return scene;  // identity pose

    Rng rng(hash_combine(seed, 2));
    Eigen::Vector3d axis(rng.normal(), rng.normal(), rng.normal());
    if (axis.norm() < 1e-12) axis = Eigen::Vector3d::UnitZ();
    axis.normalize();
    double angle = cfg.motion_scale * rng.uniform(0.2, 1.0) * cfg.max_rotation_deg * kPi / 180.0;
    Eigen::Vector3d tr(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    tr *= cfg.motion_scale * cfg.max_translation;

    const double bound = cfg.max_flow_frac * std::min(cfg.height, cfg.width);
    for (int attempt = 0; attempt < 60; ++attempt) {
        scene.rotation = Eigen::AngleAxisd(angle, axis).toRotationMatrix();
        scene.translation = tr;
        const FlowField flow = rigid_flow(scene);
        double peak = 0.0;
        long n_valid = 0;
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x)
                if (flow.is_valid(y, x)) {
                    peak = std::max(peak, static_cast<double>(
                                              std::hypot(flow.u(y, x), flow.v(y, x))));
                    ++n_valid;
                }
        // shrink until the flow fits the cap and most of the frame stays visible
        if (peak <= bound && n_valid >= static_cast<long>(cfg.height) * cfg.width / 2) break;
        angle *= 0.7;
        tr *= 0.7;
    }
    return scene;
}

SamplePair render_pair(const RigidScene& scene, uint64_t texture_seed) {
    const int h = scene.height(), w = scene.width();
    FlowField flow = rigid_flow(scene);

    // transformed per-pixel depths, for the z-test
    Tensor4f z2(1, 1, h, w);
    Tensor4f has_corr(1, 1, h, w);
    const CameraIntrinsics& k = scene.intrinsics;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const double d = scene.depth.at(0, 0, y, x);
            const Eigen::Vector3d p1((x - k.cx) / k.fx * d, (y - k.cy) / k.fy * d, d);
            const Eigen::Vector3d p2 = scene.rotation * p1 + scene.translation;
            z2.at(0, 0, y, x) = static_cast<float>(p2.z());
            has_corr.at(0, 0, y, x) = p2.z() > 0.0 ? 1.0f : 0.0f;
        }

    // forward-splat z-buffer in frame 2 (nearest pixel)
    std::vector<float> zbuf(static_cast<size_t>(h) * w, std::numeric_limits<float>::infinity());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (has_corr.at(0, 0, y, x) == 0.0f) continue;
            const int qx = static_cast<int>(std::lround(x + flow.u(y, x)));
            const int qy = static_cast<int>(std::lround(y + flow.v(y, x)));
            if (qx < 0 || qx >= w || qy < 0 || qy >= h) continue;
            float& cell = zbuf[static_cast<size_t>(qy) * w + qx];
            cell = std::min(cell, z2.at(0, 0, y, x));
        }
    // a pixel is occluded if another one splats nearer by > 1% relative depth
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!flow.is_valid(y, x)) continue;
            const int qx = static_cast<int>(std::lround(x + flow.u(y, x)));
            const int qy = static_cast<int>(std::lround(y + flow.v(y, x)));
            if (qx < 0 || qx >= w || qy < 0 || qy >= h) continue;
            const float zhere = z2.at(0, 0, y, x);
            if (zbuf[static_cast<size_t>(qy) * w + qx] < zhere * 0.99f)
                flow.valid.at(0, 0, y, x) = 0.0f;
        }

    ProceduralTexture tex(texture_seed);
    ProceduralTexture fresh(hash_combine(texture_seed, 0xfefeu));
    SamplePair out;
    out.i2 = paint_frame2(tex, h, w);
    out.i1 = paint_frame1(tex, fresh, flow, has_corr);
    out.gt = std::move(flow);
    out.seed = scene.seed;
    std::ostringstream meta;
    meta << "rigid seed=" << scene.seed << " tex=" << texture_seed << " h=" << h << " w=" << w;
    out.meta = meta.str();
    return out;
}

SamplePair affine_pair_from(const Eigen::Matrix2d& a, const Eigen::Vector2d& t, int height,
                            int width, uint64_t texture_seed) {
    const Eigen::Vector2d c((width - 1) / 2.0, (height - 1) / 2.0);
    FlowField flow(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Eigen::Vector2d p(static_cast<double>(x), static_cast<double>(y));
            const Eigen::Vector2d q = a * (p - c) + c + t;
            const bool inside =
                q.x() >= 0.0 && q.x() <= width - 1.0 && q.y() >= 0.0 && q.y() <= height - 1.0;
            flow.set(y, x, static_cast<float>(q.x() - p.x()), static_cast<float>(q.y() - p.y()),
                     inside);
        }
    ProceduralTexture tex(texture_seed);
    Tensor4f ones(1, 1, height, width);
    ones.fill(1.0f);
    SamplePair out;
    out.i2 = paint_frame2(tex, height, width);
    out.i1 = paint_frame1(tex, tex, flow, ones);
    out.gt = std::move(flow);
    out.seed = texture_seed;
    std::ostringstream meta;
    meta << "affine tex=" << texture_seed << " h=" << height << " w=" << width;
    out.meta = meta.str();
    return out;
}

SamplePair affine_pair(uint64_t seed, const AffinePairConfig& cfg) {
    Rng rng(hash_combine(seed, 3));
    Eigen::Matrix2d dev;
    dev << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
        rng.uniform(-1.0, 1.0);
    dev *= 0.04;
    Eigen::Vector2d t(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    t *= 0.7 * cfg.max_disp;

    // the flow is linear in (dev, t), so one rescale enforces the cap exactly
    const Eigen::Vector2d c((cfg.width - 1) / 2.0, (cfg.height - 1) / 2.0);
    double peak = 0.0;
    for (int y = 0; y < cfg.height; ++y)
        for (int x = 0; x < cfg.width; ++x) {
            const Eigen::Vector2d p(static_cast<double>(x), static_cast<double>(y));
            peak = std::max(peak, (dev * (p - c) + t).norm());
        }
    if (peak > cfg.max_disp) {
        const double s = cfg.max_disp / peak;
        dev *= s;
        t *= s;
    }
    SamplePair out = affine_pair_from(Eigen::Matrix2d::Identity() + dev, t, cfg.height, cfg.width,
                                      hash_combine(seed, 4));
    out.seed = seed;
    std::ostringstream meta;
    meta << "affine seed=" << seed << " h=" << cfg.height << " w=" << cfg.width
         << " max_disp=" << cfg.max_disp;
    out.meta = meta.str();
    return out;
}

SamplePair translate_pair_wrap(uint64_t texture_seed, int height, int width, int dx, int dy) {
    ProceduralTexture tex(texture_seed);
    SamplePair out;
    out.i1 = tex.rasterize(height, width);
    out.i2 = Tensor4f(1, 3, height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const int sy = ((y - dy) % height + height) % height;
            const int sx = ((x - dx) % width + width) % width;
            for (int c = 0; c < 3; ++c) out.i2.at(0, c, y, x) = out.i1.at(0, c, sy, sx);
        }
    out.gt = FlowField(height, width);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            out.gt.set(y, x, static_cast<float>(dx), static_cast<float>(dy));
    out.seed = texture_seed;
    std::ostringstream meta;
    meta << "translate_wrap tex=" << texture_seed << " dx=" << dx << " dy=" << dy;
    out.meta = meta.str();
    return out;
}

}  // namespace iterflow
