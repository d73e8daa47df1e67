// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Multi-scale all-pairs correlation volume and the fixed-radius lookup that
// turns a flow estimate into raw motion evidence.

#pragma once

#include <cmath>
#include <vector>

#include "iterflow/ops.hpp"

namespace iterflow {

// All-pairs feature correlation between f1 (B,D,h,w) and a pooled second map
// f2 (B,D,hk,wk). Output is (B*h*w, 1, hk, wk): one target-resolution plane of
// scaled dot products per source pixel.
template <typename T>
VarT<T> correlation(VarT<T> f1, VarT<T> f2, double scl) {
    TapeT<T>& tp = *f1.tape;
    const Tensor4T<T>& av = f1.value();
    const Tensor4T<T>& bv = f2.value();
    if (av.n() != bv.n() || av.c() != bv.c())
        throw std::invalid_argument("correlation: feature shapes disagree: " + shape_str(av.shape) +
                                    " vs " + shape_str(bv.shape));
    const int B = av.n(), D = av.c(), h = av.h(), w = av.w();
    const int hk = bv.h(), wk = bv.w();
    const int hw = h * w, hwk = hk * wk;

    Tensor4T<T> out(B * hw, 1, hk, wk);
#pragma omp parallel for schedule(static)
    for (int b = 0; b < B; ++b) {
        detail::CMapRM<T> m1(&av.data[av.index(b, 0, 0, 0)], D, hw);
        detail::CMapRM<T> m2(&bv.data[bv.index(b, 0, 0, 0)], D, hwk);
        detail::MapRM<T> mo(&out.data[static_cast<size_t>(b) * hw * hwk], hw, hwk);
        mo.noalias() = (m1.transpose() * m2) * T(scl);
    }

    const int aid = f1.id, bid = f2.id;
    bool ng = f1.needs_grad() || f2.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& a = t.value(aid);
        const Tensor4T<T>& bb = t.value(bid);
        const Tensor4T<T>& g = t.grad(self);
        const bool need_a = t.needs_grad(aid);
        const bool need_b = t.needs_grad(bid);
#pragma omp parallel for schedule(static)
        for (int b = 0; b < B; ++b) {
            detail::CMapRM<T> m1(&a.data[a.index(b, 0, 0, 0)], D, hw);
            detail::CMapRM<T> m2(&bb.data[bb.index(b, 0, 0, 0)], D, hwk);
            detail::CMapRM<T> mg(&g.data[static_cast<size_t>(b) * hw * hwk], hw, hwk);
            if (need_a) {
                detail::MapRM<T> da(&t.grad_mut(aid).data[a.index(b, 0, 0, 0)], D, hw);
                da.noalias() += (m2 * mg.transpose()) * T(scl);
            }
            if (need_b) {
                detail::MapRM<T> db(&t.grad_mut(bid).data[bb.index(b, 0, 0, 0)], D, hwk);
                db.noalias() += (m1 * mg) * T(scl);
            }
        }
    });
    return {&tp, id};
}

// Expands a flow field (B,2,h,w) into per-pixel sample windows for one pyramid
// level: output (B*h*w, 2, 2r+1, 2r+1) holding (x,y) sample locations
// (p + flow(p)) * inv_scale + integer offsets. Linear in the flow.
template <typename T>
VarT<T> lookup_coords(VarT<T> flow, double inv_scale, int radius) {
    TapeT<T>& tp = *flow.tape;
    const Tensor4T<T>& fv = flow.value();
    if (fv.c() != 2) throw std::invalid_argument("lookup_coords: flow must have 2 channels");
    if (radius < 0) throw std::invalid_argument("lookup_coords: radius must be >= 0");
    const int B = fv.n(), h = fv.h(), w = fv.w();
    const int S = 2 * radius + 1;

    Tensor4T<T> out(B * h * w, 2, S, S);
    for (int b = 0; b < B; ++b)
        for (int py = 0; py < h; ++py)
            for (int px = 0; px < w; ++px) {
                const int bp = (b * h + py) * w + px;
                const T cx = (T(px) + fv.at(b, 0, py, px)) * T(inv_scale);
                const T cy = (T(py) + fv.at(b, 1, py, px)) * T(inv_scale);
                for (int i = 0; i < S; ++i)
                    for (int j = 0; j < S; ++j) {
                        out.at(bp, 0, i, j) = cx + T(j - radius);
                        out.at(bp, 1, i, j) = cy + T(i - radius);
                    }
            }

    const int fid = flow.id;
    int id = tp.add(std::move(out), flow.needs_grad(), [=](TapeT<T>& t, int self) {
        if (!t.needs_grad(fid)) return;
        const Tensor4T<T>& g = t.grad(self);
        Tensor4T<T>& d = t.grad_mut(fid);
        for (int b = 0; b < B; ++b)
            for (int py = 0; py < h; ++py)
                for (int px = 0; px < w; ++px) {
                    const int bp = (b * h + py) * w + px;
                    T su = 0, sv = 0;
                    for (int i = 0; i < S; ++i)
                        for (int j = 0; j < S; ++j) {
                            su += g.at(bp, 0, i, j);
                            sv += g.at(bp, 1, i, j);
                        }
                    d.at(b, 0, py, px) += su * T(inv_scale);
                    d.at(b, 1, py, px) += sv * T(inv_scale);
                }
    });
    return {&tp, id};
}

// Rearranges per-pixel sampled windows (B*h*w, 1, S, S) into a channel block
// (B, S*S, h, w); taps are row-major over the window.
template <typename T>
VarT<T> taps_to_channels(VarT<T> x, int B, int h, int w) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    if (xv.c() != 1 || xv.n() != B * h * w)
        throw std::invalid_argument("taps_to_channels: expected (B*h*w,1,S,S), got " +
                                    shape_str(xv.shape));
    const int S = xv.h();
    if (xv.w() != S) throw std::invalid_argument("taps_to_channels: window must be square");
    const int taps = S * S;

    Tensor4T<T> out(B, taps, h, w);
    for (int b = 0; b < B; ++b)
        for (int py = 0; py < h; ++py)
            for (int px = 0; px < w; ++px) {
                const int bp = (b * h + py) * w + px;
                for (int tp2 = 0; tp2 < taps; ++tp2)
                    out.at(b, tp2, py, px) = xv.data[static_cast<size_t>(bp) * taps + tp2];
            }

    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [=](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        Tensor4T<T>& d = t.grad_mut(xid);
        for (int b = 0; b < B; ++b)
            for (int py = 0; py < h; ++py)
                for (int px = 0; px < w; ++px) {
                    const int bp = (b * h + py) * w + px;
                    for (int tp2 = 0; tp2 < taps; ++tp2)
                        d.data[static_cast<size_t>(bp) * taps + tp2] += g.at(b, tp2, py, px);
                }
    });
    return {&tp, id};
}

struct LookupConfig {
    int radius = 4;
    int levels = 4;

    int feature_length() const { return levels * (2 * radius + 1) * (2 * radius + 1); }
};

// The k-level correlation pyramid. Level 0 is all-pairs dot products between
// the two feature maps; level k+1 correlates against the 2x-pooled second map
// (replicate-pad rounding on odd extents). Entries carry a 1/sqrt(D) scale so
// magnitudes stay O(1) across feature widths.
template <typename T>
struct CorrPyramidT {
    std::vector<VarT<T>> levels;  // each (B*h*w, 1, h_k, w_k)
    int batch = 0;
    int base_h = 0;
    int base_w = 0;
    int feature_dim = 0;
};

using CorrPyramid = CorrPyramidT<float>;

template <typename T>
CorrPyramidT<T> build_pyramid(VarT<T> f1, VarT<T> f2, int levels) {
    if (levels < 1) throw std::invalid_argument("build_pyramid: levels must be >= 1");
    const Tensor4T<T>& av = f1.value();
    check_same_shape(av.shape, f2.value().shape, "build_pyramid");
    CorrPyramidT<T> pyr;
    pyr.batch = av.n();
    pyr.base_h = av.h();
    pyr.base_w = av.w();
    pyr.feature_dim = av.c();
    const double scl = 1.0 / std::sqrt(static_cast<double>(av.c()));
    VarT<T> pooled = f2;
    for (int k = 0; k < levels; ++k) {
        if (k > 0) pooled = avg_pool2(pooled, 2);
        pyr.levels.push_back(correlation(f1, pooled, scl));
    }
    return pyr;
}

// LookUp({V_k}, flow, r): samples each level's (2r+1)^2 window centered at
// (p + flow(p)) / 2^k and stacks the taps level-major into channels, giving
// (B, levels*(2r+1)^2, h, w).
template <typename T>
VarT<T> lookup(const CorrPyramidT<T>& pyr, VarT<T> flow, const LookupConfig& cfg) {
    if (cfg.radius < 0) throw std::invalid_argument("lookup: radius must be >= 0");
    if (cfg.levels < 1 || cfg.levels > static_cast<int>(pyr.levels.size()))
        throw std::invalid_argument("lookup: level count exceeds pyramid depth");
    const Tensor4T<T>& fv = flow.value();
    if (fv.n() != pyr.batch || fv.c() != 2 || fv.h() != pyr.base_h || fv.w() != pyr.base_w)
        throw std::invalid_argument("lookup: flow " + shape_str(fv.shape) +
                                    " does not match pyramid base (" + std::to_string(pyr.batch) +
                                    ",2," + std::to_string(pyr.base_h) + "," +
                                    std::to_string(pyr.base_w) + ")");
    std::vector<VarT<T>> blocks;
    for (int k = 0; k < cfg.levels; ++k) {
        const double inv_scale = 1.0 / static_cast<double>(1 << k);
        VarT<T> coords = lookup_coords(flow, inv_scale, cfg.radius);
        VarT<T> sampled = grid_sample(pyr.levels[static_cast<size_t>(k)], coords);
        blocks.push_back(taps_to_channels(sampled, pyr.batch, pyr.base_h, pyr.base_w));
    }
    return concat_channels(blocks);
}

}  // namespace iterflow
