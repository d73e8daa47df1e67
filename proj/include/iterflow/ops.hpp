// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable image operators. Each op validates shapes, computes its
// forward value, and records a backward closure on the tape. Convolutions are
// im2col + GEMM; everything else is direct loops. Parallel regions only ever
// write disjoint slices, so results are bit-identical for any thread count.

#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <vector>

#include "iterflow/tape.hpp"

namespace iterflow {

namespace detail {

template <typename T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapRM = Eigen::Map<MatRM<T>>;
template <typename T>
using CMapRM = Eigen::Map<const MatRM<T>>;

inline int conv_out_extent(int in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

// Unpacks one batch item into a (C*kh*kw) x (ho*wo) row-major patch matrix.
template <typename T>
void im2col(const Tensor4T<T>& x, int n, int kh, int kw, int stride, int pad, int ho, int wo,
            T* col) {
    const int C = x.c(), H = x.h(), W = x.w();
    const int m = ho * wo;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                T* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * m;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) {
                        std::fill(row + oh * wo, row + (oh + 1) * wo, T(0));
                        continue;
                    }
                    const T* src = &x.data[x.index(n, c, ih, 0)];
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        row[oh * wo + ow] = (iw >= 0 && iw < W) ? src[iw] : T(0);
                    }
                }
            }
        }
    }
}

// Scatter-add of a patch-matrix gradient back onto the input gradient.
template <typename T>
void col2im_add(const T* col, int n, int kh, int kw, int stride, int pad, int ho, int wo,
                Tensor4T<T>& dx) {
    const int C = dx.c(), H = dx.h(), W = dx.w();
    const int m = ho * wo;
    for (int c = 0; c < C; ++c) {
        for (int ki = 0; ki < kh; ++ki) {
            for (int kj = 0; kj < kw; ++kj) {
                const T* row = col + (static_cast<size_t>(c) * kh * kw + ki * kw + kj) * m;
                for (int oh = 0; oh < ho; ++oh) {
                    const int ih = oh * stride - pad + ki;
                    if (ih < 0 || ih >= H) continue;
                    T* dst = &dx.data[dx.index(n, c, ih, 0)];
                    for (int ow = 0; ow < wo; ++ow) {
                        const int iw = ow * stride - pad + kj;
                        if (iw >= 0 && iw < W) dst[iw] += row[oh * wo + ow];
                    }
                }
            }
        }
    }
}

}  // namespace detail

// --- convolution -------------------------------------------------------------

template <typename T>
VarT<T> conv2d(VarT<T> x, VarT<T> w, VarT<T> b, int stride, int pad) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    const Tensor4T<T>& wv = w.value();
    const Tensor4T<T>& bv = b.value();
    if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
    if (pad < 0) throw std::invalid_argument("conv2d: padding must be >= 0");
    if (wv.c() != xv.c())
        throw std::invalid_argument("conv2d: kernel channels " + std::to_string(wv.c()) +
                                    " do not match input channels " + std::to_string(xv.c()));
    if (bv.shape != std::array<int, 4>{1, wv.n(), 1, 1})
        throw std::invalid_argument("conv2d: bias shape " + shape_str(bv.shape) +
                                    " must be (1," + std::to_string(wv.n()) + ",1,1)");
    const int N = xv.n(), O = wv.n(), kh = wv.h(), kw = wv.w();
    const int ho = detail::conv_out_extent(xv.h(), kh, stride, pad);
    const int wo = detail::conv_out_extent(xv.w(), kw, stride, pad);
    if (ho <= 0 || wo <= 0)
        throw std::invalid_argument("conv2d: kernel larger than padded input");
    const int K = xv.c() * kh * kw;
    const int M = ho * wo;

    Tensor4T<T> out(N, O, ho, wo);
    detail::CMapRM<T> wm(wv.data.data(), O, K);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        std::vector<T> col(static_cast<size_t>(K) * M);
        detail::im2col(xv, n, kh, kw, stride, pad, ho, wo, col.data());
        detail::CMapRM<T> cm(col.data(), K, M);
        detail::MapRM<T> om(&out.data[out.index(n, 0, 0, 0)], O, M);
        om.noalias() = wm * cm;
        for (int o = 0; o < O; ++o) om.row(o).array() += bv.data[static_cast<size_t>(o)];
    }

    const int xid = x.id, wid = w.id, bid = b.id;
    bool ng = x.needs_grad() || w.needs_grad() || b.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& xval = t.value(xid);
        const Tensor4T<T>& wval = t.value(wid);
        const Tensor4T<T>& g = t.grad(self);
        detail::CMapRM<T> wmat(wval.data.data(), O, K);
        const bool need_x = t.needs_grad(xid);
        const bool need_w = t.needs_grad(wid);
        const bool need_b = t.needs_grad(bid);
        std::vector<T> dw_part;
        if (need_w) dw_part.assign(static_cast<size_t>(N) * O * K, T(0));
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n) {
            detail::CMapRM<T> gm(&g.data[g.index(n, 0, 0, 0)], O, M);
            if (need_x) {
                std::vector<T> colg(static_cast<size_t>(K) * M);
                detail::MapRM<T> cgm(colg.data(), K, M);
                cgm.noalias() = wmat.transpose() * gm;
                detail::col2im_add(colg.data(), n, kh, kw, stride, pad, ho, wo, t.grad_mut(xid));
            }
            if (need_w) {
                std::vector<T> col(static_cast<size_t>(K) * M);
                detail::im2col(xval, n, kh, kw, stride, pad, ho, wo, col.data());
                detail::CMapRM<T> cm(col.data(), K, M);
                detail::MapRM<T> dwm(dw_part.data() + static_cast<size_t>(n) * O * K, O, K);
                dwm.noalias() = gm * cm.transpose();
            }
        }
        // fixed reduction order keeps the weight gradient deterministic
        if (need_w) {
            detail::MapRM<T> dw(t.grad_mut(wid).data.data(), O, K);
            for (int n = 0; n < N; ++n)
                dw += detail::CMapRM<T>(dw_part.data() + static_cast<size_t>(n) * O * K, O, K);
        }
        if (need_b) {
            Tensor4T<T>& db = t.grad_mut(bid);
            for (int n = 0; n < N; ++n) {
                detail::CMapRM<T> gm(&g.data[g.index(n, 0, 0, 0)], O, M);
                for (int o = 0; o < O; ++o) db.data[static_cast<size_t>(o)] += gm.row(o).sum();
            }
        }
    });
    return {&tp, id};
}

template <typename T>
VarT<T> depthwise_conv2d(VarT<T> x, VarT<T> w, VarT<T> b, int stride, int pad) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    const Tensor4T<T>& wv = w.value();
    const Tensor4T<T>& bv = b.value();
    if (stride < 1) throw std::invalid_argument("depthwise_conv2d: stride must be >= 1");
    if (wv.n() != xv.c() || wv.c() != 1)
        throw std::invalid_argument("depthwise_conv2d: kernel must be (C,1,kh,kw), got " +
                                    shape_str(wv.shape) + " for input " + shape_str(xv.shape));
    if (bv.shape != std::array<int, 4>{1, xv.c(), 1, 1})
        throw std::invalid_argument("depthwise_conv2d: bad bias shape " + shape_str(bv.shape));
    const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w(), kh = wv.h(), kw = wv.w();
    const int ho = detail::conv_out_extent(H, kh, stride, pad);
    const int wo = detail::conv_out_extent(W, kw, stride, pad);
    if (ho <= 0 || wo <= 0) throw std::invalid_argument("depthwise_conv2d: empty output");

    Tensor4T<T> out(N, C, ho, wo);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int c = 0; c < C; ++c) {
            for (int oh = 0; oh < ho; ++oh) {
                for (int ow = 0; ow < wo; ++ow) {
                    T acc = bv.data[static_cast<size_t>(c)];
                    for (int ki = 0; ki < kh; ++ki) {
                        const int ih = oh * stride - pad + ki;
                        if (ih < 0 || ih >= H) continue;
                        for (int kj = 0; kj < kw; ++kj) {
                            const int iw = ow * stride - pad + kj;
                            if (iw < 0 || iw >= W) continue;
                            acc += xv.at(n, c, ih, iw) * wv.at(c, 0, ki, kj);
                        }
                    }
                    out.at(n, c, oh, ow) = acc;
                }
            }
        }
    }

    const int xid = x.id, wid = w.id, bid = b.id;
    bool ng = x.needs_grad() || w.needs_grad() || b.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& xval = t.value(xid);
        const Tensor4T<T>& wval = t.value(wid);
        const Tensor4T<T>& g = t.grad(self);
        if (t.needs_grad(xid)) {
            Tensor4T<T>& dx = t.grad_mut(xid);
#pragma omp parallel for collapse(2) schedule(static)
            for (int n = 0; n < N; ++n) {
                for (int c = 0; c < C; ++c) {
                    for (int oh = 0; oh < ho; ++oh) {
                        for (int ow = 0; ow < wo; ++ow) {
                            const T gv = g.at(n, c, oh, ow);
                            for (int ki = 0; ki < kh; ++ki) {
                                const int ih = oh * stride - pad + ki;
                                if (ih < 0 || ih >= H) continue;
                                for (int kj = 0; kj < kw; ++kj) {
                                    const int iw = ow * stride - pad + kj;
                                    if (iw < 0 || iw >= W) continue;
                                    dx.at(n, c, ih, iw) += gv * wval.at(c, 0, ki, kj);
                                }
                            }
                        }
                    }
                }
            }
        }
        if (t.needs_grad(wid)) {
            Tensor4T<T>& dw = t.grad_mut(wid);
#pragma omp parallel for schedule(static)
            for (int c = 0; c < C; ++c) {
                for (int n = 0; n < N; ++n) {
                    for (int oh = 0; oh < ho; ++oh) {
                        for (int ow = 0; ow < wo; ++ow) {
                            const T gv = g.at(n, c, oh, ow);
                            for (int ki = 0; ki < kh; ++ki) {
                                const int ih = oh * stride - pad + ki;
                                if (ih < 0 || ih >= H) continue;
                                for (int kj = 0; kj < kw; ++kj) {
                                    const int iw = ow * stride - pad + kj;
                                    if (iw < 0 || iw >= W) continue;
                                    dw.at(c, 0, ki, kj) += gv * xval.at(n, c, ih, iw);
                                }
                            }
                        }
                    }
                }
            }
        }
        if (t.needs_grad(bid)) {
            Tensor4T<T>& db = t.grad_mut(bid);
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int oh = 0; oh < ho; ++oh)
                        for (int ow = 0; ow < wo; ++ow)
                            db.data[static_cast<size_t>(c)] += g.at(n, c, oh, ow);
        }
    });
    return {&tp, id};
}

// --- pooling and sampling ----------------------------------------------------

// Block mean with replicate padding at the right/bottom edge, so pyramid
// levels stay defined for arbitrary extents.
template <typename T>
VarT<T> avg_pool2(VarT<T> x, int factor) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    if (factor < 1) throw std::invalid_argument("avg_pool2: factor must be >= 1");
    const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
    const int ho = (H + factor - 1) / factor;
    const int wo = (W + factor - 1) / factor;
    const T inv = T(1) / (T(factor) * T(factor));

    Tensor4T<T> out(N, C, ho, wo);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    T acc = 0;
                    for (int di = 0; di < factor; ++di)
                        for (int dj = 0; dj < factor; ++dj) {
                            const int ih = std::min(oh * factor + di, H - 1);
                            const int iw = std::min(ow * factor + dj, W - 1);
                            acc += xv.at(n, c, ih, iw);
                        }
                    out.at(n, c, oh, ow) = acc * inv;
                }

    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [=](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        Tensor4T<T>& dx = t.grad_mut(xid);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int oh = 0; oh < ho; ++oh)
                    for (int ow = 0; ow < wo; ++ow) {
                        const T gv = g.at(n, c, oh, ow) * inv;
                        for (int di = 0; di < factor; ++di)
                            for (int dj = 0; dj < factor; ++dj) {
                                const int ih = std::min(oh * factor + di, H - 1);
                                const int iw = std::min(ow * factor + dj, W - 1);
                                dx.at(n, c, ih, iw) += gv;
                            }
                    }
    });
    return {&tp, id};
}

// Bilinear gather. coords is (N,2,Ho,Wo) with channel 0 = x (col) and
// channel 1 = y (row) in pixel units of `map`. Out-of-bounds taps read zero;
// differentiable in both the map and the coordinates.
template <typename T>
VarT<T> grid_sample(VarT<T> map, VarT<T> coords) {
    TapeT<T>& tp = *map.tape;
    const Tensor4T<T>& mv = map.value();
    const Tensor4T<T>& cv = coords.value();
    if (cv.n() != mv.n() || cv.c() != 2)
        throw std::invalid_argument("grid_sample: coords must be (N,2,Ho,Wo) with N matching map, got " +
                                    shape_str(cv.shape) + " for map " + shape_str(mv.shape));
    const int N = mv.n(), C = mv.c(), H = mv.h(), W = mv.w();
    const int ho = cv.h(), wo = cv.w();

    Tensor4T<T> out(N, C, ho, wo);
    auto tex = [&](int n, int c, int iy, int ix) -> T {
        if (iy < 0 || iy >= H || ix < 0 || ix >= W) return T(0);
        return mv.at(n, c, iy, ix);
    };
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n) {
        for (int oh = 0; oh < ho; ++oh)
            for (int ow = 0; ow < wo; ++ow) {
                const T sx = cv.at(n, 0, oh, ow);
                const T sy = cv.at(n, 1, oh, ow);
                const int x0 = static_cast<int>(std::floor(sx));
                const int y0 = static_cast<int>(std::floor(sy));
                const T fx = sx - T(x0), fy = sy - T(y0);
                for (int c = 0; c < C; ++c) {
                    const T v00 = tex(n, c, y0, x0), v01 = tex(n, c, y0, x0 + 1);
                    const T v10 = tex(n, c, y0 + 1, x0), v11 = tex(n, c, y0 + 1, x0 + 1);
                    out.at(n, c, oh, ow) = (T(1) - fy) * ((T(1) - fx) * v00 + fx * v01) +
                                           fy * ((T(1) - fx) * v10 + fx * v11);
                }
            }
    }

    const int mid = map.id, cid = coords.id;
    bool ng = map.needs_grad() || coords.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& mval = t.value(mid);
        const Tensor4T<T>& cval = t.value(cid);
        const Tensor4T<T>& g = t.grad(self);
        const bool need_m = t.needs_grad(mid);
        const bool need_c = t.needs_grad(cid);
        auto texv = [&](int n, int c, int iy, int ix) -> T {
            if (iy < 0 || iy >= H || ix < 0 || ix >= W) return T(0);
            return mval.at(n, c, iy, ix);
        };
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n) {
            for (int oh = 0; oh < ho; ++oh)
                for (int ow = 0; ow < wo; ++ow) {
                    const T sx = cval.at(n, 0, oh, ow);
                    const T sy = cval.at(n, 1, oh, ow);
                    const int x0 = static_cast<int>(std::floor(sx));
                    const int y0 = static_cast<int>(std::floor(sy));
                    const T fx = sx - T(x0), fy = sy - T(y0);
                    T dsx = 0, dsy = 0;
                    for (int c = 0; c < C; ++c) {
                        const T gv = g.at(n, c, oh, ow);
                        if (gv == T(0)) continue;
                        if (need_m) {
                            Tensor4T<T>& dm = t.grad_mut(mid);
                            auto scatter = [&](int iy, int ix, T wgt) {
                                if (iy >= 0 && iy < H && ix >= 0 && ix < W)
                                    dm.at(n, c, iy, ix) += gv * wgt;
                            };
                            scatter(y0, x0, (T(1) - fy) * (T(1) - fx));
                            scatter(y0, x0 + 1, (T(1) - fy) * fx);
                            scatter(y0 + 1, x0, fy * (T(1) - fx));
                            scatter(y0 + 1, x0 + 1, fy * fx);
                        }
                        if (need_c) {
                            const T v00 = texv(n, c, y0, x0), v01 = texv(n, c, y0, x0 + 1);
                            const T v10 = texv(n, c, y0 + 1, x0), v11 = texv(n, c, y0 + 1, x0 + 1);
                            dsx += gv * ((T(1) - fy) * (v01 - v00) + fy * (v11 - v10));
                            dsy += gv * ((T(1) - fx) * (v10 - v00) + fx * (v11 - v01));
                        }
                    }
                    if (need_c) {
                        Tensor4T<T>& dc = t.grad_mut(cid);
                        dc.at(n, 0, oh, ow) += dsx;
                        dc.at(n, 1, oh, ow) += dsy;
                    }
                }
        }
    });
    return {&tp, id};
}

// --- pointwise ---------------------------------------------------------------

namespace detail {

template <typename T, typename F, typename DF>
VarT<T> pointwise(VarT<T> x, F f, DF df) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    Tensor4T<T> out = xv;
    for (T& v : out.data) v = f(v);
    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [xid, df](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        const Tensor4T<T>& xval = t.value(xid);
        Tensor4T<T>& dx = t.grad_mut(xid);
        for (size_t i = 0; i < g.numel(); ++i) dx.data[i] += g.data[i] * df(xval.data[i]);
    });
    return {&tp, id};
}

}  // namespace detail

template <typename T>
VarT<T> gelu(VarT<T> x) {
    const T c = T(0.7071067811865475244);    // 1/sqrt(2)
    const T q = T(0.3989422804014326779);    // 1/sqrt(2*pi)
    return detail::pointwise(
        x, [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * c)); },
        [=](T v) {
            return T(0.5) * (T(1) + std::erf(v * c)) + v * q * std::exp(T(-0.5) * v * v);
        });
}

template <typename T>
VarT<T> sigmoid(VarT<T> x) {
    return detail::pointwise(
        x,
        [](T v) {
            return v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                             : std::exp(v) / (T(1) + std::exp(v));
        },
        [](T v) {
            T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
            return s * (T(1) - s);
        });
}

template <typename T>
VarT<T> tanh(VarT<T> x) {
    return detail::pointwise(x, [](T v) { return std::tanh(v); },
                             [](T v) {
                                 T th = std::tanh(v);
                                 return T(1) - th * th;
                             });
}

// Clamp with projected-gradient semantics at the boundaries: a gradient that
// would push the value out of the interval is dropped, one that points back
// inside passes. Keeps zero-initialized heads trainable while honoring the
// bounded-parameter contract.
template <typename T>
VarT<T> clamp(VarT<T> x, T lo, T hi) {
    TapeT<T>& tp = *x.tape;
    if (!(lo < hi)) throw std::invalid_argument("clamp: lo must be < hi");
    Tensor4T<T> out = x.value();
    for (T& v : out.data) v = std::min(std::max(v, lo), hi);
    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [xid, lo, hi](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        const Tensor4T<T>& xval = t.value(xid);
        Tensor4T<T>& dx = t.grad_mut(xid);
        for (size_t i = 0; i < g.numel(); ++i) {
            const T v = xval.data[i], gv = g.data[i];
            if (v > lo && v < hi) dx.data[i] += gv;
            else if (v == lo && gv <= T(0)) dx.data[i] += gv;
            else if (v == hi && gv >= T(0)) dx.data[i] += gv;
        }
    });
    return {&tp, id};
}

template <typename T>
VarT<T> stop_gradient(VarT<T> x) {
    return constant(*x.tape, x.value());
}

// --- arithmetic --------------------------------------------------------------

template <typename T>
VarT<T> add(VarT<T> x, VarT<T> y) {
    TapeT<T>& tp = *x.tape;
    check_same_shape(x.shape(), y.shape(), "add");
    Tensor4T<T> out = x.value();
    const Tensor4T<T>& yv = y.value();
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] += yv.data[i];
    const int xid = x.id, yid = y.id;
    int id = tp.add(std::move(out), x.needs_grad() || y.needs_grad(), [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& g = t.grad(self);
        for (int pid : {xid, yid}) {
            if (!t.needs_grad(pid)) continue;
            Tensor4T<T>& d = t.grad_mut(pid);
            for (size_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i];
        }
    });
    return {&tp, id};
}

template <typename T>
VarT<T> mul(VarT<T> x, VarT<T> y) {
    TapeT<T>& tp = *x.tape;
    check_same_shape(x.shape(), y.shape(), "mul");
    Tensor4T<T> out = x.value();
    const Tensor4T<T>& yv = y.value();
    for (size_t i = 0; i < out.numel(); ++i) out.data[i] *= yv.data[i];
    const int xid = x.id, yid = y.id;
    int id = tp.add(std::move(out), x.needs_grad() || y.needs_grad(), [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& g = t.grad(self);
        if (t.needs_grad(xid)) {
            const Tensor4T<T>& yval = t.value(yid);
            Tensor4T<T>& d = t.grad_mut(xid);
            for (size_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i] * yval.data[i];
        }
        if (t.needs_grad(yid)) {
            const Tensor4T<T>& xval = t.value(xid);
            Tensor4T<T>& d = t.grad_mut(yid);
            for (size_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i] * xval.data[i];
        }
    });
    return {&tp, id};
}

template <typename T>
VarT<T> scale(VarT<T> x, double a) {
    TapeT<T>& tp = *x.tape;
    Tensor4T<T> out = x.value();
    for (T& v : out.data) v *= T(a);
    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [xid, a](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        Tensor4T<T>& d = t.grad_mut(xid);
        for (size_t i = 0; i < g.numel(); ++i) d.data[i] += g.data[i] * T(a);
    });
    return {&tp, id};
}

// --- normalization -----------------------------------------------------------

namespace detail {

// Shared normalization backward over an index group: dx_i =
// (1/sigma) * (dxhat_i - mean(dxhat) - xhat_i * mean(dxhat .* xhat)).
template <typename T>
struct NormGroupGrad {
    T sum_dxhat = 0;
    T sum_dxhat_xhat = 0;
};

}  // namespace detail

// Normalizes each (n,c) plane over its spatial extent; affine per channel.
template <typename T>
VarT<T> instance_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, double eps = 1e-5) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
    if (gamma.shape() != std::array<int, 4>{1, C, 1, 1} || beta.shape() != std::array<int, 4>{1, C, 1, 1})
        throw std::invalid_argument("instance_norm: affine params must be (1,C,1,1)");
    const int m = H * W;
    if (m == 0) throw std::invalid_argument("instance_norm: empty spatial extent");

    Tensor4T<T> out(N, C, H, W);
    const Tensor4T<T>& gv = gamma.value();
    const Tensor4T<T>& bv = beta.value();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
            const T* src = &xv.data[xv.index(n, c, 0, 0)];
            T* dst = &out.data[out.index(n, c, 0, 0)];
            T mean = 0;
            for (int i = 0; i < m; ++i) mean += src[i];
            mean /= T(m);
            T var = 0;
            for (int i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
            var /= T(m);
            const T inv = T(1) / std::sqrt(var + T(eps));
            const T gc = gv.data[static_cast<size_t>(c)], bc = bv.data[static_cast<size_t>(c)];
            for (int i = 0; i < m; ++i) dst[i] = gc * (src[i] - mean) * inv + bc;
        }

    const int xid = x.id, gid = gamma.id, bid = beta.id;
    bool ng = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& xval = t.value(xid);
        const Tensor4T<T>& gval = t.value(gid);
        const Tensor4T<T>& g = t.grad(self);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const T* src = &xval.data[xval.index(n, c, 0, 0)];
                const T* go = &g.data[g.index(n, c, 0, 0)];
                T mean = 0;
                for (int i = 0; i < m; ++i) mean += src[i];
                mean /= T(m);
                T var = 0;
                for (int i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
                var /= T(m);
                const T inv = T(1) / std::sqrt(var + T(eps));
                const T gc = gval.data[static_cast<size_t>(c)];
                T sum_dh = 0, sum_dhx = 0, sum_g = 0, sum_gx = 0;
                for (int i = 0; i < m; ++i) {
                    const T xhat = (src[i] - mean) * inv;
                    const T dh = go[i] * gc;
                    sum_dh += dh;
                    sum_dhx += dh * xhat;
                    sum_g += go[i];
                    sum_gx += go[i] * xhat;
                }
                if (t.needs_grad(xid)) {
                    Tensor4T<T>& dx = t.grad_mut(xid);
                    T* dxp = &dx.data[dx.index(n, c, 0, 0)];
                    for (int i = 0; i < m; ++i) {
                        const T xhat = (src[i] - mean) * inv;
                        const T dh = go[i] * gc;
                        dxp[i] += inv * (dh - sum_dh / T(m) - xhat * (sum_dhx / T(m)));
                    }
                }
                if (t.needs_grad(gid)) t.grad_mut(gid).data[static_cast<size_t>(c)] += sum_gx;
                if (t.needs_grad(bid)) t.grad_mut(bid).data[static_cast<size_t>(c)] += sum_g;
            }
    });
    return {&tp, id};
}

// Normalizes across channels at each (n,h,w) position; affine per channel.
// This is the ConvNeXt-style "layer norm over channels".
template <typename T>
VarT<T> channel_norm(VarT<T> x, VarT<T> gamma, VarT<T> beta, double eps = 1e-5) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
    if (gamma.shape() != std::array<int, 4>{1, C, 1, 1} || beta.shape() != std::array<int, 4>{1, C, 1, 1})
        throw std::invalid_argument("channel_norm: affine params must be (1,C,1,1)");
    if (C == 0) throw std::invalid_argument("channel_norm: no channels");

    Tensor4T<T> out(N, C, H, W);
    const Tensor4T<T>& gv = gamma.value();
    const Tensor4T<T>& bv = beta.value();
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n)
        for (int hw = 0; hw < H * W; ++hw) {
            const size_t base = static_cast<size_t>(n) * C * plane + static_cast<size_t>(hw);
            T mean = 0;
            for (int c = 0; c < C; ++c) mean += xv.data[base + c * plane];
            mean /= T(C);
            T var = 0;
            for (int c = 0; c < C; ++c) {
                const T d = xv.data[base + c * plane] - mean;
                var += d * d;
            }
            var /= T(C);
            const T inv = T(1) / std::sqrt(var + T(eps));
            for (int c = 0; c < C; ++c)
                out.data[base + c * plane] =
                    gv.data[static_cast<size_t>(c)] * (xv.data[base + c * plane] - mean) * inv +
                    bv.data[static_cast<size_t>(c)];
        }

    const int xid = x.id, gid = gamma.id, bid = beta.id;
    bool ng = x.needs_grad() || gamma.needs_grad() || beta.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& xval = t.value(xid);
        const Tensor4T<T>& gval = t.value(gid);
        const Tensor4T<T>& g = t.grad(self);
        const size_t pl = static_cast<size_t>(H) * W;
        for (int n = 0; n < N; ++n)
            for (int hw = 0; hw < H * W; ++hw) {
                const size_t base = static_cast<size_t>(n) * C * pl + static_cast<size_t>(hw);
                T mean = 0;
                for (int c = 0; c < C; ++c) mean += xval.data[base + c * pl];
                mean /= T(C);
                T var = 0;
                for (int c = 0; c < C; ++c) {
                    const T d = xval.data[base + c * pl] - mean;
                    var += d * d;
                }
                var /= T(C);
                const T inv = T(1) / std::sqrt(var + T(eps));
                T sum_dh = 0, sum_dhx = 0;
                for (int c = 0; c < C; ++c) {
                    const T xhat = (xval.data[base + c * pl] - mean) * inv;
                    const T dh = g.data[base + c * pl] * gval.data[static_cast<size_t>(c)];
                    sum_dh += dh;
                    sum_dhx += dh * xhat;
                }
                for (int c = 0; c < C; ++c) {
                    const T xhat = (xval.data[base + c * pl] - mean) * inv;
                    if (t.needs_grad(xid)) {
                        const T dh = g.data[base + c * pl] * gval.data[static_cast<size_t>(c)];
                        t.grad_mut(xid).data[base + c * pl] +=
                            inv * (dh - sum_dh / T(C) - xhat * (sum_dhx / T(C)));
                    }
                    if (t.needs_grad(gid))
                        t.grad_mut(gid).data[static_cast<size_t>(c)] += g.data[base + c * pl] * xhat;
                    if (t.needs_grad(bid))
                        t.grad_mut(bid).data[static_cast<size_t>(c)] += g.data[base + c * pl];
                }
            }
    });
    return {&tp, id};
}

// --- shape plumbing ----------------------------------------------------------

template <typename T>
VarT<T> concat_channels(const std::vector<VarT<T>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
    TapeT<T>& tp = *xs[0].tape;
    const int N = xs[0].value().n(), H = xs[0].value().h(), W = xs[0].value().w();
    int C = 0;
    bool ng = false;
    for (const auto& v : xs) {
        const auto& s = v.value().shape;
        if (s[0] != N || s[2] != H || s[3] != W)
            throw std::invalid_argument("concat_channels: incompatible shape " + shape_str(s));
        C += s[1];
        ng = ng || v.needs_grad();
    }
    Tensor4T<T> out(N, C, H, W);
    const size_t plane = static_cast<size_t>(H) * W;
    int c0 = 0;
    std::vector<int> ids, offsets, widths;
    for (const auto& v : xs) {
        const Tensor4T<T>& xv = v.value();
        for (int n = 0; n < N; ++n)
            std::copy(xv.data.begin() + static_cast<size_t>(n) * xv.c() * plane,
                      xv.data.begin() + static_cast<size_t>(n + 1) * xv.c() * plane,
                      out.data.begin() + (static_cast<size_t>(n) * C + c0) * plane);
        ids.push_back(v.id);
        offsets.push_back(c0);
        widths.push_back(xv.c());
        c0 += xv.c();
    }
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& g = t.grad(self);
        for (size_t k = 0; k < ids.size(); ++k) {
            if (!t.needs_grad(ids[k])) continue;
            Tensor4T<T>& d = t.grad_mut(ids[k]);
            for (int n = 0; n < N; ++n) {
                const size_t src = (static_cast<size_t>(n) * C + offsets[k]) * plane;
                const size_t dst = static_cast<size_t>(n) * widths[k] * plane;
                for (size_t i = 0; i < static_cast<size_t>(widths[k]) * plane; ++i)
                    d.data[dst + i] += g.data[src + i];
            }
        }
    });
    return {&tp, id};
}

template <typename T>
VarT<T> slice_channels(VarT<T> x, int c0, int count) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
    if (c0 < 0 || count <= 0 || c0 + count > C)
        throw std::invalid_argument("slice_channels: range [" + std::to_string(c0) + "," +
                                    std::to_string(c0 + count) + ") out of " + std::to_string(C));
    Tensor4T<T> out(N, count, H, W);
    const size_t plane = static_cast<size_t>(H) * W;
    for (int n = 0; n < N; ++n)
        std::copy(xv.data.begin() + (static_cast<size_t>(n) * C + c0) * plane,
                  xv.data.begin() + (static_cast<size_t>(n) * C + c0 + count) * plane,
                  out.data.begin() + static_cast<size_t>(n) * count * plane);
    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [=](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        Tensor4T<T>& d = t.grad_mut(xid);
        for (int n = 0; n < N; ++n) {
            const size_t dst = (static_cast<size_t>(n) * C + c0) * plane;
            const size_t src = static_cast<size_t>(n) * count * plane;
            for (size_t i = 0; i < static_cast<size_t>(count) * plane; ++i)
                d.data[dst + i] += g.data[src + i];
        }
    });
    return {&tp, id};
}

// Softmax within consecutive channel groups of size `group`.
template <typename T>
VarT<T> softmax_groups(VarT<T> x, int group) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
    if (group < 1 || C % group != 0)
        throw std::invalid_argument("softmax_groups: channel count " + std::to_string(C) +
                                    " not divisible by group " + std::to_string(group));
    const int G = C / group;
    const size_t plane = static_cast<size_t>(H) * W;
    Tensor4T<T> out(N, C, H, W);
    for (int n = 0; n < N; ++n)
        for (int gidx = 0; gidx < G; ++gidx)
            for (int hw = 0; hw < H * W; ++hw) {
                const size_t base =
                    (static_cast<size_t>(n) * C + static_cast<size_t>(gidx) * group) * plane + hw;
                T mx = xv.data[base];
                for (int k = 1; k < group; ++k) mx = std::max(mx, xv.data[base + k * plane]);
                T denom = 0;
                for (int k = 0; k < group; ++k) {
                    const T e = std::exp(xv.data[base + k * plane] - mx);
                    out.data[base + k * plane] = e;
                    denom += e;
                }
                for (int k = 0; k < group; ++k) out.data[base + k * plane] /= denom;
            }
    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [=](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        const Tensor4T<T>& y = t.value(self);
        Tensor4T<T>& d = t.grad_mut(xid);
        for (int n = 0; n < N; ++n)
            for (int gidx = 0; gidx < G; ++gidx)
                for (int hw = 0; hw < H * W; ++hw) {
                    const size_t base =
                        (static_cast<size_t>(n) * C + static_cast<size_t>(gidx) * group) * plane + hw;
                    T s = 0;
                    for (int k = 0; k < group; ++k) s += g.data[base + k * plane] * y.data[base + k * plane];
                    for (int k = 0; k < group; ++k)
                        d.data[base + k * plane] +=
                            y.data[base + k * plane] * (g.data[base + k * plane] - s);
                }
    });
    return {&tp, id};
}

// --- resize ------------------------------------------------------------------

// Bilinear resize, half-pixel centers, edge clamp. Identity when extents match.
template <typename T>
VarT<T> resize_bilinear(VarT<T> x, int ho, int wo) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    if (ho < 1 || wo < 1) throw std::invalid_argument("resize_bilinear: empty target");
    const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
    const double sh = static_cast<double>(H) / ho;
    const double sw = static_cast<double>(W) / wo;

    struct Tap {
        int i0, i1;
        T f;
    };
    std::vector<Tap> ty(static_cast<size_t>(ho)), tx(static_cast<size_t>(wo));
    for (int oy = 0; oy < ho; ++oy) {
        double sy = (oy + 0.5) * sh - 0.5;
        sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
        const int i0 = static_cast<int>(std::floor(sy));
        ty[static_cast<size_t>(oy)] = {i0, std::min(i0 + 1, H - 1), static_cast<T>(sy - i0)};
    }
    for (int ox = 0; ox < wo; ++ox) {
        double sx = (ox + 0.5) * sw - 0.5;
        sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
        const int i0 = static_cast<int>(std::floor(sx));
        tx[static_cast<size_t>(ox)] = {i0, std::min(i0 + 1, W - 1), static_cast<T>(sx - i0)};
    }

    Tensor4T<T> out(N, C, ho, wo);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < ho; ++oy) {
                const Tap& a = ty[static_cast<size_t>(oy)];
                for (int ox = 0; ox < wo; ++ox) {
                    const Tap& b = tx[static_cast<size_t>(ox)];
                    const T v00 = xv.at(n, c, a.i0, b.i0), v01 = xv.at(n, c, a.i0, b.i1);
                    const T v10 = xv.at(n, c, a.i1, b.i0), v11 = xv.at(n, c, a.i1, b.i1);
                    out.at(n, c, oy, ox) = (T(1) - a.f) * ((T(1) - b.f) * v00 + b.f * v01) +
                                           a.f * ((T(1) - b.f) * v10 + b.f * v11);
                }
            }

    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [=](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        Tensor4T<T>& d = t.grad_mut(xid);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int oy = 0; oy < ho; ++oy) {
                    const Tap& a = ty[static_cast<size_t>(oy)];
                    for (int ox = 0; ox < wo; ++ox) {
                        const Tap& b = tx[static_cast<size_t>(ox)];
                        const T gv = g.at(n, c, oy, ox);
                        d.at(n, c, a.i0, b.i0) += gv * (T(1) - a.f) * (T(1) - b.f);
                        d.at(n, c, a.i0, b.i1) += gv * (T(1) - a.f) * b.f;
                        d.at(n, c, a.i1, b.i0) += gv * a.f * (T(1) - b.f);
                        d.at(n, c, a.i1, b.i1) += gv * a.f * b.f;
                    }
                }
    });
    return {&tp, id};
}

template <typename T>
VarT<T> resize_nearest(VarT<T> x, int ho, int wo) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    if (ho < 1 || wo < 1) throw std::invalid_argument("resize_nearest: empty target");
    const int N = xv.n(), C = xv.c(), H = xv.h(), W = xv.w();
    std::vector<int> my(static_cast<size_t>(ho)), mx(static_cast<size_t>(wo));
    for (int oy = 0; oy < ho; ++oy)
        my[static_cast<size_t>(oy)] =
            std::min(static_cast<int>(std::floor((oy + 0.5) * static_cast<double>(H) / ho)), H - 1);
    for (int ox = 0; ox < wo; ++ox)
        mx[static_cast<size_t>(ox)] =
            std::min(static_cast<int>(std::floor((ox + 0.5) * static_cast<double>(W) / wo)), W - 1);
    Tensor4T<T> out(N, C, ho, wo);
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox)
                    out.at(n, c, oy, ox) =
                        xv.at(n, c, my[static_cast<size_t>(oy)], mx[static_cast<size_t>(ox)]);
    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [=](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const Tensor4T<T>& g = t.grad(self);
        Tensor4T<T>& d = t.grad_mut(xid);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int oy = 0; oy < ho; ++oy)
                    for (int ox = 0; ox < wo; ++ox)
                        d.at(n, c, my[static_cast<size_t>(oy)], mx[static_cast<size_t>(ox)]) +=
                            g.at(n, c, oy, ox);
    });
    return {&tp, id};
}

// --- convex upsampling ---------------------------------------------------------

// Upsamples x by `factor`: each fine pixel is a convex combination of the 3x3
// coarse neighborhood (replicate-clamped at borders) under the given weights,
// then scaled by value_scale. weights has factor*factor*9 channels laid out as
// (subpixel-row-major) groups of 9 neighbor taps; callers normalize each group
// (softmax_groups) so the combination is convex.
template <typename T>
VarT<T> convex_upsample(VarT<T> x, VarT<T> weights, int factor, double value_scale) {
    TapeT<T>& tp = *x.tape;
    const Tensor4T<T>& xv = x.value();
    const Tensor4T<T>& wv = weights.value();
    if (factor < 1) throw std::invalid_argument("convex_upsample: factor must be >= 1");
    const int N = xv.n(), C = xv.c(), h = xv.h(), w = xv.w();
    if (wv.shape != std::array<int, 4>{N, factor * factor * 9, h, w})
        throw std::invalid_argument("convex_upsample: weights must be (N," +
                                    std::to_string(factor * factor * 9) + ",h,w), got " +
                                    shape_str(wv.shape));
    const int H = h * factor, W = w * factor;

    auto cl = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
    Tensor4T<T> out(N, C, H, W);
#pragma omp parallel for schedule(static)
    for (int n = 0; n < N; ++n)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int di = 0; di < factor; ++di)
                    for (int dj = 0; dj < factor; ++dj) {
                        const int wc0 = (di * factor + dj) * 9;
                        for (int c = 0; c < C; ++c) {
                            T acc = 0;
                            for (int m = 0; m < 9; ++m) {
                                const int ni = cl(i + m / 3 - 1, h - 1);
                                const int nj = cl(j + m % 3 - 1, w - 1);
                                acc += wv.at(n, wc0 + m, i, j) * xv.at(n, c, ni, nj);
                            }
                            out.at(n, c, i * factor + di, j * factor + dj) = acc * T(value_scale);
                        }
                    }

    const int xid = x.id, wid = weights.id;
    bool ng = x.needs_grad() || weights.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const Tensor4T<T>& xval = t.value(xid);
        const Tensor4T<T>& wval = t.value(wid);
        const Tensor4T<T>& g = t.grad(self);
        auto cl2 = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
        const bool nx = t.needs_grad(xid), nw = t.needs_grad(wid);
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n)
            for (int i = 0; i < h; ++i)
                for (int j = 0; j < w; ++j)
                    for (int di = 0; di < factor; ++di)
                        for (int dj = 0; dj < factor; ++dj) {
                            const int wc0 = (di * factor + dj) * 9;
                            for (int c = 0; c < C; ++c) {
                                const T gv =
                                    g.at(n, c, i * factor + di, j * factor + dj) * T(value_scale);
                                if (gv == T(0)) continue;
                                for (int m = 0; m < 9; ++m) {
                                    const int ni = cl2(i + m / 3 - 1, h - 1);
                                    const int nj = cl2(j + m % 3 - 1, w - 1);
                                    if (nx)
                                        t.grad_mut(xid).at(n, c, ni, nj) +=
                                            gv * wval.at(n, wc0 + m, i, j);
                                    if (nw)
                                        t.grad_mut(wid).at(n, wc0 + m, i, j) +=
                                            gv * xval.at(n, c, ni, nj);
                                }
                            }
                        }
    });
    return {&tp, id};
}

// --- reductions --------------------------------------------------------------

template <typename T>
VarT<T> sum_all(VarT<T> x) {
    TapeT<T>& tp = *x.tape;
    Tensor4T<T> out(1, 1, 1, 1);
    T acc = 0;
    for (T v : x.value().data) acc += v;
    out.data[0] = acc;
    const int xid = x.id;
    int id = tp.add(std::move(out), x.needs_grad(), [xid](TapeT<T>& t, int self) {
        if (!t.needs_grad(xid)) return;
        const T gv = t.grad(self).data[0];
        Tensor4T<T>& d = t.grad_mut(xid);
        for (T& v : d.data) v += gv;
    });
    return {&tp, id};
}

// Scalar combination sum_i w_i * x_i over (1,1,1,1) vars.
template <typename T>
VarT<T> weighted_sum(const std::vector<VarT<T>>& xs, const std::vector<double>& weights) {
    if (xs.empty()) throw std::invalid_argument("weighted_sum: empty list");
    if (xs.size() != weights.size())
        throw std::invalid_argument("weighted_sum: weight count mismatch");
    TapeT<T>& tp = *xs[0].tape;
    Tensor4T<T> out(1, 1, 1, 1);
    bool ng = false;
    std::vector<int> ids;
    for (size_t i = 0; i < xs.size(); ++i) {
        if (xs[i].value().shape != std::array<int, 4>{1, 1, 1, 1})
            throw std::invalid_argument("weighted_sum: inputs must be scalars");
        out.data[0] += T(weights[i]) * xs[i].value().data[0];
        ng = ng || xs[i].needs_grad();
        ids.push_back(xs[i].id);
    }
    int id = tp.add(std::move(out), ng, [ids, weights](TapeT<T>& t, int self) {
        const T gv = t.grad(self).data[0];
        for (size_t i = 0; i < ids.size(); ++i)
            if (t.needs_grad(ids[i])) t.grad_mut(ids[i]).data[0] += gv * T(weights[i]);
    });
    return {&tp, id};
}

}  // namespace iterflow
