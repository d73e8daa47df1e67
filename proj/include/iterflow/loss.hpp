// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Training objectives over dense flow predictions. Mixture losses are
// evaluated through a log-sum-exp over per-component log densities, so values
// stay finite for any residual magnitude and any bounded scale parameter.

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "iterflow/ops.hpp"

namespace iterflow {

enum class LossKind { MoL, NaiveLaplace, NaiveMoL, L1, MoG };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::MoL: return "mol";
        case LossKind::NaiveLaplace: return "naive_laplace";
        case LossKind::NaiveMoL: return "naive_mol";
        case LossKind::L1: return "l1";
        case LossKind::MoG: return "mog";
    }
    return "?";
}

struct LossConfig {
    double gamma = 0.8;       // sequence-loss decay; RAFT-lineage convention
    double beta_upper = 10.0; // clamp ceiling for the wide-component scale
    LossKind kind = LossKind::MoL;
};

namespace detail {

constexpr double kLog2 = 0.6931471805599453094;
constexpr double kHalfLog2Pi = 0.9189385332046727418;

// Caps posterior-ratio exponents so degenerate mixtures (alpha rounded to
// exactly 0 or 1) yield large but finite alpha-gradients instead of inf*0.
template <typename T>
T exp_capped(T x) {
    return std::exp(std::min(x, T(60)));
}

template <typename T>
void check_loss_inputs(const Tensor4T<T>& flow, const Tensor4T<T>& gt, const Tensor4T<T>& valid,
                       const char* what) {
    if (flow.c() != 2 || gt.c() != 2)
        throw std::invalid_argument(std::string(what) + ": flow tensors must have 2 channels");
    check_same_shape(flow.shape, gt.shape, what);
    if (valid.shape != std::array<int, 4>{flow.n(), 1, flow.h(), flow.w()})
        throw std::invalid_argument(std::string(what) + ": bad valid-mask shape " +
                                    shape_str(valid.shape));
    if (!flow.all_finite() || !gt.all_finite())
        throw std::invalid_argument(std::string(what) + ": non-finite inputs");
}

template <typename T>
long count_valid(const Tensor4T<T>& valid, const char* what) {
    long v = 0;
    for (T m : valid.data)
        if (m != T(0)) ++v;
    if (v == 0) throw std::invalid_argument(std::string(what) + ": empty valid mask");
    return v;
}

}  // namespace detail

// Mixture-of-Laplace negative log likelihood. Component 1 has fixed unit
// scale (beta1 = 0); component 2 has scale exp(beta2). Normalized per
// direction: -(1/(2V)) * sum over valid pixels and both directions of the
// log mixture density of the residual.
template <typename T>
VarT<T> mol_nll(VarT<T> flow, VarT<T> alpha, VarT<T> beta2, const Tensor4T<T>& gt,
                const Tensor4T<T>& valid_mask) {
    TapeT<T>& tp = *flow.tape;
    detail::check_loss_inputs(flow.value(), gt, valid_mask, "mol_nll");
    const std::array<int, 4> fshape = flow.value().shape;
    const std::array<int, 4> param_shape{fshape[0], 1, fshape[2], fshape[3]};
    if (alpha.shape() != param_shape || beta2.shape() != param_shape)
        throw std::invalid_argument("mol_nll: alpha/beta2 must be " + shape_str(param_shape));
    if (!alpha.value().all_finite() || !beta2.value().all_finite())
        throw std::invalid_argument("mol_nll: non-finite mixture parameters");
    for (T a : alpha.value().data)
        if (a < T(0) || a > T(1)) throw std::invalid_argument("mol_nll: alpha outside [0,1]");
    const long V = detail::count_valid(valid_mask, "mol_nll");
    const int N = fshape[0], H = fshape[2], W = fshape[3];

    // constants are recorded before any node references are taken: adding
    // nodes may reallocate the tape
    VarT<T> gtc = constant(tp, gt);
    VarT<T> vmc = constant(tp, valid_mask);
    const Tensor4T<T>& fv = flow.value();
    const Tensor4T<T>& av = alpha.value();
    const Tensor4T<T>& bv = beta2.value();

    double acc = 0.0;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (valid_mask.at(n, 0, y, x) == T(0)) continue;
                const double a = static_cast<double>(av.at(n, 0, y, x));
                const double b2 = static_cast<double>(bv.at(n, 0, y, x));
                for (int d = 0; d < 2; ++d) {
                    const double e = std::abs(static_cast<double>(gt.at(n, d, y, x)) -
                                              static_cast<double>(fv.at(n, d, y, x)));
                    const double lp1 = -e - detail::kLog2;
                    const double lp2 = -e * std::exp(-b2) - b2 - detail::kLog2;
                    const double t1 = (a > 0.0) ? std::log(a) + lp1 : -INFINITY;
                    const double t2 = (a < 1.0) ? std::log1p(-a) + lp2 : -INFINITY;
                    const double m = std::max(t1, t2);
                    acc += m + std::log(std::exp(t1 - m) + std::exp(t2 - m));
                }
            }
    Tensor4T<T> out(1, 1, 1, 1);
    out.data[0] = static_cast<T>(-acc / (2.0 * static_cast<double>(V)));

    const int fid = flow.id, aid = alpha.id, bid = beta2.id, gid = gtc.id, mid = vmc.id;
    bool ng = flow.needs_grad() || alpha.needs_grad() || beta2.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const T gout = t.grad(self).data[0];
        const Tensor4T<T>& f = t.value(fid);
        const Tensor4T<T>& a = t.value(aid);
        const Tensor4T<T>& b = t.value(bid);
        const Tensor4T<T>& g = t.value(gid);
        const Tensor4T<T>& vm = t.value(mid);
        const T c = -gout / (T(2) * T(V));
        const bool nf = t.needs_grad(fid), na = t.needs_grad(aid), nb = t.needs_grad(bid);
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    if (vm.at(n, 0, y, x) == T(0)) continue;
                    const T av_ = a.at(n, 0, y, x);
                    const T b2 = b.at(n, 0, y, x);
                    const T eb = std::exp(-b2);
                    T da = 0, db = 0;
                    for (int d = 0; d < 2; ++d) {
                        const T e = g.at(n, d, y, x) - f.at(n, d, y, x);
                        const T ae = std::abs(e);
                        const T sgn = (e > T(0)) ? T(1) : (e < T(0) ? T(-1) : T(0));
                        const T lp1 = -ae - T(detail::kLog2);
                        const T lp2 = -ae * eb - b2 - T(detail::kLog2);
                        const T t1 = (av_ > T(0)) ? std::log(av_) + lp1 : T(-INFINITY);
                        const T t2 = (av_ < T(1)) ? std::log1p(-av_) + lp2 : T(-INFINITY);
                        const T m = std::max(t1, t2);
                        const T mix = m + std::log(std::exp(t1 - m) + std::exp(t2 - m));
                        const T w1 = (av_ > T(0)) ? std::exp(t1 - mix) : T(0);
                        const T w2 = (av_ < T(1)) ? std::exp(t2 - mix) : T(0);
                        if (nf)
                            t.grad_mut(fid).at(n, d, y, x) += c * sgn * (w1 + w2 * eb);
                        da += detail::exp_capped(lp1 - mix) - detail::exp_capped(lp2 - mix);
                        db += w2 * (ae * eb - T(1));
                    }
                    if (na) t.grad_mut(aid).at(n, 0, y, x) += c * da;
                    if (nb) t.grad_mut(bid).at(n, 0, y, x) += c * db;
                }
    });
    return {&tp, id};
}

// Single-Laplace NLL (the "naive" probabilistic loss). The scale is regressed
// in log space; both directions share it. Normalized per pixel:
// (1/V) * sum over valid pixels of (log 2b + |e|_1 / (2b)).
template <typename T>
VarT<T> naive_laplace_nll(VarT<T> flow, VarT<T> log_b, const Tensor4T<T>& gt,
                          const Tensor4T<T>& valid_mask) {
    TapeT<T>& tp = *flow.tape;
    detail::check_loss_inputs(flow.value(), gt, valid_mask, "naive_laplace_nll");
    const std::array<int, 4> fshape = flow.value().shape;
    if (log_b.shape() != std::array<int, 4>{fshape[0], 1, fshape[2], fshape[3]})
        throw std::invalid_argument("naive_laplace_nll: bad log_b shape");
    if (!log_b.value().all_finite())
        throw std::invalid_argument("naive_laplace_nll: non-finite log_b");
    const long V = detail::count_valid(valid_mask, "naive_laplace_nll");
    const int N = fshape[0], H = fshape[2], W = fshape[3];

    VarT<T> gtc = constant(tp, gt);
    VarT<T> vmc = constant(tp, valid_mask);
    const Tensor4T<T>& fv = flow.value();
    const Tensor4T<T>& lb = log_b.value();

    double acc = 0.0;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (valid_mask.at(n, 0, y, x) == T(0)) continue;
                const double l = static_cast<double>(lb.at(n, 0, y, x));
                double l1 = 0.0;
                for (int d = 0; d < 2; ++d)
                    l1 += std::abs(static_cast<double>(gt.at(n, d, y, x)) -
                                   static_cast<double>(fv.at(n, d, y, x)));
                acc += detail::kLog2 + l + 0.5 * l1 * std::exp(-l);
            }
    Tensor4T<T> out(1, 1, 1, 1);
    out.data[0] = static_cast<T>(acc / static_cast<double>(V));

    const int fid = flow.id, lid = log_b.id, gid = gtc.id, mid = vmc.id;
    bool ng = flow.needs_grad() || log_b.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const T gout = t.grad(self).data[0];
        const Tensor4T<T>& f = t.value(fid);
        const Tensor4T<T>& l = t.value(lid);
        const Tensor4T<T>& g = t.value(gid);
        const Tensor4T<T>& vm = t.value(mid);
        const T c = gout / T(V);
        const bool nf = t.needs_grad(fid), nl = t.needs_grad(lid);
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    if (vm.at(n, 0, y, x) == T(0)) continue;
                    const T el = std::exp(-l.at(n, 0, y, x));
                    T l1 = 0;
                    for (int d = 0; d < 2; ++d) {
                        const T e = g.at(n, d, y, x) - f.at(n, d, y, x);
                        l1 += std::abs(e);
                        const T sgn = (e > T(0)) ? T(1) : (e < T(0) ? T(-1) : T(0));
                        if (nf) t.grad_mut(fid).at(n, d, y, x) += c * (-sgn * el * T(0.5));
                    }
                    if (nl) t.grad_mut(lid).at(n, 0, y, x) += c * (T(1) - T(0.5) * l1 * el);
                }
    });
    return {&tp, id};
}

// Mixture of two Laplace components with both scales free (in log space).
// Used by the ablation harness; shares the MoL normalization.
template <typename T>
VarT<T> naive_mol_nll(VarT<T> flow, VarT<T> alpha, VarT<T> beta1, VarT<T> beta2,
                      const Tensor4T<T>& gt, const Tensor4T<T>& valid_mask) {
    TapeT<T>& tp = *flow.tape;
    detail::check_loss_inputs(flow.value(), gt, valid_mask, "naive_mol_nll");
    const std::array<int, 4> fshape = flow.value().shape;
    const std::array<int, 4> ps{fshape[0], 1, fshape[2], fshape[3]};
    if (alpha.shape() != ps || beta1.shape() != ps || beta2.shape() != ps)
        throw std::invalid_argument("naive_mol_nll: parameter shape mismatch");
    if (!alpha.value().all_finite() || !beta1.value().all_finite() ||
        !beta2.value().all_finite())
        throw std::invalid_argument("naive_mol_nll: non-finite parameters");
    const long V = detail::count_valid(valid_mask, "naive_mol_nll");
    const int N = fshape[0], H = fshape[2], W = fshape[3];

    VarT<T> gtc = constant(tp, gt);
    VarT<T> vmc = constant(tp, valid_mask);
    const Tensor4T<T>& fv = flow.value();
    const Tensor4T<T>& av = alpha.value();
    const Tensor4T<T>& b1v = beta1.value();
    const Tensor4T<T>& b2v = beta2.value();

    double acc = 0.0;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (valid_mask.at(n, 0, y, x) == T(0)) continue;
                const double a = static_cast<double>(av.at(n, 0, y, x));
                const double b1 = static_cast<double>(b1v.at(n, 0, y, x));
                const double b2 = static_cast<double>(b2v.at(n, 0, y, x));
                for (int d = 0; d < 2; ++d) {
                    const double e = std::abs(static_cast<double>(gt.at(n, d, y, x)) -
                                              static_cast<double>(fv.at(n, d, y, x)));
                    const double lp1 = -e * std::exp(-b1) - b1 - detail::kLog2;
                    const double lp2 = -e * std::exp(-b2) - b2 - detail::kLog2;
                    const double t1 = (a > 0.0) ? std::log(a) + lp1 : -INFINITY;
                    const double t2 = (a < 1.0) ? std::log1p(-a) + lp2 : -INFINITY;
                    const double m = std::max(t1, t2);
                    acc += m + std::log(std::exp(t1 - m) + std::exp(t2 - m));
                }
            }
    Tensor4T<T> out(1, 1, 1, 1);
    out.data[0] = static_cast<T>(-acc / (2.0 * static_cast<double>(V)));

    const int fid = flow.id, aid = alpha.id, b1id = beta1.id, b2id = beta2.id;
    const int gid = gtc.id, mid = vmc.id;
    bool ng = flow.needs_grad() || alpha.needs_grad() || beta1.needs_grad() || beta2.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const T gout = t.grad(self).data[0];
        const Tensor4T<T>& f = t.value(fid);
        const Tensor4T<T>& a = t.value(aid);
        const Tensor4T<T>& b1 = t.value(b1id);
        const Tensor4T<T>& b2 = t.value(b2id);
        const Tensor4T<T>& g = t.value(gid);
        const Tensor4T<T>& vm = t.value(mid);
        const T c = -gout / (T(2) * T(V));
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    if (vm.at(n, 0, y, x) == T(0)) continue;
                    const T av_ = a.at(n, 0, y, x);
                    const T eb1 = std::exp(-b1.at(n, 0, y, x));
                    const T eb2 = std::exp(-b2.at(n, 0, y, x));
                    T da = 0, db1 = 0, db2 = 0;
                    for (int d = 0; d < 2; ++d) {
                        const T e = g.at(n, d, y, x) - f.at(n, d, y, x);
                        const T ae = std::abs(e);
                        const T sgn = (e > T(0)) ? T(1) : (e < T(0) ? T(-1) : T(0));
                        const T lp1 = -ae * eb1 - b1.at(n, 0, y, x) - T(detail::kLog2);
                        const T lp2 = -ae * eb2 - b2.at(n, 0, y, x) - T(detail::kLog2);
                        const T t1 = (av_ > T(0)) ? std::log(av_) + lp1 : T(-INFINITY);
                        const T t2 = (av_ < T(1)) ? std::log1p(-av_) + lp2 : T(-INFINITY);
                        const T m = std::max(t1, t2);
                        const T mix = m + std::log(std::exp(t1 - m) + std::exp(t2 - m));
                        const T w1 = (av_ > T(0)) ? std::exp(t1 - mix) : T(0);
                        const T w2 = (av_ < T(1)) ? std::exp(t2 - mix) : T(0);
                        if (t.needs_grad(fid))
                            t.grad_mut(fid).at(n, d, y, x) += c * sgn * (w1 * eb1 + w2 * eb2);
                        da += detail::exp_capped(lp1 - mix) - detail::exp_capped(lp2 - mix);
                        db1 += w1 * (ae * eb1 - T(1));
                        db2 += w2 * (ae * eb2 - T(1));
                    }
                    if (t.needs_grad(aid)) t.grad_mut(aid).at(n, 0, y, x) += c * da;
                    if (t.needs_grad(b1id)) t.grad_mut(b1id).at(n, 0, y, x) += c * db1;
                    if (t.needs_grad(b2id)) t.grad_mut(b2id).at(n, 0, y, x) += c * db2;
                }
    });
    return {&tp, id};
}

// Mixture-of-Gaussian NLL: sigma1 fixed at 1, sigma2 = exp(beta2).
template <typename T>
VarT<T> mog_nll(VarT<T> flow, VarT<T> alpha, VarT<T> beta2, const Tensor4T<T>& gt,
                const Tensor4T<T>& valid_mask) {
    TapeT<T>& tp = *flow.tape;
    detail::check_loss_inputs(flow.value(), gt, valid_mask, "mog_nll");
    const std::array<int, 4> fshape = flow.value().shape;
    const std::array<int, 4> ps{fshape[0], 1, fshape[2], fshape[3]};
    if (alpha.shape() != ps || beta2.shape() != ps)
        throw std::invalid_argument("mog_nll: parameter shape mismatch");
    if (!alpha.value().all_finite() || !beta2.value().all_finite())
        throw std::invalid_argument("mog_nll: non-finite parameters");
    const long V = detail::count_valid(valid_mask, "mog_nll");
    const int N = fshape[0], H = fshape[2], W = fshape[3];

    VarT<T> gtc = constant(tp, gt);
    VarT<T> vmc = constant(tp, valid_mask);
    const Tensor4T<T>& fv = flow.value();
    const Tensor4T<T>& av = alpha.value();
    const Tensor4T<T>& bv = beta2.value();

    double acc = 0.0;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (valid_mask.at(n, 0, y, x) == T(0)) continue;
                const double a = static_cast<double>(av.at(n, 0, y, x));
                const double b2 = static_cast<double>(bv.at(n, 0, y, x));
                for (int d = 0; d < 2; ++d) {
                    const double e = static_cast<double>(gt.at(n, d, y, x)) -
                                     static_cast<double>(fv.at(n, d, y, x));
                    const double lp1 = -0.5 * e * e - detail::kHalfLog2Pi;
                    const double s2 = std::exp(-2.0 * b2);
                    const double lp2 = -0.5 * e * e * s2 - b2 - detail::kHalfLog2Pi;
                    const double t1 = (a > 0.0) ? std::log(a) + lp1 : -INFINITY;
                    const double t2 = (a < 1.0) ? std::log1p(-a) + lp2 : -INFINITY;
                    const double m = std::max(t1, t2);
                    acc += m + std::log(std::exp(t1 - m) + std::exp(t2 - m));
                }
            }
    Tensor4T<T> out(1, 1, 1, 1);
    out.data[0] = static_cast<T>(-acc / (2.0 * static_cast<double>(V)));

    const int fid = flow.id, aid = alpha.id, bid = beta2.id, gid = gtc.id, mid = vmc.id;
    bool ng = flow.needs_grad() || alpha.needs_grad() || beta2.needs_grad();
    int id = tp.add(std::move(out), ng, [=](TapeT<T>& t, int self) {
        const T gout = t.grad(self).data[0];
        const Tensor4T<T>& f = t.value(fid);
        const Tensor4T<T>& a = t.value(aid);
        const Tensor4T<T>& b = t.value(bid);
        const Tensor4T<T>& g = t.value(gid);
        const Tensor4T<T>& vm = t.value(mid);
        const T c = -gout / (T(2) * T(V));
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    if (vm.at(n, 0, y, x) == T(0)) continue;
                    const T av_ = a.at(n, 0, y, x);
                    const T b2 = b.at(n, 0, y, x);
                    const T s2 = std::exp(T(-2) * b2);
                    T da = 0, db = 0;
                    for (int d = 0; d < 2; ++d) {
                        const T e = g.at(n, d, y, x) - f.at(n, d, y, x);
                        const T lp1 = T(-0.5) * e * e - T(detail::kHalfLog2Pi);
                        const T lp2 = T(-0.5) * e * e * s2 - b2 - T(detail::kHalfLog2Pi);
                        const T t1 = (av_ > T(0)) ? std::log(av_) + lp1 : T(-INFINITY);
                        const T t2 = (av_ < T(1)) ? std::log1p(-av_) + lp2 : T(-INFINITY);
                        const T m = std::max(t1, t2);
                        const T mix = m + std::log(std::exp(t1 - m) + std::exp(t2 - m));
                        const T w1 = (av_ > T(0)) ? std::exp(t1 - mix) : T(0);
                        const T w2 = (av_ < T(1)) ? std::exp(t2 - mix) : T(0);
                        if (t.needs_grad(fid))
                            t.grad_mut(fid).at(n, d, y, x) += c * e * (w1 + w2 * s2);
                        da += detail::exp_capped(lp1 - mix) - detail::exp_capped(lp2 - mix);
                        db += w2 * (e * e * s2 - T(1));
                    }
                    if (t.needs_grad(aid)) t.grad_mut(aid).at(n, 0, y, x) += c * da;
                    if (t.needs_grad(bid)) t.grad_mut(bid).at(n, 0, y, x) += c * db;
                }
    });
    return {&tp, id};
}

// Mean over valid pixels of the L1 norm of the flow residual. Subgradient at
// an exact match is taken as zero, so perfect fits are stationary.
template <typename T>
VarT<T> l1_loss(VarT<T> flow, const Tensor4T<T>& gt, const Tensor4T<T>& valid_mask) {
    TapeT<T>& tp = *flow.tape;
    detail::check_loss_inputs(flow.value(), gt, valid_mask, "l1_loss");
    const std::array<int, 4> fshape = flow.value().shape;
    const long V = detail::count_valid(valid_mask, "l1_loss");
    const int N = fshape[0], H = fshape[2], W = fshape[3];

    VarT<T> gtc = constant(tp, gt);
    VarT<T> vmc = constant(tp, valid_mask);
    const Tensor4T<T>& fv = flow.value();

    double acc = 0.0;
    for (int n = 0; n < N; ++n)
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                if (valid_mask.at(n, 0, y, x) == T(0)) continue;
                for (int d = 0; d < 2; ++d)
                    acc += std::abs(static_cast<double>(gt.at(n, d, y, x)) -
                                    static_cast<double>(fv.at(n, d, y, x)));
            }
    Tensor4T<T> out(1, 1, 1, 1);
    out.data[0] = static_cast<T>(acc / static_cast<double>(V));

    const int fid = flow.id, gid = gtc.id, mid = vmc.id;
    int id = tp.add(std::move(out), flow.needs_grad(), [=](TapeT<T>& t, int self) {
        if (!t.needs_grad(fid)) return;
        const T gout = t.grad(self).data[0];
        const Tensor4T<T>& f = t.value(fid);
        const Tensor4T<T>& g = t.value(gid);
        const Tensor4T<T>& vm = t.value(mid);
        Tensor4T<T>& df = t.grad_mut(fid);
        const T c = gout / T(V);
        for (int n = 0; n < N; ++n)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x) {
                    if (vm.at(n, 0, y, x) == T(0)) continue;
                    for (int d = 0; d < 2; ++d) {
                        const T e = g.at(n, d, y, x) - f.at(n, d, y, x);
                        const T sgn = (e > T(0)) ? T(1) : (e < T(0) ? T(-1) : T(0));
                        df.at(n, d, y, x) += -c * sgn;
                    }
                }
    });
    return {&tp, id};
}

// Exponentially weighted sum over per-iteration losses: sum_i gamma^(N-i) L_i,
// ordered from the initial prediction (i = 0) to the final one (i = N).
template <typename T>
VarT<T> sequence_loss(const std::vector<VarT<T>>& per_iteration, double gamma) {
    if (per_iteration.empty()) throw std::invalid_argument("sequence_loss: empty loss list");
    if (!(gamma > 0.0) || gamma > 1.0)
        throw std::invalid_argument("sequence_loss: gamma must be in (0,1]");
    const int last = static_cast<int>(per_iteration.size()) - 1;
    std::vector<double> weights(per_iteration.size());
    for (int i = 0; i <= last; ++i) weights[static_cast<size_t>(i)] = std::pow(gamma, last - i);
    return weighted_sum(per_iteration, weights);
}

// Plain (non-tape) sequence combination for logging and tests.
inline double sequence_loss_value(const std::vector<double>& losses, double gamma) {
    if (losses.empty()) throw std::invalid_argument("sequence_loss: empty loss list");
    if (!(gamma > 0.0) || gamma > 1.0)
        throw std::invalid_argument("sequence_loss: gamma must be in (0,1]");
    double acc = 0.0;
    const int last = static_cast<int>(losses.size()) - 1;
    for (int i = 0; i <= last; ++i) acc += std::pow(gamma, last - i) * losses[static_cast<size_t>(i)];
    return acc;
}

}  // namespace iterflow
