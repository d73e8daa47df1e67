// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Randomized finite-difference sweep over every differentiable primitive and
// every loss. Shared by the unit tests and the acceptance suite.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "common/gradcheck.hpp"
#include "iterflow/corr.hpp"
#include "iterflow/loss.hpp"
#include "iterflow/ops.hpp"

namespace iterflow::testing {

struct SuiteEntry {
    std::string name;
    GradCheckResult worst;
    int instances = 0;
};

namespace detail {

using DVar = VarT<double>;
using DTape = TapeT<double>;

inline void run_case(std::vector<SuiteEntry>& out, const std::string& name, int instances,
                     uint64_t seed0,
                     const std::function<GradCheckResult(Rng&, uint64_t)>& instance) {
    SuiteEntry e;
    e.name = name;
    e.instances = instances;
    for (int i = 0; i < instances; ++i) {
        Rng rng(hash_combine(seed0, static_cast<uint64_t>(i) * 977 + 13));
        GradCheckResult r = instance(rng, hash_combine(seed0, static_cast<uint64_t>(i)));
        if (r.max_rel > e.worst.max_rel) e.worst.max_rel = r.max_rel;
        if (!r.ok && e.worst.ok) {
            e.worst.ok = false;
            e.worst.detail = r.detail;
        }
    }
    out.push_back(std::move(e));
}

}  // namespace detail

// Every tensorops primitive, randomized instances, double precision,
// rel. tolerance 1e-4 at step 1e-5.
inline std::vector<SuiteEntry> run_primitive_grad_suite(int instances, uint64_t seed0 = 42) {
    using detail::DTape;
    using detail::DVar;
    std::vector<SuiteEntry> out;
    const double tol = 1e-4, step = 1e-5;

    detail::run_case(out, "conv2d", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int n = 1 + static_cast<int>(rng.below(2));
        const int c = 1 + static_cast<int>(rng.below(3));
        const int o = 1 + static_cast<int>(rng.below(3));
        const int k = rng.below(2) ? 3 : 1;
        const int stride = 1 + static_cast<int>(rng.below(2));
        const int pad = k == 3 ? static_cast<int>(rng.below(2)) : 0;
        const int h = k + 1 + static_cast<int>(rng.below(3));
        const int w = k + 1 + static_cast<int>(rng.below(3));
        return check_gradients(
            {rand_tensor(n, c, h, w, rng), rand_tensor(o, c, k, k, rng),
             rand_tensor(1, o, 1, 1, rng)},
            [=](DTape& t, std::vector<DVar>& v) {
                return sum_all(gelu(conv2d(v[0], v[1], v[2], stride, pad)));
            },
            tol, step, 18, ps);
    });

    detail::run_case(out, "depthwise_conv2d", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int c = 1 + static_cast<int>(rng.below(4));
        const int h = 4 + static_cast<int>(rng.below(3));
        return check_gradients(
            {rand_tensor(1, c, h, h, rng), rand_tensor(c, 1, 3, 3, rng),
             rand_tensor(1, c, 1, 1, rng)},
            [=](DTape& t, std::vector<DVar>& v) {
                return sum_all(gelu(depthwise_conv2d(v[0], v[1], v[2], 1, 1)));
            },
            tol, step, 18, ps);
    });

    detail::run_case(out, "avg_pool2", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int h = 5 + static_cast<int>(rng.below(4));  // both divisible and ragged
        const int w = 5 + static_cast<int>(rng.below(4));
        const int f = rng.below(2) ? 2 : 4;
        return check_gradients({rand_tensor(1, 2, h, w, rng)},
                               [=](DTape& t, std::vector<DVar>& v) {
                                   return sum_all(gelu(avg_pool2(v[0], f)));
                               },
                               tol, step, 20, ps);
    });

    detail::run_case(out, "grid_sample", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int h = 5, w = 6;
        Tensor4d coords(1, 2, 3, 3);
        for (int i = 0; i < 9; ++i) {
            // fractional offsets >= 0.3 from the integer lattice, inside the map
            coords.data[static_cast<size_t>(i)] =
                rng.below(static_cast<uint64_t>(w - 2)) + 0.3 + 0.4 * rng.uniform();
            coords.data[static_cast<size_t>(9 + i)] =
                rng.below(static_cast<uint64_t>(h - 2)) + 0.3 + 0.4 * rng.uniform();
        }
        return check_gradients({rand_tensor(1, 2, h, w, rng), coords},
                               [=](DTape& t, std::vector<DVar>& v) {
                                   return sum_all(gelu(grid_sample(v[0], v[1])));
                               },
                               tol, step, 20, ps);
    });

    auto pointwise_case = [&](const std::string& name, auto opfn) {
        detail::run_case(out, name, instances, seed0, [&, opfn](Rng& rng, uint64_t ps) {
            return check_gradients({rand_tensor(1, 3, 4, 4, rng, -2.0, 2.0)},
                                   [=](DTape& t, std::vector<DVar>& v) {
                                       return sum_all(mul(opfn(v[0]), opfn(v[0])));
                                   },
                                   tol, step, 20, ps);
        });
    };
    pointwise_case("gelu", [](DVar x) { return gelu(x); });
    pointwise_case("sigmoid", [](DVar x) { return sigmoid(x); });
    pointwise_case("tanh", [](DVar x) { return iterflow::tanh(x); });

    detail::run_case(out, "clamp", instances, seed0, [&](Rng& rng, uint64_t ps) {
        // interior points only; the boundary policy has its own unit test
        return check_gradients({rand_tensor(1, 2, 4, 4, rng, -0.8, 0.8)},
                               [](DTape& t, std::vector<DVar>& v) {
                                   return sum_all(gelu(clamp(v[0], -1.0, 1.0)));
                               },
                               tol, step, 20, ps);
    });

    detail::run_case(out, "instance_norm", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int c = 1 + static_cast<int>(rng.below(3));
        return check_gradients(
            {rand_tensor(2, c, 4, 5, rng), rand_tensor(1, c, 1, 1, rng, 0.5, 1.5),
             rand_tensor(1, c, 1, 1, rng)},
            [](DTape& t, std::vector<DVar>& v) {
                return sum_all(gelu(instance_norm(v[0], v[1], v[2])));
            },
            tol, step, 18, ps);
    });

    detail::run_case(out, "channel_norm", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int c = 2 + static_cast<int>(rng.below(3));
        return check_gradients(
            {rand_tensor(2, c, 3, 4, rng), rand_tensor(1, c, 1, 1, rng, 0.5, 1.5),
             rand_tensor(1, c, 1, 1, rng)},
            [](DTape& t, std::vector<DVar>& v) {
                return sum_all(gelu(channel_norm(v[0], v[1], v[2])));
            },
            tol, step, 18, ps);
    });

    detail::run_case(out, "add_mul_scale", instances, seed0, [&](Rng& rng, uint64_t ps) {
        return check_gradients(
            {rand_tensor(1, 2, 3, 3, rng), rand_tensor(1, 2, 3, 3, rng)},
            [](DTape& t, std::vector<DVar>& v) {
                return sum_all(mul(add(v[0], scale(v[1], 0.7)), v[1]));
            },
            tol, step, 18, ps);
    });

    detail::run_case(out, "concat_slice", instances, seed0, [&](Rng& rng, uint64_t ps) {
        return check_gradients(
            {rand_tensor(1, 2, 3, 3, rng), rand_tensor(1, 3, 3, 3, rng)},
            [](DTape& t, std::vector<DVar>& v) {
                VarT<double> cc = concat_channels<double>({v[0], v[1]});
                return sum_all(gelu(slice_channels(cc, 1, 3)));
            },
            tol, step, 18, ps);
    });

    detail::run_case(out, "softmax_groups", instances, seed0, [&](Rng& rng, uint64_t ps) {
        return check_gradients({rand_tensor(1, 6, 3, 3, rng, -2.0, 2.0),
                                rand_tensor(1, 6, 3, 3, rng)},
                               [](DTape& t, std::vector<DVar>& v) {
                                   return sum_all(mul(softmax_groups(v[0], 3), v[1]));
                               },
                               tol, step, 18, ps);
    });

    detail::run_case(out, "resize_bilinear", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int ho = 3 + static_cast<int>(rng.below(6));
        const int wo = 3 + static_cast<int>(rng.below(6));
        return check_gradients({rand_tensor(1, 2, 4, 5, rng)},
                               [=](DTape& t, std::vector<DVar>& v) {
                                   return sum_all(gelu(resize_bilinear(v[0], ho, wo)));
                               },
                               tol, step, 20, ps);
    });

    detail::run_case(out, "resize_nearest", instances, seed0, [&](Rng& rng, uint64_t ps) {
        return check_gradients({rand_tensor(1, 2, 4, 4, rng)},
                               [](DTape& t, std::vector<DVar>& v) {
                                   return sum_all(gelu(resize_nearest(v[0], 7, 6)));
                               },
                               tol, step, 20, ps);
    });

    detail::run_case(out, "correlation", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int d = 2 + static_cast<int>(rng.below(3));
        return check_gradients(
            {rand_tensor(1, d, 3, 3, rng), rand_tensor(1, d, 2, 2, rng)},
            [=](DTape& t, std::vector<DVar>& v) {
                return sum_all(gelu(correlation(v[0], v[1], 1.0 / std::sqrt(d))));
            },
            tol, step, 18, ps);
    });

    detail::run_case(out, "lookup_coords", instances, seed0, [&](Rng& rng, uint64_t ps) {
        return check_gradients({rand_tensor(1, 2, 3, 3, rng, -1.5, 1.5)},
                               [](DTape& t, std::vector<DVar>& v) {
                                   return sum_all(gelu(lookup_coords(v[0], 0.5, 1)));
                               },
                               tol, step, 18, ps);
    });

    detail::run_case(out, "lookup_full", instances, seed0, [&](Rng& rng, uint64_t ps) {
        // flow gradients through the whole pyramid + lookup chain,
        // away from integer-lattice kinks
        const int d = 3, h = 4, w = 4;
        Tensor4d flow(1, 2, h, w);
        for (double& v : flow.data) {
            v = rng.uniform(-1.2, 1.2);
            const double fr = v - std::floor(v);
            if (fr < 0.3) v += 0.3;
            if (fr > 0.7) v -= 0.25;
        }
        return check_gradients(
            {rand_tensor(1, d, h, w, rng), rand_tensor(1, d, h, w, rng), flow},
            [=](DTape& t, std::vector<DVar>& v) {
                CorrPyramidT<double> pyr = build_pyramid(v[0], v[1], 2);
                return sum_all(gelu(lookup(pyr, v[2], LookupConfig{1, 2})));
            },
            tol, step, 16, ps);
    });

    detail::run_case(out, "convex_upsample", instances, seed0, [&](Rng& rng, uint64_t ps) {
        const int f = 2;
        return check_gradients(
            {rand_tensor(1, 2, 2, 3, rng), rand_tensor(1, f * f * 9, 2, 3, rng, -1.5, 1.5)},
            [=](DTape& t, std::vector<DVar>& v) {
                return sum_all(gelu(convex_upsample(v[0], softmax_groups(v[1], 9), f, f)));
            },
            tol, step, 18, ps);
    });

    detail::run_case(out, "stop_gradient_skip", instances, seed0, [&](Rng& rng, uint64_t ps) {
        // d(out)/dx must come only from the live branch: out = stop(x)*x
        // behaves as c*x with c frozen at x's value.
        Tensor4d x = rand_tensor(1, 1, 2, 2, rng);
        TapeT<double> tape;
        VarT<double> xv = leaf(tape, x);
        VarT<double> y = sum_all(mul(stop_gradient(xv), xv));
        Tensor4d seed(1, 1, 1, 1);
        seed.data[0] = 1.0;
        tape.backward(y.id, seed);
        GradCheckResult r;
        for (size_t i = 0; i < x.numel(); ++i) {
            const double expect = x.data[i];  // not 2x: the stopped branch is constant
            const double rel = std::abs(xv.grad().data[i] - expect) / std::max(1.0, std::abs(expect));
            r.max_rel = std::max(r.max_rel, rel);
            if (rel > 1e-12) {
                r.ok = false;
                r.detail = "stop_gradient leaked";
            }
        }
        (void)ps;
        return r;
    });

    detail::run_case(out, "sum_weighted", instances, seed0, [&](Rng& rng, uint64_t ps) {
        return check_gradients(
            {rand_tensor(1, 1, 2, 2, rng), rand_tensor(1, 1, 2, 2, rng)},
            [](DTape& t, std::vector<DVar>& v) {
                std::vector<VarT<double>> parts{sum_all(gelu(v[0])), sum_all(mul(v[1], v[1]))};
                return weighted_sum(parts, {0.8, 1.0});
            },
            tol, step, 18, ps);
    });

    return out;
}

// All losses, gradients w.r.t. flow and mixture parameters, evaluated away
// from the L1 kink (|e| >= 0.1) and away from clamp boundaries.
inline std::vector<SuiteEntry> run_loss_grad_suite(int instances, uint64_t seed0 = 43) {
    using detail::DTape;
    using detail::DVar;
    std::vector<SuiteEntry> out;
    const double tol = 1e-5, step = 1e-5;
    const int h = 3, w = 4;

    auto make_gt = [&](Rng& rng, const Tensor4d& flow) {
        Tensor4d gt = flow;
        for (double& v : gt.data) {
            const double sgn = rng.below(2) ? 1.0 : -1.0;
            v += sgn * (0.2 + 1.5 * rng.uniform());
        }
        return gt;
    };
    auto ones_mask = [&]() {
        Tensor4d m(1, 1, h, w);
        m.fill(1.0);
        return m;
    };

    detail::run_case(out, "loss.mol", instances, seed0, [&](Rng& rng, uint64_t ps) {
        Tensor4d flow = rand_tensor(1, 2, h, w, rng, -2, 2);
        Tensor4d gt = make_gt(rng, flow);
        Tensor4d mask = ones_mask();
        mask.data[0] = 0.0;  // exercise the valid-mask path
        return check_gradients(
            {flow, rand_tensor(1, 1, h, w, rng, 0.15, 0.85), rand_tensor(1, 1, h, w, rng, 0.5, 8.0)},
            [=](DTape& t, std::vector<DVar>& v) { return mol_nll(v[0], v[1], v[2], gt, mask); },
            tol, step, 24, ps);
    });

    detail::run_case(out, "loss.naive_laplace", instances, seed0, [&](Rng& rng, uint64_t ps) {
        Tensor4d flow = rand_tensor(1, 2, h, w, rng, -2, 2);
        Tensor4d gt = make_gt(rng, flow);
        return check_gradients(
            {flow, rand_tensor(1, 1, h, w, rng, -3.0, 3.0)},
            [=, m = ones_mask()](DTape& t, std::vector<DVar>& v) {
                return naive_laplace_nll(v[0], v[1], gt, m);
            },
            tol, step, 24, ps);
    });

    detail::run_case(out, "loss.naive_mol", instances, seed0, [&](Rng& rng, uint64_t ps) {
        Tensor4d flow = rand_tensor(1, 2, h, w, rng, -2, 2);
        Tensor4d gt = make_gt(rng, flow);
        return check_gradients(
            {flow, rand_tensor(1, 1, h, w, rng, 0.15, 0.85), rand_tensor(1, 1, h, w, rng, -2.0, 2.0),
             rand_tensor(1, 1, h, w, rng, 0.5, 5.0)},
            [=, m = ones_mask()](DTape& t, std::vector<DVar>& v) {
                return naive_mol_nll(v[0], v[1], v[2], v[3], gt, m);
            },
            tol, step, 20, ps);
    });

    detail::run_case(out, "loss.mog", instances, seed0, [&](Rng& rng, uint64_t ps) {
        Tensor4d flow = rand_tensor(1, 2, h, w, rng, -2, 2);
        Tensor4d gt = make_gt(rng, flow);
        return check_gradients(
            {flow, rand_tensor(1, 1, h, w, rng, 0.15, 0.85), rand_tensor(1, 1, h, w, rng, 0.5, 8.0)},
            [=, m = ones_mask()](DTape& t, std::vector<DVar>& v) {
                return mog_nll(v[0], v[1], v[2], gt, m);
            },
            tol, step, 24, ps);
    });

    detail::run_case(out, "loss.l1", instances, seed0, [&](Rng& rng, uint64_t ps) {
        Tensor4d flow = rand_tensor(1, 2, h, w, rng, -2, 2);
        Tensor4d gt = make_gt(rng, flow);
        return check_gradients({flow},
                               [=, m = ones_mask()](DTape& t, std::vector<DVar>& v) {
                                   return l1_loss(v[0], gt, m);
                               },
                               tol, step, 24, ps);
    });

    detail::run_case(out, "loss.sequence", instances, seed0, [&](Rng& rng, uint64_t ps) {
        Tensor4d flow = rand_tensor(1, 2, h, w, rng, -2, 2);
        Tensor4d gt = make_gt(rng, flow);
        return check_gradients(
            {flow, rand_tensor(1, 1, h, w, rng, 0.15, 0.85), rand_tensor(1, 1, h, w, rng, 0.5, 8.0)},
            [=, m = ones_mask()](DTape& t, std::vector<DVar>& v) {
                std::vector<VarT<double>> ls{mol_nll(v[0], v[1], v[2], gt, m),
                                             l1_loss(v[0], gt, m)};
                return sequence_loss(ls, 0.8);
            },
            tol, step, 20, ps);
    });

    return out;
}

}  // namespace iterflow::testing
