// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Shared 16x16 toy-model fixture and the end-to-end finite-difference check
// over the full training loss (model forward + MoL sequence loss).

#pragma once

#include <memory>
#include <sstream>
#include <string>

#include "common/gradcheck.hpp"
#include "iterflow/model.hpp"

namespace iterflow::testing {

inline ModelConfig toy_model_config() {
    ModelConfig mc;
    mc.feature_dim = 8;
    mc.hidden_dim = 8;
    mc.context_dim = 8;
    mc.motion_dim = 16;
    mc.levels = 2;
    mc.radius = 1;
    mc.iters_train = 2;
    mc.iters_max = 12;
    mc.rnn_blocks = 2;
    return mc;
}

struct E2eGradResult {
    bool ok = true;
    double max_rel = 0.0;
    long checked = 0;
    std::string detail;
};

// FD check of the total sequence loss w.r.t. model weights on a 16x16 toy
// instance. max_per_tensor < 0 checks every element of every tensor.
// Weights are nudged off their zero-initialized heads first so the check runs
// at a generic point (away from the clamp and L1 kinks).
inline E2eGradResult check_model_gradients(int max_per_tensor, uint64_t seed,
                                           double tol = 1e-3, double step = 1e-5) {
    using DT = TapeT<double>;
    ModelConfig mc = toy_model_config();
    // finite differences see through a gradient stop, so the skip detach is
    // disabled here; the stop rule itself has a dedicated exactness test
    mc.stop_flow_gradient = false;
    ParamStoreT<double> store;
    ModelT<double> model(mc, LossKind::MoL, seed, &store);

    Rng nudge(hash_combine(seed, 0xAA));
    for (size_t i = 0; i < store.size(); ++i)
        for (double& v : store.entry(i).value.data) v += nudge.uniform(-0.05, 0.05);

    const int H = 16, W = 16;
    Rng rng(hash_combine(seed, 0xBB));
    Tensor4d i1 = rand_tensor(1, 3, H, W, rng, 0.0, 1.0);
    Tensor4d i2 = rand_tensor(1, 3, H, W, rng, 0.0, 1.0);
    Tensor4d gt = rand_tensor(1, 2, H, W, rng, -2.0, 2.0);
    Tensor4d mask(1, 1, H, W);
    mask.fill(1.0);

    auto loss_value = [&](DT& tape, std::vector<VarT<double>>* leaves_out) {
        auto bound = model.bind(tape);
        if (leaves_out) *leaves_out = bound.p;
        VarT<double> v1 = constant(tape, i1);
        VarT<double> v2 = constant(tape, i2);
        auto preds = model.forward(bound, v1, v2, mc.iters_train);
        std::vector<VarT<double>> per_iter;
        for (auto& p : preds) per_iter.push_back(mol_nll(p.flow, p.alpha, p.b2, gt, mask));
        return sequence_loss(per_iter, 0.8);
    };

    // analytic gradients
    std::vector<Tensor4d> analytic;
    {
        DT tape;
        std::vector<VarT<double>> leaves;
        VarT<double> lv = loss_value(tape, &leaves);
        Tensor4d seed1(1, 1, 1, 1);
        seed1.data[0] = 1.0;
        tape.backward(lv.id, seed1);
        for (auto& l : leaves) analytic.push_back(l.grad());
    }

    auto eval = [&]() {
        DT tape;
        return loss_value(tape, nullptr).value().data[0];
    };

    E2eGradResult res;
    Rng pick(hash_combine(seed, 0xCC));
    for (size_t pi = 0; pi < store.size(); ++pi) {
        auto& entry = store.entry(pi);
        const size_t n = entry.value.numel();
        std::vector<size_t> idx;
        if (max_per_tensor < 0 || n <= static_cast<size_t>(max_per_tensor)) {
            for (size_t k = 0; k < n; ++k) idx.push_back(k);
        } else {
            for (int k = 0; k < max_per_tensor; ++k) idx.push_back(pick.below(n));
        }
        for (size_t k : idx) {
            const double keep = entry.value.data[k];
            entry.value.data[k] = keep + step;
            const double fp = eval();
            entry.value.data[k] = keep - step;
            const double fm = eval();
            entry.value.data[k] = keep;
            const double fd = (fp - fm) / (2.0 * step);
            const double a = analytic[pi].data[k];
            const double rel = std::abs(a - fd) / std::max(1.0, std::abs(fd));
            ++res.checked;
            if (rel > res.max_rel) res.max_rel = rel;
            if (rel > tol && res.ok) {
                res.ok = false;
                std::ostringstream os;
                os << entry.name << "[" << k << "]: analytic " << a << " vs fd " << fd << " (rel "
                   << rel << ")";
                res.detail = os.str();
            }
        }
    }
    return res;
}

}  // namespace iterflow::testing
