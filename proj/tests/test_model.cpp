// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "common/gradcheck.hpp"
#include "common/toymodel.hpp"
#include "iterflow/model.hpp"

using namespace iterflow;
using namespace iterflow::testing;

namespace {

struct Fixture {
    ModelConfig mc = toy_model_config();
    ParamStore store;
    Model model;
    Fixture(LossKind kind = LossKind::MoL, uint64_t seed = 11)
        : model(mc, kind, seed, &store) {}
};

}  // namespace

TEST_CASE("encode_features: factor-8 shape contract and divisibility errors") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(3);
    Var img = constant(tape, rand_tensor_f(1, 3, 64, 64, rng, 0, 1));
    Var feat = f.model.encode_features(b, img);
    CHECK(feat.value().shape == std::array<int, 4>{1, f.mc.feature_dim, 8, 8});

    Var bad = constant(tape, rand_tensor_f(1, 3, 60, 64, rng, 0, 1));
    CHECK_THROWS_AS(f.model.encode_features(b, bad), std::invalid_argument);
}

TEST_CASE("encode_features: weight sharing makes identical images identical") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(5);
    Tensor4f one = rand_tensor_f(1, 3, 16, 16, rng, 0, 1);
    Tensor4f two(2, 3, 16, 16);
    std::copy(one.data.begin(), one.data.end(), two.data.begin());
    std::copy(one.data.begin(), one.data.end(), two.data.begin() + one.numel());
    Var feat = f.model.encode_features(b, constant(tape, two));
    const auto& fv = feat.value();
    const size_t half = fv.numel() / 2;
    for (size_t i = 0; i < half; ++i) CHECK(fv.data[i] == fv.data[half + i]);
}

TEST_CASE("encode_features: non-constant input gives finite, non-constant output") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(7);
    Var img = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
    Var feat = f.model.encode_features(b, img);
    CHECK(feat.value().all_finite());
    float lo = feat.value().data[0], hi = lo;
    for (float v : feat.value().data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    CHECK(hi - lo > 1e-4f);  // constant output would indicate dead normalization
}

TEST_CASE("encode_context: zero-initialized head regresses exactly zero flow") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(9);
    Tensor4f img = rand_tensor_f(1, 3, 16, 16, rng, 0, 1);
    Var i1 = constant(tape, img);
    Var i2 = constant(tape, img);
    auto ctx = f.model.encode_context(b, i1, i2);
    CHECK(ctx.context.value().shape == std::array<int, 4>{1, f.mc.context_dim, 2, 2});
    CHECK(ctx.init_flow.value().shape == std::array<int, 4>{1, 2, 2, 2});
    CHECK(ctx.init_raws.value().shape == std::array<int, 4>{1, 3, 2, 2});
    for (float v : ctx.init_flow.value().data) CHECK(v == 0.0f);

    Var other = constant(tape, rand_tensor_f(1, 3, 24, 16, rng, 0, 1));
    CHECK_THROWS_AS(f.model.encode_context(b, i1, other), std::invalid_argument);
}

TEST_CASE("refine_step: zero-init flow head leaves the flow unchanged") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(13);
    Var i1 = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
    Var i2 = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
    Var feat = f.model.encode_features(b, i1);
    Var feat2 = f.model.encode_features(b, i2);
    auto pyr = f.model.make_pyramid(feat, feat2);
    auto ctx = f.model.encode_context(b, i1, i2);

    RefineStateT<float> st;
    st.hidden = ctx.hidden0;
    st.context = ctx.context;
    Tensor4f flow0 = rand_tensor_f(1, 2, 2, 2, rng, -1, 1);
    st.flow = constant(tape, flow0);
    st.raws = ctx.init_raws;
    st.iteration = 0;

    auto next = f.model.refine_step(b, st, pyr);
    CHECK(next.iteration == 1);
    CHECK(next.flow.value().data == flow0.data);  // delta is exactly zero
    CHECK(next.hidden.value().shape == st.hidden.value().shape);
}

TEST_CASE("refine_step: hidden shape is a fixed point across 12 steps; cap enforced") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(17);
    Var i1 = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
    Var i2 = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
    Var fa = f.model.encode_features(b, i1);
    Var fb = f.model.encode_features(b, i2);
    auto pyr = f.model.make_pyramid(fa, fb);
    auto ctx = f.model.encode_context(b, i1, i2);

    RefineStateT<float> st;
    st.hidden = ctx.hidden0;
    st.context = ctx.context;
    st.flow = ctx.init_flow;
    st.raws = ctx.init_raws;
    const auto hshape = st.hidden.value().shape;
    for (int i = 0; i < 12; ++i) {
        st = f.model.refine_step(b, st, pyr);
        CHECK(st.hidden.value().shape == hshape);
    }
    CHECK(st.iteration == 12);
    CHECK_THROWS_AS(f.model.refine_step(b, st, pyr), std::invalid_argument);
}

TEST_CASE("refine_step: gradient reaches the incoming flow only via the lookup path") {
    // With a zero-initialized flow head, the lookup-path gradient is zero, so
    // the stopped skip must leave the incoming flow with exactly zero gradient.
    {
        Fixture f;
        Tape tape;
        auto b = f.model.bind(tape);
        Rng rng(19);
        Var i1 = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
        Var i2 = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
        auto pyr = f.model.make_pyramid(f.model.encode_features(b, i1),
                                        f.model.encode_features(b, i2));
        auto ctx = f.model.encode_context(b, i1, i2);
        RefineStateT<float> st;
        st.hidden = ctx.hidden0;
        st.context = ctx.context;
        Var probe = leaf(tape, rand_tensor_f(1, 2, 2, 2, rng, 0.3, 0.6));
        st.flow = probe;
        st.raws = ctx.init_raws;
        auto next = f.model.refine_step(b, st, pyr);
        Var s = sum_all(next.flow);
        Tensor4f seed(1, 1, 1, 1);
        seed.data[0] = 1.0f;
        tape.backward(s.id, seed);
        for (float g : probe.grad().data) CHECK(g == 0.0f);
    }
    // At a generic weight point, finite differences see skip + lookup while
    // the tape sees lookup only: the difference must be exactly the skip
    // identity (1 for the matching component).
    {
        const ModelConfig mc = toy_model_config();
        ParamStoreT<double> store;
        ModelT<double> model(mc, LossKind::MoL, 23, &store);
        Rng nudge(29);
        for (size_t i = 0; i < store.size(); ++i)
            for (double& v : store.entry(i).value.data) v += nudge.uniform(-0.05, 0.05);

        Rng rng(31);
        Tensor4d i1 = rand_tensor(1, 3, 16, 16, rng, 0, 1);
        Tensor4d i2 = rand_tensor(1, 3, 16, 16, rng, 0, 1);
        Tensor4d flow0 = rand_tensor(1, 2, 2, 2, rng, 0.3, 0.6);

        auto run = [&](const Tensor4d& fl, TapeT<double>* keep_tape,
                       VarT<double>* keep_probe) {
            TapeT<double> local;
            TapeT<double>& tape = keep_tape ? *keep_tape : local;
            auto b = model.bind(tape);
            auto pyr = model.make_pyramid(model.encode_features(b, constant(tape, i1)),
                                          model.encode_features(b, constant(tape, i2)));
            auto ctx = model.encode_context(b, constant(tape, i1), constant(tape, i2));
            RefineStateT<double> st;
            st.hidden = ctx.hidden0;
            st.context = ctx.context;
            VarT<double> probe = leaf(tape, fl);
            if (keep_probe) *keep_probe = probe;
            st.flow = probe;
            st.raws = ctx.init_raws;
            auto next = model.refine_step(b, st, pyr);
            return sum_all(next.flow).value().data[0];
        };

        TapeT<double> tape;
        VarT<double> probe;
        {
            auto b = model.bind(tape);
            auto pyr = model.make_pyramid(model.encode_features(b, constant(tape, i1)),
                                          model.encode_features(b, constant(tape, i2)));
            auto ctx = model.encode_context(b, constant(tape, i1), constant(tape, i2));
            RefineStateT<double> st;
            st.hidden = ctx.hidden0;
            st.context = ctx.context;
            probe = leaf(tape, flow0);
            st.flow = probe;
            st.raws = ctx.init_raws;
            auto next = model.refine_step(b, st, pyr);
            VarT<double> s = sum_all(next.flow);
            Tensor4d seed(1, 1, 1, 1);
            seed.data[0] = 1.0;
            tape.backward(s.id, seed);
        }
        const double h = 1e-6;
        for (size_t k = 0; k < flow0.numel(); ++k) {
            Tensor4d fp = flow0, fm = flow0;
            fp.data[k] += h;
            fm.data[k] -= h;
            const double fd = (run(fp, nullptr, nullptr) - run(fm, nullptr, nullptr)) / (2 * h);
            const double lookup_only = probe.grad().data[k];
            // fd = 1 (skip) + lookup-path gradient
            CHECK(std::abs(fd - 1.0 - lookup_only) < 1e-3);
        }
    }
}

TEST_CASE("upsample_flow: constant coarse flow maps to constant 8x-scaled fine flow") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(37);
    Tensor4f coarse(1, 2, 2, 2);
    for (int i = 0; i < 4; ++i) {
        coarse.data[static_cast<size_t>(i)] = 0.75f;
        coarse.data[static_cast<size_t>(4 + i)] = -1.25f;
    }
    Var mask = constant(tape, rand_tensor_f(1, f.mc.mask_channels(), 2, 2, rng, -2, 2));
    Var fine = f.model.upsample_flow(b, constant(tape, coarse), mask);
    REQUIRE(fine.value().shape == std::array<int, 4>{1, 2, 16, 16});
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
            CHECK(fine.value().at(0, 0, y, x) == doctest::Approx(6.0f));    // 8 * 0.75
            CHECK(fine.value().at(0, 1, y, x) == doctest::Approx(-10.0f));  // 8 * -1.25
        }
}

TEST_CASE("upsample_flow: one-hot center mask degenerates to nearest-neighbor x8") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(41);
    Tensor4f coarse = rand_tensor_f(1, 2, 2, 3, rng, -2, 2);
    Tensor4f mask(1, f.mc.mask_channels(), 2, 3);
    // large logit on tap 4 (the center of the 3x3 window) for every subpixel
    for (int sp = 0; sp < 64; ++sp)
        for (int i = 0; i < 2 * 3; ++i)
            mask.data[mask.index(0, sp * 9 + 4, i / 3, i % 3)] = 60.0f;
    Var fine = f.model.upsample_flow(b, constant(tape, coarse), constant(tape, mask));
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 24; ++x)
            for (int c = 0; c < 2; ++c)
                CHECK(fine.value().at(0, c, y, x) ==
                      doctest::Approx(8.0f * coarse.at(0, c, y / 8, x / 8)).epsilon(1e-5));
}

TEST_CASE("upsample_flow: every fine vector lies in the hull of its scaled neighbors") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(43);
    Tensor4f coarse = rand_tensor_f(1, 2, 3, 4, rng, -3, 3);
    Tensor4f mask = rand_tensor_f(1, f.mc.mask_channels(), 3, 4, rng, -3, 3);
    Var fine = f.model.upsample_flow(b, constant(tape, coarse), constant(tape, mask));

    // independent recomputation, plus componentwise hull bounds
    Tensor4f wts(1, f.mc.mask_channels(), 3, 4);
    for (int i = 0; i < 3 * 4; ++i)
        for (int g = 0; g < 64; ++g) {
            double mx = -1e30;
            for (int m = 0; m < 9; ++m)
                mx = std::max(mx, static_cast<double>(mask.at(0, g * 9 + m, i / 4, i % 4)));
            double den = 0;
            for (int m = 0; m < 9; ++m)
                den += std::exp(mask.at(0, g * 9 + m, i / 4, i % 4) - mx);
            for (int m = 0; m < 9; ++m)
                wts.at(0, g * 9 + m, i / 4, i % 4) =
                    static_cast<float>(std::exp(mask.at(0, g * 9 + m, i / 4, i % 4) - mx) / den);
        }
    auto cl = [](int v, int hi) { return std::min(std::max(v, 0), hi); };
    for (int y = 0; y < 24; ++y)
        for (int x = 0; x < 32; ++x) {
            const int ci = y / 8, cj = x / 8, di = y % 8, dj = x % 8;
            for (int c = 0; c < 2; ++c) {
                double acc = 0, lo = 1e30, hi = -1e30;
                for (int m = 0; m < 9; ++m) {
                    const float nb = coarse.at(0, c, cl(ci + m / 3 - 1, 2), cl(cj + m % 3 - 1, 3));
                    acc += wts.at(0, (di * 8 + dj) * 9 + m, ci, cj) * 8.0 * nb;
                    lo = std::min(lo, 8.0 * nb);
                    hi = std::max(hi, 8.0 * nb);
                }
                const float got = fine.value().at(0, c, y, x);
                CHECK(got == doctest::Approx(acc).epsilon(1e-4));
                CHECK(got >= lo - 1e-4);
                CHECK(got <= hi + 1e-4);
            }
        }
}

TEST_CASE("forward: n_iters=0 returns only the direct regression; errors checked") {
    Fixture f;
    Tape tape;
    auto b = f.model.bind(tape);
    Rng rng(47);
    Var i1 = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
    Var i2 = constant(tape, rand_tensor_f(1, 3, 16, 16, rng, 0, 1));
    auto preds = f.model.forward(b, i1, i2, 0);
    REQUIRE(preds.size() == 1);
    CHECK(preds[0].flow.value().shape == std::array<int, 4>{1, 2, 16, 16});
    CHECK_THROWS_AS(f.model.forward(b, i1, i2, -1), std::invalid_argument);
    CHECK_THROWS_AS(f.model.forward(b, i1, i2, 13), std::invalid_argument);
}

TEST_CASE("forward: 4- and 12-iteration runs share an identical 5-output prefix") {
    Fixture f;
    Rng rng(53);
    Tensor4f i1 = rand_tensor_f(1, 3, 16, 16, rng, 0, 1);
    Tensor4f i2 = rand_tensor_f(1, 3, 16, 16, rng, 0, 1);
    // nudge weights so refinements actually move
    Rng nudge(59);
    for (size_t i = 0; i < f.store.size(); ++i)
        for (float& v : f.store.entry(i).value.data)
            v += static_cast<float>(nudge.uniform(-0.05, 0.05));

    Tape t1, t2;
    auto b1 = f.model.bind(t1);
    auto b2 = f.model.bind(t2);
    auto p4 = f.model.forward(b1, constant(t1, i1), constant(t1, i2), 4);
    auto p12 = f.model.forward(b2, constant(t2, i1), constant(t2, i2), 12);
    REQUIRE(p4.size() == 5);
    REQUIRE(p12.size() == 13);
    for (size_t i = 0; i < p4.size(); ++i)
        CHECK(p4[i].flow.value().data == p12[i].flow.value().data);
}

TEST_CASE("infer: per-iteration fields are finite and alpha stays in [0,1]") {
    Fixture f;
    Rng rng(61);
    Tensor4f i1 = rand_tensor_f(1, 3, 16, 16, rng, 0, 1);
    Tensor4f i2 = rand_tensor_f(1, 3, 16, 16, rng, 0, 1);
    auto outs = f.model.infer(i1, i2, 3);
    REQUIRE(outs.size() == 4);
    for (auto& [field, mol] : outs) {
        CHECK(field.uv.all_finite());
        for (float a : mol.alpha.data) {
            CHECK(a >= 0.0f);
            CHECK(a <= 1.0f);
        }
        for (float b2v : mol.beta2.data) {
            CHECK(b2v >= 0.0f);
            CHECK(b2v <= 10.0f);
        }
    }
}

TEST_CASE("summary: parameter count matches the store; per-iteration cost is constant in N") {
    Fixture f;
    auto s = f.model.summary(64, 64);
    CHECK(s.param_count == f.store.param_count());
    CHECK(s.param_count > 0);
    CHECK(s.encoder_macs > 0);
    CHECK(s.per_iter_macs > 0);

    ModelConfig more = f.mc;
    more.iters_train = 12;
    ParamStore st2;
    Model m2(more, LossKind::MoL, 11, &st2);
    CHECK(m2.summary(64, 64).per_iter_macs == s.per_iter_macs);
}

TEST_CASE("end-to-end gradients match finite differences on the 16x16 toy model") {
    auto res = check_model_gradients(/*max_per_tensor=*/4, /*seed=*/71);
    INFO(res.detail, " max_rel=", res.max_rel, " checked=", res.checked);
    CHECK(res.ok);
    CHECK(res.checked > 100);
}
