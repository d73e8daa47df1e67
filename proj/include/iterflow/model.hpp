// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// The flow network: shared feature encoder, stacked-frame context encoder
// with direct initial-flow regression, ConvNeXt-block recurrent refinement
// over a correlation pyramid, flow / mixture heads, and convex upsampling.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "iterflow/corr.hpp"
#include "iterflow/flowfield.hpp"
#include "iterflow/loss.hpp"
#include "iterflow/ops.hpp"
#include "iterflow/rng.hpp"

namespace iterflow {

struct ModelConfig {
    int feature_dim = 64;  // D
    int hidden_dim = 64;   // D_h
    int context_dim = 64;  // D_c
    int motion_dim = 128;  // D_M
    int levels = 4;        // pyramid depth L
    int radius = 4;        // lookup radius r
    int iters_train = 4;   // N during training
    int iters_max = 12;    // inference iteration cap
    int rnn_blocks = 2;
    bool direct_init = true;  // regress the initial flow from the context encoder
    // Detach the incoming flow on the additive skip (mu' = stop(mu) + delta).
    // Disabled only by gradient tests that compare against finite differences,
    // which necessarily see through the stop.
    bool stop_flow_gradient = true;
    int downsample = 8;       // fixed: three stride-2 stages
    double beta_upper = 10.0; // clamp ceiling for regressed mixture scales

    int head_width() const { return std::max(16, feature_dim / 2); }
    int mask_channels() const { return downsample * downsample * 9; }
};

// Named parameter tensors plus optimizer moments, owned outside any tape.
template <typename T>
class ParamStoreT {
public:
    struct Entry {
        std::string name;
        Tensor4T<T> value;
        Tensor4T<T> m, v;  // adaptive-moment state, lazily shaped by the trainer
    };

    int add(const std::string& name, Tensor4T<T> init) {
        for (const Entry& e : entries_)
            if (e.name == name) throw std::invalid_argument("duplicate parameter: " + name);
        entries_.push_back(Entry{name, std::move(init), {}, {}});
        return static_cast<int>(entries_.size()) - 1;
    }

    size_t size() const { return entries_.size(); }
    Entry& entry(size_t i) { return entries_[i]; }
    const Entry& entry(size_t i) const { return entries_[i]; }

    size_t param_count() const {
        size_t n = 0;
        for (const Entry& e : entries_) n += e.value.numel();
        return n;
    }

    // One leaf per parameter, in registration order.
    std::vector<VarT<T>> bind(TapeT<T>& tape) const {
        std::vector<VarT<T>> vars;
        vars.reserve(entries_.size());
        for (const Entry& e : entries_) vars.push_back(leaf(tape, e.value));
        return vars;
    }

private:
    std::vector<Entry> entries_;
};

using ParamStore = ParamStoreT<float>;

namespace detail {

// Fan-in scaled uniform init for conv kernels.
template <typename T>
Tensor4T<T> conv_init(int o, int c, int k, Rng& rng) {
    Tensor4T<T> w(o, c, k, k);
    const double s = 1.0 / std::sqrt(static_cast<double>(c) * k * k);
    for (T& v : w.data) v = static_cast<T>(rng.uniform(-s, s));
    return w;
}

}  // namespace detail

// Per-iteration prediction at full resolution. Which mixture parameters are
// populated depends on the head mode (the configured loss family):
//   MoL / MoG:      alpha in [0,1], b2 in [0, 10]
//   NaiveLaplace:   b2 = log-scale in [-10, 10]
//   NaiveMoL:       alpha, b1, b2 log-scales in [-10, 10]
//   L1:             flow only
template <typename T>
struct IterPredictionT {
    VarT<T> flow;             // (B,2,H,W), full resolution, full-scale vectors
    VarT<T> alpha{nullptr, -1};
    VarT<T> b1{nullptr, -1};
    VarT<T> b2{nullptr, -1};
};

template <typename T>
struct RefineStateT {
    VarT<T> hidden;
    VarT<T> context;
    VarT<T> flow;  // coarse (B,2,h,w), in coarse-pixel units
    VarT<T> raws;  // head channels (B,3,h,w) backing the current mixture params
    int iteration = 0;
};

struct ModelSummary {
    size_t param_count = 0;
    double encoder_macs = 0;   // feature encoder (both frames) + context encoder
    double per_iter_macs = 0;  // one refinement step including upsample head
};

template <typename T>
class ModelT {
public:
    ModelT(const ModelConfig& cfg, LossKind head_kind, uint64_t init_seed, ParamStoreT<T>* store)
        : cfg_(cfg), head_kind_(head_kind), store_(store) {
        Rng rng(hash_combine(init_seed, 0xC0DE));
        build(rng);
    }

    const ModelConfig& config() const { return cfg_; }
    LossKind head_kind() const { return head_kind_; }
    ParamStoreT<T>& store() { return *store_; }

    struct Bound {
        TapeT<T>* tape = nullptr;
        std::vector<VarT<T>> p;
    };

    Bound bind(TapeT<T>& tape) const { return Bound{&tape, store_->bind(tape)}; }

    // --- encoders -------------------------------------------------------------

    // Shared-weight feature encoder; extents must be divisible by the
    // downsample factor.
    VarT<T> encode_features(Bound& b, VarT<T> images) const {
        check_divisible(images.shape());
        return run_encoder(b, feat_, images);
    }

    struct ContextOut {
        VarT<T> context;
        VarT<T> hidden0;
        VarT<T> init_flow;  // coarse (B,2,h,w); zeros when direct_init is off
        VarT<T> init_raws;  // (B,3,h,w); zeros when direct_init is off
    };

    // Context encoder over the 6-channel stack of both frames, plus the
    // directly regressed initial flow and its mixture parameters.
    ContextOut encode_context(Bound& b, VarT<T> i1, VarT<T> i2) const {
        check_same_shape(i1.shape(), i2.shape(), "encode_context");
        check_divisible(i1.shape());
        VarT<T> stacked = concat_channels<T>({i1, i2});
        VarT<T> ctx = run_encoder(b, ctx_, stacked);
        ContextOut out;
        out.context = ctx;
        out.hidden0 = iterflow::tanh(conv(b, hidden0_, ctx));
        if (cfg_.direct_init) {
            VarT<T> head = conv(b, init_head2_, gelu(conv(b, init_head1_, ctx)));
            out.init_flow = slice_channels(head, 0, 2);
            out.init_raws = slice_channels(head, 2, 3);
        } else {
            const auto s = ctx.shape();
            out.init_flow = constant(*b.tape, Tensor4T<T>(s[0], 2, s[2], s[3]));
            out.init_raws = constant(*b.tape, Tensor4T<T>(s[0], 3, s[2], s[3]));
        }
        return out;
    }

    CorrPyramidT<T> make_pyramid(VarT<T> f1, VarT<T> f2) const {
        return build_pyramid(f1, f2, cfg_.levels);
    }

    // --- one refinement step ----------------------------------------------------

    // Lookup at the current flow, motion encoding, ConvNeXt recurrence, and
    // the flow/mask heads. The additive skip sees the incoming flow through a
    // gradient stop; the lookup path does not.
    RefineStateT<T> refine_step(Bound& b, const RefineStateT<T>& state,
                                const CorrPyramidT<T>& pyr) const {
        if (state.iteration >= cfg_.iters_max)
            throw std::invalid_argument("refine_step: iteration " + std::to_string(state.iteration) +
                                        " exceeds the configured cap " +
                                        std::to_string(cfg_.iters_max));
        LookupConfig lc{cfg_.radius, cfg_.levels};
        VarT<T> corr = lookup(pyr, state.flow, lc);

        VarT<T> c = gelu(conv(b, mot_corr1_, corr));
        c = gelu(conv(b, mot_corr2_, c));
        VarT<T> f = gelu(conv(b, mot_flow1_, state.flow));
        VarT<T> m = gelu(conv(b, mot_out_, concat_channels<T>({c, f})));
        VarT<T> motion = concat_channels<T>({m, state.flow});

        VarT<T> z = concat_channels<T>({state.hidden, motion, state.context});
        for (const auto& blk : blocks_) z = convnext(b, blk, z);
        VarT<T> hidden = iterflow::tanh(conv(b, rnn_proj_, z));

        VarT<T> head = conv(b, flow_head2_, gelu(conv(b, flow_head1_, hidden)));
        VarT<T> delta = slice_channels(head, 0, 2);
        VarT<T> raws = slice_channels(head, 2, 3);

        RefineStateT<T> next;
        next.hidden = hidden;
        next.context = state.context;
        next.flow = cfg_.stop_flow_gradient ? add(stop_gradient(state.flow), delta)
                                            : add(state.flow, delta);
        next.raws = raws;
        next.iteration = state.iteration + 1;
        return next;
    }

    // Mask logits from the hidden state, for the convex upsampler.
    VarT<T> mask_logits(Bound& b, VarT<T> hidden) const {
        return conv(b, mask_head2_, gelu(conv(b, mask_head1_, hidden)));
    }

    // Convex 8x upsampling: each fine flow vector is a softmax-weighted
    // combination of its 3x3 coarse neighborhood, scaled by the factor.
    VarT<T> upsample_flow(Bound& b, VarT<T> coarse_flow, VarT<T> mask) const {
        VarT<T> wts = softmax_groups(mask, 9);
        return convex_upsample(coarse_flow, wts, cfg_.downsample, cfg_.downsample);
    }

    // Interprets raw head channels as mixture parameters at coarse resolution.
    IterPredictionT<T> interpret(Bound& b, VarT<T> raws) const {
        IterPredictionT<T> p;
        const T bu = T(cfg_.beta_upper);
        switch (head_kind_) {
            case LossKind::MoL:
            case LossKind::MoG:
                p.alpha = sigmoid(slice_channels(raws, 0, 1));
                p.b2 = clamp(slice_channels(raws, 1, 1), T(0), bu);
                break;
            case LossKind::NaiveLaplace:
                p.b2 = clamp(slice_channels(raws, 0, 1), -bu, bu);
                break;
            case LossKind::NaiveMoL:
                p.alpha = sigmoid(slice_channels(raws, 0, 1));
                p.b1 = clamp(slice_channels(raws, 1, 1), -bu, bu);
                p.b2 = clamp(slice_channels(raws, 2, 1), -bu, bu);
                break;
            case LossKind::L1:
                break;
        }
        (void)b;
        return p;
    }

    // --- full forward -----------------------------------------------------------

    // Element 0 is the directly regressed initial prediction (bilinearly
    // upsampled); elements 1..n are refinement outputs through the learned
    // convex upsampler. All flows are full resolution, full scale.
    std::vector<IterPredictionT<T>> forward(Bound& b, VarT<T> i1, VarT<T> i2, int n_iters) const {
        if (n_iters < 0) throw std::invalid_argument("forward: n_iters must be >= 0");
        if (n_iters > cfg_.iters_max)
            throw std::invalid_argument("forward: n_iters exceeds iters_max");
        const auto is = i1.shape();
        const int H = is[2], W = is[3];

        VarT<T> feats = encode_features(b, concat_batch(b, i1, i2));
        VarT<T> f1 = slice_batch(b, feats, 0, is[0]);
        VarT<T> f2 = slice_batch(b, feats, is[0], is[0]);
        CorrPyramidT<T> pyr = make_pyramid(f1, f2);
        ContextOut ctx = encode_context(b, i1, i2);

        std::vector<IterPredictionT<T>> out;
        out.reserve(static_cast<size_t>(n_iters) + 1);

        // iteration-0 prediction: bilinear x8 upsample of the direct regression
        IterPredictionT<T> p0 = interpret(b, ctx.init_raws);
        p0.flow = scale(resize_bilinear(ctx.init_flow, H, W), cfg_.downsample);
        p0 = upsample_params_bilinear(b, p0, H, W);
        out.push_back(p0);

        RefineStateT<T> state;
        state.hidden = ctx.hidden0;
        state.context = ctx.context;
        state.flow = ctx.init_flow;
        state.raws = ctx.init_raws;
        state.iteration = 0;

        for (int i = 0; i < n_iters; ++i) {
            state = refine_step(b, state, pyr);
            VarT<T> mask = mask_logits(b, state.hidden);
            VarT<T> wts = softmax_groups(mask, 9);
            IterPredictionT<T> p = interpret(b, state.raws);
            p.flow = convex_upsample(state.flow, wts, cfg_.downsample, cfg_.downsample);
            p = upsample_params_convex(b, p, wts);
            out.push_back(p);
        }
        return out;
    }

    // Single-pair inference convenience; returns per-iteration flow fields and
    // canonical MoL parameters (alpha defaults to 1 and beta2 to 0 for head
    // modes that do not produce them).
    std::vector<std::pair<FlowField, MoLParams>> infer(const Tensor4f& i1, const Tensor4f& i2,
                                                       int n_iters) const {
        TapeT<T> tape;
        Bound b = bind(tape);
        VarT<T> v1 = constant(tape, i1.template cast<T>());
        VarT<T> v2 = constant(tape, i2.template cast<T>());
        auto preds = forward(b, v1, v2, n_iters);
        std::vector<std::pair<FlowField, MoLParams>> out;
        for (const auto& p : preds) {
            const Tensor4T<T>& fv = p.flow.value();
            FlowField f(fv.h(), fv.w());
            for (int y = 0; y < fv.h(); ++y)
                for (int x = 0; x < fv.w(); ++x)
                    f.set(y, x, static_cast<float>(fv.at(0, 0, y, x)),
                          static_cast<float>(fv.at(0, 1, y, x)));
            MoLParams mp(fv.h(), fv.w());
            if (p.alpha.id >= 0)
                mp.alpha = p.alpha.value().template cast<float>();
            else
                mp.alpha.fill(1.0f);
            if (p.b2.id >= 0 && (head_kind_ == LossKind::MoL || head_kind_ == LossKind::MoG))
                mp.beta2 = p.b2.value().template cast<float>();
            out.emplace_back(std::move(f), std::move(mp));
        }
        return out;
    }

    // Conv-MAC counts; refinement cost is per iteration and independent of N.
    ModelSummary summary(int H, int W) const {
        ModelSummary s;
        s.param_count = store_->param_count();
        const int h = H / cfg_.downsample, w = W / cfg_.downsample;
        auto conv_macs = [](int o, int c, int k, int oh, int ow) {
            return static_cast<double>(o) * c * k * k * oh * ow;
        };
        // encoder: 2 stride-2 halvings before the final stage
        auto encoder_macs = [&](int in_ch) {
            const int w1 = enc_w1(), w2 = enc_w2(), d = cfg_.feature_dim;
            double m = 0;
            m += conv_macs(w1, in_ch, 3, H / 2, W / 2);
            m += conv_macs(w1, w1, 3, H / 2, W / 2);
            m += conv_macs(w2, w1, 3, H / 4, W / 4);
            m += conv_macs(w2, w2, 3, H / 4, W / 4);
            m += conv_macs(d, w2, 3, h, w);
            m += conv_macs(d, d, 3, h, w);
            return m;
        };
        s.encoder_macs = 2 * encoder_macs(3) + encoder_macs(6);
        const int lk = cfg_.levels * (2 * cfg_.radius + 1) * (2 * cfg_.radius + 1);
        const int zc = cfg_.hidden_dim + cfg_.motion_dim + cfg_.context_dim;
        double it = 0;
        it += conv_macs(mot_c1(), lk, 1, h, w);
        it += conv_macs(mot_c2(), mot_c1(), 3, h, w);
        it += conv_macs(mot_f1(), 2, 3, h, w);
        it += conv_macs(cfg_.motion_dim - 2, mot_c2() + mot_f1(), 3, h, w);
        it += cfg_.rnn_blocks * (conv_macs(zc, 1, 7, h, w) + 2 * conv_macs(zc, 4 * zc, 1, h, w));
        it += conv_macs(cfg_.hidden_dim, zc, 3, h, w);
        it += conv_macs(head_w(), cfg_.hidden_dim, 3, h, w) + conv_macs(5, head_w(), 3, h, w);
        it += conv_macs(head_w(), cfg_.hidden_dim, 3, h, w) +
              conv_macs(cfg_.mask_channels(), head_w(), 1, h, w);
        it += static_cast<double>(lk) * h * w * 4;  // lookup taps
        s.per_iter_macs = it;
        return s;
    }

private:
    struct ConvSpec {
        int w = -1, b = -1;
        int stride = 1, pad = 0;
    };
    struct NormSpec {
        int g = -1, b = -1;
    };
    struct EncoderSpec {
        ConvSpec c1, c2, c3, c4, c5, c6;
        NormSpec n1, n2, n3, n4, n5;
    };
    struct BlockSpec {
        ConvSpec dw, pw1, pw2;
        NormSpec ln;
    };

    ModelConfig cfg_;
    LossKind head_kind_;
    ParamStoreT<T>* store_;

    EncoderSpec feat_, ctx_;
    ConvSpec hidden0_;
    ConvSpec init_head1_, init_head2_;
    ConvSpec mot_corr1_, mot_corr2_, mot_flow1_, mot_out_;
    std::vector<BlockSpec> blocks_;
    ConvSpec rnn_proj_;
    ConvSpec flow_head1_, flow_head2_;
    ConvSpec mask_head1_, mask_head2_;

    int enc_w1() const { return std::max(8, cfg_.feature_dim / 2); }
    int enc_w2() const { return std::max(8, 3 * cfg_.feature_dim / 4); }
    int head_w() const { return cfg_.head_width(); }
    // motion-encoder widths scale with D_M; at the default D_M=128 these are
    // the conventional 256/192/32
    int mot_c1() const { return 2 * cfg_.motion_dim; }
    int mot_c2() const { return 3 * cfg_.motion_dim / 2; }
    int mot_f1() const { return std::max(8, cfg_.motion_dim / 4); }

    void check_divisible(const std::array<int, 4>& s) const {
        if (s[2] % cfg_.downsample != 0 || s[3] % cfg_.downsample != 0)
            throw std::invalid_argument("encoder: extents " + shape_str(s) +
                                        " not divisible by " + std::to_string(cfg_.downsample));
    }

    ConvSpec add_conv(const std::string& name, int o, int c, int k, int stride, int pad, Rng& rng,
                      bool zero_init = false) {
        ConvSpec s;
        Tensor4T<T> w = zero_init ? Tensor4T<T>(o, c, k, k) : detail::conv_init<T>(o, c, k, rng);
        s.w = store_->add(name + ".weight", std::move(w));
        s.b = store_->add(name + ".bias", Tensor4T<T>(1, o, 1, 1));
        s.stride = stride;
        s.pad = pad;
        return s;
    }

    ConvSpec add_dwconv(const std::string& name, int c, int k, Rng& rng) {
        ConvSpec s;
        Tensor4T<T> w(c, 1, k, k);
        const double sc = 1.0 / std::sqrt(static_cast<double>(k) * k);
        for (T& v : w.data) v = static_cast<T>(rng.uniform(-sc, sc));
        s.w = store_->add(name + ".weight", std::move(w));
        s.b = store_->add(name + ".bias", Tensor4T<T>(1, c, 1, 1));
        s.stride = 1;
        s.pad = k / 2;
        return s;
    }

    NormSpec add_norm(const std::string& name, int c) {
        NormSpec s;
        Tensor4T<T> g(1, c, 1, 1);
        g.fill(T(1));
        s.g = store_->add(name + ".gamma", std::move(g));
        s.b = store_->add(name + ".beta", Tensor4T<T>(1, c, 1, 1));
        return s;
    }

    EncoderSpec add_encoder(const std::string& name, int in_ch, int out_ch, Rng& rng) {
        const int w1 = enc_w1(), w2 = enc_w2();
        EncoderSpec e;
        e.c1 = add_conv(name + ".conv1", w1, in_ch, 3, 2, 1, rng);
        e.n1 = add_norm(name + ".norm1", w1);
        e.c2 = add_conv(name + ".conv2", w1, w1, 3, 1, 1, rng);
        e.n2 = add_norm(name + ".norm2", w1);
        e.c3 = add_conv(name + ".conv3", w2, w1, 3, 2, 1, rng);
        e.n3 = add_norm(name + ".norm3", w2);
        e.c4 = add_conv(name + ".conv4", w2, w2, 3, 1, 1, rng);
        e.n4 = add_norm(name + ".norm4", w2);
        e.c5 = add_conv(name + ".conv5", out_ch, w2, 3, 2, 1, rng);
        e.n5 = add_norm(name + ".norm5", out_ch);
        e.c6 = add_conv(name + ".conv6", out_ch, out_ch, 3, 1, 1, rng);
        return e;
    }

    BlockSpec add_block(const std::string& name, int c, Rng& rng) {
        BlockSpec b;
        b.dw = add_dwconv(name + ".dwconv", c, 7, rng);
        b.ln = add_norm(name + ".norm", c);
        b.pw1 = add_conv(name + ".pw1", 4 * c, c, 1, 1, 0, rng);
        b.pw2 = add_conv(name + ".pw2", c, 4 * c, 1, 1, 0, rng);
        return b;
    }

    void build(Rng& rng) {
        const int d = cfg_.feature_dim, dc = cfg_.context_dim, dh = cfg_.hidden_dim;
        const int dm = cfg_.motion_dim;
        const int lk = cfg_.levels * (2 * cfg_.radius + 1) * (2 * cfg_.radius + 1);
        const int hw = head_w();
        feat_ = add_encoder("fnet", 3, d, rng);
        ctx_ = add_encoder("cnet", 6, dc, rng);
        hidden0_ = add_conv("hidden0", dh, dc, 3, 1, 1, rng);
        init_head1_ = add_conv("init_head.conv1", hw, dc, 3, 1, 1, rng);
        init_head2_ = add_conv("init_head.conv2", 5, hw, 3, 1, 1, rng, /*zero_init=*/true);
        mot_corr1_ = add_conv("motion.corr1", mot_c1(), lk, 1, 1, 0, rng);
        mot_corr2_ = add_conv("motion.corr2", mot_c2(), mot_c1(), 3, 1, 1, rng);
        mot_flow1_ = add_conv("motion.flow1", mot_f1(), 2, 3, 1, 1, rng);
        mot_out_ = add_conv("motion.out", dm - 2, mot_c2() + mot_f1(), 3, 1, 1, rng);
        const int zc = dh + dm + dc;
        for (int i = 0; i < cfg_.rnn_blocks; ++i)
            blocks_.push_back(add_block("rnn.block" + std::to_string(i), zc, rng));
        rnn_proj_ = add_conv("rnn.proj", dh, zc, 3, 1, 1, rng);
        flow_head1_ = add_conv("flow_head.conv1", hw, dh, 3, 1, 1, rng);
        flow_head2_ = add_conv("flow_head.conv2", 5, hw, 3, 1, 1, rng, /*zero_init=*/true);
        mask_head1_ = add_conv("mask_head.conv1", hw, dh, 3, 1, 1, rng);
        mask_head2_ =
            add_conv("mask_head.conv2", cfg_.mask_channels(), hw, 1, 1, 0, rng, /*zero_init=*/true);
    }

    VarT<T> conv(Bound& b, const ConvSpec& s, VarT<T> x) const {
        return conv2d(x, b.p[static_cast<size_t>(s.w)], b.p[static_cast<size_t>(s.b)], s.stride,
                      s.pad);
    }

    VarT<T> norm(Bound& b, const NormSpec& s, VarT<T> x) const {
        return instance_norm(x, b.p[static_cast<size_t>(s.g)], b.p[static_cast<size_t>(s.b)]);
    }

    VarT<T> run_encoder(Bound& b, const EncoderSpec& e, VarT<T> x) const {
        x = gelu(norm(b, e.n1, conv(b, e.c1, x)));
        x = gelu(norm(b, e.n2, conv(b, e.c2, x)));
        x = gelu(norm(b, e.n3, conv(b, e.c3, x)));
        x = gelu(norm(b, e.n4, conv(b, e.c4, x)));
        x = gelu(norm(b, e.n5, conv(b, e.c5, x)));
        return conv(b, e.c6, x);
    }

    VarT<T> convnext(Bound& b, const BlockSpec& blk, VarT<T> x) const {
        VarT<T> y = depthwise_conv2d(x, b.p[static_cast<size_t>(blk.dw.w)],
                                     b.p[static_cast<size_t>(blk.dw.b)], 1, blk.dw.pad);
        y = channel_norm(y, b.p[static_cast<size_t>(blk.ln.g)], b.p[static_cast<size_t>(blk.ln.b)]);
        y = gelu(conv(b, blk.pw1, y));
        y = conv(b, blk.pw2, y);
        return add(x, y);
    }

    IterPredictionT<T> upsample_params_bilinear(Bound& b, IterPredictionT<T> p, int H, int W) const {
        if (p.alpha.id >= 0) p.alpha = resize_bilinear(p.alpha, H, W);
        if (p.b1.id >= 0) p.b1 = resize_bilinear(p.b1, H, W);
        if (p.b2.id >= 0) p.b2 = resize_bilinear(p.b2, H, W);
        (void)b;
        return p;
    }

    IterPredictionT<T> upsample_params_convex(Bound& b, IterPredictionT<T> p, VarT<T> wts) const {
        if (p.alpha.id >= 0) p.alpha = convex_upsample(p.alpha, wts, cfg_.downsample, 1.0);
        if (p.b1.id >= 0) p.b1 = convex_upsample(p.b1, wts, cfg_.downsample, 1.0);
        if (p.b2.id >= 0) p.b2 = convex_upsample(p.b2, wts, cfg_.downsample, 1.0);
        (void)b;
        return p;
    }

    // stacks two (B,...) tensors into one (2B,...) batch
    VarT<T> concat_batch(Bound& b, VarT<T> x, VarT<T> y) const {
        TapeT<T>& tp = *b.tape;
        const Tensor4T<T>& xv = x.value();
        const Tensor4T<T>& yv = y.value();
        check_same_shape(xv.shape, yv.shape, "concat_batch");
        Tensor4T<T> out(2 * xv.n(), xv.c(), xv.h(), xv.w());
        std::copy(xv.data.begin(), xv.data.end(), out.data.begin());
        std::copy(yv.data.begin(), yv.data.end(), out.data.begin() + xv.numel());
        const int xid = x.id, yid = y.id;
        const size_t half = xv.numel();
        int id = tp.add(std::move(out), x.needs_grad() || y.needs_grad(),
                        [xid, yid, half](TapeT<T>& t, int self) {
                            const Tensor4T<T>& g = t.grad(self);
                            if (t.needs_grad(xid)) {
                                Tensor4T<T>& d = t.grad_mut(xid);
                                for (size_t i = 0; i < half; ++i) d.data[i] += g.data[i];
                            }
                            if (t.needs_grad(yid)) {
                                Tensor4T<T>& d = t.grad_mut(yid);
                                for (size_t i = 0; i < half; ++i) d.data[i] += g.data[half + i];
                            }
                        });
        return {&tp, id};
    }

    VarT<T> slice_batch(Bound& b, VarT<T> x, int n0, int count) const {
        TapeT<T>& tp = *b.tape;
        const Tensor4T<T>& xv = x.value();
        if (n0 < 0 || count <= 0 || n0 + count > xv.n())
            throw std::invalid_argument("slice_batch: bad range");
        const size_t item = xv.numel() / static_cast<size_t>(xv.n());
        Tensor4T<T> out(count, xv.c(), xv.h(), xv.w());
        std::copy(xv.data.begin() + n0 * item, xv.data.begin() + (n0 + count) * item,
                  out.data.begin());
        const int xid = x.id;
        int id = tp.add(std::move(out), x.needs_grad(), [xid, n0, item](TapeT<T>& t, int self) {
            if (!t.needs_grad(xid)) return;
            const Tensor4T<T>& g = t.grad(self);
            Tensor4T<T>& d = t.grad_mut(xid);
            for (size_t i = 0; i < g.numel(); ++i)
                d.data[static_cast<size_t>(n0) * item + i] += g.data[i];
        });
        return {&tp, id};
    }
};

using Model = ModelT<float>;

}  // namespace iterflow
