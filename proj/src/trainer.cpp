// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "iterflow/trainer.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "iterflow/checkpoint.hpp"
#include "iterflow/rng.hpp"

namespace iterflow {

std::vector<SamplePair> generate_dataset(const DataGenConfig& cfg) {
    if (cfg.count < 0) throw std::invalid_argument("generate_dataset: negative count");
    std::vector<SamplePair> out;
    out.reserve(static_cast<size_t>(cfg.count));
    for (int i = 0; i < cfg.count; ++i) {
        const uint64_t seed_i = hash_combine(cfg.seed, static_cast<uint64_t>(i));
        if (cfg.mode == DataMode::Affine) {
            AffinePairConfig ac;
            ac.height = cfg.height;
            ac.width = cfg.width;
            ac.max_disp = cfg.max_disp;
            out.push_back(affine_pair(seed_i, ac));
        } else {
            RigidSceneConfig rc;
            rc.height = cfg.height;
            rc.width = cfg.width;
            rc.motion_scale = cfg.motion_scale;
            out.push_back(render_pair(synth_scene(seed_i, rc), hash_combine(seed_i, 0x7e9)));
        }
    }
    return out;
}

void optimizer_step(Tensor4f& w, const Tensor4f& g, Tensor4f& m, Tensor4f& v, long t,
                    const AdamConfig& cfg) {
    check_same_shape(w.shape, g.shape, "optimizer_step");
    if (m.shape != w.shape) m.resize(w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    if (v.shape != w.shape) v.resize(w.shape[0], w.shape[1], w.shape[2], w.shape[3]);
    if (t < 1) throw std::invalid_argument("optimizer_step: update count must be >= 1");
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (size_t i = 0; i < w.numel(); ++i) {
        const double gi = g.data[i];
        const double mi = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
        const double vi = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
        m.data[i] = static_cast<float>(mi);
        v.data[i] = static_cast<float>(vi);
        const double mhat = mi / bc1;
        const double vhat = vi / bc2;
        double upd = cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
        upd += cfg.lr * cfg.weight_decay * w.data[i];  // decoupled decay
        w.data[i] = static_cast<float>(w.data[i] - upd);
    }
}

double schedule_lr(const TrainConfig& cfg, uint64_t step) {
    if (cfg.schedule == LrSchedule::Constant || cfg.steps <= 1) return cfg.lr;
    const double t = static_cast<double>(step) / static_cast<double>(cfg.steps);
    const double warm = 0.05;
    if (t < warm) {
        const double f = t / warm;
        return cfg.lr * (0.04 + 0.96 * f);  // ramp from lr/25
    }
    const double f = (t - warm) / (1.0 - warm);
    return cfg.lr * (1.0 - 0.99 * f);  // linear anneal to lr/100
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg), store_(), model_(cfg.model, cfg.loss.kind, cfg.seed, &store_) {
    if (cfg.steps < 0 || cfg.batch < 1) throw std::invalid_argument("TrainConfig: bad steps/batch");
    if (cfg.lr <= 0 || cfg.clip_norm <= 0) throw std::invalid_argument("TrainConfig: bad lr/clip");
    train_set_ = generate_dataset(cfg.data);
    if (train_set_.empty()) throw std::invalid_argument("TrainConfig: empty training set");
    if (cfg.holdout && cfg.holdout->count > 0) holdout_set_ = generate_dataset(*cfg.holdout);
}

std::vector<size_t> Trainer::batch_indices(uint64_t step) const {
    Rng rng(hash_combine(hash_combine(cfg_.seed, 0xBA7C4), step));
    std::vector<size_t> idx;
    idx.reserve(static_cast<size_t>(cfg_.batch));
    for (int i = 0; i < cfg_.batch; ++i)
        idx.push_back(static_cast<size_t>(rng.below(train_set_.size())));
    return idx;
}

Trainer::Batch Trainer::make_batch(const std::vector<size_t>& indices) const {
    if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
    const int h = train_set_[indices[0]].i1.h();
    const int w = train_set_[indices[0]].i1.w();
    const int b = static_cast<int>(indices.size());
    Batch out{Tensor4f(b, 3, h, w), Tensor4f(b, 3, h, w), Tensor4f(b, 2, h, w),
              Tensor4f(b, 1, h, w)};
    for (int n = 0; n < b; ++n) {
        const SamplePair& sp = train_set_[indices[static_cast<size_t>(n)]];
        std::copy(sp.i1.data.begin(), sp.i1.data.end(),
                  out.i1.data.begin() + out.i1.index(n, 0, 0, 0));
        std::copy(sp.i2.data.begin(), sp.i2.data.end(),
                  out.i2.data.begin() + out.i2.index(n, 0, 0, 0));
        std::copy(sp.gt.uv.data.begin(), sp.gt.uv.data.end(),
                  out.gt.data.begin() + out.gt.index(n, 0, 0, 0));
        std::copy(sp.gt.valid.data.begin(), sp.gt.valid.data.end(),
                  out.valid.data.begin() + out.valid.index(n, 0, 0, 0));
    }
    return out;
}

std::pair<Var, Var> Trainer::build_loss(Tape& tape, Model::Bound& bound,
                                        const Batch& batch) const {
    Var i1 = constant(tape, batch.i1);
    Var i2 = constant(tape, batch.i2);
    auto preds = model_.forward(bound, i1, i2, cfg_.model.iters_train);
    std::vector<Var> per_iter;
    // without direct regression the iteration-0 output is a parameterless
    // zero field; the sequence runs over the refinement outputs only
    const size_t first = cfg_.model.direct_init ? 0 : 1;
    for (size_t i = first; i < preds.size(); ++i) {
        auto& p = preds[i];
        switch (cfg_.loss.kind) {
            case LossKind::MoL:
                per_iter.push_back(mol_nll(p.flow, p.alpha, p.b2, batch.gt, batch.valid));
                break;
            case LossKind::MoG:
                per_iter.push_back(mog_nll(p.flow, p.alpha, p.b2, batch.gt, batch.valid));
                break;
            case LossKind::NaiveLaplace:
                per_iter.push_back(naive_laplace_nll(p.flow, p.b2, batch.gt, batch.valid));
                break;
            case LossKind::NaiveMoL:
                per_iter.push_back(
                    naive_mol_nll(p.flow, p.alpha, p.b1, p.b2, batch.gt, batch.valid));
                break;
            case LossKind::L1:
                per_iter.push_back(l1_loss(p.flow, batch.gt, batch.valid));
                break;
        }
    }
    Var seq = sequence_loss(per_iter, cfg_.loss.gamma);
    return {seq, per_iter.back()};
}

double Trainer::compute_batch_loss(const std::vector<size_t>& indices) const {
    Tape tape;
    auto bound = model_.bind(tape);
    Batch batch = make_batch(indices);
    return build_loss(tape, bound, batch).first.value().data[0];
}

TrainResult Trainer::train(const std::function<void(const StepLog&)>& per_step,
                           const std::function<void(const EvalLog&)>& per_eval) {
    TrainResult result;
    double initial_loss = 0;
    bool have_initial = false;
    int high_loss_streak = 0;

    auto run_eval = [&](uint64_t at_step) {
        EvalLog ev;
        ev.step = at_step;
        ev.train = evaluate_samples(train_set_, cfg_.model.iters_train);
        if (!holdout_set_.empty())
            ev.holdout = evaluate_samples(holdout_set_, cfg_.model.iters_train);
        result.evals.push_back(ev);
        if (per_eval) per_eval(ev);
    };

    while (step_ < static_cast<uint64_t>(cfg_.steps)) {
        Tape tape;
        auto bound = model_.bind(tape);
        Batch batch = make_batch(batch_indices(step_));
        auto [seq, fin] = build_loss(tape, bound, batch);
        const double loss = seq.value().data[0];
        const double final_loss = fin.value().data[0];

        Tensor4f seed(1, 1, 1, 1);
        seed.data[0] = 1.0f;
        tape.backward(seq.id, seed);

        // global finiteness check and norm clipping over all gradients
        double sq = 0;
        bool finite = std::isfinite(loss);
        for (size_t i = 0; i < store_.size() && finite; ++i) {
            const Tensor4f& g = tape.grad(bound.p[i].id);
            for (float gv : g.data) {
                if (!std::isfinite(gv)) {
                    finite = false;
                    break;
                }
                sq += static_cast<double>(gv) * gv;
            }
        }
        const double lr = schedule_lr(cfg_, step_);
        if (!finite) {
            ++skipped_updates_;
        } else {
            const double norm = std::sqrt(sq);
            const float scale_g =
                norm > cfg_.clip_norm ? static_cast<float>(cfg_.clip_norm / norm) : 1.0f;
            AdamConfig ac;
            ac.lr = lr;
            ac.weight_decay = cfg_.weight_decay;
            ++applied_updates_;
            for (size_t i = 0; i < store_.size(); ++i) {
                auto& e = store_.entry(i);
                Tensor4f g = tape.grad(bound.p[i].id);
                if (scale_g != 1.0f)
                    for (float& gv : g.data) gv *= scale_g;
                optimizer_step(e.value, g, e.m, e.v, applied_updates_, ac);
            }
        }

        StepLog log{step_, lr, loss, final_loss};
        result.steps.push_back(log);
        if (per_step) per_step(log);

        if (!have_initial && std::isfinite(loss)) {
            initial_loss = std::abs(loss) + 1e-12;
            have_initial = true;
        }
        if (have_initial && (!std::isfinite(loss) || loss > 10.0 * initial_loss)) {
            if (++high_loss_streak >= 100) {
                result.diverged = true;
                std::ostringstream os;
                os << "divergence guard tripped at step " << step_ << ": loss " << loss
                   << " exceeded 10x initial (" << initial_loss << ") for 100 consecutive steps";
                result.divergence_note = os.str();
                ++step_;
                break;
            }
        } else {
            high_loss_streak = 0;
        }

        ++step_;
        if (cfg_.eval_every > 0 && step_ % static_cast<uint64_t>(cfg_.eval_every) == 0 &&
            step_ < static_cast<uint64_t>(cfg_.steps))
            run_eval(step_);
    }
    if (cfg_.steps > 0) run_eval(step_);
    result.skipped_updates = skipped_updates_;
    return result;
}

MetricReport Trainer::evaluate_samples(const std::vector<SamplePair>& samples, int iters) const {
    if (samples.empty()) throw std::invalid_argument("evaluate_samples: empty sample list");
    std::vector<MetricReport> rs;
    for (const SamplePair& sp : samples) {
        auto outs = model_.infer(sp.i1, sp.i2, iters);
        rs.push_back(evaluate(outs.back().first, sp.gt));
    }
    return aggregate(rs);
}

std::vector<double> Trainer::per_iteration_epe(const std::vector<SamplePair>& samples,
                                               int iters) const {
    std::vector<double> acc(static_cast<size_t>(iters) + 1, 0.0);
    std::vector<double> wsum(static_cast<size_t>(iters) + 1, 0.0);
    for (const SamplePair& sp : samples) {
        auto outs = model_.infer(sp.i1, sp.i2, iters);
        for (size_t i = 0; i < outs.size(); ++i) {
            MetricReport r = evaluate(outs[i].first, sp.gt);
            acc[i] += r.epe * static_cast<double>(r.n_valid);
            wsum[i] += static_cast<double>(r.n_valid);
        }
    }
    for (size_t i = 0; i < acc.size(); ++i) acc[i] /= wsum[i];
    return acc;
}

std::vector<double> Trainer::per_iteration_mean_beta2(const std::vector<SamplePair>& samples,
                                                      int iters) const {
    std::vector<double> acc(static_cast<size_t>(iters) + 1, 0.0);
    long count = 0;
    for (const SamplePair& sp : samples) {
        auto outs = model_.infer(sp.i1, sp.i2, iters);
        for (size_t i = 0; i < outs.size(); ++i) {
            double s = 0;
            for (float v : outs[i].second.beta2.data) s += v;
            acc[i] += s / static_cast<double>(outs[i].second.beta2.numel());
        }
        ++count;
    }
    for (double& v : acc) v /= static_cast<double>(count);
    return acc;
}

void Trainer::save_checkpoint_file(const std::string& path, const std::string& config_hash) const {
    CheckpointData data;
    data.step = step_;
    data.config_hash = config_hash;
    for (size_t i = 0; i < store_.size(); ++i) {
        const auto& e = store_.entry(i);
        data.tensors.emplace_back("model." + e.name, e.value);
    }
    for (size_t i = 0; i < store_.size(); ++i) {
        const auto& e = store_.entry(i);
        Tensor4f m = e.m, v = e.v;
        if (m.shape != e.value.shape) {
            m = e.value;
            m.fill(0.0f);
        }
        if (v.shape != e.value.shape) {
            v = e.value;
            v.fill(0.0f);
        }
        data.tensors.emplace_back("opt.m." + e.name, std::move(m));
        data.tensors.emplace_back("opt.v." + e.name, std::move(v));
    }
    Tensor4f applied(1, 1, 1, 1);
    applied.data[0] = static_cast<float>(applied_updates_);
    data.tensors.emplace_back("opt.applied_updates", std::move(applied));
    Tensor4f skipped(1, 1, 1, 1);
    skipped.data[0] = static_cast<float>(skipped_updates_);
    data.tensors.emplace_back("opt.skipped_updates", std::move(skipped));
    save_checkpoint(path, data);
}

void Trainer::resume_from(const std::string& path) {
    CheckpointData data = load_checkpoint(path);
    for (size_t i = 0; i < store_.size(); ++i) {
        auto& e = store_.entry(i);
        const Tensor4f* w = data.find("model." + e.name);
        const Tensor4f* m = data.find("opt.m." + e.name);
        const Tensor4f* v = data.find("opt.v." + e.name);
        if (!w || !m || !v)
            throw std::runtime_error("resume_from: checkpoint is missing tensor " + e.name);
        if (w->shape != e.value.shape)
            throw std::runtime_error("resume_from: shape mismatch for " + e.name);
        e.value = *w;
        e.m = *m;
        e.v = *v;
    }
    step_ = data.step;
    if (const Tensor4f* a = data.find("opt.applied_updates"))
        applied_updates_ = static_cast<long>(a->data[0]);
    if (const Tensor4f* s = data.find("opt.skipped_updates"))
        skipped_updates_ = static_cast<long>(s->data[0]);
}

void Trainer::init_weights_from(const std::string& path) {
    CheckpointData data = load_checkpoint(path);
    for (size_t i = 0; i < store_.size(); ++i) {
        auto& e = store_.entry(i);
        const Tensor4f* w = data.find("model." + e.name);
        if (!w) throw std::runtime_error("init_weights_from: checkpoint is missing " + e.name);
        if (w->shape != e.value.shape)
            throw std::runtime_error("init_weights_from: shape mismatch for " + e.name);
        e.value = *w;
        e.m = Tensor4f();
        e.v = Tensor4f();
    }
    // fresh optimizer state and step counters: fine-tuning starts clean
    step_ = 0;
    applied_updates_ = 0;
    skipped_updates_ = 0;
}

std::vector<std::string> Trainer::gradient_flow_audit(int probe_steps) {
    std::vector<std::vector<bool>> touched(store_.size());
    for (size_t i = 0; i < store_.size(); ++i)
        touched[i].assign(store_.entry(i).value.numel(), false);
    for (int s = 0; s < probe_steps; ++s) {
        Tape tape;
        auto bound = model_.bind(tape);
        Batch batch = make_batch(batch_indices(static_cast<uint64_t>(s)));
        auto [seq, fin] = build_loss(tape, bound, batch);
        Tensor4f seed(1, 1, 1, 1);
        seed.data[0] = 1.0f;
        tape.backward(seq.id, seed);
        for (size_t i = 0; i < store_.size(); ++i) {
            const Tensor4f& g = tape.grad(bound.p[i].id);
            for (size_t k = 0; k < g.numel(); ++k)
                if (g.data[k] != 0.0f) touched[i][k] = true;
        }
    }
    std::vector<std::string> dead;
    for (size_t i = 0; i < store_.size(); ++i) {
        size_t cold = 0;
        for (bool t : touched[i])
            if (!t) ++cold;
        if (cold > 0)
            dead.push_back(store_.entry(i).name + " (" + std::to_string(cold) + "/" +
                           std::to_string(touched[i].size()) + " elements)");
    }
    return dead;
}

// --- ablation ------------------------------------------------------------------

TrainConfig apply_delta(const TrainConfig& base, const ConfigDelta& delta) {
    TrainConfig cfg = base;
    if (delta.loss_kind) cfg.loss.kind = *delta.loss_kind;
    if (delta.direct_init) cfg.model.direct_init = *delta.direct_init;
    if (delta.rnn_blocks) cfg.model.rnn_blocks = *delta.rnn_blocks;
    return cfg;
}

std::vector<AblationRow> ablate(const TrainConfig& base, const std::vector<ConfigDelta>& axes,
                                const std::function<void(const std::string&)>& log) {
    std::vector<std::pair<std::string, TrainConfig>> arms;
    arms.emplace_back("base", base);
    for (const ConfigDelta& d : axes) arms.emplace_back(d.name, apply_delta(base, d));

    std::vector<AblationRow> rows;
    for (auto& [name, cfg] : arms) {
        if (log) log("ablate: training arm '" + name + "'");
        Trainer tr(cfg);
        TrainResult res = tr.train();
        AblationRow row;
        row.name = name;
        row.loss_kind = cfg.loss.kind;
        row.direct_init = cfg.model.direct_init;
        row.rnn_blocks = cfg.model.rnn_blocks;
        row.steps = tr.step();
        row.train_epe = tr.evaluate_samples(tr.train_set(), cfg.model.iters_train).epe;
        row.holdout_epe = tr.holdout_set()
                              ? tr.evaluate_samples(*tr.holdout_set(), cfg.model.iters_train).epe
                              : row.train_epe;
        row.final_loss = res.steps.empty() ? 0.0 : res.steps.back().final_loss;
        row.final_loss_curve.reserve(res.steps.size());
        for (const StepLog& s : res.steps) row.final_loss_curve.push_back(s.final_loss);
        rows.push_back(std::move(row));
        if (log)
            log("ablate: arm '" + name + "' holdout EPE " + std::to_string(row.holdout_epe));
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream os;
    os << std::left << std::setw(18) << "arm" << std::setw(8) << "init" << std::setw(9)
       << "blocks" << std::setw(16) << "loss" << std::setw(12) << "train_epe" << std::setw(12)
       << "holdout_epe" << std::setw(8) << "steps" << "\n";
    for (const AblationRow& r : rows) {
        os << std::left << std::setw(18) << r.name << std::setw(8)
           << (r.direct_init ? "yes" : "no") << std::setw(9) << r.rnn_blocks << std::setw(16)
           << loss_kind_name(r.loss_kind) << std::setw(12) << std::fixed << std::setprecision(4)
           << r.train_epe << std::setw(12) << r.holdout_epe << std::setw(8) << r.steps << "\n";
    }
    os << "# raft_gru arm: not available in this build\n";
    return os.str();
}

}  // namespace iterflow
