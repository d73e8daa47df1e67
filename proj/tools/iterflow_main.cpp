// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line entry points: data generation, training, inference,
// evaluation, and the ablation harness.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical divergence.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "iterflow/checkpoint.hpp"
#include "iterflow/config.hpp"
#include "iterflow/flowio.hpp"
#include "iterflow/metrics.hpp"
#include "iterflow/model.hpp"
#include "iterflow/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace iterflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDiverged = 4;

class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

std::string resolve_out_dir(const std::string& flag_out, const std::string& command,
                            const std::string& hash) {
    if (!flag_out.empty()) return flag_out;
    if (const char* root = std::getenv("ITERFLOW_OUT_ROOT"))
        return (fs::path(root) / (command + "-" + hash.substr(0, 8))).string();
    return (fs::path("runs") / (command + "-" + hash.substr(0, 8))).string();
}

// Every run writes its manifest before doing any work.
void write_manifest(const fs::path& dir, const std::string& command,
                    const std::string& config_path, uint64_t seed, const std::string& hash,
                    const json& effective) {
    fs::create_directories(dir);
    json m{{"command", command}, {"config_path", config_path}, {"seed", seed},
           {"config_hash", hash}, {"output_dir", dir.string()}, {"effective_config", effective}};
    std::ofstream f(dir / "manifest.json");
    if (!f) throw DataError("cannot write manifest in " + dir.string());
    f << m.dump(2) << "\n";
}

Tensor4f load_image_any(const std::string& path) {
    if (path.size() > 3 && path.substr(path.size() - 3) == ".t4") return load_tensor(path);
    return read_ppm(path);
}

Tensor4f pad_to_multiple(const Tensor4f& img, int mult) {
    const int h = img.h(), w = img.w();
    const int ph = (h + mult - 1) / mult * mult;
    const int pw = (w + mult - 1) / mult * mult;
    if (ph == h && pw == w) return img;
    Tensor4f out(img.n(), img.c(), ph, pw);
    for (int n = 0; n < img.n(); ++n)
        for (int c = 0; c < img.c(); ++c)
            for (int y = 0; y < ph; ++y)
                for (int x = 0; x < pw; ++x)
                    out.at(n, c, y, x) = img.at(n, c, std::min(y, h - 1), std::min(x, w - 1));
    return out;
}

Tensor4f crop(const Tensor4f& img, int h, int w) {
    Tensor4f out(img.n(), img.c(), h, w);
    for (int n = 0; n < img.n(); ++n)
        for (int c = 0; c < img.c(); ++c)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) out.at(n, c, y, x) = img.at(n, c, y, x);
    return out;
}

Tensor4f resize_plain(const Tensor4f& img, int h, int w) {
    Tape tape;
    return resize_bilinear(constant(tape, img), h, w).value();
}

struct LoadedModel {
    TrainConfig cfg;
    std::unique_ptr<ParamStore> store;
    std::unique_ptr<Model> model;
    uint64_t step = 0;
};

// Checkpoints carry a JSON sidecar ("<ckpt>.json") holding the training
// config the archive was produced with.
LoadedModel load_model(const std::string& ckpt_path) {
    LoadedModel lm;
    const std::string sidecar = ckpt_path + ".json";
    if (!fs::exists(sidecar))
        throw DataError("missing config sidecar " + sidecar + " next to the checkpoint");
    lm.cfg = parse_train_config(load_json_file(sidecar));
    lm.store = std::make_unique<ParamStore>();
    lm.model = std::make_unique<Model>(lm.cfg.model, lm.cfg.loss.kind, lm.cfg.seed,
                                       lm.store.get());
    CheckpointData data = load_checkpoint(ckpt_path);
    lm.step = data.step;
    for (size_t i = 0; i < lm.store->size(); ++i) {
        auto& e = lm.store->entry(i);
        const Tensor4f* w = data.find("model." + e.name);
        if (!w) throw DataError("checkpoint is missing tensor model." + e.name);
        if (w->shape != e.value.shape) throw DataError("checkpoint shape mismatch for " + e.name);
        e.value = *w;
    }
    return lm;
}

std::string sample_stem(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%04d", index);
    return buf;
}

// --- gen -----------------------------------------------------------------------

int cmd_gen(const DataGenConfig& cfg, const std::string& config_path, const std::string& out_flag) {
    const json effective = datagen_config_to_json(cfg);
    const std::string hash = config_hash(effective);
    const fs::path dir = resolve_out_dir(out_flag, "gen", hash);
    write_manifest(dir, "gen", config_path, cfg.seed, hash, effective);

    std::ofstream listing(dir / "dataset.txt");
    listing << "# index seed config_hash meta\n";
    std::vector<SamplePair> samples = generate_dataset(cfg);
    for (size_t i = 0; i < samples.size(); ++i) {
        const SamplePair& sp = samples[i];
        const std::string stem = (dir / sample_stem(static_cast<int>(i))).string();
        write_ppm(sp.i1, stem + ".i1.ppm");
        write_ppm(sp.i2, stem + ".i2.ppm");
        save_tensor(stem + ".i1.t4", sp.i1);
        save_tensor(stem + ".i2.t4", sp.i2);
        write_flo(sp.gt, stem + ".flo");
        listing << i << " " << sp.seed << " " << hash << " " << sp.meta << "\n";
    }
    std::cout << "wrote " << samples.size() << " samples to " << dir.string() << "\n";
    return kExitOk;
}

// --- train ---------------------------------------------------------------------

int cmd_train(const TrainConfig& cfg, const std::string& config_path, const std::string& out_flag,
              const std::string& resume, const std::string& init_from) {
    const json effective = train_config_to_json(cfg);
    const std::string hash = config_hash(effective);
    const fs::path dir = resolve_out_dir(out_flag, "train", hash);
    write_manifest(dir, "train", config_path, cfg.seed, hash, effective);

    Trainer trainer(cfg);
    if (!resume.empty() && !init_from.empty())
        throw ConfigError("--resume and --init-from are mutually exclusive");
    if (!resume.empty()) trainer.resume_from(resume);
    if (!init_from.empty()) trainer.init_weights_from(init_from);

    std::ofstream log(dir / "log.csv", resume.empty() ? std::ios::trunc : std::ios::app);
    if (resume.empty()) log << "step,lr,loss,final_loss\n";
    std::ofstream evals(dir / "evals.csv", resume.empty() ? std::ios::trunc : std::ios::app);
    if (resume.empty()) evals << "step,split,epe,px1,fl_all,wauc,n_valid\n";
    log.precision(10);
    evals.precision(10);

    TrainResult res = trainer.train(
        [&](const StepLog& s) {
            log << s.step << "," << s.lr << "," << s.loss << "," << s.final_loss << "\n";
            if ((s.step + 1) % 50 == 0) {
                std::cout << "step " << (s.step + 1) << "/" << cfg.steps << " loss " << s.loss
                          << "\n";
                log.flush();
            }
        },
        [&](const EvalLog& ev) {
            evals << ev.step << ",train," << ev.train.epe << "," << ev.train.px1 << ","
                  << ev.train.fl_all << "," << ev.train.wauc << "," << ev.train.n_valid << "\n";
            if (ev.holdout)
                evals << ev.step << ",holdout," << ev.holdout->epe << "," << ev.holdout->px1
                      << "," << ev.holdout->fl_all << "," << ev.holdout->wauc << ","
                      << ev.holdout->n_valid << "\n";
            evals.flush();
        });

    const std::string ckpt = (dir / "model.ckpt").string();
    trainer.save_checkpoint_file(ckpt, hash);
    std::ofstream sidecar(ckpt + ".json");
    sidecar << effective.dump(2) << "\n";
    std::cout << "checkpoint: " << ckpt << "\n";
    if (res.skipped_updates > 0)
        std::cout << "skipped " << res.skipped_updates << " non-finite update(s)\n";
    if (res.diverged) {
        std::cerr << "error: " << res.divergence_note << "\n";
        return kExitDiverged;
    }
    if (!res.evals.empty()) {
        std::cout << "train: " << format_report(res.evals.back().train) << "\n";
        if (res.evals.back().holdout)
            std::cout << "holdout: " << format_report(*res.evals.back().holdout) << "\n";
    }
    return kExitOk;
}

// --- infer ---------------------------------------------------------------------

int cmd_infer(const std::string& ckpt, const std::string& img1_path,
              const std::string& img2_path, int iters, int downsample,
              const std::string& out_flag) {
    LoadedModel lm = load_model(ckpt);
    Tensor4f i1 = load_image_any(img1_path);
    Tensor4f i2 = load_image_any(img2_path);
    if (i1.shape != i2.shape)
        throw DataError("image sizes differ: " + shape_str(i1.shape) + " vs " +
                        shape_str(i2.shape));
    if (downsample < 1) throw ConfigError("--downsample must be >= 1");
    if (iters < 0) iters = lm.cfg.model.iters_max;

    json effective{{"checkpoint", ckpt}, {"image1", img1_path}, {"image2", img2_path},
                   {"iters", iters},     {"downsample", downsample}};
    const std::string hash = config_hash(effective);
    const fs::path dir = resolve_out_dir(out_flag, "infer", hash);
    write_manifest(dir, "infer", "", lm.cfg.seed, hash, effective);

    const int H = i1.h(), W = i1.w();
    Tensor4f s1 = i1, s2 = i2;
    if (downsample > 1) {
        s1 = resize_plain(i1, H / downsample, W / downsample);
        s2 = resize_plain(i2, H / downsample, W / downsample);
    }
    const int sh = s1.h(), sw = s1.w();
    s1 = pad_to_multiple(s1, lm.cfg.model.downsample);
    s2 = pad_to_multiple(s2, lm.cfg.model.downsample);

    auto outs = lm.model->infer(s1, s2, iters);
    FlowField flow = outs.back().first;

    // crop the replicate padding, then undo the downsample-upsample protocol
    Tensor4f uv = crop(flow.uv, sh, sw);
    if (downsample > 1) {
        uv = resize_plain(uv, H, W);
        for (float& v : uv.data) v *= static_cast<float>(downsample);
    }
    FlowField full(H, W);
    full.uv = uv;
    write_flo(full, (dir / "flow.flo").string());
    write_ppm(flow_to_color(full), (dir / "flow_color.ppm").string());
    std::cout << "flow written to " << (dir / "flow.flo").string() << "\n";
    return kExitOk;
}

// --- eval ----------------------------------------------------------------------

int cmd_eval(const std::string& ckpt, const std::string& data_dir, int iters,
             bool error_maps, const std::string& out_flag) {
    LoadedModel lm = load_model(ckpt);
    if (iters < 0) iters = lm.cfg.model.iters_max;
    json effective{{"checkpoint", ckpt}, {"data", data_dir}, {"iters", iters}};
    const std::string hash = config_hash(effective);
    const fs::path dir = resolve_out_dir(out_flag, "eval", hash);
    write_manifest(dir, "eval", "", lm.cfg.seed, hash, effective);

    if (!fs::exists(fs::path(data_dir) / "dataset.txt"))
        throw DataError("no dataset.txt in " + data_dir);

    std::ofstream csv(dir / "metrics.csv");
    csv << metric_csv_header() << "\n";
    csv.precision(10);
    std::vector<MetricReport> reports;
    long skipped = 0;
    for (int index = 0;; ++index) {
        const std::string stem = (fs::path(data_dir) / sample_stem(index)).string();
        const bool has_images = (fs::exists(stem + ".i1.t4") || fs::exists(stem + ".i1.ppm")) &&
                                (fs::exists(stem + ".i2.t4") || fs::exists(stem + ".i2.ppm"));
        if (!has_images) break;
        if (!fs::exists(stem + ".flo")) {
            std::cerr << "warning: missing ground truth for " << sample_stem(index)
                      << ", skipped\n";
            ++skipped;
            continue;
        }
        Tensor4f i1 = fs::exists(stem + ".i1.t4") ? load_tensor(stem + ".i1.t4")
                                                  : read_ppm(stem + ".i1.ppm");
        Tensor4f i2 = fs::exists(stem + ".i2.t4") ? load_tensor(stem + ".i2.t4")
                                                  : read_ppm(stem + ".i2.ppm");
        FlowField gt = read_flo(stem + ".flo");
        auto outs = lm.model->infer(pad_to_multiple(i1, lm.cfg.model.downsample),
                                    pad_to_multiple(i2, lm.cfg.model.downsample), iters);
        FlowField pred(gt.height(), gt.width());
        pred.uv = crop(outs.back().first.uv, gt.height(), gt.width());
        MetricReport r = evaluate(pred, gt);
        reports.push_back(r);
        csv << metric_csv_row(sample_stem(index) + std::string(",iters=") + std::to_string(iters),
                              r)
            << "\n";
        if (error_maps)
            write_ppm(error_map_image(pred, gt),
                      (dir / (sample_stem(index) + std::string(".err.ppm"))).string());
    }
    if (reports.empty()) throw DataError("no evaluable samples found in " + data_dir);
    MetricReport agg = aggregate(reports);
    csv << metric_csv_row("aggregate,iters=" + std::to_string(iters), agg) << "\n";
    std::cout << "evaluated " << reports.size() << " sample(s), skipped " << skipped << "\n"
              << format_report(agg) << "\n"
              << "rows: " << (dir / "metrics.csv").string() << "\n";
    return kExitOk;
}

// --- ablate --------------------------------------------------------------------

int cmd_ablate(const json& cfg_json, const std::string& config_path,
               const std::string& out_flag) {
    if (!cfg_json.contains("train")) throw ConfigError("ablate: config needs a 'train' section");
    TrainConfig base = parse_train_config(cfg_json.at("train"));
    std::vector<ConfigDelta> axes;
    if (cfg_json.contains("axes")) axes = parse_ablation_axes(cfg_json.at("axes"));
    for (auto it = cfg_json.begin(); it != cfg_json.end(); ++it)
        if (it.key() != "train" && it.key() != "axes")
            throw ConfigError("ablate: unknown field '" + it.key() + "'");

    json effective{{"train", train_config_to_json(base)}, {"axes", ablation_axes_to_json(axes)}};
    const std::string hash = config_hash(effective);
    const fs::path dir = resolve_out_dir(out_flag, "ablate", hash);
    write_manifest(dir, "ablate", config_path, base.seed, hash, effective);

    auto rows = ablate(base, axes, [](const std::string& msg) { std::cout << msg << "\n"; });

    const std::string table = format_ablation_table(rows);
    std::ofstream tf(dir / "ablation.txt");
    tf << table;
    std::ofstream cf(dir / "ablation.csv");
    cf << "arm,init,rnn_blocks,loss,train_epe,holdout_epe,steps\n";
    cf.precision(10);
    for (const AblationRow& r : rows)
        cf << r.name << "," << (r.direct_init ? "yes" : "no") << "," << r.rnn_blocks << ","
           << loss_kind_name(r.loss_kind) << "," << r.train_epe << "," << r.holdout_epe << ","
           << r.steps << "\n";
    // per-arm effective configs, for the controlled-variable audit
    json arm_cfgs{{"base", train_config_to_json(base)}};
    for (const ConfigDelta& d : axes)
        arm_cfgs[d.name] = train_config_to_json(apply_delta(base, d));
    std::ofstream af(dir / "arm_configs.json");
    af << arm_cfgs.dump(2) << "\n";
    std::cout << table;
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"iterflow: iterative optical-flow estimation on the CPU"};
    app.require_subcommand(1);

    std::string config_path, out_dir;

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string gen_mode;
    int gen_count = -1, gen_w = -1, gen_h = -1;
    int64_t gen_seed = -1;
    double gen_max_disp = -1, gen_motion = -1;
    gen->add_option("--config", config_path, "JSON config file");
    gen->add_option("--out", out_dir, "output directory");
    gen->add_option("--mode", gen_mode, "affine or rigid");
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--width", gen_w, "sample width");
    gen->add_option("--height", gen_h, "sample height");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--max-disp", gen_max_disp, "affine displacement cap, px");
    gen->add_option("--motion-scale", gen_motion, "rigid motion scale");

    // train
    auto* train = app.add_subcommand("train", "train a model");
    std::string resume, init_from;
    int tr_steps = -1, tr_batch = -1;
    int64_t tr_seed = -1;
    double tr_lr = -1;
    train->add_option("--config", config_path, "JSON config file");
    train->add_option("--out", out_dir, "output directory");
    train->add_option("--steps", tr_steps, "training steps");
    train->add_option("--batch", tr_batch, "batch size");
    train->add_option("--lr", tr_lr, "peak learning rate");
    train->add_option("--seed", tr_seed, "run seed");
    train->add_option("--resume", resume, "checkpoint to resume (weights+moments+step)");
    train->add_option("--init-from", init_from, "checkpoint to initialize weights from");

    // infer
    auto* infer = app.add_subcommand("infer", "estimate flow for an image pair");
    std::string ckpt, img1, img2;
    int in_iters = -1, in_down = 1;
    infer->add_option("--ckpt", ckpt, "checkpoint path")->required();
    infer->add_option("--image1", img1, "first frame (ppm or t4)")->required();
    infer->add_option("--image2", img2, "second frame (ppm or t4)")->required();
    infer->add_option("--iters", in_iters, "refinement iterations");
    infer->add_option("--downsample", in_down, "downsample-upsample protocol factor");
    infer->add_option("--out", out_dir, "output directory");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint over a dataset");
    std::string data_dir;
    bool err_maps = false;
    int ev_iters = -1;
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", data_dir, "dataset directory (from gen)")->required();
    eval_cmd->add_option("--iters", ev_iters, "refinement iterations");
    eval_cmd->add_flag("--error-maps", err_maps, "write per-sample error maps");
    eval_cmd->add_option("--out", out_dir, "output directory");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "run the ablation harness");
    ablate_cmd->add_option("--config", config_path, "JSON config with train + axes")->required();
    ablate_cmd->add_option("--out", out_dir, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            json j = config_path.empty() ? json::object() : load_json_file(config_path);
            DataGenConfig cfg = parse_datagen_config(j, "gen");
            if (!gen_mode.empty())
                cfg.mode = gen_mode == "rigid" ? DataMode::Rigid : DataMode::Affine;
            if (gen_count >= 0) cfg.count = gen_count;
            if (gen_w > 0) cfg.width = gen_w;
            if (gen_h > 0) cfg.height = gen_h;
            if (gen_seed >= 0) cfg.seed = static_cast<uint64_t>(gen_seed);
            if (gen_max_disp >= 0) cfg.max_disp = gen_max_disp;
            if (gen_motion >= 0) cfg.motion_scale = gen_motion;
            return cmd_gen(cfg, config_path, out_dir);
        }
        if (train->parsed()) {
            json j = config_path.empty() ? json::object() : load_json_file(config_path);
            TrainConfig cfg = parse_train_config(j);
            if (tr_steps >= 0) cfg.steps = tr_steps;
            if (tr_batch > 0) cfg.batch = tr_batch;
            if (tr_lr > 0) cfg.lr = tr_lr;
            if (tr_seed >= 0) cfg.seed = static_cast<uint64_t>(tr_seed);
            return cmd_train(cfg, config_path, out_dir, resume, init_from);
        }
        if (infer->parsed()) return cmd_infer(ckpt, img1, img2, in_iters, in_down, out_dir);
        if (eval_cmd->parsed()) return cmd_eval(ckpt, data_dir, ev_iters, err_maps, out_dir);
        if (ablate_cmd->parsed()) return cmd_ablate(load_json_file(config_path), config_path,
                                                    out_dir);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitOk;
}
