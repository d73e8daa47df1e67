// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "iterflow/config.hpp"

#include <fstream>

namespace iterflow {

using nlohmann::json;

namespace {

// silent typos in configs are the dominant reproducibility hazard: reject
// any field the schema does not know
void check_keys(const json& j, const std::vector<std::string>& allowed, const std::string& ctx) {
    if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) {
                ok = true;
                break;
            }
        if (!ok) throw ConfigError(ctx + ": unknown field '" + it.key() + "'");
    }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback, const std::string& ctx) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(ctx + ": field '" + key + "': " + e.what());
    }
}

}  // namespace

LossKind parse_loss_kind(const std::string& name) {
    if (name == "mol") return LossKind::MoL;
    if (name == "naive_laplace") return LossKind::NaiveLaplace;
    if (name == "naive_mol") return LossKind::NaiveMoL;
    if (name == "l1") return LossKind::L1;
    if (name == "mog") return LossKind::MoG;
    throw ConfigError("unknown loss kind '" + name +
                      "' (expected mol, naive_laplace, naive_mol, l1, or mog)");
}

DataGenConfig parse_datagen_config(const json& j, const std::string& ctx) {
    check_keys(j, {"mode", "count", "width", "height", "max_disp", "motion_scale", "seed"}, ctx);
    DataGenConfig cfg;
    const std::string mode = get_or<std::string>(j, "mode", "affine", ctx);
    if (mode == "affine")
        cfg.mode = DataMode::Affine;
    else if (mode == "rigid")
        cfg.mode = DataMode::Rigid;
    else
        throw ConfigError(ctx + ": unknown mode '" + mode + "' (expected affine or rigid)");
    cfg.count = get_or<int>(j, "count", cfg.count, ctx);
    cfg.width = get_or<int>(j, "width", cfg.width, ctx);
    cfg.height = get_or<int>(j, "height", cfg.height, ctx);
    cfg.max_disp = get_or<double>(j, "max_disp", cfg.max_disp, ctx);
    cfg.motion_scale = get_or<double>(j, "motion_scale", cfg.motion_scale, ctx);
    cfg.seed = get_or<uint64_t>(j, "seed", cfg.seed, ctx);
    if (cfg.count < 0 || cfg.width < 8 || cfg.height < 8)
        throw ConfigError(ctx + ": count must be >= 0 and extents >= 8");
    return cfg;
}

json datagen_config_to_json(const DataGenConfig& cfg) {
    return json{{"mode", cfg.mode == DataMode::Affine ? "affine" : "rigid"},
                {"count", cfg.count},
                {"width", cfg.width},
                {"height", cfg.height},
                {"max_disp", cfg.max_disp},
                {"motion_scale", cfg.motion_scale},
                {"seed", cfg.seed}};
}

TrainConfig parse_train_config(const json& j) {
    check_keys(j,
               {"seed", "steps", "batch", "lr", "lr_schedule", "clip_norm", "weight_decay",
                "eval_every", "loss", "model", "data", "holdout"},
               "train");
    TrainConfig cfg;
    cfg.seed = get_or<uint64_t>(j, "seed", cfg.seed, "train");
    cfg.steps = get_or<int>(j, "steps", cfg.steps, "train");
    cfg.batch = get_or<int>(j, "batch", cfg.batch, "train");
    cfg.lr = get_or<double>(j, "lr", cfg.lr, "train");
    cfg.clip_norm = get_or<double>(j, "clip_norm", cfg.clip_norm, "train");
    cfg.weight_decay = get_or<double>(j, "weight_decay", cfg.weight_decay, "train");
    cfg.eval_every = get_or<int>(j, "eval_every", cfg.eval_every, "train");
    const std::string sched = get_or<std::string>(j, "lr_schedule", "one_cycle", "train");
    if (sched == "one_cycle")
        cfg.schedule = LrSchedule::OneCycle;
    else if (sched == "constant")
        cfg.schedule = LrSchedule::Constant;
    else
        throw ConfigError("train: unknown lr_schedule '" + sched + "'");

    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, {"kind", "gamma", "beta_upper"}, "train.loss");
        cfg.loss.kind = parse_loss_kind(get_or<std::string>(l, "kind", "mol", "train.loss"));
        cfg.loss.gamma = get_or<double>(l, "gamma", cfg.loss.gamma, "train.loss");
        cfg.loss.beta_upper = get_or<double>(l, "beta_upper", cfg.loss.beta_upper, "train.loss");
        if (!(cfg.loss.gamma > 0.0) || cfg.loss.gamma > 1.0)
            throw ConfigError("train.loss: gamma must be in (0,1]");
    }
    if (j.contains("model")) {
        const json& m = j.at("model");
        check_keys(m,
                   {"feature_dim", "hidden_dim", "context_dim", "motion_dim", "levels", "radius",
                    "iters_train", "iters_max", "rnn_blocks", "direct_init"},
                   "train.model");
        cfg.model.feature_dim = get_or<int>(m, "feature_dim", cfg.model.feature_dim, "model");
        cfg.model.hidden_dim = get_or<int>(m, "hidden_dim", cfg.model.hidden_dim, "model");
        cfg.model.context_dim = get_or<int>(m, "context_dim", cfg.model.context_dim, "model");
        cfg.model.motion_dim = get_or<int>(m, "motion_dim", cfg.model.motion_dim, "model");
        cfg.model.levels = get_or<int>(m, "levels", cfg.model.levels, "model");
        cfg.model.radius = get_or<int>(m, "radius", cfg.model.radius, "model");
        cfg.model.iters_train = get_or<int>(m, "iters_train", cfg.model.iters_train, "model");
        cfg.model.iters_max = get_or<int>(m, "iters_max", cfg.model.iters_max, "model");
        cfg.model.rnn_blocks = get_or<int>(m, "rnn_blocks", cfg.model.rnn_blocks, "model");
        cfg.model.direct_init = get_or<bool>(m, "direct_init", cfg.model.direct_init, "model");
        if (cfg.model.levels < 1 || cfg.model.radius < 0 || cfg.model.iters_train < 0 ||
            cfg.model.iters_max < cfg.model.iters_train || cfg.model.rnn_blocks < 1)
            throw ConfigError("train.model: invalid architecture bounds");
    }
    cfg.model.beta_upper = cfg.loss.beta_upper;
    if (j.contains("data")) cfg.data = parse_datagen_config(j.at("data"), "train.data");
    if (j.contains("holdout"))
        cfg.holdout = parse_datagen_config(j.at("holdout"), "train.holdout");
    if (cfg.steps < 0 || cfg.batch < 1) throw ConfigError("train: steps/batch out of range");
    if (cfg.lr <= 0) throw ConfigError("train: lr must be positive");
    return cfg;
}

json train_config_to_json(const TrainConfig& cfg) {
    json j{{"seed", cfg.seed},
           {"steps", cfg.steps},
           {"batch", cfg.batch},
           {"lr", cfg.lr},
           {"lr_schedule", cfg.schedule == LrSchedule::OneCycle ? "one_cycle" : "constant"},
           {"clip_norm", cfg.clip_norm},
           {"weight_decay", cfg.weight_decay},
           {"eval_every", cfg.eval_every},
           {"loss",
            {{"kind", loss_kind_name(cfg.loss.kind)},
             {"gamma", cfg.loss.gamma},
             {"beta_upper", cfg.loss.beta_upper}}},
           {"model",
            {{"feature_dim", cfg.model.feature_dim},
             {"hidden_dim", cfg.model.hidden_dim},
             {"context_dim", cfg.model.context_dim},
             {"motion_dim", cfg.model.motion_dim},
             {"levels", cfg.model.levels},
             {"radius", cfg.model.radius},
             {"iters_train", cfg.model.iters_train},
             {"iters_max", cfg.model.iters_max},
             {"rnn_blocks", cfg.model.rnn_blocks},
             {"direct_init", cfg.model.direct_init}}},
           {"data", datagen_config_to_json(cfg.data)}};
    if (cfg.holdout) j["holdout"] = datagen_config_to_json(*cfg.holdout);
    return j;
}

std::vector<ConfigDelta> parse_ablation_axes(const json& j) {
    if (!j.is_array()) throw ConfigError("axes: expected an array of config deltas");
    std::vector<ConfigDelta> out;
    for (const json& a : j) {
        check_keys(a, {"name", "loss_kind", "direct_init", "rnn_blocks"}, "axes[]");
        ConfigDelta d;
        if (!a.contains("name")) throw ConfigError("axes[]: every delta needs a name");
        d.name = a.at("name").get<std::string>();
        if (a.contains("loss_kind"))
            d.loss_kind = parse_loss_kind(a.at("loss_kind").get<std::string>());
        if (a.contains("direct_init")) d.direct_init = a.at("direct_init").get<bool>();
        if (a.contains("rnn_blocks")) d.rnn_blocks = a.at("rnn_blocks").get<int>();
        if (!d.loss_kind && !d.direct_init && !d.rnn_blocks)
            throw ConfigError("axes[]: delta '" + d.name + "' changes nothing");
        out.push_back(std::move(d));
    }
    return out;
}

json ablation_axes_to_json(const std::vector<ConfigDelta>& axes) {
    json arr = json::array();
    for (const ConfigDelta& d : axes) {
        json a{{"name", d.name}};
        if (d.loss_kind) a["loss_kind"] = loss_kind_name(*d.loss_kind);
        if (d.direct_init) a["direct_init"] = *d.direct_init;
        if (d.rnn_blocks) a["rnn_blocks"] = *d.rnn_blocks;
        arr.push_back(std::move(a));
    }
    return arr;
}

std::string config_hash(const json& j) {
    const std::string dump = j.dump();  // nlohmann orders object keys, so this is canonical
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : dump) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

json load_json_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    try {
        return json::parse(f);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

}  // namespace iterflow
