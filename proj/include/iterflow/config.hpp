// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// JSON configuration schema with strict unknown-field rejection, plus the
// content hash used by run manifests and checkpoints.

#pragma once

#include <json.hpp>

#include <string>
#include <vector>

#include "iterflow/trainer.hpp"

namespace iterflow {

// Thrown for schema violations; the CLI maps it to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

DataGenConfig parse_datagen_config(const nlohmann::json& j, const std::string& ctx);
nlohmann::json datagen_config_to_json(const DataGenConfig& cfg);

TrainConfig parse_train_config(const nlohmann::json& j);
nlohmann::json train_config_to_json(const TrainConfig& cfg);

std::vector<ConfigDelta> parse_ablation_axes(const nlohmann::json& j);
nlohmann::json ablation_axes_to_json(const std::vector<ConfigDelta>& axes);

LossKind parse_loss_kind(const std::string& name);

// FNV-1a 64-bit over the canonical (sorted-key, compact) JSON dump, hex.
std::string config_hash(const nlohmann::json& j);

nlohmann::json load_json_file(const std::string& path);

}  // namespace iterflow
