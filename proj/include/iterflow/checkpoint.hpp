// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Named-tensor archive: versioned header, manifest of (name, shape, offset),
// then concatenated float32 payloads, all little-endian.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "iterflow/tensor.hpp"

namespace iterflow {

struct CheckpointData {
    std::vector<std::pair<std::string, Tensor4f>> tensors;  // manifest order
    uint64_t step = 0;
    std::string config_hash;

    const Tensor4f* find(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return &t;
        return nullptr;
    }
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

}  // namespace iterflow
