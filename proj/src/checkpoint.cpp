// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "iterflow/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

namespace iterflow {

namespace {
constexpr char kMagic[4] = {'I', 'F', 'C', 'K'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(kMagic, 4);
    detail::put_u32(f, kVersion);
    detail::put_u64(f, data.step);
    detail::put_u32(f, static_cast<uint32_t>(data.config_hash.size()));
    f.write(data.config_hash.data(), static_cast<std::streamsize>(data.config_hash.size()));
    detail::put_u32(f, static_cast<uint32_t>(data.tensors.size()));
    uint64_t offset = 0;
    for (const auto& [name, t] : data.tensors) {
        detail::put_u32(f, static_cast<uint32_t>(name.size()));
        f.write(name.data(), static_cast<std::streamsize>(name.size()));
        for (int i = 0; i < 4; ++i) detail::put_i32(f, t.shape[i]);
        detail::put_u64(f, offset);
        offset += t.numel() * 4;
    }
    for (const auto& [name, t] : data.tensors)
        for (float v : t.data) detail::put_f32(f, v);
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::string(magic, 4) != std::string(kMagic, 4))
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    const uint32_t version = detail::get_u32(f);
    if (version != kVersion)
        throw std::runtime_error("load_checkpoint: unsupported version " +
                                 std::to_string(version));
    CheckpointData data;
    data.step = detail::get_u64(f);
    const uint32_t hash_len = detail::get_u32(f);
    if (hash_len > 4096) throw std::runtime_error("load_checkpoint: implausible hash length");
    data.config_hash.resize(hash_len);
    f.read(data.config_hash.data(), hash_len);
    const uint32_t count = detail::get_u32(f);
    if (!f || count > 100000) throw std::runtime_error("load_checkpoint: corrupt manifest");
    std::vector<uint64_t> offsets;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t name_len = detail::get_u32(f);
        if (name_len > 4096) throw std::runtime_error("load_checkpoint: implausible name");
        std::string name(name_len, '\0');
        f.read(name.data(), name_len);
        std::array<int, 4> s;
        for (int k = 0; k < 4; ++k) s[static_cast<size_t>(k)] = detail::get_i32(f);
        offsets.push_back(detail::get_u64(f));
        if (!f) throw std::runtime_error("load_checkpoint: truncated manifest in " + path);
        data.tensors.emplace_back(std::move(name), Tensor4f(s[0], s[1], s[2], s[3]));
    }
    uint64_t expect = 0;
    for (uint32_t i = 0; i < count; ++i) {
        if (offsets[i] != expect)
            throw std::runtime_error("load_checkpoint: manifest offsets inconsistent");
        expect += data.tensors[i].second.numel() * 4;
    }
    for (auto& [name, t] : data.tensors)
        for (size_t i = 0; i < t.numel(); ++i) t.data[i] = detail::get_f32(f);
    if (!f) throw std::runtime_error("load_checkpoint: truncated payload in " + path);
    return data;
}

}  // namespace iterflow
