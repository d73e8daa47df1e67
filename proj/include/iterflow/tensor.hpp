// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense 4D tensor in batch-channel-row-col layout, row-major. This fixed
// layout keeps golden files and test oracles bit-stable.

#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace iterflow {

template <typename T>
struct Tensor4T {
    std::array<int, 4> shape{0, 0, 0, 0};  // (n, c, h, w)
    std::vector<T> data;

    Tensor4T() = default;
    Tensor4T(int n, int c, int h, int w) { resize(n, c, h, w); }

    void resize(int n, int c, int h, int w) {
        if (n < 0 || c < 0 || h < 0 || w < 0)
            throw std::invalid_argument("Tensor4: negative extent");
        shape = {n, c, h, w};
        data.assign(static_cast<size_t>(n) * c * h * w, T(0));
    }

    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }
    size_t numel() const { return data.size(); }
    bool empty() const { return data.empty(); }

    size_t index(int in, int ic, int ih, int iw) const {
        return ((static_cast<size_t>(in) * shape[1] + ic) * shape[2] + ih) * shape[3] + iw;
    }
    T& at(int in, int ic, int ih, int iw) { return data[index(in, ic, ih, iw)]; }
    T at(int in, int ic, int ih, int iw) const { return data[index(in, ic, ih, iw)]; }

    T& operator[](size_t i) { return data[i]; }
    T operator[](size_t i) const { return data[i]; }

    bool same_shape(const Tensor4T& o) const { return shape == o.shape; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Tensor4T<U> cast() const {
        Tensor4T<U> out(shape[0], shape[1], shape[2], shape[3]);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor4f = Tensor4T<float>;
using Tensor4d = Tensor4T<double>;

inline std::string shape_str(const std::array<int, 4>& s) {
    return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," +
           std::to_string(s[2]) + "," + std::to_string(s[3]) + ")";
}

inline void check_same_shape(const std::array<int, 4>& a, const std::array<int, 4>& b,
                             const char* what) {
    if (a != b)
        throw std::invalid_argument(std::string(what) + ": shape mismatch " + shape_str(a) +
                                    " vs " + shape_str(b));
}

// --- little-endian scalar IO -------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

inline void put_i32(std::ostream& os, int32_t v) { put_u32(os, static_cast<uint32_t>(v)); }
inline int32_t get_i32(std::istream& is) { return static_cast<int32_t>(get_u32(is)); }

inline void put_f32(std::ostream& os, float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(os, u);
}

inline float get_f32(std::istream& is) {
    uint32_t u = get_u32(is);
    float v;
    std::memcpy(&v, &u, 4);
    return v;
}

inline void put_u64(std::ostream& os, uint64_t v) {
    put_u32(os, static_cast<uint32_t>(v & 0xffffffffu));
    put_u32(os, static_cast<uint32_t>(v >> 32));
}

inline uint64_t get_u64(std::istream& is) {
    uint64_t lo = get_u32(is);
    uint64_t hi = get_u32(is);
    return lo | (hi << 32);
}

}  // namespace detail

// Tensor dump format: 4 x int32 extents followed by float32 payload, row-major,
// little-endian regardless of host.
template <typename T>
void save_tensor(std::ostream& os, const Tensor4T<T>& t) {
    for (int i = 0; i < 4; ++i) detail::put_i32(os, t.shape[i]);
    for (T v : t.data) detail::put_f32(os, static_cast<float>(v));
}

template <typename T>
void save_tensor(const std::string& path, const Tensor4T<T>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    save_tensor(f, t);
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline Tensor4f load_tensor(std::istream& is) {
    std::array<int, 4> s;
    for (int i = 0; i < 4; ++i) s[i] = detail::get_i32(is);
    if (!is) throw std::runtime_error("tensor dump: truncated header");
    for (int e : s)
        if (e < 0) throw std::runtime_error("tensor dump: negative extent");
    Tensor4f t(s[0], s[1], s[2], s[3]);
    for (size_t i = 0; i < t.numel(); ++i) t.data[i] = detail::get_f32(is);
    if (!is) throw std::runtime_error("tensor dump: truncated payload");
    return t;
}

inline Tensor4f load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for read: " + path);
    return load_tensor(f);
}

}  // namespace iterflow
