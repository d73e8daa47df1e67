// Copyright (c) 2026 The iterflow Authors
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode tape. Each forward op records a node holding its output value
// and a backward closure that scatters the node's cotangent into its parents.
// A tape is confined to one thread of execution; ops themselves are pure.

#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "iterflow/tensor.hpp"

namespace iterflow {

template <typename T>
class TapeT {
public:
    struct Node {
        Tensor4T<T> value;
        Tensor4T<T> grad;  // allocated (zeroed) at the start of each backward pass
        std::function<void(TapeT&, int)> backward;  // empty for leaves and constants
        bool needs_grad = false;
    };

    int add(Tensor4T<T> value, bool needs_grad, std::function<void(TapeT&, int)> backward) {
        nodes_.push_back(Node{std::move(value), Tensor4T<T>{}, std::move(backward), needs_grad});
        return static_cast<int>(nodes_.size()) - 1;
    }

    Node& node(int id) {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("tape: invalid node id");
        return nodes_[static_cast<size_t>(id)];
    }
    const Node& node(int id) const {
        if (id < 0 || id >= static_cast<int>(nodes_.size()))
            throw std::invalid_argument("tape: invalid node id");
        return nodes_[static_cast<size_t>(id)];
    }

    const Tensor4T<T>& value(int id) const { return node(id).value; }
    const Tensor4T<T>& grad(int id) const { return node(id).grad; }
    Tensor4T<T>& grad_mut(int id) { return node(id).grad; }
    bool needs_grad(int id) const { return node(id).needs_grad; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Runs reverse accumulation from `root` seeded with `seed`. Gradients of all
    // nodes between the leaves and the root are (re)initialized to zero first.
    void backward(int root, const Tensor4T<T>& seed) {
        if (nodes_.empty()) throw std::logic_error("tape: backward before any forward op");
        Node& r = node(root);
        if (seed.shape != r.value.shape)
            throw std::invalid_argument("tape: seed shape " + shape_str(seed.shape) +
                                        " does not match root " + shape_str(r.value.shape));
        for (Node& n : nodes_) {
            if (n.needs_grad) {
                n.grad.resize(n.value.shape[0], n.value.shape[1], n.value.shape[2], n.value.shape[3]);
            } else {
                n.grad = Tensor4T<T>{};
            }
        }
        if (!r.needs_grad)
            throw std::logic_error("tape: root does not require gradients");
        r.grad = seed;
        for (int i = root; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.needs_grad && n.backward) n.backward(*this, i);
        }
    }

    void clear() { nodes_.clear(); }

private:
    std::vector<Node> nodes_;
};

// Lightweight handle to a tape node.
template <typename T>
struct VarT {
    TapeT<T>* tape = nullptr;
    int id = -1;

    const Tensor4T<T>& value() const { return tape->value(id); }
    const Tensor4T<T>& grad() const { return tape->grad(id); }
    bool needs_grad() const { return tape->needs_grad(id); }
    std::array<int, 4> shape() const { return tape->value(id).shape; }
};

using Tape = TapeT<float>;
using Var = VarT<float>;

// Leaf with gradient tracking (parameters, probe inputs).
template <typename T>
VarT<T> leaf(TapeT<T>& tape, Tensor4T<T> v) {
    int id = tape.add(std::move(v), true, nullptr);
    return {&tape, id};
}

// Constant input; backward never descends into it.
template <typename T>
VarT<T> constant(TapeT<T>& tape, Tensor4T<T> v) {
    int id = tape.add(std::move(v), false, nullptr);
    return {&tape, id};
}

}  // namespace iterflow
