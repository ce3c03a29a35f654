#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "stlm/tensor.hpp"

namespace stlm {

// Records ops in creation order. Creation order is a valid topological
// order (inputs always exist before the op that consumes them), so one
// reverse sweep propagates gradients visiting each node exactly once.
template <typename S>
class Tape {
public:
    struct Node {
        TensorPtr<S> output;
        std::function<void()> backward;
        int visits{0};
    };

    bool grad_enabled() const { return grad_enabled_; }
    void set_grad_enabled(bool on) { grad_enabled_ = on; }

    void record(TensorPtr<S> output, std::function<void()> backward) {
        nodes_.push_back(Node{std::move(output), std::move(backward), 0});
    }

    // Seeds root->grad with ones and sweeps the tape in reverse.
    void backward(const TensorPtr<S>& root) {
        root->ensure_grad();
        std::fill(root->grad.begin(), root->grad.end(), S(1));
        for (size_t i = nodes_.size(); i-- > 0;) {
            Node& n = nodes_[i];
            ++n.visits;
            if (!n.output->grad.empty()) n.backward();
        }
    }

    void clear() { nodes_.clear(); }
    size_t size() const { return nodes_.size(); }

    std::vector<int> visit_counts() const {
        std::vector<int> counts;
        counts.reserve(nodes_.size());
        for (const auto& n : nodes_) counts.push_back(n.visits);
        return counts;
    }

private:
    std::vector<Node> nodes_;
    bool grad_enabled_{true};
};

// RAII guard for inference-mode forward passes.
template <typename S>
class NoGradGuard {
public:
    explicit NoGradGuard(Tape<S>& tape) : tape_(tape), prev_(tape.grad_enabled()) {
        tape_.set_grad_enabled(false);
    }
    ~NoGradGuard() { tape_.set_grad_enabled(prev_); }

private:
    Tape<S>& tape_;
    bool prev_;
};

} // namespace stlm
