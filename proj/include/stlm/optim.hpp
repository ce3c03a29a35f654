#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "stlm/config.hpp"
#include "stlm/model.hpp"

namespace stlm {

// Linear warmup to peak_lr over warmup_iters, then cosine decay to
// min_lr_ratio * peak_lr at total_iters. Iterations are 1-based so the
// first step already has a nonzero rate.
inline double lr_at(const TrainConfig& cfg, int iter) {
    if (iter < 0 || iter > cfg.total_iters)
        throw ConfigError("lr_at: iter " + std::to_string(iter) + " outside [0, " +
                          std::to_string(cfg.total_iters) + "]");
    if (cfg.warmup_iters > 0 && iter <= cfg.warmup_iters)
        return cfg.peak_lr * static_cast<double>(iter) / static_cast<double>(cfg.warmup_iters);
    const double min_lr = cfg.peak_lr * cfg.min_lr_ratio;
    const double span = static_cast<double>(cfg.total_iters - cfg.warmup_iters);
    const double progress = span == 0.0 ? 1.0 : static_cast<double>(iter - cfg.warmup_iters) / span;
    return min_lr + 0.5 * (cfg.peak_lr - min_lr) * (1.0 + std::cos(3.141592653589793 * progress));
}

// Decoupled-weight-decay adaptive-moment optimizer over the deduplicated
// parameter set, so a tied tensor is stepped once no matter how many
// names alias it. Decay skips norm gains, biases, and embedding tables.
template <typename S>
class AdamW {
public:
    struct Entry {
        std::string name;
        TensorPtr<S> param;
        std::vector<S> m;
        std::vector<S> v;
        bool decay{true};
    };

    AdamW(const ParamStore<S>& params, TrainConfig cfg) : cfg_(std::move(cfg)) {
        for (const auto& [name, t] : params.unique()) {
            entries_.push_back({name, t, std::vector<S>(t->values.size(), S(0)),
                                std::vector<S>(t->values.size(), S(0)), wants_decay(name)});
        }
    }

    static bool wants_decay(const std::string& name) {
        auto ends_with = [&name](const char* suffix) {
            const std::string suf(suffix);
            return name.size() >= suf.size() &&
                   name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
        };
        if (ends_with("norm.gain") || ends_with(".b1") || ends_with(".b2")) return false;
        for (const char* table : {"embed.tok", "embed.pos", "pool.byte_embed", "pool.pos",
                                  "pool.agg", "dec.pos"})
            if (name == table) return false;
        return true;
    }

    void zero_grad() {
        for (auto& e : entries_) {
            e.param->ensure_grad();
            e.param->zero_grad();
        }
    }

    void scale_grads(double factor) {
        for (auto& e : entries_) {
            e.param->ensure_grad();
            e.param->grad_vec() *= static_cast<S>(factor);
        }
    }

    double grad_norm() const {
        double total = 0.0;
        for (const auto& e : entries_) {
            if (e.param->grad.empty()) continue;
            for (S g : e.param->grad) total += static_cast<double>(g) * static_cast<double>(g);
        }
        return std::sqrt(total);
    }

    // Clips the global norm to cfg.grad_clip; returns the pre-clip norm.
    double clip_grads() {
        const double norm = grad_norm();
        if (norm > cfg_.grad_clip && norm > 0.0) scale_grads(cfg_.grad_clip / norm);
        return norm;
    }

    void step(double lr) {
        ++steps_;
        const double b1 = cfg_.beta1, b2 = cfg_.beta2;
        const double bias1 = 1.0 - std::pow(b1, steps_);
        const double bias2 = 1.0 - std::pow(b2, steps_);
        constexpr double eps = 1e-8;
        for (auto& e : entries_) {
            e.param->ensure_grad();
            for (size_t i = 0; i < e.param->values.size(); ++i) {
                const double g = static_cast<double>(e.param->grad[i]);
                const double m = b1 * static_cast<double>(e.m[i]) + (1.0 - b1) * g;
                const double v = b2 * static_cast<double>(e.v[i]) + (1.0 - b2) * g * g;
                e.m[i] = static_cast<S>(m);
                e.v[i] = static_cast<S>(v);
                double update = (m / bias1) / (std::sqrt(v / bias2) + eps);
                if (e.decay) update += cfg_.weight_decay * static_cast<double>(e.param->values[i]);
                e.param->values[i] -= static_cast<S>(lr * update);
            }
        }
    }

    int step_count() const { return steps_; }
    void set_step_count(int steps) { steps_ = steps; }
    std::vector<Entry>& entries() { return entries_; }
    const std::vector<Entry>& entries() const { return entries_; }

private:
    TrainConfig cfg_;
    std::vector<Entry> entries_;
    int steps_{0};
};

} // namespace stlm
