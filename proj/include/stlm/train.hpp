#pragma once

#include <optional>
#include <string>

#include "stlm/checkpoint.hpp"
#include "stlm/data.hpp"
#include "stlm/generate.hpp"
#include "stlm/optim.hpp"

namespace stlm {

struct StepMetrics {
    int iter{0};
    double loss{0.0};
    double lr{0.0};
    double grad_norm{0.0};
    double wall_ms{0.0};
    std::optional<double> val_byte_ppl;
};

std::string metrics_to_jsonl(const StepMetrics& m);

// Deterministic single-process training loop: gradient accumulation over
// seeded contiguous windows, global-norm clipping, decoupled weight
// decay, cosine schedule. Every random draw derives from (seed, iter), so
// a resumed run replays the exact trajectory of an uninterrupted one.
class Trainer {
public:
    Trainer(RunConfig cfg, MergeTable merges, CorpusSplit corpus);

    StepMetrics step();
    int iteration() const { return iter_; }
    bool done() const { return iter_ >= cfg_.train.total_iters; }

    // Mean byte-normalized validation perplexity over the held-out tail
    // (all windows when max_windows == 0).
    double validation_byte_ppl(size_t max_windows = 0);

    Checkpoint checkpoint() const { return make_checkpoint(cfg_, iter_, model_.params(), &opt_); }
    void restore(const Checkpoint& cp);

    Transformer<float>& model() { return model_; }
    AdamW<float>& optimizer() { return opt_; }
    const RunConfig& config() const { return cfg_; }
    const MergeTable& merges() const { return merges_; }
    const CorpusSplit& corpus() const { return corpus_; }

private:
    double micro_loss(const std::vector<size_t>& starts, Rng& rng);

    RunConfig cfg_;
    MergeTable merges_;
    CorpusSplit corpus_;
    Transformer<float> model_;
    AdamW<float> opt_;
    WindowSampler sampler_;
    int iter_{0};
};

} // namespace stlm
