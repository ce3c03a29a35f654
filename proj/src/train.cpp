#include "stlm/train.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"

namespace stlm {

namespace {

constexpr double kLn2 = 0.6931471805599453;

// Data bytes of the target tokens of one window (separators count zero).
size_t window_target_bytes(const TokenStream& stream, size_t start, int window) {
    size_t bytes = 0;
    for (int i = 0; i < window; ++i) {
        const size_t t = start + static_cast<size_t>(i) + 1;
        bytes += stream.spans[t].end - stream.spans[t].start;
    }
    return bytes;
}

} // namespace

std::string metrics_to_jsonl(const StepMetrics& m) {
    nlohmann::json j;
    j["iter"] = m.iter;
    j["loss"] = m.loss;
    j["lr"] = m.lr;
    j["grad_norm"] = m.grad_norm;
    j["wall_ms"] = m.wall_ms;
    if (m.val_byte_ppl) j["val_byte_ppl"] = *m.val_byte_ppl;
    return j.dump();
}

Trainer::Trainer(RunConfig cfg, MergeTable merges, CorpusSplit corpus)
    : cfg_(std::move(cfg)), merges_(std::move(merges)), corpus_(std::move(corpus)),
      model_(cfg_.model, cfg_.bytepool, cfg_.train.seed),
      opt_(model_.params(), cfg_.train),
      sampler_(corpus_.train.size(), cfg_.model.max_context, mix_seed(cfg_.train.seed, 0x646174ull)) {
    if (cfg_.model.embedder == Embedder::bpe_lookup &&
        cfg_.model.vocab_size < merges_.vocab_size() + 1)
        throw ConfigError("model.vocab_size " + std::to_string(cfg_.model.vocab_size) +
                          " cannot hold tokenizer vocab " + std::to_string(merges_.vocab_size()) +
                          " plus the separator");
    if (cfg_.model.embedder == Embedder::byte_pool &&
        cfg_.bytepool.max_token_bytes < merges_.max_token_bytes())
        throw ConfigError("bytepool.max_token_bytes " + std::to_string(cfg_.bytepool.max_token_bytes) +
                          " is smaller than the tokenizer's longest token " +
                          std::to_string(merges_.max_token_bytes()));
}

double Trainer::micro_loss(const std::vector<size_t>& starts, Rng& rng) {
    Tape<float> tape;
    Transformer<float>::Pass pass{tape, true, &rng};
    const int window = cfg_.model.max_context;
    TensorPtr<float> loss;
    if (cfg_.model.embedder == Embedder::bpe_lookup) {
        std::vector<int> ids, targets;
        window_ids(corpus_.train, starts, window, ids, targets);
        loss = model_.lm_loss(pass, ids, targets, static_cast<Index>(starts.size()), window);
    } else {
        auto batch = window_chunks(corpus_.train, starts, window, cfg_.bytepool.max_token_bytes);
        loss = bytepool_loss(model_, pass, batch);
    }
    tape.backward(loss);
    return static_cast<double>(loss->values[0]);
}

StepMetrics Trainer::step() {
    const auto t0 = std::chrono::steady_clock::now();
    const int iter = iter_ + 1;
    if (iter > cfg_.train.total_iters) throw ConfigError("training already ran to total_iters");
    Rng rng(mix_seed(cfg_.train.seed, static_cast<std::uint64_t>(iter)));

    opt_.zero_grad();
    const int accum = cfg_.train.grad_accum_steps;
    const int batch = cfg_.train.batch_size;
    double loss_sum = 0.0;
    for (int m = 0; m < accum; ++m) {
        std::vector<size_t> starts(static_cast<size_t>(batch));
        for (int b = 0; b < batch; ++b) {
            const std::uint64_t draw = (static_cast<std::uint64_t>(iter - 1) * accum + m) *
                                           static_cast<std::uint64_t>(batch) +
                                       static_cast<std::uint64_t>(b);
            starts[static_cast<size_t>(b)] = sampler_.start_of(draw);
        }
        try {
            loss_sum += micro_loss(starts, rng);
        } catch (const NumericError& e) {
            throw NumericError("iter " + std::to_string(iter) + ": " + e.what());
        }
    }
    if (accum > 1) opt_.scale_grads(1.0 / accum);

    StepMetrics metrics;
    metrics.iter = iter;
    metrics.loss = loss_sum / accum;
    metrics.lr = lr_at(cfg_.train, iter);
    metrics.grad_norm = opt_.clip_grads();
    opt_.step(metrics.lr);
    iter_ = iter;
    metrics.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return metrics;
}

double Trainer::validation_byte_ppl(size_t max_windows) {
    const int window = cfg_.model.max_context;
    WindowSampler vs(corpus_.val.size(), window, 0);
    size_t n = vs.window_count();
    if (max_windows > 0) n = std::min(n, max_windows);

    double nats = 0.0;
    size_t bytes = 0;
    Tape<float> tape;
    NoGradGuard<float> guard(tape);
    Transformer<float>::Pass pass{tape, false, nullptr};
    for (size_t w = 0; w < n; ++w) {
        const size_t start = w * static_cast<size_t>(window);
        std::vector<size_t> starts{start};
        if (cfg_.model.embedder == Embedder::bpe_lookup) {
            std::vector<int> ids, targets;
            window_ids(corpus_.val, starts, window, ids, targets);
            auto loss = model_.lm_loss(pass, ids, targets, 1, window);
            nats += static_cast<double>(loss->values[0]) * static_cast<double>(window);
        } else {
            auto batch = window_chunks(corpus_.val, starts, window, cfg_.bytepool.max_token_bytes);
            auto loss = bytepool_loss(model_, pass, batch);
            int symbols = 0;
            for (int t : batch.target_ids) symbols += t != BytePoolConfig::pad_id;
            nats += static_cast<double>(loss->values[0]) * symbols;
        }
        bytes += window_target_bytes(corpus_.val, start, window);
        tape.clear();
    }
    if (bytes == 0) throw DataError("validation split has no target bytes");
    return std::exp2(nats / (kLn2 * static_cast<double>(bytes)));
}

void Trainer::restore(const Checkpoint& cp) {
    restore_checkpoint(cp, model_.params(), &opt_);
    iter_ = cp.iteration;
}

} // namespace stlm
