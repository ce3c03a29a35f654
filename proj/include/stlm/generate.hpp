#pragma once

#include <string>
#include <vector>

#include "stlm/data.hpp"

namespace stlm {

namespace generate_detail {

inline int sample_row(const std::vector<double>& logits, double temperature, Rng& rng, bool greedy) {
    if (greedy) {
        int best = 0;
        for (size_t c = 1; c < logits.size(); ++c)
            if (logits[c] > logits[static_cast<size_t>(best)]) best = static_cast<int>(c);
        return best;
    }
    double max_logit = logits[0];
    for (double v : logits) max_logit = std::max(max_logit, v);
    std::vector<double> probs(logits.size());
    double total = 0.0;
    for (size_t c = 0; c < logits.size(); ++c) {
        probs[c] = std::exp((logits[c] - max_logit) / temperature);
        total += probs[c];
    }
    const double draw = rng.uniform() * total;
    double cum = 0.0;
    for (size_t c = 0; c < probs.size(); ++c) {
        cum += probs[c];
        if (draw < cum) return static_cast<int>(c);
    }
    return static_cast<int>(probs.size()) - 1;
}

} // namespace generate_detail

// Autoregressive text generation for either embedder. The prompt is
// separator-prefixed; generation stops at max_new_bytes, at a sampled
// document separator, or (byte_pool) when the decoder emits an empty
// token. Greedy mode ignores the seed and is deterministic.
template <typename S>
std::string generate_text(const Transformer<S>& model, const MergeTable& merges,
                          const std::string& prompt, int max_new_bytes, double temperature,
                          std::uint64_t seed, bool greedy = false) {
    if (!greedy && temperature <= 0.0)
        throw ConfigError("generate: temperature must be positive unless greedy");
    const auto& cfg = model.config();
    Rng rng(mix_seed(seed, 0x67656e ^ 0));

    if (cfg.embedder == Embedder::bpe_lookup) {
        const int separator = merges.vocab_size();
        if (cfg.vocab_size < merges.vocab_size() + 1)
            throw ConfigError("model vocab " + std::to_string(cfg.vocab_size) +
                              " cannot hold the tokenizer vocab plus separator");
        std::vector<int> ids{separator};
        for (int id : encode(merges, prompt)) ids.push_back(id);
        if (static_cast<Index>(ids.size()) > cfg.max_context)
            throw ShapeError("prompt of " + std::to_string(ids.size() - 1) +
                             " tokens exceeds max_context " + std::to_string(cfg.max_context));
        std::string out;
        while (static_cast<int>(out.size()) < max_new_bytes) {
            const size_t t0 = ids.size() > static_cast<size_t>(cfg.max_context)
                                  ? ids.size() - static_cast<size_t>(cfg.max_context)
                                  : 0;
            std::vector<int> window(ids.begin() + static_cast<long>(t0), ids.end());
            Tape<S> tape;
            NoGradGuard<S> guard(tape);
            typename Transformer<S>::Pass pass{tape, false, nullptr};
            const Index t = static_cast<Index>(window.size());
            auto h = model.hidden_states(pass, model.embed_tokens(pass, window, 1, t), 1, t);
            auto logits = model.lm_logits(pass, h);
            std::vector<double> row(static_cast<size_t>(cfg.vocab_size));
            for (Index c = 0; c < cfg.vocab_size; ++c)
                row[static_cast<size_t>(c)] =
                    static_cast<double>(logits->values[static_cast<size_t>((t - 1) * cfg.vocab_size + c)]);
            const int next = generate_detail::sample_row(row, temperature, rng, greedy);
            if (next >= merges.vocab_size()) break; // separator or padding id: end of document
            ids.push_back(next);
            out += merges.expand(next);
        }
        return out.size() > static_cast<size_t>(max_new_bytes) ? out.substr(0, static_cast<size_t>(max_new_bytes))
                                                               : out;
    }

    // byte_pool: re-encode spans after every emitted token chunk
    if (static_cast<Index>(encode(merges, prompt).size()) + 1 > cfg.max_context)
        throw ShapeError("prompt exceeds max_context " + std::to_string(cfg.max_context));
    std::string bytes = prompt;
    std::string out;
    while (static_cast<int>(out.size()) < max_new_bytes) {
        auto spans = encode_with_spans(merges, bytes);
        std::vector<Chunk> chunks{{BytePoolConfig::bos_id}};
        for (const auto& span : spans) {
            Chunk c;
            for (size_t b = span.start; b < span.end; ++b)
                c.push_back(static_cast<unsigned char>(bytes[b]));
            chunks.push_back(std::move(c));
        }
        if (static_cast<Index>(chunks.size()) > cfg.max_context)
            chunks.erase(chunks.begin(), chunks.end() - static_cast<long>(cfg.max_context));

        // pooled forward needs targets only for training; dummy targets here
        std::vector<std::vector<Chunk>> inputs{chunks};
        std::vector<std::vector<Chunk>> dummies{std::vector<Chunk>(chunks.size(), Chunk{0})};
        auto batch = ChunkedBatch::build(inputs, dummies, model.bytepool_config().max_token_bytes);

        Tape<S> tape;
        NoGradGuard<S> guard(tape);
        typename Transformer<S>::Pass pass{tape, false, nullptr};
        auto x = pool_chunks(model, pass, batch);
        auto h = model.hidden_states(pass, x, 1, batch.t_tokens);
        auto h_last = rows(tape, h, {batch.t_tokens - 1});

        const auto token = generate_token_bytes(model, h_last, temperature, rng, greedy);
        if (token.empty()) break; // EOT or separator first: end of sequence
        out += token;
        bytes += token;
    }
    return out.size() > static_cast<size_t>(max_new_bytes) ? out.substr(0, static_cast<size_t>(max_new_bytes))
                                                           : out;
}

} // namespace stlm
