#pragma once

#include <string>
#include <vector>

#include "stlm/model.hpp"

namespace stlm {

// One BPE-aligned chunk of raw byte symbols (0..255 data, or a single
// control symbol such as BOS for the document separator).
using Chunk = std::vector<int>;

// A batch of byte chunks, PAD-filled to the tokenizer's longest token.
// Targets for position i are the bytes of token i+1 followed by EOT.
struct ChunkedBatch {
    Index batch{0};
    Index t_tokens{0};
    int max_bytes{0};
    std::vector<int> byte_ids;   // [batch * t_tokens * max_bytes]
    std::vector<int> lengths;    // [batch * t_tokens], each in [1, max_bytes]
    std::vector<int> target_ids; // [batch * t_tokens * (max_bytes + 1)], EOT-terminated

    static ChunkedBatch build(const std::vector<std::vector<Chunk>>& inputs,
                              const std::vector<std::vector<Chunk>>& targets, int max_bytes) {
        if (inputs.empty() || inputs.size() != targets.size())
            throw DataError("chunked batch: input/target batch mismatch");
        ChunkedBatch out;
        out.batch = static_cast<Index>(inputs.size());
        out.t_tokens = static_cast<Index>(inputs[0].size());
        out.max_bytes = max_bytes;
        out.byte_ids.assign(static_cast<size_t>(out.batch * out.t_tokens * max_bytes),
                            BytePoolConfig::pad_id);
        out.lengths.assign(static_cast<size_t>(out.batch * out.t_tokens), 0);
        out.target_ids.assign(static_cast<size_t>(out.batch * out.t_tokens * (max_bytes + 1)),
                              BytePoolConfig::pad_id);

        for (Index b = 0; b < out.batch; ++b) {
            if (static_cast<Index>(inputs[static_cast<size_t>(b)].size()) != out.t_tokens ||
                static_cast<Index>(targets[static_cast<size_t>(b)].size()) != out.t_tokens)
                throw DataError("chunked batch: ragged token rows");
            for (Index i = 0; i < out.t_tokens; ++i) {
                const Chunk& in = inputs[static_cast<size_t>(b)][static_cast<size_t>(i)];
                const Chunk& tgt = targets[static_cast<size_t>(b)][static_cast<size_t>(i)];
                if (in.empty()) throw DataError("chunked batch: zero-length span");
                if (static_cast<int>(in.size()) > max_bytes)
                    throw DataError("chunked batch: chunk of " + std::to_string(in.size()) +
                                    " bytes exceeds max_token_bytes " + std::to_string(max_bytes));
                if (static_cast<int>(tgt.size()) > max_bytes)
                    throw DataError("chunked batch: target of " + std::to_string(tgt.size()) +
                                    " bytes exceeds max_token_bytes " + std::to_string(max_bytes));
                const Index chunk = b * out.t_tokens + i;
                out.lengths[static_cast<size_t>(chunk)] = static_cast<int>(in.size());
                for (size_t k = 0; k < in.size(); ++k) {
                    check_symbol(in[k], in.size() > 1);
                    out.byte_ids[static_cast<size_t>(chunk * max_bytes) + k] = in[k];
                }
                for (size_t k = 0; k < tgt.size(); ++k) {
                    check_symbol(tgt[k], tgt.size() > 1);
                    out.target_ids[static_cast<size_t>(chunk * (max_bytes + 1)) + k] = tgt[k];
                }
                out.target_ids[static_cast<size_t>(chunk * (max_bytes + 1)) + tgt.size()] =
                    BytePoolConfig::eot_id;
            }
        }
        return out;
    }

private:
    static void check_symbol(int id, bool inside_data_span) {
        if (id < 0 || id >= BytePoolConfig::byte_vocab)
            throw IndexError("chunked batch: byte symbol " + std::to_string(id) + " out of range");
        if (inside_data_span && id >= 256)
            throw DataError("chunked batch: control symbol inside a data span");
    }
};

namespace bytepool_detail {

// One pre-norm full-width block (no GQA, no rope) used by the pooling
// transformer and the byte decoder.
template <typename S>
TensorPtr<S> small_block(const Transformer<S>& model, typename Transformer<S>::Pass pass,
                         const std::string& base, TensorPtr<S> x, Index n, Index len, int heads,
                         const TensorPtr<S>& mask) {
    const Index dim = x->last_dim();
    const Index dh = dim / heads;
    auto& tape = pass.tape;

    auto xn = rmsnorm(tape, x, model.p(base + ".attn.norm.gain"));
    auto q2 = matmul(tape, xn, model.p(base + ".attn.wq"));
    auto k2 = matmul(tape, xn, model.p(base + ".attn.wk"));
    auto v2 = matmul(tape, xn, model.p(base + ".attn.wv"));
    std::vector<TensorPtr<S>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = reshape(tape, slice_cols(tape, q2, h * dh, dh), {n, len, dh});
        auto kh = reshape(tape, slice_cols(tape, k2, h * dh, dh), {n, len, dh});
        auto vh = reshape(tape, slice_cols(tape, v2, h * dh, dh), {n, len, dh});
        auto scores = scale(tape, bmm_nt(tape, qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
        if (mask) scores = add(tape, scores, mask);
        auto probs = model.apply_dropout(pass, softmax_rows(tape, scores));
        head_outs.push_back(reshape(tape, bmm(tape, probs, vh), {n * len, dh}));
    }
    auto attn = model.apply_dropout(
        pass, matmul(tape, concat_cols(tape, head_outs), model.p(base + ".attn.wo")));
    x = add(tape, x, attn);

    auto fn = rmsnorm(tape, x, model.p(base + ".ffn.norm.gain"));
    auto g = matmul(tape, fn, model.p(base + ".ffn.w_gate"));
    auto u = matmul(tape, fn, model.p(base + ".ffn.w_up"));
    auto y = matmul(tape, mul(tape, silu(tape, g), u), model.p(base + ".ffn.w_down"));
    return add(tape, x, y);
}

template <typename S>
TensorPtr<S> causal_mask_3d(Index n, Index len) {
    auto mask = make_tensor<S>(Shape{n, len, len});
    for (Index b = 0; b < n; ++b)
        for (Index i = 0; i < len; ++i)
            for (Index j = i + 1; j < len; ++j)
                mask->values[static_cast<size_t>((b * len + i) * len + j)] = S(-1e30);
    return mask;
}

} // namespace bytepool_detail

// Byte-symbol embedding plus the learned within-chunk positional signal.
// byte_ids is row-major [n_chunks x max_bytes]; returns
// [n_chunks*max_bytes, byte_dim].
template <typename S>
TensorPtr<S> embed_bytes(const Transformer<S>& model, typename Transformer<S>::Pass pass,
                         const std::vector<int>& byte_ids, Index n_chunks, int max_bytes) {
    if (static_cast<Index>(byte_ids.size()) != n_chunks * max_bytes)
        throw ShapeError("embed_bytes: id count does not match chunk geometry");
    std::vector<Index> idx(byte_ids.size());
    for (size_t i = 0; i < byte_ids.size(); ++i) {
        if (byte_ids[i] < 0 || byte_ids[i] >= BytePoolConfig::byte_vocab)
            throw IndexError("embed_bytes: byte id " + std::to_string(byte_ids[i]) +
                             " out of range [0, " + std::to_string(BytePoolConfig::byte_vocab) + ")");
        idx[i] = byte_ids[i];
    }
    auto emb = rows(pass.tape, model.p("pool.byte_embed"), idx);
    std::vector<Index> pos(byte_ids.size());
    for (Index c = 0; c < n_chunks; ++c)
        for (int k = 0; k < max_bytes; ++k) pos[static_cast<size_t>(c * max_bytes + k)] = k;
    return add(pass.tape, emb, rows(pass.tape, model.p("pool.pos"), pos));
}

// The pooling transformer: byte embeddings per chunk, full (non-causal)
// attention with PAD columns masked, readout via the learned aggregate
// symbol (or masked mean), projected up to the core hidden width. Output
// matches embed_tokens: [batch*t_tokens, hidden].
template <typename S>
TensorPtr<S> pool_chunks(const Transformer<S>& model, typename Transformer<S>::Pass pass,
                         const ChunkedBatch& chunked) {
    const auto& bp = model.bytepool_config();
    if (chunked.max_bytes != bp.max_token_bytes)
        throw ShapeError("pool_chunks: batch max_bytes " + std::to_string(chunked.max_bytes) +
                         " does not match config " + std::to_string(bp.max_token_bytes));
    for (int len : chunked.lengths)
        if (len < 1) throw DataError("pool_chunks: zero-length span");
    model.check_context(chunked.t_tokens);

    auto& tape = pass.tape;
    const Index n = chunked.batch * chunked.t_tokens;
    const int max_bytes = chunked.max_bytes;
    const bool aggregate = bp.pool_mode == PoolMode::aggregate;
    const Index len = aggregate ? max_bytes + 1 : max_bytes;

    auto emb = embed_bytes(model, pass, chunked.byte_ids, n, max_bytes);

    TensorPtr<S> seq;
    if (aggregate) {
        auto agg = rows(tape, model.p("pool.agg"), std::vector<Index>(static_cast<size_t>(n), 0));
        auto cat = concat_rows(tape, {agg, emb});
        std::vector<Index> interleave(static_cast<size_t>(n * len));
        for (Index c = 0; c < n; ++c) {
            interleave[static_cast<size_t>(c * len)] = c;
            for (int k = 0; k < max_bytes; ++k)
                interleave[static_cast<size_t>(c * len + 1 + k)] = n + c * max_bytes + k;
        }
        seq = rows(tape, cat, interleave);
    } else {
        seq = emb;
    }

    // additive PAD mask: column j of chunk c is visible iff it holds the
    // aggregate symbol or a real byte
    auto mask = make_tensor<S>(Shape{n, len, len});
    for (Index c = 0; c < n; ++c) {
        const int valid = chunked.lengths[static_cast<size_t>(c)];
        for (Index j = 0; j < len; ++j) {
            const bool visible = aggregate ? (j == 0 || j - 1 < valid) : j < valid;
            if (visible) continue;
            for (Index i = 0; i < len; ++i)
                mask->values[static_cast<size_t>((c * len + i) * len + j)] = S(-1e30);
        }
    }

    for (int l = 0; l < bp.pool_layers; ++l)
        seq = bytepool_detail::small_block(model, pass, "pool.layer." + std::to_string(l), seq, n, len,
                                           bp.pool_heads, mask);

    TensorPtr<S> pooled;
    if (aggregate) {
        std::vector<Index> readout(static_cast<size_t>(n));
        for (Index c = 0; c < n; ++c) readout[static_cast<size_t>(c)] = c * len;
        pooled = rows(tape, seq, readout);
    } else {
        auto weights = make_tensor<S>(Shape{n, 1, len});
        for (Index c = 0; c < n; ++c) {
            const int valid = chunked.lengths[static_cast<size_t>(c)];
            for (int k = 0; k < valid; ++k)
                weights->values[static_cast<size_t>(c * len + k)] = S(1) / static_cast<S>(valid);
        }
        auto seq3 = reshape(tape, seq, {n, len, static_cast<Index>(bp.byte_dim)});
        pooled = reshape(tape, bmm(tape, weights, seq3), {n, static_cast<Index>(bp.byte_dim)});
    }

    pooled = rmsnorm(tape, pooled, model.p("pool.norm.gain"));
    auto projected = matmul(tape, pooled, model.p("pool.proj"));
    return model.add_positional(pass, projected, chunked.batch, chunked.t_tokens);
}

// Teacher-forced byte decoding: the core hidden state conditions a small
// causal transformer over [cond; BOS; target bytes]. Returns per-position
// logits aligned with chunked.target_ids: row c*(max_bytes+1)+k predicts
// target symbol k of chunk c (EOT included).
template <typename S>
TensorPtr<S> byte_decode_logits(const Transformer<S>& model, typename Transformer<S>::Pass pass,
                                const TensorPtr<S>& h, const ChunkedBatch& chunked) {
    const auto& bp = model.bytepool_config();
    auto& tape = pass.tape;
    const Index n = chunked.batch * chunked.t_tokens;
    const int max_bytes = chunked.max_bytes;
    if (static_cast<Index>(chunked.target_ids.size()) != n * (max_bytes + 1))
        throw DataError("byte_decode_loss: target length does not match max_token_bytes+1");
    if (h->rows2d() != n || h->last_dim() != model.config().hidden_dim)
        throw ShapeError("byte_decode_loss: hidden states " + shape_str(h->shape));

    const Index len = bp.decoder_context(); // [cond; BOS; teacher-forced bytes]
    auto cond = matmul(tape, h, model.p("dec.cond_proj"));
    auto bos = rows(tape, model.p("pool.byte_embed"),
                    std::vector<Index>(static_cast<size_t>(n), BytePoolConfig::bos_id));

    std::vector<Index> teacher(static_cast<size_t>(n * max_bytes));
    for (Index c = 0; c < n; ++c)
        for (int k = 0; k < max_bytes; ++k)
            teacher[static_cast<size_t>(c * max_bytes + k)] =
                chunked.target_ids[static_cast<size_t>(c * (max_bytes + 1) + k)];
    auto teach_emb = rows(tape, model.p("pool.byte_embed"), teacher);

    auto cat = concat_rows(tape, {cond, bos, teach_emb});
    std::vector<Index> interleave(static_cast<size_t>(n * len));
    for (Index c = 0; c < n; ++c) {
        interleave[static_cast<size_t>(c * len)] = c;
        interleave[static_cast<size_t>(c * len + 1)] = n + c;
        for (int k = 0; k < max_bytes; ++k)
            interleave[static_cast<size_t>(c * len + 2 + k)] = 2 * n + c * max_bytes + k;
    }
    auto seq = rows(tape, cat, interleave);

    std::vector<Index> pos(static_cast<size_t>(n * len));
    for (Index c = 0; c < n; ++c)
        for (Index k = 0; k < len; ++k) pos[static_cast<size_t>(c * len + k)] = k;
    seq = add(tape, seq, rows(tape, model.p("dec.pos"), pos));

    auto mask = bytepool_detail::causal_mask_3d<S>(n, len);
    for (int l = 0; l < bp.decoder_layers; ++l)
        seq = bytepool_detail::small_block(model, pass, "dec.layer." + std::to_string(l), seq, n, len,
                                           bp.decoder_heads, mask);
    seq = rmsnorm(tape, seq, model.p("dec.norm.gain"));

    // positions 1..len-1 predict target bytes 0..max_bytes (EOT included);
    // the head is tied to the byte embedding table
    auto logits = matmul_nt(tape, seq, model.p("pool.byte_embed"));
    std::vector<Index> predict(static_cast<size_t>(n * (max_bytes + 1)));
    for (Index c = 0; c < n; ++c)
        for (int k = 0; k <= max_bytes; ++k)
            predict[static_cast<size_t>(c * (max_bytes + 1) + k)] = c * len + 1 + k;
    return rows(tape, logits, predict);
}

// Mean cross entropy of the decoded byte predictions over non-PAD
// positions.
template <typename S>
TensorPtr<S> byte_decode_loss(const Transformer<S>& model, typename Transformer<S>::Pass pass,
                              const TensorPtr<S>& h, const ChunkedBatch& chunked) {
    auto logits = byte_decode_logits(model, pass, h, chunked);
    return cross_entropy(pass.tape, logits, chunked.target_ids, BytePoolConfig::pad_id);
}

// Full tokenizer-free loss: pool chunks, run the core model, decode bytes.
template <typename S>
TensorPtr<S> bytepool_loss(const Transformer<S>& model, typename Transformer<S>::Pass pass,
                           const ChunkedBatch& chunked) {
    auto x = pool_chunks(model, pass, chunked);
    auto h = model.hidden_states(pass, x, chunked.batch, chunked.t_tokens);
    return byte_decode_loss(model, pass, h, chunked);
}

// Samples one token's bytes from the decoder conditioned on a single core
// hidden state. Greedy when `greedy`, otherwise temperature sampling.
// Stops at EOT or max_token_bytes; returns data bytes only (an empty
// result means the decoder chose EOT first: end of sequence).
template <typename S>
std::string generate_token_bytes(const Transformer<S>& model, const TensorPtr<S>& h,
                                 double temperature, Rng& rng, bool greedy = false) {
    if (!greedy && temperature <= 0.0)
        throw ConfigError("generate_token_bytes: temperature must be positive unless greedy");
    const auto& bp = model.bytepool_config();
    std::string out;
    for (int step = 0; step < bp.max_token_bytes; ++step) {
        Tape<S> tape;
        NoGradGuard<S> guard(tape);
        typename Transformer<S>::Pass pass{tape, false, nullptr};

        const Index len = 2 + static_cast<Index>(out.size());
        auto cond = matmul(tape, h, model.p("dec.cond_proj"));
        std::vector<TensorPtr<S>> parts{cond};
        std::vector<Index> ids{BytePoolConfig::bos_id};
        for (unsigned char c : out) ids.push_back(static_cast<Index>(c));
        parts.push_back(rows(tape, model.p("pool.byte_embed"), ids));
        auto seq = concat_rows(tape, parts);
        std::vector<Index> pos(static_cast<size_t>(len));
        for (Index k = 0; k < len; ++k) pos[static_cast<size_t>(k)] = k;
        seq = add(tape, seq, rows(tape, model.p("dec.pos"), pos));

        auto mask = bytepool_detail::causal_mask_3d<S>(1, len);
        for (int l = 0; l < bp.decoder_layers; ++l)
            seq = bytepool_detail::small_block(model, pass, "dec.layer." + std::to_string(l), seq, 1,
                                               len, bp.decoder_heads, mask);
        seq = rmsnorm(tape, seq, model.p("dec.norm.gain"));
        auto logits = matmul_nt(tape, seq, model.p("pool.byte_embed"));

        // last position decides the next symbol; PAD is never a valid draw,
        // and BOS (the separator byte) terminates the token like EOT
        std::vector<double> row(BytePoolConfig::byte_vocab);
        for (int c = 0; c < BytePoolConfig::byte_vocab; ++c)
            row[static_cast<size_t>(c)] = static_cast<double>(
                logits->values[static_cast<size_t>((len - 1) * BytePoolConfig::byte_vocab + c)]);
        row[BytePoolConfig::pad_id] = -1e30;

        int symbol;
        if (greedy) {
            symbol = 0;
            for (int c = 1; c < BytePoolConfig::byte_vocab; ++c)
                if (row[static_cast<size_t>(c)] > row[static_cast<size_t>(symbol)]) symbol = c;
        } else {
            double max_logit = row[0];
            for (double v : row) max_logit = std::max(max_logit, v);
            std::vector<double> probs(row.size());
            double total = 0.0;
            for (size_t c = 0; c < row.size(); ++c) {
                probs[c] = std::exp((row[c] - max_logit) / temperature);
                total += probs[c];
            }
            const double draw = rng.uniform() * total;
            double cum = 0.0;
            symbol = static_cast<int>(row.size()) - 1;
            for (size_t c = 0; c < probs.size(); ++c) {
                cum += probs[c];
                if (draw < cum) {
                    symbol = static_cast<int>(c);
                    break;
                }
            }
        }
        if (symbol == BytePoolConfig::eot_id || symbol == BytePoolConfig::bos_id) break;
        out.push_back(static_cast<char>(symbol));
    }
    return out;
}

} // namespace stlm
