#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stlm/config.hpp"
#include "stlm/ops.hpp"

namespace stlm {

// Named parameter tensors. Weight tying is realized by registering one
// tensor under several names, so a tied weight is updated once and every
// role sees the change; unique() walks storage deduplicated in insertion
// order (the first, canonical name wins).
template <typename S>
struct ParamStore {
    std::vector<std::pair<std::string, TensorPtr<S>>> ordered;
    std::map<std::string, TensorPtr<S>> by_name;

    void insert(const std::string& name, TensorPtr<S> t) {
        if (by_name.count(name)) throw ConfigError("duplicate parameter name " + name);
        ordered.emplace_back(name, t);
        by_name.emplace(name, std::move(t));
    }

    void alias(const std::string& name, const std::string& target) {
        insert(name, at(target));
    }

    const TensorPtr<S>& at(const std::string& name) const {
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ConfigError("unknown parameter " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return by_name.count(name) != 0; }

    std::vector<std::pair<std::string, TensorPtr<S>>> unique() const {
        std::vector<std::pair<std::string, TensorPtr<S>>> out;
        std::vector<const Tensor<S>*> seen;
        for (const auto& [name, t] : ordered) {
            if (std::find(seen.begin(), seen.end(), t.get()) != seen.end()) continue;
            seen.push_back(t.get());
            out.emplace_back(name, t);
        }
        return out;
    }

    Index unique_count() const {
        Index total = 0;
        for (const auto& [name, t] : unique()) total += t->numel();
        return total;
    }
};

// Unique parameter geometry implied by a config, in the exact order the
// initializer allocates. Audit sums these shapes; init_params realizes
// them, so the closed-form count and the stored count agree by
// construction and the audit property test guards the aliasing wiring.
std::vector<std::pair<std::string, Shape>> enumerate_param_shapes(const ModelConfig& cfg,
                                                                  const BytePoolConfig& bp);

namespace detail {

// Shapes for one pre-norm transformer block at width `dim` with `kv`-wide
// key/value projections and a swiglu or simple FFN.
inline void block_shapes(std::vector<std::pair<std::string, Shape>>& out, const std::string& name,
                         Index dim, Index kv, FfnType ffn, Index ffn_dim) {
    out.emplace_back(name + ".attn.norm.gain", Shape{dim});
    out.emplace_back(name + ".attn.wq", Shape{dim, dim});
    out.emplace_back(name + ".attn.wk", Shape{dim, kv});
    out.emplace_back(name + ".attn.wv", Shape{dim, kv});
    out.emplace_back(name + ".attn.wo", Shape{dim, dim});
    out.emplace_back(name + ".ffn.norm.gain", Shape{dim});
    if (ffn == FfnType::swiglu) {
        out.emplace_back(name + ".ffn.w_gate", Shape{dim, ffn_dim});
        out.emplace_back(name + ".ffn.w_up", Shape{dim, ffn_dim});
        out.emplace_back(name + ".ffn.w_down", Shape{ffn_dim, dim});
    } else {
        out.emplace_back(name + ".ffn.w1", Shape{dim, ffn_dim});
        out.emplace_back(name + ".ffn.b1", Shape{ffn_dim});
        out.emplace_back(name + ".ffn.w2", Shape{ffn_dim, dim});
        out.emplace_back(name + ".ffn.b2", Shape{dim});
    }
}

inline std::vector<std::string> lora_targets(FfnType ffn) {
    return ffn == FfnType::swiglu ? std::vector<std::string>{"gate", "up", "down"}
                                  : std::vector<std::string>{"w1", "w2"};
}

// (a_rows, b_cols) of the low-rank pair attached to one FFN matrix.
inline std::pair<Index, Index> lora_dims(const std::string& target, Index hidden, Index ffn_dim) {
    if (target == "gate" || target == "up" || target == "w1") return {hidden, ffn_dim};
    return {ffn_dim, hidden};
}

} // namespace detail

inline std::vector<std::pair<std::string, Shape>> enumerate_param_shapes(const ModelConfig& cfg,
                                                                         const BytePoolConfig& bp) {
    cfg.validate();
    if (cfg.embedder == Embedder::byte_pool) bp.validate(cfg);
    std::vector<std::pair<std::string, Shape>> out;
    const Index hidden = cfg.hidden_dim;

    if (cfg.embedder == Embedder::bpe_lookup)
        out.emplace_back("embed.tok", Shape{cfg.vocab_size, hidden});
    if (cfg.pos_scheme == PosScheme::learned)
        out.emplace_back("embed.pos", Shape{cfg.max_context, hidden});

    const bool share_ffn = cfg.tying == Tying::ffn_shared || cfg.tying == Tying::ffn_attn_shared;
    const bool share_attn = cfg.tying == Tying::ffn_attn_shared;
    for (int i = 0; i < cfg.n_layers; ++i) {
        const std::string base = "layer." + std::to_string(i);
        out.emplace_back(base + ".attn.norm.gain", Shape{hidden});
        if (i == 0 || !share_attn) {
            out.emplace_back(base + ".attn.wq", Shape{hidden, hidden});
            out.emplace_back(base + ".attn.wk", Shape{hidden, cfg.kv_dim()});
            out.emplace_back(base + ".attn.wv", Shape{hidden, cfg.kv_dim()});
            out.emplace_back(base + ".attn.wo", Shape{hidden, hidden});
        }
        out.emplace_back(base + ".ffn.norm.gain", Shape{hidden});
        if (i == 0 || !share_ffn) {
            if (cfg.ffn_type == FfnType::swiglu) {
                out.emplace_back(base + ".ffn.w_gate", Shape{hidden, cfg.ffn_dim});
                out.emplace_back(base + ".ffn.w_up", Shape{hidden, cfg.ffn_dim});
                out.emplace_back(base + ".ffn.w_down", Shape{cfg.ffn_dim, hidden});
            } else {
                out.emplace_back(base + ".ffn.w1", Shape{hidden, cfg.ffn_dim});
                out.emplace_back(base + ".ffn.b1", Shape{cfg.ffn_dim});
                out.emplace_back(base + ".ffn.w2", Shape{cfg.ffn_dim, hidden});
                out.emplace_back(base + ".ffn.b2", Shape{hidden});
            }
        }
        if (cfg.tying == Tying::ffn_shared && cfg.lora_rank > 0) {
            for (const auto& target : detail::lora_targets(cfg.ffn_type)) {
                const auto [a_rows, b_cols] = detail::lora_dims(target, hidden, cfg.ffn_dim);
                out.emplace_back(base + ".ffn.lora." + target + ".a", Shape{a_rows, cfg.lora_rank});
                out.emplace_back(base + ".ffn.lora." + target + ".b", Shape{cfg.lora_rank, b_cols});
            }
        }
    }
    out.emplace_back("final_norm.gain", Shape{hidden});
    if (cfg.embedder == Embedder::bpe_lookup && cfg.tying == Tying::none)
        out.emplace_back("head.w", Shape{cfg.vocab_size, hidden});

    if (cfg.embedder == Embedder::byte_pool) {
        const Index bd = bp.byte_dim;
        out.emplace_back("pool.byte_embed", Shape{BytePoolConfig::byte_vocab, bd});
        out.emplace_back("pool.pos", Shape{bp.max_token_bytes, bd});
        if (bp.pool_mode == PoolMode::aggregate) out.emplace_back("pool.agg", Shape{1, bd});
        for (int i = 0; i < bp.pool_layers; ++i)
            detail::block_shapes(out, "pool.layer." + std::to_string(i), bd, bd, FfnType::swiglu,
                                 bp.pool_ffn_dim());
        out.emplace_back("pool.norm.gain", Shape{bd});
        out.emplace_back("pool.proj", Shape{bd, hidden});

        out.emplace_back("dec.cond_proj", Shape{hidden, bd});
        out.emplace_back("dec.pos", Shape{bp.decoder_context(), bd});
        for (int i = 0; i < bp.decoder_layers; ++i)
            detail::block_shapes(out, "dec.layer." + std::to_string(i), bd, bd, FfnType::swiglu,
                                 bp.pool_ffn_dim());
        out.emplace_back("dec.norm.gain", Shape{bd});
    }
    return out;
}

// Allocates and initializes every parameter: normal(0, 0.02), output
// projections scaled by 1/sqrt(2 * layer count), norm gains at 1, biases
// and LoRA B at 0. Tying aliases are registered after the real storage.
template <typename S>
ParamStore<S> init_params(const ModelConfig& cfg, const BytePoolConfig& bp, Rng& rng) {
    ParamStore<S> store;
    const double res_scale_core = 1.0 / std::sqrt(2.0 * std::max(1, cfg.n_layers));
    const double res_scale_pool = 1.0 / std::sqrt(2.0 * std::max(1, bp.pool_layers));
    const double res_scale_dec = 1.0 / std::sqrt(2.0 * std::max(1, bp.decoder_layers));

    auto ends_with = [](const std::string& s, const char* suffix) {
        const std::string suf(suffix);
        return s.size() >= suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
    };

    for (const auto& [name, shape] : enumerate_param_shapes(cfg, bp)) {
        auto t = make_tensor<S>(shape, true);
        const bool is_gain = ends_with(name, "norm.gain");
        const bool is_bias = ends_with(name, ".b1") || ends_with(name, ".b2");
        const bool is_lora_b = name.find(".lora.") != std::string::npos && ends_with(name, ".b");
        const bool is_out_proj = ends_with(name, "attn.wo") || ends_with(name, "ffn.w_down") ||
                                 ends_with(name, "ffn.w2");
        double stddev = 0.02;
        if (is_out_proj) {
            if (name.rfind("pool.", 0) == 0) stddev *= res_scale_pool;
            else if (name.rfind("dec.", 0) == 0) stddev *= res_scale_dec;
            else stddev *= res_scale_core;
        }
        if (is_gain) {
            std::fill(t->values.begin(), t->values.end(), S(1));
        } else if (is_bias || is_lora_b) {
            // zeros: shared-FFN behavior is exact at step 0 when LoRA B = 0
        } else {
            for (auto& v : t->values) v = static_cast<S>(rng.normal(0.0, stddev));
        }
        store.insert(name, std::move(t));
    }

    // Tying aliases point extra names at layer-0 storage.
    const bool share_ffn = cfg.tying == Tying::ffn_shared || cfg.tying == Tying::ffn_attn_shared;
    const bool share_attn = cfg.tying == Tying::ffn_attn_shared;
    for (int i = 1; i < cfg.n_layers; ++i) {
        const std::string base = "layer." + std::to_string(i);
        if (share_attn)
            for (const char* w : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
                store.alias(base + w, "layer.0" + std::string(w));
        if (share_ffn) {
            if (cfg.ffn_type == FfnType::swiglu)
                for (const char* w : {".ffn.w_gate", ".ffn.w_up", ".ffn.w_down"})
                    store.alias(base + w, "layer.0" + std::string(w));
            else
                for (const char* w : {".ffn.w1", ".ffn.b1", ".ffn.w2", ".ffn.b2"})
                    store.alias(base + w, "layer.0" + std::string(w));
        }
    }
    if (cfg.embedder == Embedder::bpe_lookup && cfg.tying == Tying::embed_head)
        store.alias("head.w", "embed.tok");
    return store;
}

// The configurable transformer: embeddings or pooled byte chunks in,
// grouped-query causal attention blocks, and a (possibly tied) LM head.
template <typename S>
class Transformer {
public:
    struct Pass {
        Tape<S>& tape;
        bool training{false};
        Rng* rng{nullptr};
    };

    Transformer(ModelConfig cfg, BytePoolConfig bp, std::uint64_t init_seed)
        : cfg_(std::move(cfg)), bp_(bp) {
        Rng rng(mix_seed(init_seed, 0x7061726d73ull)); // param stream
        params_ = init_params<S>(cfg_, bp_, rng);
    }

    const ModelConfig& config() const { return cfg_; }
    const BytePoolConfig& bytepool_config() const { return bp_; }
    ParamStore<S>& params() { return params_; }
    const ParamStore<S>& params() const { return params_; }

    const TensorPtr<S>& p(const std::string& name) const { return params_.at(name); }

    // Token-id embedding plus the configured positional signal. ids is
    // row-major [batch x t].
    TensorPtr<S> embed_tokens(Pass pass, const std::vector<int>& ids, Index batch, Index t) const {
        if (cfg_.embedder != Embedder::bpe_lookup)
            throw ConfigError("embed_tokens requires the bpe_lookup embedder");
        check_context(t);
        if (static_cast<Index>(ids.size()) != batch * t)
            throw ShapeError("embed_tokens: " + std::to_string(ids.size()) + " ids for batch " +
                             std::to_string(batch) + " x " + std::to_string(t));
        std::vector<Index> idx(ids.size());
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] < 0 || ids[i] >= cfg_.vocab_size)
                throw IndexError("embed_tokens: token id " + std::to_string(ids[i]) +
                                 " out of range [0, " + std::to_string(cfg_.vocab_size) + ")");
            idx[i] = ids[i];
        }
        auto x = rows(pass.tape, p("embed.tok"), idx);
        return add_positional(pass, x, batch, t);
    }

    // Adds absolute-position information for sincos/learned schemes; rope
    // rotates inside attention instead.
    TensorPtr<S> add_positional(Pass pass, const TensorPtr<S>& x, Index batch, Index t) const {
        if (cfg_.pos_scheme == PosScheme::learned) {
            std::vector<Index> pos(static_cast<size_t>(batch * t));
            for (Index b = 0; b < batch; ++b)
                for (Index i = 0; i < t; ++i) pos[static_cast<size_t>(b * t + i)] = i;
            return add(pass.tape, x, rows(pass.tape, p("embed.pos"), pos));
        }
        if (cfg_.pos_scheme == PosScheme::sincos) {
            auto pe = make_tensor<S>(Shape{batch * t, cfg_.hidden_dim});
            for (Index b = 0; b < batch; ++b)
                for (Index i = 0; i < t; ++i)
                    for (Index d = 0; d < cfg_.hidden_dim; d += 2) {
                        const double omega =
                            std::pow(10000.0, -static_cast<double>(d) / static_cast<double>(cfg_.hidden_dim));
                        const double angle = static_cast<double>(i) * omega;
                        S* row = pe->values.data() + (b * t + i) * cfg_.hidden_dim;
                        row[d] = static_cast<S>(std::sin(angle));
                        if (d + 1 < cfg_.hidden_dim) row[d + 1] = static_cast<S>(std::cos(angle));
                    }
            return add(pass.tape, x, pe);
        }
        return x;
    }

    // Pre-norm grouped-query attention with causal masking.
    TensorPtr<S> attention(Pass pass, const TensorPtr<S>& x, Index batch, Index t, int layer) const {
        const std::string base = "layer." + std::to_string(layer) + ".attn";
        const Index dh = cfg_.head_dim();
        auto xn = rmsnorm(pass.tape, x, p(base + ".norm.gain"));
        auto q2 = matmul(pass.tape, xn, p(base + ".wq"));
        auto k2 = matmul(pass.tape, xn, p(base + ".wk"));
        auto v2 = matmul(pass.tape, xn, p(base + ".wv"));

        TensorPtr<S> mask = t > 1 ? causal_mask(batch, t) : nullptr;
        std::vector<TensorPtr<S>> head_outs(static_cast<size_t>(cfg_.n_heads));
        for (int g = 0; g < cfg_.n_kv_heads(); ++g) {
            auto kh = reshape(pass.tape, slice_cols(pass.tape, k2, g * dh, dh), {batch, t, dh});
            auto vh = reshape(pass.tape, slice_cols(pass.tape, v2, g * dh, dh), {batch, t, dh});
            if (cfg_.pos_scheme == PosScheme::rope) kh = rope(pass.tape, kh);
            for (int j = 0; j < cfg_.group_size; ++j) {
                const int h = g * cfg_.group_size + j;
                auto qh = reshape(pass.tape, slice_cols(pass.tape, q2, h * dh, dh), {batch, t, dh});
                if (cfg_.pos_scheme == PosScheme::rope) qh = rope(pass.tape, qh);
                auto scores = scale(pass.tape, bmm_nt(pass.tape, qh, kh),
                                    1.0 / std::sqrt(static_cast<double>(dh)));
                if (mask) scores = add(pass.tape, scores, mask);
                auto probs = softmax_rows(pass.tape, scores);
                probs = apply_dropout(pass, probs);
                auto oh = bmm(pass.tape, probs, vh);
                head_outs[static_cast<size_t>(h)] = reshape(pass.tape, oh, {batch * t, dh});
            }
        }
        auto cat = concat_cols(pass.tape, head_outs);
        auto out = matmul(pass.tape, cat, p(base + ".wo"));
        return apply_dropout(pass, out);
    }

    TensorPtr<S> ffn(Pass pass, const TensorPtr<S>& x, int layer) const {
        const std::string base = "layer." + std::to_string(layer) + ".ffn";
        auto xn = rmsnorm(pass.tape, x, p(base + ".norm.gain"));
        const bool lora = cfg_.tying == Tying::ffn_shared && cfg_.lora_rank > 0;
        auto with_lora = [&](TensorPtr<S> y, const TensorPtr<S>& in, const std::string& target) {
            if (!lora) return y;
            auto delta = matmul(pass.tape, matmul(pass.tape, in, p(base + ".lora." + target + ".a")),
                                p(base + ".lora." + target + ".b"));
            return add(pass.tape, y, delta);
        };
        if (cfg_.ffn_type == FfnType::swiglu) {
            auto g = with_lora(matmul(pass.tape, xn, p(base + ".w_gate")), xn, "gate");
            auto u = with_lora(matmul(pass.tape, xn, p(base + ".w_up")), xn, "up");
            auto h = mul(pass.tape, silu(pass.tape, g), u);
            return with_lora(matmul(pass.tape, h, p(base + ".w_down")), h, "down");
        }
        auto h1 = with_lora(matmul(pass.tape, xn, p(base + ".w1")), xn, "w1");
        auto h = gelu(pass.tape, add_bias(pass.tape, h1, p(base + ".b1")));
        auto h2 = with_lora(matmul(pass.tape, h, p(base + ".w2")), h, "w2");
        return add_bias(pass.tape, h2, p(base + ".b2"));
    }

    // x + Attn(Norm(x)), then + FFN(Norm(x)).
    TensorPtr<S> block(Pass pass, const TensorPtr<S>& x, Index batch, Index t, int layer) const {
        auto with_attn = add(pass.tape, x, attention(pass, x, batch, t, layer));
        return add(pass.tape, with_attn, ffn(pass, with_attn, layer));
    }

    // All blocks plus the final norm. Input is the embedded [batch*t, hidden].
    TensorPtr<S> hidden_states(Pass pass, TensorPtr<S> x, Index batch, Index t) const {
        for (int i = 0; i < cfg_.n_layers; ++i) x = block(pass, x, batch, t, i);
        return rmsnorm(pass.tape, x, p("final_norm.gain"));
    }

    // Next-token logits over the BPE vocabulary; the byte_pool embedder
    // replaces this head with the byte decoder.
    TensorPtr<S> lm_logits(Pass pass, const TensorPtr<S>& h) const {
        if (cfg_.embedder != Embedder::bpe_lookup)
            throw ConfigError("lm_head is unavailable with the byte_pool embedder");
        const auto& w = cfg_.tying == Tying::none ? p("head.w") : p("embed.tok");
        return matmul_nt(pass.tape, h, w);
    }

    // Mean next-token cross entropy of targets (row-major [batch x t]).
    TensorPtr<S> lm_loss(Pass pass, const std::vector<int>& ids, const std::vector<int>& targets,
                         Index batch, Index t) const {
        auto h = hidden_states(pass, embed_tokens(pass, ids, batch, t), batch, t);
        auto logits = lm_logits(pass, h);
        return cross_entropy(pass.tape, logits, targets);
    }

    void check_context(Index t) const {
        if (t < 1 || t > cfg_.max_context)
            throw ShapeError("sequence length " + std::to_string(t) + " outside [1, " +
                             std::to_string(cfg_.max_context) + "]");
    }

    TensorPtr<S> apply_dropout(Pass pass, const TensorPtr<S>& x) const {
        if (!pass.training || cfg_.dropout == 0.0) return x;
        if (!pass.rng) throw ConfigError("training forward requires an rng for dropout");
        return dropout(pass.tape, x, cfg_.dropout, *pass.rng, true);
    }

    // Additive causal mask: position i attends to j <= i. A large finite
    // negative keeps every op output finite under the NaN policy.
    TensorPtr<S> causal_mask(Index batch, Index t) const {
        auto mask = make_tensor<S>(Shape{batch, t, t});
        constexpr S neg = S(-1e30);
        for (Index b = 0; b < batch; ++b)
            for (Index i = 0; i < t; ++i)
                for (Index j = i + 1; j < t; ++j)
                    mask->values[static_cast<size_t>((b * t + i) * t + j)] = neg;
        return mask;
    }

private:
    ModelConfig cfg_;
    BytePoolConfig bp_;
    ParamStore<S> params_;
};

} // namespace stlm
