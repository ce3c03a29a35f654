#include "doctest.h"

#include <cmath>

#include "stlm/model.hpp"

using namespace stlm;

namespace {

ModelConfig micro_config() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.hidden_dim = 16;
    cfg.n_heads = 2;
    cfg.group_size = 2;
    cfg.ffn_dim = 24;
    cfg.vocab_size = 32;
    cfg.max_context = 8;
    cfg.dropout = 0.0;
    return cfg;
}

template <typename S>
std::vector<S> forward_logits(Transformer<S>& model, const std::vector<int>& ids, Index batch, Index t) {
    Tape<S> tape;
    NoGradGuard<S> guard(tape);
    typename Transformer<S>::Pass pass{tape, false, nullptr};
    auto h = model.hidden_states(pass, model.embed_tokens(pass, ids, batch, t), batch, t);
    return model.lm_logits(pass, h)->values;
}

// Central finite differences through the whole model loss against the
// tape's analytic gradients; exercises every parameter entry.
template <typename S>
double model_fd_max_rel_err(Transformer<S>& model, const std::vector<int>& ids,
                            const std::vector<int>& targets, Index batch, Index t, double eps) {
    Tape<S> tape;
    typename Transformer<S>::Pass pass{tape, false, nullptr};
    auto loss = model.lm_loss(pass, ids, targets, batch, t);
    tape.backward(loss);

    auto eval_loss = [&]() {
        Tape<S> fresh;
        NoGradGuard<S> guard(fresh);
        typename Transformer<S>::Pass p2{fresh, false, nullptr};
        return static_cast<double>(model.lm_loss(p2, ids, targets, batch, t)->values[0]);
    };

    double max_rel = 0.0;
    for (auto& [name, param] : model.params().unique()) {
        for (size_t j = 0; j < param->values.size(); ++j) {
            const S old = param->values[j];
            param->values[j] = old + static_cast<S>(eps);
            const double up = eval_loss();
            param->values[j] = old - static_cast<S>(eps);
            const double down = eval_loss();
            param->values[j] = old;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = param->grad.empty() ? 0.0 : static_cast<double>(param->grad[j]);
            max_rel = std::max(max_rel, std::abs(analytic - numeric) / std::max(1.0, std::abs(analytic)));
        }
    }
    return max_rel;
}

} // namespace

TEST_CASE("embed_tokens looks up embedding rows exactly") {
    auto cfg = micro_config();
    Transformer<float> model(cfg, {}, 1);
    Tape<float> tape;
    Transformer<float>::Pass pass{tape, false, nullptr};
    auto x = model.embed_tokens(pass, {5, 0, 31}, 1, 3);
    const auto& table = model.p("embed.tok");
    for (Index c = 0; c < cfg.hidden_dim; ++c) {
        CHECK(x->values[static_cast<size_t>(c)] == table->values[static_cast<size_t>(5 * cfg.hidden_dim + c)]);
        CHECK(x->values[static_cast<size_t>(cfg.hidden_dim + c)] == table->values[static_cast<size_t>(c)]);
        CHECK(x->values[static_cast<size_t>(2 * cfg.hidden_dim + c)] ==
              table->values[static_cast<size_t>(31 * cfg.hidden_dim + c)]);
    }

    CHECK_THROWS_AS(model.embed_tokens(pass, {32}, 1, 1), IndexError);
    CHECK_THROWS_AS(model.embed_tokens(pass, std::vector<int>(9, 0), 1, 9), ShapeError);
    CHECK_THROWS_AS(model.embed_tokens(pass, {1, 2}, 1, 3), ShapeError);
}

TEST_CASE("sincos positions add sin 0 / cos 1 at position zero") {
    auto cfg = micro_config();
    cfg.pos_scheme = PosScheme::sincos;
    Transformer<float> model(cfg, {}, 1);
    Tape<float> tape;
    Transformer<float>::Pass pass{tape, false, nullptr};
    auto x = model.embed_tokens(pass, {7}, 1, 1);
    const auto& table = model.p("embed.tok");
    for (Index c = 0; c < cfg.hidden_dim; ++c) {
        const float base = table->values[static_cast<size_t>(7 * cfg.hidden_dim + c)];
        const float expected = c % 2 == 0 ? base + 0.0f : base + 1.0f;
        CHECK(x->values[static_cast<size_t>(c)] == doctest::Approx(expected));
    }
}

TEST_CASE("causality holds across every scheme and tying mode") {
    for (auto pos : {PosScheme::rope, PosScheme::sincos, PosScheme::learned}) {
        for (auto ffn : {FfnType::swiglu, FfnType::simple}) {
            for (auto tying : {Tying::none, Tying::embed_head, Tying::ffn_shared, Tying::ffn_attn_shared}) {
                auto cfg = micro_config();
                cfg.pos_scheme = pos;
                cfg.ffn_type = ffn;
                cfg.tying = tying;
                if (tying == Tying::ffn_shared) cfg.lora_rank = 2;
                Transformer<float> model(cfg, {}, 3);

                std::vector<int> ids{3, 1, 4, 1, 5, 9};
                auto base = forward_logits(model, ids, 1, 6);
                const int perturb_at = 3;
                ids[perturb_at] = 27;
                auto changed = forward_logits(model, ids, 1, 6);

                const Index v = cfg.vocab_size;
                for (Index pos_i = 0; pos_i < 6; ++pos_i) {
                    bool equal = true;
                    for (Index c = 0; c < v; ++c)
                        equal &= base[static_cast<size_t>(pos_i * v + c)] ==
                                 changed[static_cast<size_t>(pos_i * v + c)];
                    if (pos_i < perturb_at) {
                        CHECK(equal); // bitwise: the mask is exact, not approximate
                    }
                }
                bool tail_differs = false;
                for (Index c = 0; c < v; ++c)
                    tail_differs |= base[static_cast<size_t>(5 * v + c)] !=
                                    changed[static_cast<size_t>(5 * v + c)];
                CHECK(tail_differs);
            }
        }
    }
}

TEST_CASE("attention with a single position routes V through the output projection") {
    auto cfg = micro_config();
    cfg.n_layers = 1;
    Transformer<float> model(cfg, {}, 5);
    Tape<float> tape;
    Transformer<float>::Pass pass{tape, false, nullptr};

    auto x = make_tensor<float>({1, cfg.hidden_dim});
    Rng rng(8);
    for (auto& v : x->values) v = static_cast<float>(rng.normal());

    auto out = model.attention(pass, x, 1, 1, 0);

    // by hand: softmax over one element is 1, so output = concat of group
    // v-slices through wo
    auto xn = rmsnorm(tape, x, model.p("layer.0.attn.norm.gain"));
    auto v2 = matmul(tape, xn, model.p("layer.0.attn.wk")); // placeholder shape check
    v2 = matmul(tape, xn, model.p("layer.0.attn.wv"));
    const Index dh = cfg.head_dim();
    std::vector<TensorPtr<float>> parts;
    for (int h = 0; h < cfg.n_heads; ++h) {
        const int g = h / cfg.group_size;
        parts.push_back(slice_cols(tape, v2, g * dh, dh));
    }
    auto manual = matmul(tape, concat_cols(tape, parts), model.p("layer.0.attn.wo"));
    for (size_t i = 0; i < manual->values.size(); ++i)
        CHECK(out->values[i] == doctest::Approx(manual->values[i]).epsilon(1e-6));
}

TEST_CASE("swiglu maps zero input to zero and lora starts as an exact no-op") {
    auto cfg = micro_config();
    cfg.n_layers = 2;
    cfg.tying = Tying::ffn_shared;
    cfg.lora_rank = 3;
    Transformer<float> model(cfg, {}, 7);
    Tape<float> tape;
    Transformer<float>::Pass pass{tape, false, nullptr};

    auto zero = make_tensor<float>({4, cfg.hidden_dim});
    auto out = model.ffn(pass, zero, 0);
    for (float v : out->values) CHECK(v == 0.0f);

    // LoRA B starts at zero, so every layer computes the shared function
    auto x = make_tensor<float>({4, cfg.hidden_dim});
    Rng rng(4);
    for (auto& v : x->values) v = static_cast<float>(rng.normal());
    auto y0 = model.ffn(pass, x, 0);
    auto y1 = model.ffn(pass, x, 1);
    CHECK(y0->values == y1->values);

    // and the tied tensors are literally the same storage
    CHECK(model.p("layer.1.ffn.w_gate").get() == model.p("layer.0.ffn.w_gate").get());
    CHECK(model.p("layer.1.ffn.lora.gate.a").get() != model.p("layer.0.ffn.lora.gate.a").get());
}

TEST_CASE("ffn_attn_shared aliases whole blocks; embed_head aliases the head") {
    auto cfg = micro_config();
    cfg.tying = Tying::ffn_attn_shared;
    Transformer<float> model(cfg, {}, 2);
    CHECK(model.p("layer.1.attn.wq").get() == model.p("layer.0.attn.wq").get());
    CHECK(model.p("layer.1.ffn.w_down").get() == model.p("layer.0.ffn.w_down").get());
    CHECK(model.p("layer.1.attn.norm.gain").get() != model.p("layer.0.attn.norm.gain").get());

    auto tied = micro_config();
    tied.tying = Tying::embed_head;
    Transformer<float> tied_model(tied, {}, 2);
    CHECK(tied_model.p("head.w").get() == tied_model.p("embed.tok").get());

    // mutating through one name is visible through the alias
    tied_model.p("embed.tok")->values[0] = 42.0f;
    CHECK(tied_model.p("head.w")->values[0] == 42.0f);
}

TEST_CASE("zeroed output projections make each block the identity") {
    auto cfg = micro_config();
    Transformer<float> model(cfg, {}, 11);
    for (const auto& name : {"layer.0.attn.wo", "layer.0.ffn.w_down", "layer.1.attn.wo", "layer.1.ffn.w_down"})
        std::fill(model.p(name)->values.begin(), model.p(name)->values.end(), 0.0f);

    Tape<float> tape;
    Transformer<float>::Pass pass{tape, false, nullptr};
    auto x = make_tensor<float>({4, cfg.hidden_dim});
    Rng rng(2);
    for (auto& v : x->values) v = static_cast<float>(rng.normal());
    auto y = model.block(pass, x, 1, 4, 0);
    CHECK(y->values == x->values);
}

TEST_CASE("rmsnorm of a constant row returns the gain") {
    Tape<float> tape;
    auto x = full_like_shape<float>({1, 8}, 3.0f);
    auto gain = tensor_of<float>({8}, {1, 2, 3, 4, 5, 6, 7, 8});
    auto y = rmsnorm(tape, x, gain);
    for (Index i = 0; i < 8; ++i)
        CHECK(y->values[static_cast<size_t>(i)] ==
              doctest::Approx(gain->values[static_cast<size_t>(i)]).epsilon(1e-4));
}

TEST_CASE("lm head: identity embedding passes hidden state through verbatim") {
    ModelConfig cfg;
    cfg.n_layers = 0;
    cfg.hidden_dim = 2;
    cfg.n_heads = 1;
    cfg.group_size = 1;
    cfg.ffn_dim = 4;
    cfg.vocab_size = 2;
    cfg.max_context = 4;
    cfg.dropout = 0.0;
    Transformer<float> model(cfg, {}, 1);
    auto& we = model.p("embed.tok");
    we->values = {1, 0, 0, 1};

    Tape<float> tape;
    Transformer<float>::Pass pass{tape, false, nullptr};
    auto h = tensor_of<float>({1, 2}, {0.3f, -1.7f});
    auto logits = model.lm_logits(pass, h);
    CHECK(logits->values[0] == doctest::Approx(0.3f));
    CHECK(logits->values[1] == doctest::Approx(-1.7f));
}

TEST_CASE("lm head: hidden state equal to an embedding row wins the argmax") {
    auto cfg = micro_config();
    cfg.hidden_dim = 64;
    cfg.n_heads = 4;
    cfg.ffn_dim = 64;
    Transformer<float> model(cfg, {}, 13);
    Tape<float> tape;
    Transformer<float>::Pass pass{tape, false, nullptr};
    for (int k : {0, 7, 31}) {
        auto h = rows(tape, model.p("embed.tok"), {k});
        auto logits = model.lm_logits(pass, h);
        Index argmax = 0;
        for (Index c = 1; c < cfg.vocab_size; ++c)
            if (logits->values[static_cast<size_t>(c)] > logits->values[static_cast<size_t>(argmax)])
                argmax = c;
        CHECK(argmax == k);
    }
}

TEST_CASE("lm head is rejected under the byte_pool embedder") {
    auto cfg = micro_config();
    cfg.embedder = Embedder::byte_pool;
    BytePoolConfig bp;
    bp.byte_dim = 8;
    bp.pool_heads = 2;
    bp.decoder_heads = 2;
    bp.max_token_bytes = 4;
    Transformer<float> model(cfg, bp, 1);
    Tape<float> tape;
    Transformer<float>::Pass pass{tape, false, nullptr};
    auto h = make_tensor<float>({1, cfg.hidden_dim});
    CHECK_THROWS_AS(model.lm_logits(pass, h), ConfigError);
    CHECK_THROWS_AS(model.embed_tokens(pass, {0}, 1, 1), ConfigError);
}

TEST_CASE("dropout-free forward is bitwise repeatable; training dropout is live") {
    auto cfg = micro_config();
    Transformer<float> model(cfg, {}, 17);
    std::vector<int> ids{1, 2, 3, 4};
    auto a = forward_logits(model, ids, 1, 4);
    auto b = forward_logits(model, ids, 1, 4);
    CHECK(a == b);

    cfg.dropout = 0.5;
    Transformer<float> droppy(cfg, {}, 17);
    Tape<float> tape;
    Rng rng1(1), rng2(2);
    Transformer<float>::Pass p1{tape, true, &rng1};
    Transformer<float>::Pass p2{tape, true, &rng2};
    auto x = full_like_shape<float>({4, cfg.hidden_dim}, 0.5f);
    auto o1 = droppy.attention(p1, x, 1, 4, 0);
    auto o2 = droppy.attention(p2, x, 1, 4, 0);
    CHECK(o1->values != o2->values);
}

TEST_CASE("tiny full-model gradients match finite differences across tying modes") {
    for (auto tying : {Tying::embed_head, Tying::ffn_shared}) {
        ModelConfig cfg;
        cfg.n_layers = 1;
        cfg.hidden_dim = 8;
        cfg.n_heads = 2;
        cfg.group_size = 2;
        cfg.ffn_dim = 12;
        cfg.vocab_size = 11;
        cfg.max_context = 8;
        cfg.dropout = 0.0;
        cfg.tying = tying;
        if (tying == Tying::ffn_shared) cfg.lora_rank = 2;
        std::vector<int> small_ids{3, 1, 4, 1, 5, 9, 2, 6};
        std::vector<int> small_targets{1, 4, 1, 5, 9, 2, 6, 5};
        for (auto& v : small_ids) v %= cfg.vocab_size;
        for (auto& v : small_targets) v %= cfg.vocab_size;

        Transformer<double> model(cfg, {}, 23);
        CHECK(model_fd_max_rel_err(model, small_ids, small_targets, 1, 8, 1e-5) < 1e-5);

        Transformer<float> model32(cfg, {}, 23);
        CHECK(model_fd_max_rel_err(model32, small_ids, small_targets, 1, 8, 1e-3) < 1e-2);
    }
}

TEST_CASE("micro-scale full-model gradients: 2 layers, hidden 16, vocab 32, T 8") {
    auto cfg = micro_config(); // exactly that geometry
    std::vector<int> ids{3, 1, 4, 1, 5, 9, 2, 6};
    std::vector<int> targets{1, 4, 1, 5, 9, 2, 6, 5};

    Transformer<double> model64(cfg, {}, 29);
    CHECK(model_fd_max_rel_err(model64, ids, targets, 1, 8, 1e-5) < 1e-5);

    Transformer<float> model32(cfg, {}, 29);
    CHECK(model_fd_max_rel_err(model32, ids, targets, 1, 8, 1e-3) < 1e-2);
}
