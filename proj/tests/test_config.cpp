#include "doctest.h"

#include "stlm/config.hpp"

using namespace stlm;

TEST_CASE("empty file plus no overrides yields the baseline defaults") {
    auto cfg = parse_config("", {});
    CHECK(cfg.model.n_layers == 8);
    CHECK(cfg.model.ffn_type == FfnType::swiglu);
    CHECK(cfg.model.ffn_dim == 1536);
    CHECK(cfg.model.n_heads == 16);
    CHECK(cfg.model.group_size == 4);
    CHECK(cfg.model.hidden_dim == 512);
    CHECK(cfg.model.max_context == 512);
    CHECK(cfg.model.vocab_size == 50257);
    CHECK(cfg.model.dropout == 0.1);
    CHECK(cfg.model.pos_scheme == PosScheme::rope);
    CHECK(cfg.model.tying == Tying::embed_head);
    CHECK(cfg.train.batch_size == 24);
    CHECK(cfg.train.grad_accum_steps == 20);
    CHECK(cfg.train.total_iters == 25000);
    CHECK(cfg.train.warmup_iters == 5000);
    CHECK(cfg.train.peak_lr == 6e-4);
    CHECK(cfg.train.weight_decay == 0.1);
}

TEST_CASE("file values and overrides layer left to right") {
    auto cfg = parse_config(R"({"model": {"hidden_dim": 256, "n_heads": 8}})",
                            {"model.hidden_dim=128", "model.hidden_dim=64", "model.group_size=2"});
    CHECK(cfg.model.hidden_dim == 64); // last override wins
    CHECK(cfg.model.n_heads == 8);    // from file
    CHECK(cfg.model.group_size == 2); // from override
    CHECK(cfg.model.n_layers == 8);   // untouched default
}

TEST_CASE("dropout override reproduces the dropout-free variant") {
    auto cfg = parse_config("", {"model.dropout=0"});
    CHECK(cfg.model.dropout == 0.0);
}

TEST_CASE("unknown keys are rejected, not silently ignored") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"model": {"hiden_dim": 256}})", {}),
                         doctest::Contains("hiden_dim"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("", {"model.hiden_dim=256"}),
                         doctest::Contains("hiden_dim"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("", {"optimizer.lr=1"}),
                         doctest::Contains("optimizer"), ConfigError);
}

TEST_CASE("type and value errors name the key") {
    CHECK_THROWS_WITH_AS(parse_config(R"({"model": {"hidden_dim": "big"}})", {}),
                         doctest::Contains("hidden_dim"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config("", {"model.ffn_type=banana"}),
                         doctest::Contains("ffn_type"), ConfigError);
    CHECK_THROWS_AS(parse_config("", {"model.dropout"}), ConfigError);
    CHECK_THROWS_AS(parse_config("{not json", {}), ConfigError);
}

TEST_CASE("validation catches inconsistent settings") {
    CHECK_THROWS_AS(parse_config("", {"model.hidden_dim=100"}), ConfigError);  // not divisible by 16 heads
    CHECK_THROWS_AS(parse_config("", {"model.group_size=5"}), ConfigError);    // 16 % 5 != 0
    CHECK_THROWS_AS(parse_config("", {"model.lora_rank=4"}), ConfigError);     // requires ffn_shared
    CHECK_NOTHROW(parse_config("", {"model.lora_rank=4", "model.tying=ffn_shared"}));
    CHECK_THROWS_AS(parse_config("", {"train.warmup_iters=25000"}), ConfigError);
    CHECK_THROWS_AS(parse_config("", {"train.val_fraction=0.5"}), ConfigError);
    CHECK_THROWS_AS(parse_config("", {"model.dropout=1.0"}), ConfigError);
    // byte_pool constraints only checked when that embedder is selected
    CHECK_NOTHROW(parse_config("", {"bytepool.byte_dim=1024"}));
    CHECK_THROWS_AS(parse_config("", {"bytepool.byte_dim=1024", "model.embedder=byte_pool"}), ConfigError);
}

TEST_CASE("dump and reload is a fixed point") {
    auto cfg = parse_config("", {"model.hidden_dim=64", "model.n_heads=4", "model.embedder=byte_pool",
                                 "bytepool.byte_dim=32", "train.seed=99", "paths.corpus=data.txt"});
    const auto dumped = dump_config(cfg);
    auto back = parse_config(dumped, {});
    CHECK(dump_config(back) == dumped);
    CHECK(back.model.hidden_dim == 64);
    CHECK(back.model.embedder == Embedder::byte_pool);
    CHECK(back.bytepool.byte_dim == 32);
    CHECK(back.train.seed == 99);
    CHECK(back.paths.corpus == "data.txt");
}
