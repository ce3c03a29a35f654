#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stlm/error.hpp"

namespace stlm {

enum class FfnType { swiglu, simple };
enum class PosScheme { rope, sincos, learned };
enum class Tying { none, embed_head, ffn_shared, ffn_attn_shared };
enum class Embedder { bpe_lookup, byte_pool };
enum class PoolMode { aggregate, mean };

// Architectural hyperparameters. Defaults are the 8-layer / 512-hidden /
// 50257-vocab baseline; every field is overridable from config files and
// dotted command-line keys.
struct ModelConfig {
    int n_layers = 8;
    int hidden_dim = 512;
    int n_heads = 16;
    int group_size = 4; // query heads per KV head
    FfnType ffn_type = FfnType::swiglu;
    int ffn_dim = 1536;
    PosScheme pos_scheme = PosScheme::rope;
    int vocab_size = 50257;
    int max_context = 512;
    double dropout = 0.1;
    Tying tying = Tying::embed_head;
    int lora_rank = 0; // only with ffn_shared
    Embedder embedder = Embedder::bpe_lookup;

    int head_dim() const { return hidden_dim / n_heads; }
    int n_kv_heads() const { return n_heads / group_size; }
    int kv_dim() const { return n_kv_heads() * head_dim(); }

    void validate() const;
};

// Byte-level pooling embedder + decoder geometry. The byte alphabet is
// 256 data symbols plus EOT/BOS/PAD controls.
struct BytePoolConfig {
    static constexpr int byte_vocab = 259;
    static constexpr int eot_id = 256;
    static constexpr int bos_id = 257;
    static constexpr int pad_id = 258;

    int byte_dim = 64;
    int pool_layers = 2;
    int pool_heads = 4;
    int max_token_bytes = 16; // overwritten from the merge table when one is loaded
    int decoder_layers = 2;
    int decoder_heads = 4;
    PoolMode pool_mode = PoolMode::aggregate;

    int pool_ffn_dim() const { return 4 * byte_dim; }
    int decoder_context() const { return max_token_bytes + 2; } // [cond; BOS; bytes]

    void validate(const ModelConfig& model) const;
};

struct TrainConfig {
    int batch_size = 24;
    int grad_accum_steps = 20;
    int total_iters = 25000;
    int warmup_iters = 5000;
    double peak_lr = 6e-4;
    double min_lr_ratio = 0.1;
    double weight_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double grad_clip = 1.0;
    std::uint64_t seed = 1337;
    double val_fraction = 0.1;
    int checkpoint_every = 1000;

    void validate() const;
};

struct Paths {
    std::string corpus;
    std::string merges;
    std::string checkpoint_dir = "checkpoints";
    std::string metrics = "metrics.jsonl";
};

// Full run configuration: defaults <- config file <- dotted overrides.
struct RunConfig {
    ModelConfig model;
    BytePoolConfig bytepool;
    TrainConfig train;
    Paths paths;

    void validate() const;
};

// Parses the base JSON file (optional) and applies "a.b.c=value" overrides
// left to right. Unknown keys and type mismatches raise ConfigError naming
// the key.
RunConfig load_config(const std::string& base_file, const std::vector<std::string>& overrides);
RunConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides);

// Resolved-config dump; parse_config(dump) is a fixed point.
std::string dump_config(const RunConfig& cfg);

std::string to_string(FfnType v);
std::string to_string(PosScheme v);
std::string to_string(Tying v);
std::string to_string(Embedder v);
std::string to_string(PoolMode v);

} // namespace stlm
