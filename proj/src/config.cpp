#include "stlm/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace stlm {

using nlohmann::json;

namespace {

template <typename E>
struct EnumNames;

template <>
struct EnumNames<FfnType> {
    static constexpr std::pair<const char*, FfnType> values[] = {{"swiglu", FfnType::swiglu},
                                                                 {"simple", FfnType::simple}};
};
template <>
struct EnumNames<PosScheme> {
    static constexpr std::pair<const char*, PosScheme> values[] = {
        {"rope", PosScheme::rope}, {"sincos", PosScheme::sincos}, {"learned", PosScheme::learned}};
};
template <>
struct EnumNames<Tying> {
    static constexpr std::pair<const char*, Tying> values[] = {{"none", Tying::none},
                                                               {"embed_head", Tying::embed_head},
                                                               {"ffn_shared", Tying::ffn_shared},
                                                               {"ffn_attn_shared", Tying::ffn_attn_shared}};
};
template <>
struct EnumNames<Embedder> {
    static constexpr std::pair<const char*, Embedder> values[] = {{"bpe_lookup", Embedder::bpe_lookup},
                                                                  {"byte_pool", Embedder::byte_pool}};
};
template <>
struct EnumNames<PoolMode> {
    static constexpr std::pair<const char*, PoolMode> values[] = {{"aggregate", PoolMode::aggregate},
                                                                  {"mean", PoolMode::mean}};
};

template <typename E>
std::string enum_name(E v) {
    for (const auto& [name, value] : EnumNames<E>::values)
        if (value == v) return name;
    throw ConfigError("unknown enum value");
}

template <typename E>
E enum_value(const std::string& name, const std::string& key) {
    for (const auto& [candidate, value] : EnumNames<E>::values)
        if (name == candidate) return value;
    std::string allowed;
    for (const auto& [candidate, value] : EnumNames<E>::values)
        allowed += std::string(allowed.empty() ? "" : ", ") + candidate;
    throw ConfigError("config key " + key + ": invalid value '" + name + "' (expected one of " + allowed + ")");
}

json to_json(const RunConfig& c) {
    return json{
        {"model",
         {{"n_layers", c.model.n_layers},
          {"hidden_dim", c.model.hidden_dim},
          {"n_heads", c.model.n_heads},
          {"group_size", c.model.group_size},
          {"ffn_type", enum_name(c.model.ffn_type)},
          {"ffn_dim", c.model.ffn_dim},
          {"pos_scheme", enum_name(c.model.pos_scheme)},
          {"vocab_size", c.model.vocab_size},
          {"max_context", c.model.max_context},
          {"dropout", c.model.dropout},
          {"tying", enum_name(c.model.tying)},
          {"lora_rank", c.model.lora_rank},
          {"embedder", enum_name(c.model.embedder)}}},
        {"bytepool",
         {{"byte_dim", c.bytepool.byte_dim},
          {"pool_layers", c.bytepool.pool_layers},
          {"pool_heads", c.bytepool.pool_heads},
          {"max_token_bytes", c.bytepool.max_token_bytes},
          {"decoder_layers", c.bytepool.decoder_layers},
          {"decoder_heads", c.bytepool.decoder_heads},
          {"pool_mode", enum_name(c.bytepool.pool_mode)}}},
        {"train",
         {{"batch_size", c.train.batch_size},
          {"grad_accum_steps", c.train.grad_accum_steps},
          {"total_iters", c.train.total_iters},
          {"warmup_iters", c.train.warmup_iters},
          {"peak_lr", c.train.peak_lr},
          {"min_lr_ratio", c.train.min_lr_ratio},
          {"weight_decay", c.train.weight_decay},
          {"beta1", c.train.beta1},
          {"beta2", c.train.beta2},
          {"grad_clip", c.train.grad_clip},
          {"seed", c.train.seed},
          {"val_fraction", c.train.val_fraction},
          {"checkpoint_every", c.train.checkpoint_every}}},
        {"paths",
         {{"corpus", c.paths.corpus},
          {"merges", c.paths.merges},
          {"checkpoint_dir", c.paths.checkpoint_dir},
          {"metrics", c.paths.metrics}}}};
}

int get_int(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number_integer()) throw ConfigError(std::string("config key ") + key + ": expected an integer");
    return v.get<int>();
}

double get_real(const json& j, const char* key) {
    const auto& v = j.at(key);
    if (!v.is_number()) throw ConfigError(std::string("config key ") + key + ": expected a number");
    return v.get<double>();
}

RunConfig from_json(const json& j) {
    RunConfig c;
    const auto& m = j.at("model");
    c.model.n_layers = get_int(m, "n_layers");
    c.model.hidden_dim = get_int(m, "hidden_dim");
    c.model.n_heads = get_int(m, "n_heads");
    c.model.group_size = get_int(m, "group_size");
    c.model.ffn_type = enum_value<FfnType>(m.at("ffn_type").get<std::string>(), "model.ffn_type");
    c.model.ffn_dim = get_int(m, "ffn_dim");
    c.model.pos_scheme = enum_value<PosScheme>(m.at("pos_scheme").get<std::string>(), "model.pos_scheme");
    c.model.vocab_size = get_int(m, "vocab_size");
    c.model.max_context = get_int(m, "max_context");
    c.model.dropout = get_real(m, "dropout");
    c.model.tying = enum_value<Tying>(m.at("tying").get<std::string>(), "model.tying");
    c.model.lora_rank = get_int(m, "lora_rank");
    c.model.embedder = enum_value<Embedder>(m.at("embedder").get<std::string>(), "model.embedder");

    const auto& b = j.at("bytepool");
    c.bytepool.byte_dim = get_int(b, "byte_dim");
    c.bytepool.pool_layers = get_int(b, "pool_layers");
    c.bytepool.pool_heads = get_int(b, "pool_heads");
    c.bytepool.max_token_bytes = get_int(b, "max_token_bytes");
    c.bytepool.decoder_layers = get_int(b, "decoder_layers");
    c.bytepool.decoder_heads = get_int(b, "decoder_heads");
    c.bytepool.pool_mode = enum_value<PoolMode>(b.at("pool_mode").get<std::string>(), "bytepool.pool_mode");

    const auto& t = j.at("train");
    c.train.batch_size = get_int(t, "batch_size");
    c.train.grad_accum_steps = get_int(t, "grad_accum_steps");
    c.train.total_iters = get_int(t, "total_iters");
    c.train.warmup_iters = get_int(t, "warmup_iters");
    c.train.peak_lr = get_real(t, "peak_lr");
    c.train.min_lr_ratio = get_real(t, "min_lr_ratio");
    c.train.weight_decay = get_real(t, "weight_decay");
    c.train.beta1 = get_real(t, "beta1");
    c.train.beta2 = get_real(t, "beta2");
    c.train.grad_clip = get_real(t, "grad_clip");
    c.train.seed = t.at("seed").get<std::uint64_t>();
    c.train.val_fraction = get_real(t, "val_fraction");
    c.train.checkpoint_every = get_int(t, "checkpoint_every");

    const auto& p = j.at("paths");
    c.paths.corpus = p.at("corpus").get<std::string>();
    c.paths.merges = p.at("merges").get<std::string>();
    c.paths.checkpoint_dir = p.at("checkpoint_dir").get<std::string>();
    c.paths.metrics = p.at("metrics").get<std::string>();
    return c;
}

// Overlays patch onto base, rejecting keys absent from the defaults so
// typos never pass silently.
void merge_checked(json& base, const json& patch, const std::string& prefix) {
    if (!patch.is_object())
        throw ConfigError("config: expected an object at " + (prefix.empty() ? "top level" : prefix));
    for (const auto& [key, value] : patch.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) throw ConfigError("unknown config key: " + path);
        json& slot = base[key];
        if (slot.is_object()) {
            merge_checked(slot, value, path);
        } else if (slot.is_string()) {
            if (!value.is_string()) throw ConfigError("config key " + path + ": expected a string");
            slot = value;
        } else if (slot.is_boolean()) {
            if (!value.is_boolean()) throw ConfigError("config key " + path + ": expected a boolean");
            slot = value;
        } else {
            if (!value.is_number()) throw ConfigError("config key " + path + ": expected a number");
            slot = value;
        }
    }
}

void apply_override(json& base, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ConfigError("override '" + spec + "' is not of the form key.path=value");
    const std::string path = spec.substr(0, eq);
    const std::string raw = spec.substr(eq + 1);

    json value;
    try {
        value = json::parse(raw);
        if (value.is_object() || value.is_array()) value = raw; // overrides are scalar-only
    } catch (const json::parse_error&) {
        value = raw; // unquoted strings (e.g. ffn_type=simple)
    }

    json patch = value;
    std::string rest = path;
    std::vector<std::string> keys;
    size_t pos = 0;
    while ((pos = rest.find('.')) != std::string::npos) {
        keys.push_back(rest.substr(0, pos));
        rest = rest.substr(pos + 1);
    }
    keys.push_back(rest);
    for (auto it = keys.rbegin(); it != keys.rend(); ++it) patch = json{{*it, patch}};
    merge_checked(base, patch, "");
}

} // namespace

void ModelConfig::validate() const {
    if (n_layers < 0) throw ConfigError("model.n_layers must be >= 0");
    if (hidden_dim <= 0 || n_heads <= 0 || group_size <= 0 || ffn_dim <= 0 || vocab_size <= 1 ||
        max_context <= 0)
        throw ConfigError("model dims must be positive");
    if (hidden_dim % n_heads != 0)
        throw ConfigError("model.hidden_dim (" + std::to_string(hidden_dim) + ") must be divisible by n_heads (" +
                          std::to_string(n_heads) + ")");
    if (n_heads % group_size != 0)
        throw ConfigError("model.n_heads (" + std::to_string(n_heads) + ") must be divisible by group_size (" +
                          std::to_string(group_size) + ")");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model.dropout must be in [0, 1)");
    if (lora_rank < 0) throw ConfigError("model.lora_rank must be >= 0");
    if (lora_rank > 0 && tying != Tying::ffn_shared)
        throw ConfigError("model.lora_rank > 0 requires tying = ffn_shared");
    if (pos_scheme == PosScheme::rope && head_dim() % 2 != 0)
        throw ConfigError("rope requires an even head dim, got " + std::to_string(head_dim()));
}

void BytePoolConfig::validate(const ModelConfig& model) const {
    if (byte_dim <= 0 || pool_layers <= 0 || pool_heads <= 0 || max_token_bytes <= 0 ||
        decoder_layers <= 0 || decoder_heads <= 0)
        throw ConfigError("bytepool dims must be positive");
    if (byte_dim > model.hidden_dim)
        throw ConfigError("bytepool.byte_dim (" + std::to_string(byte_dim) + ") must not exceed model.hidden_dim (" +
                          std::to_string(model.hidden_dim) + ")");
    if (byte_dim % pool_heads != 0 || byte_dim % decoder_heads != 0)
        throw ConfigError("bytepool.byte_dim must be divisible by pool_heads and decoder_heads");
}

void TrainConfig::validate() const {
    if (batch_size <= 0 || grad_accum_steps <= 0 || total_iters <= 0 || checkpoint_every <= 0)
        throw ConfigError("train counts must be positive");
    if (warmup_iters < 0 || warmup_iters >= total_iters)
        throw ConfigError("train.warmup_iters must be in [0, total_iters)");
    if (peak_lr <= 0.0) throw ConfigError("train.peak_lr must be positive");
    if (min_lr_ratio < 0.0 || min_lr_ratio > 1.0) throw ConfigError("train.min_lr_ratio must be in [0, 1]");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("train.beta1/beta2 must be in [0, 1)");
    if (grad_clip <= 0.0) throw ConfigError("train.grad_clip must be positive");
    if (val_fraction <= 0.0 || val_fraction >= 0.5)
        throw ConfigError("train.val_fraction must be in (0, 0.5)");
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (model.embedder == Embedder::byte_pool) bytepool.validate(model);
}

RunConfig parse_config(const std::string& json_text, const std::vector<std::string>& overrides) {
    json resolved = to_json(RunConfig{});
    if (!json_text.empty()) {
        json file;
        try {
            file = json::parse(json_text);
        } catch (const json::parse_error& e) {
            throw ConfigError(std::string("config file is not valid JSON: ") + e.what());
        }
        merge_checked(resolved, file, "");
    }
    for (const auto& o : overrides) apply_override(resolved, o);
    RunConfig cfg = from_json(resolved);
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::string& base_file, const std::vector<std::string>& overrides) {
    std::string text;
    if (!base_file.empty()) {
        std::ifstream is(base_file, std::ios::binary);
        if (!is) throw ConfigError("cannot open config file " + base_file);
        std::ostringstream buf;
        buf << is.rdbuf();
        text = buf.str();
    }
    return parse_config(text, overrides);
}

std::string dump_config(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

std::string to_string(FfnType v) { return enum_name(v); }
std::string to_string(PosScheme v) { return enum_name(v); }
std::string to_string(Tying v) { return enum_name(v); }
std::string to_string(Embedder v) { return enum_name(v); }
std::string to_string(PoolMode v) { return enum_name(v); }

} // namespace stlm
