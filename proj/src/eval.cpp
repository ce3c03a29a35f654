#include "stlm/eval.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "stlm/data.hpp"

namespace stlm {

namespace {

constexpr double kLog2E = 1.4426950408889634; // nats -> bits

double row_log2prob(const float* logits, Index vocab, int target) {
    double max_logit = logits[0];
    for (Index c = 1; c < vocab; ++c) max_logit = std::max(max_logit, static_cast<double>(logits[c]));
    double sum = 0.0;
    for (Index c = 0; c < vocab; ++c) sum += std::exp(static_cast<double>(logits[c]) - max_logit);
    const double lse = max_logit + std::log(sum);
    return (static_cast<double>(logits[target]) - lse) * kLog2E;
}

} // namespace

double byte_perplexity(const SequenceScorer& scorer, const std::string& text) {
    if (text.empty()) throw DataError("byte_perplexity: empty text");
    const double bits = scorer.text_logprob_bits(text);
    return std::exp2(-bits / static_cast<double>(text.size()));
}

void MCItem::validate() const {
    if (options.size() < 2)
        throw DataError("mc item needs at least 2 options, got " + std::to_string(options.size()));
    if (gold < 0 || gold >= static_cast<int>(options.size()))
        throw DataError("mc item gold index " + std::to_string(gold) + " out of range");
    for (const auto& o : options)
        if (o.empty()) throw DataError("mc item has an empty option");
}

std::vector<MCItem> parse_mc_items(const std::string& jsonl) {
    std::vector<MCItem> items;
    std::istringstream is(jsonl);
    std::string line;
    size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw FormatError("mc items line " + std::to_string(line_no) + ": " + e.what());
        }
        MCItem item;
        try {
            item.context = j.at("context").get<std::string>();
            item.options = j.at("options").get<std::vector<std::string>>();
            item.gold = j.at("gold").get<int>();
        } catch (const nlohmann::json::exception& e) {
            throw FormatError("mc items line " + std::to_string(line_no) + ": " + e.what());
        }
        item.validate();
        items.push_back(std::move(item));
    }
    return items;
}

std::vector<MCItem> read_mc_items(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_mc_items(buf.str());
}

MCResult score_mc(const SequenceScorer& scorer, const std::vector<MCItem>& items) {
    MCResult result;
    size_t correct = 0, correct_norm = 0;
    for (const auto& item : items) {
        item.validate();
        int best = 0, best_norm = 0;
        double best_bits = 0.0, best_norm_bits = 0.0;
        for (int o = 0; o < static_cast<int>(item.options.size()); ++o) {
            const auto& option = item.options[static_cast<size_t>(o)];
            const double bits = scorer.option_logprob_bits(item.context, option);
            const double norm = bits / static_cast<double>(std::max<size_t>(1, option.size()));
            if (o == 0 || bits > best_bits) {
                best_bits = bits;
                best = o;
            }
            if (o == 0 || norm > best_norm_bits) {
                best_norm_bits = norm;
                best_norm = o;
            }
        }
        result.chosen.push_back(best);
        result.chosen_normalized.push_back(best_norm);
        correct += best == item.gold;
        correct_norm += best_norm == item.gold;
    }
    const double n = static_cast<double>(std::max<size_t>(1, items.size()));
    result.accuracy = static_cast<double>(correct) / n;
    result.accuracy_normalized = static_cast<double>(correct_norm) / n;
    return result;
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["model"] = model_id;
    if (byte_perplexity) j["byte_perplexity"] = *byte_perplexity;
    if (text_bytes) j["text_bytes"] = *text_bytes;
    if (mc_accuracy) j["accuracy"] = *mc_accuracy;
    if (mc_accuracy_normalized) j["accuracy_normalized"] = *mc_accuracy_normalized;
    if (mc_items) j["items"] = *mc_items;
    return j.dump(2) + "\n";
}

TransformerScorer::TransformerScorer(const Transformer<float>& model, MergeTable merges)
    : model_(model), merges_(std::move(merges)) {
    if (model_.config().embedder == Embedder::bpe_lookup &&
        model_.config().vocab_size < merges_.vocab_size() + 1)
        throw ConfigError("model vocab cannot hold the tokenizer vocab plus separator");
}

std::vector<double> TransformerScorer::stream_bits(const std::string& text) const {
    const auto& cfg = model_.config();
    auto stream = tokenize_documents({text}, merges_);
    const size_t n = stream.size();
    std::vector<double> bits(n - 1, 0.0);

    Tape<float> tape;
    NoGradGuard<float> guard(tape);
    Transformer<float>::Pass pass{tape, false, nullptr};

    size_t s = 0;
    while (s + 1 < n) {
        const int t = static_cast<int>(std::min<size_t>(static_cast<size_t>(cfg.max_context), n - 1 - s));
        if (cfg.embedder == Embedder::bpe_lookup) {
            std::vector<int> ids, targets;
            window_ids(stream, {s}, t, ids, targets);
            auto h = model_.hidden_states(pass, model_.embed_tokens(pass, ids, 1, t), 1, t);
            auto logits = model_.lm_logits(pass, h);
            for (int i = 0; i < t; ++i)
                bits[s + static_cast<size_t>(i)] =
                    row_log2prob(logits->values.data() + static_cast<size_t>(i) * cfg.vocab_size,
                                 cfg.vocab_size, targets[static_cast<size_t>(i)]);
        } else {
            const auto& bp = model_.bytepool_config();
            auto batch = window_chunks(stream, {s}, t, bp.max_token_bytes);
            auto x = pool_chunks(model_, pass, batch);
            auto h = model_.hidden_states(pass, x, 1, t);
            auto logits = byte_decode_logits(model_, pass, h, batch);
            const int stride = bp.max_token_bytes + 1;
            for (int i = 0; i < t; ++i) {
                double total = 0.0;
                for (int k = 0; k < stride; ++k) {
                    const int target = batch.target_ids[static_cast<size_t>(i * stride + k)];
                    if (target == BytePoolConfig::pad_id) break;
                    total += row_log2prob(
                        logits->values.data() +
                            static_cast<size_t>(i * stride + k) * BytePoolConfig::byte_vocab,
                        BytePoolConfig::byte_vocab, target);
                }
                bits[s + static_cast<size_t>(i)] = total;
            }
        }
        tape.clear();
        s += static_cast<size_t>(t);
    }
    return bits;
}

double TransformerScorer::text_logprob_bits(const std::string& text) const {
    double total = 0.0;
    for (double b : stream_bits(text)) total += b;
    return total;
}

double TransformerScorer::option_logprob_bits(const std::string& context, const std::string& option) const {
    const std::string full = context + option;
    const auto bits = stream_bits(full);
    const auto spans = encode_with_spans(merges_, full);
    double total = 0.0;
    for (size_t j = 0; j < spans.size(); ++j)
        if (spans[j].end > context.size()) total += bits[j];
    return total;
}

UniformTokenScorer::UniformTokenScorer(MergeTable merges, int vocab_size)
    : merges_(std::move(merges)), bits_per_token_(std::log2(static_cast<double>(vocab_size))) {
    if (vocab_size < 2) throw ConfigError("uniform scorer needs vocab_size >= 2");
}

double UniformTokenScorer::text_logprob_bits(const std::string& text) const {
    return -bits_per_token_ * static_cast<double>(encode(merges_, text).size());
}

double UniformTokenScorer::option_logprob_bits(const std::string& context,
                                               const std::string& option) const {
    const auto spans = encode_with_spans(merges_, context + option);
    size_t count = 0;
    for (const auto& s : spans) count += s.end > context.size();
    return -bits_per_token_ * static_cast<double>(count);
}

double ByteUniformScorer::text_logprob_bits(const std::string& text) const {
    return -8.0 * static_cast<double>(text.size());
}

double ByteUniformScorer::option_logprob_bits(const std::string&, const std::string& option) const {
    return -8.0 * static_cast<double>(option.size());
}

} // namespace stlm
