#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "stlm/model.hpp"
#include "stlm/tokenizer.hpp"

namespace stlm {

// Log-probability oracle over text. Implementations score whole strings
// and context-conditioned continuations in log base 2; units are tokens
// for lookup-embedder models and bytes (plus EOT) for byte_pool models.
struct SequenceScorer {
    virtual ~SequenceScorer() = default;

    // Total log2 probability of every predicted unit of `text`, with the
    // first unit conditioned on a document separator.
    virtual double text_logprob_bits(const std::string& text) const = 0;

    // Total log2 probability of the option's units given the context.
    virtual double option_logprob_bits(const std::string& context, const std::string& option) const = 0;
};

// Perplexity normalized by the UTF-8 byte length of the original string:
// 2 ** (-text_logprob_bits / byte_len).
double byte_perplexity(const SequenceScorer& scorer, const std::string& text);

struct MCItem {
    std::string context;
    std::vector<std::string> options;
    int gold{0};

    void validate() const;
};

// One JSON object per line: {"context": ..., "options": [...], "gold": N}.
std::vector<MCItem> read_mc_items(const std::string& path);
std::vector<MCItem> parse_mc_items(const std::string& jsonl);

struct MCResult {
    double accuracy{0.0};
    double accuracy_normalized{0.0}; // option log-prob divided by byte length
    std::vector<int> chosen;
    std::vector<int> chosen_normalized;
};

// Path-probability scoring: per option, the total log2-probability of its
// units given the context; argmax wins, ties break to the lowest index.
MCResult score_mc(const SequenceScorer& scorer, const std::vector<MCItem>& items);

struct EvalReport {
    std::string model_id;
    std::optional<double> byte_perplexity;
    std::optional<size_t> text_bytes;
    std::optional<double> mc_accuracy;
    std::optional<double> mc_accuracy_normalized;
    std::optional<size_t> mc_items;

    std::string to_json() const;
};

// Scores with a trained model; windows the sequence at max_context like
// the training loop does.
class TransformerScorer : public SequenceScorer {
public:
    TransformerScorer(const Transformer<float>& model, MergeTable merges);
    double text_logprob_bits(const std::string& text) const override;
    double option_logprob_bits(const std::string& context, const std::string& option) const override;

private:
    // bits of each token (index i scores stream token i+1)
    std::vector<double> stream_bits(const std::string& text) const;

    const Transformer<float>& model_;
    MergeTable merges_;
};

// Uniform distribution over a token vocabulary; every unit costs log2(V).
class UniformTokenScorer : public SequenceScorer {
public:
    UniformTokenScorer(MergeTable merges, int vocab_size);
    double text_logprob_bits(const std::string& text) const override;
    double option_logprob_bits(const std::string& context, const std::string& option) const override;

private:
    MergeTable merges_;
    double bits_per_token_;
};

// Uniform next-byte model (P = 1/256 per byte): its byte-normalized
// perplexity is exactly 256 under any tokenizer.
class ByteUniformScorer : public SequenceScorer {
public:
    double text_logprob_bits(const std::string& text) const override;
    double option_logprob_bits(const std::string& context, const std::string& option) const override;
};

} // namespace stlm
