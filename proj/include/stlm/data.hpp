#pragma once

#include <string>
#include <vector>

#include "stlm/bytepool.hpp"
#include "stlm/rng.hpp"
#include "stlm/tokenizer.hpp"

namespace stlm {

// A tokenized corpus slice. Separator tokens carry an empty span and mark
// document starts; every other token's bytes live at bytes[start, end).
struct TokenStream {
    std::vector<int> ids;
    std::vector<TokenSpan> spans;
    std::string bytes;
    int separator_id{0};

    size_t size() const { return ids.size(); }
    bool is_separator(size_t i) const { return ids[i] == separator_id; }

    // Byte-symbol chunk for the byte-pooling embedder: the separator
    // becomes a single BOS control chunk.
    Chunk chunk_at(size_t i) const {
        if (is_separator(i)) return {BytePoolConfig::bos_id};
        Chunk c;
        for (size_t b = spans[i].start; b < spans[i].end; ++b)
            c.push_back(static_cast<unsigned char>(bytes[b]));
        return c;
    }

    // Data bytes of one token ("" for separators).
    std::string token_bytes(size_t i) const {
        return is_separator(i) ? std::string() : bytes.substr(spans[i].start, spans[i].end - spans[i].start);
    }
};

struct CorpusSplit {
    TokenStream train;
    TokenStream val;
};

// Reads one file (one document) or a directory (one document per regular
// file, sorted by name). The final val_fraction of the concatenated bytes
// is held out; both sides are tokenized independently and prefixed with
// separator tokens at document starts.
CorpusSplit load_corpus(const std::string& path, const MergeTable& merges, double val_fraction);

// Tokenizes in-memory documents; exposed for tests and synthetic corpora.
CorpusSplit split_documents(const std::vector<std::string>& documents, const MergeTable& merges,
                            double val_fraction);

TokenStream tokenize_documents(const std::vector<std::string>& documents, const MergeTable& merges);

// Next-token batches over contiguous windows: ids[b][i] = stream[s_b + i],
// targets[b][i] = stream[s_b + i + 1].
void window_ids(const TokenStream& stream, const std::vector<size_t>& starts, int window,
                std::vector<int>& ids, std::vector<int>& targets);

// Byte-chunk batches for the pooling embedder; targets at position i are
// the bytes of token i+1 (EOT appended by the builder).
ChunkedBatch window_chunks(const TokenStream& stream, const std::vector<size_t>& starts, int window,
                           int max_bytes);

// Deterministic contiguous training windows: window i covers tokens
// [i*t, i*t + t] (one extra for targets). Draw order is a seeded
// permutation per epoch, reproducible from (seed, draw index) alone.
class WindowSampler {
public:
    WindowSampler(size_t stream_len, int window, std::uint64_t seed);

    size_t window_count() const { return count_; }
    // Start offset of the draw'th window overall (epochs concatenated).
    size_t start_of(std::uint64_t draw) const;
    int window() const { return window_; }

private:
    size_t count_{0};
    int window_{0};
    std::uint64_t seed_{0};
};

} // namespace stlm
