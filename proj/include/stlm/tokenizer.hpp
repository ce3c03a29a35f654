#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stlm/error.hpp"

namespace stlm {

// Byte offsets a token covers in the original input: [start, end).
struct TokenSpan {
    int token_id{0};
    std::size_t start{0};
    std::size_t end{0};

    bool operator==(const TokenSpan&) const = default;
};

// Ordered byte-level BPE merges. Symbols 0..255 are raw bytes; merge k
// defines symbol 256+k from two existing symbols. Deterministic given the
// training corpus and vocab size.
struct MergeTable {
    struct Merge {
        int left{0};
        int right{0};
    };

    std::vector<Merge> merges;

    int vocab_size() const { return 256 + static_cast<int>(merges.size()); }

    // Longest byte expansion over all symbols (1 when there are no merges).
    // Bounds the chunk length of the byte-pooling embedder.
    int max_token_bytes() const;

    // Byte expansion of one symbol.
    std::string expand(int symbol) const;
};

// Greedy most-frequent-pair training over raw bytes, no pre-tokenization.
// Ties break on the lexicographically smallest (left, right) symbol pair.
// Stops early when no adjacent pair occurs twice.
MergeTable train_bpe(const std::string& corpus, int vocab_size);

// Applies merges in training order; the returned spans partition
// [0, text.size()) and are sorted and adjacent.
std::vector<TokenSpan> encode_with_spans(const MergeTable& merges, const std::string& text);

std::vector<int> encode(const MergeTable& merges, const std::string& text);

std::string decode(const MergeTable& merges, const std::vector<int>& ids);

// One merge per line "left right new", preceded by "bpe-v1 <vocab_size>".
void save_merges(const MergeTable& merges, const std::string& path);
MergeTable load_merges(const std::string& path);

std::string merges_to_string(const MergeTable& merges);
MergeTable merges_from_string(const std::string& text);

} // namespace stlm
