#include "stlm/tokenizer.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace stlm {

namespace {

inline std::uint64_t pair_key(int left, int right) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
           static_cast<std::uint32_t>(right);
}

// Merges every non-overlapping left-to-right occurrence of (left,right),
// rewriting symbols (and spans when given) in place.
template <typename SpanVec>
void apply_merge(std::vector<int>& symbols, SpanVec* spans, int left, int right, int new_id) {
    size_t write = 0;
    size_t read = 0;
    const size_t n = symbols.size();
    while (read < n) {
        if (read + 1 < n && symbols[read] == left && symbols[read + 1] == right) {
            symbols[write] = new_id;
            if (spans) {
                (*spans)[write] = {(*spans)[read].first, (*spans)[read + 1].second};
            }
            read += 2;
        } else {
            symbols[write] = symbols[read];
            if (spans) (*spans)[write] = (*spans)[read];
            ++read;
        }
        ++write;
    }
    symbols.resize(write);
    if (spans) spans->resize(write);
}

} // namespace

int MergeTable::max_token_bytes() const {
    std::vector<int> len(256 + merges.size(), 1);
    int best = 1;
    for (size_t k = 0; k < merges.size(); ++k) {
        len[256 + k] = len[static_cast<size_t>(merges[k].left)] + len[static_cast<size_t>(merges[k].right)];
        best = std::max(best, len[256 + k]);
    }
    return best;
}

std::string MergeTable::expand(int symbol) const {
    if (symbol < 0 || symbol >= vocab_size())
        throw IndexError("decode: symbol " + std::to_string(symbol) + " out of range [0, " +
                         std::to_string(vocab_size()) + ")");
    if (symbol < 256) return std::string(1, static_cast<char>(symbol));
    std::string out;
    // iterative expansion; stack entries are symbol ids
    std::vector<int> stack{symbol};
    while (!stack.empty()) {
        const int s = stack.back();
        stack.pop_back();
        if (s < 256) {
            out.push_back(static_cast<char>(s));
        } else {
            const Merge& m = merges[static_cast<size_t>(s - 256)];
            stack.push_back(m.right);
            stack.push_back(m.left);
        }
    }
    return out;
}

MergeTable train_bpe(const std::string& corpus, int vocab_size) {
    if (vocab_size < 256)
        throw ConfigError("train_bpe: vocab_size must be >= 256, got " + std::to_string(vocab_size));
    if (corpus.empty()) throw DataError("train_bpe: empty corpus");

    std::vector<int> symbols;
    symbols.reserve(corpus.size());
    for (unsigned char c : corpus) symbols.push_back(static_cast<int>(c));

    MergeTable table;
    table.merges.reserve(static_cast<size_t>(vocab_size - 256));

    std::unordered_map<std::uint64_t, std::int64_t> counts;
    while (table.vocab_size() < vocab_size && symbols.size() >= 2) {
        counts.clear();
        for (size_t i = 0; i + 1 < symbols.size(); ++i)
            ++counts[pair_key(symbols[i], symbols[i + 1])];

        std::int64_t best_count = 1; // a pair must repeat to be worth a symbol
        int best_left = -1, best_right = -1;
        for (const auto& [key, count] : counts) {
            const int left = static_cast<int>(key >> 32);
            const int right = static_cast<int>(key & 0xffffffffu);
            if (count > best_count ||
                (count == best_count && best_left >= 0 &&
                 (left < best_left || (left == best_left && right < best_right)))) {
                best_count = count;
                best_left = left;
                best_right = right;
            }
        }
        if (best_left < 0) break; // no pair repeats

        const int new_id = table.vocab_size();
        table.merges.push_back({best_left, best_right});
        apply_merge<std::vector<std::pair<std::size_t, std::size_t>>>(symbols, nullptr, best_left,
                                                                      best_right, new_id);
    }
    return table;
}

std::vector<TokenSpan> encode_with_spans(const MergeTable& merges, const std::string& text) {
    std::vector<int> symbols;
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    symbols.reserve(text.size());
    spans.reserve(text.size());
    for (size_t i = 0; i < text.size(); ++i) {
        symbols.push_back(static_cast<int>(static_cast<unsigned char>(text[i])));
        spans.emplace_back(i, i + 1);
    }
    for (size_t k = 0; k < merges.merges.size(); ++k) {
        const auto& m = merges.merges[k];
        apply_merge(symbols, &spans, m.left, m.right, 256 + static_cast<int>(k));
    }
    std::vector<TokenSpan> out;
    out.reserve(symbols.size());
    for (size_t i = 0; i < symbols.size(); ++i)
        out.push_back({symbols[i], spans[i].first, spans[i].second});
    return out;
}

std::vector<int> encode(const MergeTable& merges, const std::string& text) {
    auto spans = encode_with_spans(merges, text);
    std::vector<int> ids;
    ids.reserve(spans.size());
    for (const auto& s : spans) ids.push_back(s.token_id);
    return ids;
}

std::string decode(const MergeTable& merges, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) out += merges.expand(id);
    return out;
}

std::string merges_to_string(const MergeTable& merges) {
    std::ostringstream os;
    os << "bpe-v1 " << merges.vocab_size() << "\n";
    for (size_t k = 0; k < merges.merges.size(); ++k)
        os << merges.merges[k].left << " " << merges.merges[k].right << " " << (256 + k) << "\n";
    return os.str();
}

MergeTable merges_from_string(const std::string& text) {
    std::istringstream is(text);
    std::string tag;
    int vocab = 0;
    if (!(is >> tag >> vocab) || tag != "bpe-v1")
        throw FormatError("merge table: expected header 'bpe-v1 <vocab_size>'");
    if (vocab < 256) throw FormatError("merge table: vocab_size " + std::to_string(vocab) + " < 256");
    MergeTable table;
    table.merges.reserve(static_cast<size_t>(vocab - 256));
    int left = 0, right = 0, id = 0;
    while (is >> left >> right >> id) {
        if (id != table.vocab_size())
            throw FormatError("merge table: merge ids must be dense from 256, got " + std::to_string(id));
        if (left < 0 || left >= id || right < 0 || right >= id)
            throw FormatError("merge table: merge " + std::to_string(id) + " references undefined symbols");
        table.merges.push_back({left, right});
    }
    if (table.vocab_size() != vocab)
        throw FormatError("merge table: header declares " + std::to_string(vocab) + " symbols, found " +
                          std::to_string(table.vocab_size()));
    return table;
}

void save_merges(const MergeTable& merges, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open " + path + " for writing");
    os << merges_to_string(merges);
}

MergeTable load_merges(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return merges_from_string(buf.str());
}

} // namespace stlm
