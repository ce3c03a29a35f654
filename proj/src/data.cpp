#include "stlm/data.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

namespace stlm {

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open " + path.string());
    std::string out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return out;
}

} // namespace

TokenStream tokenize_documents(const std::vector<std::string>& documents, const MergeTable& merges) {
    TokenStream stream;
    stream.separator_id = merges.vocab_size();
    for (const auto& doc : documents) {
        stream.ids.push_back(stream.separator_id);
        stream.spans.push_back({stream.separator_id, stream.bytes.size(), stream.bytes.size()});
        const size_t base = stream.bytes.size();
        for (const auto& span : encode_with_spans(merges, doc)) {
            stream.ids.push_back(span.token_id);
            stream.spans.push_back({span.token_id, base + span.start, base + span.end});
        }
        stream.bytes += doc;
    }
    return stream;
}

CorpusSplit split_documents(const std::vector<std::string>& documents, const MergeTable& merges,
                            double val_fraction) {
    if (val_fraction <= 0.0 || val_fraction >= 0.5)
        throw ConfigError("val_fraction must be in (0, 0.5)");
    size_t total = 0;
    for (const auto& doc : documents) total += doc.size();
    if (documents.empty() || total == 0) throw DataError("empty corpus");

    // hold out the contiguous byte tail; a document straddling the cut
    // contributes its head to train and its tail to val
    const size_t cut = total - std::max<size_t>(1, static_cast<size_t>(
                                                       static_cast<double>(total) * val_fraction));
    std::vector<std::string> train_docs, val_docs;
    size_t offset = 0;
    for (const auto& doc : documents) {
        const size_t begin = offset, end = offset + doc.size();
        if (end <= cut) {
            train_docs.push_back(doc);
        } else if (begin >= cut) {
            val_docs.push_back(doc);
        } else {
            train_docs.push_back(doc.substr(0, cut - begin));
            val_docs.push_back(doc.substr(cut - begin));
        }
        offset = end;
    }
    CorpusSplit split;
    split.train = tokenize_documents(train_docs, merges);
    split.val = tokenize_documents(val_docs, merges);
    if (split.train.ids.size() < 2 || split.val.ids.size() < 2)
        throw DataError("corpus too small to split into train and val");
    return split;
}

CorpusSplit load_corpus(const std::string& path, const MergeTable& merges, double val_fraction) {
    namespace fs = std::filesystem;
    std::vector<std::string> documents;
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(path))
            if (entry.is_regular_file()) files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
            auto text = read_file(f);
            if (!text.empty()) documents.push_back(std::move(text));
        }
    } else if (fs::exists(path)) {
        documents.push_back(read_file(path));
    } else {
        throw DataError("corpus path does not exist: " + path);
    }
    return split_documents(documents, merges, val_fraction);
}

void window_ids(const TokenStream& stream, const std::vector<size_t>& starts, int window,
                std::vector<int>& ids, std::vector<int>& targets) {
    ids.clear();
    targets.clear();
    ids.reserve(starts.size() * static_cast<size_t>(window));
    targets.reserve(starts.size() * static_cast<size_t>(window));
    for (size_t s : starts) {
        if (s + static_cast<size_t>(window) >= stream.size())
            throw DataError("window start " + std::to_string(s) + " runs past the stream");
        for (int i = 0; i < window; ++i) {
            ids.push_back(stream.ids[s + static_cast<size_t>(i)]);
            targets.push_back(stream.ids[s + static_cast<size_t>(i) + 1]);
        }
    }
}

ChunkedBatch window_chunks(const TokenStream& stream, const std::vector<size_t>& starts, int window,
                           int max_bytes) {
    std::vector<std::vector<Chunk>> inputs, targets;
    inputs.reserve(starts.size());
    targets.reserve(starts.size());
    for (size_t s : starts) {
        if (s + static_cast<size_t>(window) >= stream.size())
            throw DataError("window start " + std::to_string(s) + " runs past the stream");
        std::vector<Chunk> in_row, tgt_row;
        for (int i = 0; i < window; ++i) {
            in_row.push_back(stream.chunk_at(s + static_cast<size_t>(i)));
            tgt_row.push_back(stream.chunk_at(s + static_cast<size_t>(i) + 1));
        }
        inputs.push_back(std::move(in_row));
        targets.push_back(std::move(tgt_row));
    }
    return ChunkedBatch::build(inputs, targets, max_bytes);
}

WindowSampler::WindowSampler(size_t stream_len, int window, std::uint64_t seed)
    : window_(window), seed_(seed) {
    if (window < 1) throw ConfigError("window must be >= 1");
    if (stream_len < static_cast<size_t>(window) + 1)
        throw DataError("stream of " + std::to_string(stream_len) + " tokens is shorter than one window of " +
                        std::to_string(window + 1));
    count_ = (stream_len - 1) / static_cast<size_t>(window);
}

size_t WindowSampler::start_of(std::uint64_t draw) const {
    const std::uint64_t epoch = draw / count_;
    const std::uint64_t pos = draw % count_;
    // seeded Fisher-Yates permutation per epoch, cached between draws
    static thread_local std::vector<std::uint32_t> cache;
    static thread_local std::uint64_t cache_key = ~0ull;
    const std::uint64_t key = mix_seed(seed_, epoch);
    if (cache_key != key || cache.size() != count_) {
        cache.resize(count_);
        for (size_t i = 0; i < count_; ++i) cache[i] = static_cast<std::uint32_t>(i);
        Rng rng(key);
        for (size_t i = count_; i > 1; --i) {
            const size_t j = static_cast<size_t>(rng.below(i));
            std::swap(cache[i - 1], cache[j]);
        }
        cache_key = key;
    }
    return static_cast<size_t>(cache[pos]) * static_cast<size_t>(window_);
}

} // namespace stlm
