#include "doctest.h"

#include <filesystem>
#include <map>

#include "stlm/rng.hpp"
#include "stlm/tokenizer.hpp"

using namespace stlm;

namespace {

std::string random_bytes(Rng& rng, size_t len) {
    std::string s(len, '\0');
    for (auto& c : s) c = static_cast<char>(rng.below(256));
    return s;
}

std::string random_utf8(Rng& rng, size_t approx_len) {
    std::string s;
    while (s.size() < approx_len) {
        const auto cp = static_cast<char32_t>(rng.below(0x10000));
        if (cp >= 0xD800 && cp <= 0xDFFF) continue; // surrogates are not valid UTF-8
        if (cp < 0x80) {
            s.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            s.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            s.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            s.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            s.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }
    return s;
}

void check_partition(const std::vector<TokenSpan>& spans, size_t len) {
    size_t covered = 0;
    size_t cursor = 0;
    for (const auto& s : spans) {
        CHECK(s.start == cursor);
        CHECK(s.start < s.end);
        covered += s.end - s.start;
        cursor = s.end;
    }
    CHECK(covered == len);
    CHECK(cursor == len);
}

} // namespace

TEST_CASE("train_bpe basics") {
    CHECK(train_bpe("abcabc", 256).merges.empty());
    CHECK_THROWS_AS(train_bpe("abc", 255), ConfigError);
    CHECK_THROWS_AS(train_bpe("", 300), DataError);

    auto t = train_bpe("aaaa", 257);
    REQUIRE(t.merges.size() == 1);
    CHECK(t.merges[0].left == 97);
    CHECK(t.merges[0].right == 97);
    CHECK(t.max_token_bytes() == 2);

    // no pair repeats -> stops short of the requested vocab
    auto unique = train_bpe("abcdef", 400);
    CHECK(unique.merges.empty());
}

TEST_CASE("train_bpe greedy order matches brute-force pair counting") {
    const std::string corpus = "the cat and the hat sat on the mat";
    auto table = train_bpe(corpus, 256 + 5);

    // replay training with the naive oracle: recount all pairs each round,
    // pick (count desc, left asc, right asc)
    std::vector<int> sym;
    for (unsigned char c : corpus) sym.push_back(c);
    for (size_t k = 0; k < table.merges.size(); ++k) {
        std::map<std::pair<int, int>, int> counts;
        for (size_t i = 0; i + 1 < sym.size(); ++i) ++counts[{sym[i], sym[i + 1]}];
        std::pair<int, int> best{-1, -1};
        int best_count = 1;
        for (const auto& [pair, count] : counts) {
            if (count > best_count) {
                best = pair;
                best_count = count;
            }
        }
        REQUIRE(best.first >= 0);
        CHECK(table.merges[k].left == best.first);
        CHECK(table.merges[k].right == best.second);
        std::vector<int> next;
        for (size_t i = 0; i < sym.size();) {
            if (i + 1 < sym.size() && sym[i] == best.first && sym[i + 1] == best.second) {
                next.push_back(256 + static_cast<int>(k));
                i += 2;
            } else {
                next.push_back(sym[i]);
                ++i;
            }
        }
        sym = std::move(next);
    }
}

TEST_CASE("encode_with_spans") {
    MergeTable none;
    CHECK(encode_with_spans(none, "").empty());
    auto one = encode_with_spans(none, "a");
    REQUIRE(one.size() == 1);
    CHECK(one[0] == TokenSpan{97, 0, 1});

    Rng rng(17);
    auto table = train_bpe(random_bytes(rng, 4096) + "thethethethe the the", 256 + 24);
    const auto text = random_bytes(rng, 1024);
    auto spans = encode_with_spans(table, text);
    check_partition(spans, text.size());
    std::vector<int> ids;
    for (const auto& s : spans) {
        CHECK(s.token_id < table.vocab_size());
        ids.push_back(s.token_id);
    }
    CHECK(decode(table, ids) == text);
}

TEST_CASE("decode basics") {
    MergeTable none;
    CHECK(decode(none, {}).empty());
    CHECK(decode(none, {97, 98}) == "ab");
    CHECK_THROWS_AS(decode(none, {256}), IndexError);
}

TEST_CASE("fuzz round-trip on random byte and UTF-8 strings") {
    Rng rng(1234);
    auto table = train_bpe("banana bandana ananas banana band " + random_utf8(rng, 2000), 256 + 40);
    int checked = 0;
    for (int i = 0; i < 2000; ++i) {
        const auto text =
            (i % 2 == 0) ? random_bytes(rng, 1 + rng.below(64)) : random_utf8(rng, 1 + rng.below(64));
        auto spans = encode_with_spans(table, text);
        check_partition(spans, text.size());
        CHECK(decode(table, encode(table, text)) == text);
        ++checked;
    }
    CHECK(checked == 2000);
}

TEST_CASE("monotone compression with more merges") {
    const std::string corpus = "she sells sea shells by the sea shore";
    auto full = train_bpe(corpus, 256 + 12);
    size_t prev = corpus.size() + 1;
    for (size_t k = 0; k <= full.merges.size(); ++k) {
        MergeTable partial;
        partial.merges.assign(full.merges.begin(), full.merges.begin() + static_cast<long>(k));
        const size_t count = encode(partial, corpus).size();
        CHECK(count <= prev);
        prev = count;
    }
}

TEST_CASE("merge table serialization") {
    auto table = train_bpe("mississippi mississippi", 256 + 6);
    const auto text = merges_to_string(table);
    CHECK(text.rfind("bpe-v1 262", 0) == 0);

    auto back = merges_from_string(text);
    CHECK(back.vocab_size() == table.vocab_size());
    for (size_t k = 0; k < table.merges.size(); ++k) {
        CHECK(back.merges[k].left == table.merges[k].left);
        CHECK(back.merges[k].right == table.merges[k].right);
    }

    // identical bytes across independent training runs
    CHECK(merges_to_string(train_bpe("mississippi mississippi", 256 + 6)) == text);

    const auto path = std::filesystem::temp_directory_path() / "stlm_merges_test.txt";
    save_merges(table, path.string());
    auto loaded = load_merges(path.string());
    CHECK(merges_to_string(loaded) == text);
    std::filesystem::remove(path);

    CHECK_THROWS_AS(merges_from_string("nope 300\n"), FormatError);
    CHECK_THROWS_AS(merges_from_string("bpe-v1 100\n"), FormatError);
    CHECK_THROWS_AS(merges_from_string("bpe-v1 258\n97 97 256\n"), FormatError);
    CHECK_THROWS_AS(merges_from_string("bpe-v1 257\n97 300 256\n"), FormatError);
}
