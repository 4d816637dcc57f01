#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "promptinv/datasets.hpp"
#include "promptinv/rng.hpp"

using namespace promptinv;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("promptinv_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TempDir() { std::error_code ec; fs::remove_all(path, ec); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

}  // namespace

TEST_CASE("word inventories: sizes, uniqueness, disjointness") {
    auto content = content_words();
    auto noise = noise_words();
    CHECK(content.size() == 256);
    CHECK(noise.size() == 64);
    std::set<std::string_view> all(content.begin(), content.end());
    CHECK(all.size() == 256);
    for (std::string_view w : noise) {
        CHECK(all.insert(w).second);  // unique and not a content word
        CHECK(is_noise_word(w));
    }
    CHECK(all.size() == 320);
    for (std::string_view w : content) {
        CHECK(!is_noise_word(w));
        CHECK(w.size() >= 2);
        CHECK(w.size() <= 3);
    }
    for (std::string_view w : noise) CHECK(w.size() <= 4);
}

TEST_CASE("jsonl: round trip preserves fields and order") {
    TempDir dir;
    Rng rng(7);
    std::vector<PromptRecord> records;
    for (int i = 0; i < 100; ++i) {
        PromptRecord r;
        r.id = "id-" + std::to_string(i);
        r.prompt = "prompt " + std::to_string(rng.next_below(1000));
        r.kind = i % 2 ? "user" : "system";
        r.source = "test";
        records.push_back(r);
    }
    const std::string path = dir.file("records.jsonl");
    save_jsonl(records, path);
    auto loaded = load_jsonl<PromptRecord>(path);
    REQUIRE(loaded.size() == records.size());
    for (size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].id == records[i].id);
        CHECK(loaded[i].prompt == records[i].prompt);
        CHECK(loaded[i].kind == records[i].kind);
        CHECK(loaded[i].source == records[i].source);
    }
}

TEST_CASE("jsonl: unknown fields survive a rewrite") {
    TempDir dir;
    const std::string path = dir.file("extra.jsonl");
    {
        std::ofstream out(path);
        out << R"({"id":"a","prompt":"p","kind":"user","source":"s","custom":42})" << "\n";
    }
    auto loaded = load_jsonl<PromptRecord>(path);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].extra.at("custom") == 42);
    const std::string path2 = dir.file("extra2.jsonl");
    save_jsonl(loaded, path2);
    auto reloaded = load_jsonl<PromptRecord>(path2);
    CHECK(reloaded[0].extra.at("custom") == 42);
}

TEST_CASE("jsonl: empty file and malformed line") {
    TempDir dir;
    const std::string empty = dir.file("empty.jsonl");
    std::ofstream(empty).close();
    CHECK(load_jsonl<PromptRecord>(empty).empty());

    const std::string bad = dir.file("bad.jsonl");
    {
        std::ofstream out(bad);
        out << R"({"id":"a","prompt":"x"})" << "\n";
        out << R"({"id":"b","prompt":"y"})" << "\n";
        out << "{nope\n";
    }
    try {
        load_jsonl<PromptRecord>(bad);
        FAIL("expected JsonlError");
    } catch (const JsonlError& e) {
        CHECK(e.line_number == 3);
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
}

TEST_CASE("split_dataset: deterministic, disjoint, size-exact") {
    std::vector<PromptRecord> records;
    for (int i = 0; i < 10; ++i) {
        records.push_back({"id" + std::to_string(i), "p" + std::to_string(i), "user", "t", {}});
    }
    DatasetSplit a = split_dataset(records, 7, 3, 1);
    DatasetSplit b = split_dataset(records, 7, 3, 1);
    REQUIRE(a.train.size() == 7);
    REQUIRE(a.test.size() == 3);
    for (size_t i = 0; i < 7; ++i) CHECK(a.train[i].id == b.train[i].id);
    for (size_t i = 0; i < 3; ++i) CHECK(a.test[i].id == b.test[i].id);

    std::set<std::string> train_ids, test_ids;
    for (const auto& r : a.train) train_ids.insert(r.id);
    for (const auto& r : a.test) test_ids.insert(r.id);
    for (const auto& id : test_ids) CHECK(train_ids.count(id) == 0);

    CHECK_THROWS_AS(split_dataset(records, 7, 4, 1), std::invalid_argument);
}

TEST_CASE("metaprompt template") {
    std::string p = build_synthetic_gpts_metaprompt("Bashy", "a shell helper");
    CHECK(p.find("The description should be around 200 tokens") != std::string::npos);
    const size_t create_pos = p.find("Create a ");
    REQUIRE(create_pos != std::string::npos);
    CHECK(p.find("Bashy") > create_pos);
    CHECK(p.find("a shell helper") != std::string::npos);
    CHECK(p.find("Start with \"GPT Description:\"") != std::string::npos);

    // Changing the token target changes only the number.
    std::string p300 = build_synthetic_gpts_metaprompt("Bashy", "a shell helper", 300);
    CHECK(p300.find("The description should be around 300 tokens") != std::string::npos);
    size_t i = p.find("200");
    std::string patched = p.substr(0, i) + "300" + p.substr(i + 3);
    CHECK(patched == p300);
}

TEST_CASE("synthetic corpus: deterministic, content-only, unique ids") {
    auto a = make_synthetic_inversion_corpus(1000, 7);
    auto b = make_synthetic_inversion_corpus(1000, 7);
    REQUIRE(a.size() == 1000);
    std::set<std::string> ids;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        CHECK(a[i].prompt == b[i].prompt);
        CHECK(ids.insert(a[i].id).second);
        // Every word is from the CONTENT inventory, never NOISE.
        size_t start = 0;
        int words = 0;
        const std::string& s = a[i].prompt;
        while (start < s.size()) {
            size_t sp = s.find(' ', start);
            std::string w = s.substr(start, sp == std::string::npos ? std::string::npos
                                                                    : sp - start);
            CHECK(!is_noise_word(w));
            bool in_content = false;
            for (std::string_view cw : content_words()) {
                if (cw == w) { in_content = true; break; }
            }
            CHECK(in_content);
            ++words;
            if (sp == std::string::npos) break;
            start = sp + 1;
        }
        CHECK(words >= 3);
        CHECK(words <= 8);
    }
}

TEST_CASE("synthetic corpus: custom word range and bad arguments") {
    auto c = make_synthetic_inversion_corpus(50, 3, 2, 4);
    for (const auto& r : c) {
        int words = 1;
        for (char ch : r.prompt) {
            if (ch == ' ') ++words;
        }
        CHECK(words >= 2);
        CHECK(words <= 4);
    }
    CHECK_THROWS_AS(make_synthetic_inversion_corpus(0, 1), std::invalid_argument);
    CHECK_THROWS_AS(make_synthetic_inversion_corpus(5, 1, 4, 2), std::invalid_argument);
}
