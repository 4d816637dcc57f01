#pragma once

#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace promptinv {

/// One prompt with identity and provenance. `extra` carries any fields a
/// JSONL row had beyond the schema, so rewriting a file never drops data.
struct PromptRecord {
    std::string id;
    std::string prompt;
    std::string kind = "user";  // "user" or "system"
    std::string source;
    nlohmann::json extra = nlohmann::json::object();
};

void to_json(nlohmann::json& j, const PromptRecord& r);
void from_json(const nlohmann::json& j, PromptRecord& r);

struct DatasetSplit {
    std::vector<PromptRecord> train;
    std::vector<PromptRecord> test;
    uint64_t seed = 0;
};

/// Thrown by load_jsonl with the 1-based line number of the offending row.
struct JsonlError : std::runtime_error {
    JsonlError(const std::string& path, size_t line, const std::string& what)
        : std::runtime_error(path + ":" + std::to_string(line) + ": " + what),
          line_number(line) {}
    size_t line_number;
};

template <typename T>
void save_jsonl(const std::vector<T>& items, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const T& item : items) {
        nlohmann::json j = item;
        out << j.dump() << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

template <typename T>
std::vector<T> load_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    std::vector<T> items;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded()) throw JsonlError(path, line_no, "malformed JSON");
        try {
            items.push_back(j.get<T>());
        } catch (const std::exception& e) {
            throw JsonlError(path, line_no, e.what());
        }
    }
    return items;
}

/// Seeded shuffle, then the first train_n records become train and the next
/// test_n become test. Throws if the corpus is too small.
DatasetSplit split_dataset(const std::vector<PromptRecord>& records,
                           size_t train_n, size_t test_n, uint64_t seed);

/// Fills the meta-prompt template used to turn (name, description) pairs
/// into chatbot system prompts. target_tokens parameterizes the requested
/// description length (200 by default).
std::string build_synthetic_gpts_metaprompt(const std::string& name,
                                            const std::string& description,
                                            int target_tokens = 200);

/// Fixed word inventories for the synthetic task. CONTENT words make up
/// prompts; NOISE words are the filler the synthetic target model injects.
/// The two sets are disjoint, so stripping noise from an output recovers
/// the prompt exactly.
std::span<const std::string_view> content_words();  // 256 entries
std::span<const std::string_view> noise_words();    // 64 entries
bool is_noise_word(std::string_view w);

/// Deterministic corpus of prompts, each min_words..max_words CONTENT words.
/// Ids are content hashes; duplicate draws are rerolled so ids are unique.
std::vector<PromptRecord> make_synthetic_inversion_corpus(size_t count, uint64_t seed,
                                                          int min_words = 3,
                                                          int max_words = 8);

}  // namespace promptinv
