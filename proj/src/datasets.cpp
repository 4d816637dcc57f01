#include "promptinv/datasets.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <unordered_set>

#include "promptinv/rng.hpp"

namespace promptinv {

void to_json(nlohmann::json& j, const PromptRecord& r) {
    j = r.extra.is_object() ? r.extra : nlohmann::json::object();
    j["id"] = r.id;
    j["prompt"] = r.prompt;
    j["kind"] = r.kind;
    j["source"] = r.source;
}

void from_json(const nlohmann::json& j, PromptRecord& r) {
    r.id = j.at("id").get<std::string>();
    r.prompt = j.at("prompt").get<std::string>();
    r.kind = j.value("kind", "user");
    r.source = j.value("source", "");
    r.extra = nlohmann::json::object();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() != "id" && it.key() != "prompt" && it.key() != "kind" &&
            it.key() != "source") {
            r.extra[it.key()] = it.value();
        }
    }
}

DatasetSplit split_dataset(const std::vector<PromptRecord>& records,
                           size_t train_n, size_t test_n, uint64_t seed) {
    if (train_n + test_n > records.size()) {
        throw std::invalid_argument(
            "split_dataset: requested " + std::to_string(train_n + test_n) +
            " records but only " + std::to_string(records.size()) + " available");
    }
    std::vector<PromptRecord> pool = records;
    Rng rng(seed);
    rng.shuffle(pool);
    DatasetSplit split;
    split.seed = seed;
    split.train.assign(pool.begin(), pool.begin() + static_cast<long>(train_n));
    split.test.assign(pool.begin() + static_cast<long>(train_n),
                      pool.begin() + static_cast<long>(train_n + test_n));
    return split;
}

std::string build_synthetic_gpts_metaprompt(const std::string& name,
                                            const std::string& description,
                                            int target_tokens) {
    std::string out =
        "You are an expert at creating and modifying GPTs, which are like chatbots "
        "that can have additional capabilities. The user will provide you "
        "specifications to create the GPT. You will respond directly with the "
        "description of the GPT. The description should be around " +
        std::to_string(target_tokens) +
        " tokens in English. Create a " + name + ", Here's the descriptions " +
        description + ". Start with \"GPT Description:\"";
    return out;
}

namespace {

// 256 short common words. Prompts are drawn from these; keeping them to
// 2-3 letters keeps whole prompts inside the byte-level sequence budget.
constexpr std::array<std::string_view, 256> kContentWords = {
    "am", "an", "as", "at", "ax", "be", "by", "do", "go", "he",
    "hi", "id", "if", "in", "is", "it", "ma", "me", "my", "no",
    "of", "ok", "on", "or", "ox", "pa", "so", "to", "up", "us",
    "we", "ad", "ex", "la", "lo", "ow", "pi", "re", "ti", "ye",
    "yo",
    "act", "add", "age", "ago", "aid", "aim", "air", "ale", "all", "and",
    "ant", "any", "ape", "apt", "arc", "are", "arm", "art", "ash", "ask",
    "ate", "awe", "axe", "bad", "bag", "ban", "bar", "bat", "bay", "bed",
    "bee", "beg", "bet", "bid", "big", "bin", "bit", "bog", "bow", "box",
    "boy", "bud", "bug", "bun", "bus", "but", "buy", "cab", "can", "cap",
    "car", "cat", "cob", "cod", "cog", "cop", "cot", "cow", "cry", "cub",
    "cue", "cup", "cut", "dab", "dad", "dam", "day", "den", "dew", "did",
    "dig", "dim", "dip", "dog", "dot", "dry", "dub", "due", "dug", "dye",
    "ear", "eat", "eel", "egg", "ego", "elf", "elk", "elm", "end", "era",
    "eve", "ewe", "eye", "fan", "far", "fat", "fed", "fee", "few", "fig",
    "fin", "fir", "fit", "fix", "flu", "fly", "foe", "fog", "for", "fox",
    "fry", "fun", "fur", "gap", "gas", "gel", "gem", "get", "gig", "gum",
    "gut", "guy", "gym", "had", "ham", "has", "hat", "hay", "hem", "hen",
    "hid", "him", "hip", "his", "hit", "hog", "hop", "hot", "how", "hub",
    "hue", "hug", "hum", "hut", "ice", "icy", "ill", "ink", "inn", "ion",
    "its", "ivy", "jab", "jam", "jar", "jaw", "jet", "jig", "job", "jog",
    "jot", "joy", "jug", "keg", "key", "kid", "kin", "kit", "lab", "lad",
    "lag", "lap", "law", "lay", "leg", "let", "lid", "lip", "lit", "log",
    "lot", "low", "mad", "man", "map", "mat", "may", "men", "met", "mix",
    "mob", "mop", "mud", "mug", "nap", "net", "new", "nod", "nor", "not",
    "now", "nut", "oak", "oar", "oat", "odd", "off", "oil", "old", "one",
    "opt", "orb", "ore", "our", "owl",
};

// 64 filler marker words the synthetic model sprinkles between content
// words. Every marker carries the letter z, which no content word uses, so
// the two inventories are disjoint by construction at the byte level.
constexpr std::array<std::string_view, 64> kNoiseWords = {
    "zab", "zad", "zag", "zam", "zan", "zap", "zar", "zat",
    "zeb", "zed", "zeg", "zek", "zem", "zen", "zep", "zet",
    "zib", "zid", "zig", "zim", "zin", "zip", "zit", "zob",
    "zod", "zog", "zom", "zon", "zop", "zot", "zub", "zud",
    "zug", "zum", "zun", "zup", "zur", "zut", "baz", "caz",
    "daz", "fez", "fiz", "gaz", "haz", "jaz", "kaz", "laz",
    "maz", "naz", "paz", "raz", "riz", "saz", "taz", "tiz",
    "waz", "wiz", "yaz", "yez", "ziz", "zoo", "zuz", "azo",
};

}  // namespace

std::span<const std::string_view> content_words() { return kContentWords; }
std::span<const std::string_view> noise_words() { return kNoiseWords; }

bool is_noise_word(std::string_view w) {
    return std::find(kNoiseWords.begin(), kNoiseWords.end(), w) != kNoiseWords.end();
}

std::vector<PromptRecord> make_synthetic_inversion_corpus(size_t count, uint64_t seed,
                                                          int min_words, int max_words) {
    if (count < 1) throw std::invalid_argument("corpus count must be >= 1");
    if (min_words < 1 || max_words < min_words) {
        throw std::invalid_argument("bad words_per_prompt range");
    }
    Rng rng(seed);
    std::vector<PromptRecord> out;
    out.reserve(count);
    std::unordered_set<std::string> seen_ids;
    size_t attempts = 0;
    const size_t max_attempts = count * 100 + 1000;
    while (out.size() < count) {
        if (++attempts > max_attempts) {
            throw std::runtime_error("corpus generation stalled; range too narrow for count");
        }
        int n_words = static_cast<int>(rng.next_between(min_words, max_words));
        std::string prompt;
        for (int w = 0; w < n_words; ++w) {
            if (w) prompt += ' ';
            prompt += kContentWords[rng.next_below(kContentWords.size())];
        }
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "syn-%016llx",
                      static_cast<unsigned long long>(fnv1a64(prompt)));
        std::string id(idbuf);
        if (!seen_ids.insert(id).second) continue;  // duplicate prompt, reroll
        PromptRecord rec;
        rec.id = std::move(id);
        rec.prompt = std::move(prompt);
        rec.kind = "user";
        rec.source = "synthetic";
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace promptinv
