#include "promptinv/sampling.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <ctime>

#include "promptinv/rng.hpp"

namespace promptinv {

void to_json(nlohmann::json& j, const SamplingParams& p) {
    j = {{"n_outputs", p.n_outputs},
         {"temperature", p.temperature},
         {"max_tokens", p.max_tokens},
         {"protocol", p.protocol}};
}

void from_json(const nlohmann::json& j, SamplingParams& p) {
    p.n_outputs = j.value("n_outputs", 64);
    p.temperature = j.value("temperature", 1.5);
    p.max_tokens = j.value("max_tokens", 64);
    p.protocol = j.value("protocol", "user");
}

void to_json(nlohmann::json& j, const OutputBundle& b) {
    j = {{"prompt_id", b.prompt_id}, {"outputs", b.outputs},
         {"params", b.params},       {"backend", b.backend},
         {"created_unix", b.created_unix}, {"shortfall", b.shortfall}};
    if (!b.query_shortfall.empty()) j["query_shortfall"] = b.query_shortfall;
}

void from_json(const nlohmann::json& j, OutputBundle& b) {
    b.prompt_id = j.at("prompt_id").get<std::string>();
    b.outputs = j.at("outputs").get<std::vector<std::string>>();
    if (j.contains("params")) b.params = j.at("params").get<SamplingParams>();
    b.backend = j.value("backend", "");
    b.created_unix = j.value("created_unix", int64_t{0});
    b.shortfall = j.value("shortfall", 0);
    b.query_shortfall = j.value("query_shortfall", std::vector<int>{});
}

namespace {

std::vector<std::string> split_words(const std::string& s) {
    std::vector<std::string> out;
    size_t i = 0;
    while (i < s.size()) {
        while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        size_t start = i;
        while (i < s.size() && !std::isspace(static_cast<unsigned char>(s[i]))) ++i;
        if (i > start) out.push_back(s.substr(start, i - start));
    }
    return out;
}

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

}  // namespace

std::string synthetic_lm_generate(const std::string& prompt, uint64_t sample_index,
                                  double temperature, int max_tokens, uint64_t seed) {
    const std::vector<std::string> words = split_words(prompt);
    const size_t m = words.size();
    if (m == 0) return "";

    // Noise budget: k filler words per gap on average, trimmed to the word
    // cap. Content words are never dropped, so stripping filler always
    // recovers the prompt.
    const long k = std::lround(temperature * 2.0);
    size_t noise_total = static_cast<size_t>(std::max(0l, k)) * (m + 1);
    if (max_tokens > 0) {
        size_t budget = static_cast<size_t>(max_tokens) > m
                            ? static_cast<size_t>(max_tokens) - m
                            : 0;
        noise_total = std::min(noise_total, budget);
    }

    Rng rng(fnv1a64(prompt, seed ^ 0x5851f42d4c957f2dull) ^
            (sample_index + 1) * 0x2545f4914f6cdd1dull);
    std::vector<std::vector<std::string_view>> gaps(m + 1);
    const auto noise = noise_words();
    for (size_t i = 0; i < noise_total; ++i) {
        size_t gap = rng.next_below(m + 1);
        gaps[gap].push_back(noise[rng.next_below(noise.size())]);
    }

    std::string out;
    auto append = [&out](std::string_view w) {
        if (!out.empty()) out += ' ';
        out += w;
    };
    for (size_t i = 0; i <= m; ++i) {
        if (i > 0) append(words[i - 1]);
        for (std::string_view nw : gaps[i]) append(nw);
    }
    return out;
}

std::string strip_noise_words(const std::string& output) {
    std::vector<std::string> kept;
    for (std::string& w : split_words(output)) {
        if (!is_noise_word(w)) kept.push_back(std::move(w));
    }
    return join_words(kept);
}

std::vector<std::string> SyntheticLm::complete(const std::vector<ChatMessage>& messages,
                                               const GenOptions& opts) {
    if (messages.empty()) throw BackendError("synthetic: empty conversation");

    if (messages.size() >= 2) {
        // System-protocol conversation: hidden prefix first, query second.
        // Respond with the numbered list the query asks for.
        const std::string& hidden = messages.front().content;
        const std::string& query = messages.back().content;
        int items = kItemsPerSystemQuery;
        size_t d = query.find_first_of("0123456789");
        if (d != std::string::npos) items = std::atoi(query.c_str() + d);
        if (items < 1) items = kItemsPerSystemQuery;
        uint64_t query_salt = fnv1a64(query);
        std::vector<std::string> replies;
        replies.reserve(static_cast<size_t>(opts.n));
        for (int r = 0; r < opts.n; ++r) {
            std::string text;
            for (int i = 0; i < items; ++i) {
                text += std::to_string(i + 1) + ": " +
                        synthetic_lm_generate(hidden,
                                              query_salt + static_cast<uint64_t>(i),
                                              opts.temperature, opts.max_tokens, seed_) +
                        "\n";
            }
            replies.push_back(std::move(text));
        }
        return replies;
    }

    const std::string& prompt = messages.front().content;
    std::vector<std::string> outs;
    outs.reserve(static_cast<size_t>(opts.n));
    for (int i = 0; i < opts.n; ++i) {
        outs.push_back(synthetic_lm_generate(prompt, static_cast<uint64_t>(i),
                                             opts.temperature, opts.max_tokens, seed_));
    }
    return outs;
}

std::span<const std::string_view> system_protocol_queries() {
    static constexpr std::array<std::string_view, 4> kQueries = {
        "Give me 16 short sentences that best describe yourself. Start with \"1:\"",
        "Give me 16 examples questions that I can ask you. Start with \"1:\"",
        "Give me 16 scenarios where I can use you. Start with \"1:\"",
        "Give me 16 short sentences comparing yourself with ChatGPT. Start with \"1:\"",
    };
    return kQueries;
}

std::vector<std::string> parse_numbered_list(const std::string& text, int expected_n) {
    if (expected_n < 1) throw std::invalid_argument("parse_numbered_list: expected_n must be >= 1");
    std::vector<std::string> items;
    std::string current;
    bool in_item = false;

    auto flush = [&]() {
        if (!in_item) return;
        // Trim surrounding whitespace.
        size_t b = current.find_first_not_of(" \t\r\n");
        size_t e = current.find_last_not_of(" \t\r\n");
        items.push_back(b == std::string::npos ? "" : current.substr(b, e - b + 1));
        current.clear();
    };

    size_t pos = 0;
    while (pos <= text.size()) {
        size_t eol = text.find('\n', pos);
        std::string line = text.substr(pos, eol == std::string::npos ? std::string::npos
                                                                     : eol - pos);
        // A new item starts at a line-initial integer followed by ':' or '.'.
        size_t digits = 0;
        while (digits < line.size() && std::isdigit(static_cast<unsigned char>(line[digits]))) {
            ++digits;
        }
        bool marker = digits > 0 && digits < line.size() &&
                      (line[digits] == ':' || line[digits] == '.');
        if (marker) {
            flush();
            if (items.size() >= static_cast<size_t>(expected_n)) break;
            in_item = true;
            current = line.substr(digits + 1);
        } else if (in_item) {
            current += '\n';
            current += line;
        }
        if (eol == std::string::npos) break;
        pos = eol + 1;
    }
    if (items.size() < static_cast<size_t>(expected_n)) flush();
    return items;
}

OutputBundle sample_user_outputs(const PromptRecord& prompt, LmBackend& backend,
                                 const SamplingParams& params) {
    if (params.protocol != "user") {
        throw std::invalid_argument("sample_user_outputs: params.protocol must be \"user\"");
    }
    if (params.n_outputs < 1) {
        throw std::invalid_argument("sample_user_outputs: n_outputs must be >= 1");
    }
    OutputBundle bundle;
    bundle.prompt_id = prompt.id;
    bundle.params = params;
    bundle.backend = backend.name();
    bundle.created_unix = static_cast<int64_t>(std::time(nullptr));
    GenOptions opts{params.temperature, params.max_tokens, params.n_outputs};
    try {
        bundle.outputs = backend.complete({{"user", prompt.prompt}}, opts);
    } catch (const BackendError&) {
        bundle.outputs.clear();
    }
    bundle.shortfall = params.n_outputs - static_cast<int>(bundle.outputs.size());
    return bundle;
}

OutputBundle sample_system_outputs(const PromptRecord& system_prompt, LmBackend& backend,
                                   const SamplingParams& params) {
    if (params.protocol != "system") {
        throw std::invalid_argument("sample_system_outputs: params.protocol must be \"system\"");
    }
    OutputBundle bundle;
    bundle.prompt_id = system_prompt.id;
    bundle.params = params;
    bundle.params.n_outputs =
        kItemsPerSystemQuery * static_cast<int>(system_protocol_queries().size());
    bundle.backend = backend.name();
    bundle.created_unix = static_cast<int64_t>(std::time(nullptr));
    GenOptions opts{params.temperature, params.max_tokens, 1};
    for (std::string_view query : system_protocol_queries()) {
        std::vector<std::string> items;
        try {
            std::vector<std::string> replies = backend.complete(
                {{"assistant", system_prompt.prompt}, {"user", std::string(query)}}, opts);
            if (!replies.empty()) {
                items = parse_numbered_list(replies.front(), kItemsPerSystemQuery);
            }
        } catch (const BackendError&) {
            items.clear();  // conversation failed; this query's slots stay empty
        }
        bundle.query_shortfall.push_back(kItemsPerSystemQuery -
                                         static_cast<int>(items.size()));
        for (std::string& item : items) bundle.outputs.push_back(std::move(item));
    }
    bundle.shortfall = bundle.params.n_outputs - static_cast<int>(bundle.outputs.size());
    return bundle;
}

std::string build_fewshot_inversion_prompt(
    const std::vector<std::pair<std::string, std::string>>& example_pairs,
    const std::string& target_outputs) {
    if (example_pairs.size() != 2) {
        throw std::invalid_argument("build_fewshot_inversion_prompt: exactly 2 example pairs required");
    }
    std::string out = "Try to recover user prompts from llm outputs, here are two examples\n";
    for (const auto& [outputs, prompt] : example_pairs) {
        out += "\nOutputs:\n\n" + outputs + "\n\nPrompt:\n\n" + prompt + "\n";
    }
    out += "\nNow try recover from this outputs, just output the prompt without anything extra\n";
    out += "\nOutputs:\n\n" + target_outputs + "\n\nPrompt:";
    return out;
}

}  // namespace promptinv
