#include "promptinv/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>
#include <unordered_map>

#include "promptinv/rng.hpp"

namespace promptinv {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
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

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string trim(const std::string& s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

}  // namespace

double bleu(const std::string& candidate, const std::string& reference) {
    const std::vector<std::string> cand = split_ws(candidate);
    const std::vector<std::string> ref = split_ws(reference);
    const size_t c = cand.size();
    const size_t r = ref.size();
    if (c == 0) return 0.0;

    double log_sum = 0.0;
    int orders = 0;
    for (size_t n = 1; n <= 4 && n <= c; ++n) {
        // Clipped n-gram precision: candidate counts capped by reference counts.
        std::unordered_map<std::string, int> ref_counts;
        for (size_t i = 0; n <= ref.size() && i + n <= ref.size(); ++i) {
            std::string gram = ref[i];
            for (size_t k = 1; k < n; ++k) gram += ' ' + ref[i + k];
            ++ref_counts[gram];
        }
        std::unordered_map<std::string, int> cand_counts;
        for (size_t i = 0; i + n <= c; ++i) {
            std::string gram = cand[i];
            for (size_t k = 1; k < n; ++k) gram += ' ' + cand[i + k];
            ++cand_counts[gram];
        }
        long matched = 0;
        long total = 0;
        for (const auto& [gram, cnt] : cand_counts) {
            total += cnt;
            auto it = ref_counts.find(gram);
            if (it != ref_counts.end()) matched += std::min(cnt, it->second);
        }
        double p = total > 0 ? static_cast<double>(matched) / static_cast<double>(total) : 0.0;
        if (p <= 0.0) p = 1e-9;
        log_sum += std::log(p);
        ++orders;
    }
    double geo = std::exp(log_sum / orders);
    double bp = std::min(1.0, std::exp(1.0 - static_cast<double>(r) / static_cast<double>(c)));
    return 100.0 * bp * geo;
}

double token_f1(const std::string& candidate, const std::string& reference,
                bool strip_punctuation) {
    auto tokens = [&](const std::string& s) {
        std::vector<std::string> toks = split_ws(lower(s));
        if (strip_punctuation) {
            std::vector<std::string> cleaned;
            for (auto& t : toks) {
                std::string u;
                for (char ch : t) {
                    if (!std::ispunct(static_cast<unsigned char>(ch))) u += ch;
                }
                if (!u.empty()) cleaned.push_back(std::move(u));
            }
            return cleaned;
        }
        return toks;
    };
    std::vector<std::string> cand = tokens(candidate);
    std::vector<std::string> ref = tokens(reference);
    if (cand.empty() && ref.empty()) return 100.0;
    if (cand.empty() || ref.empty()) return 0.0;

    std::unordered_map<std::string, int> ref_counts;
    for (const auto& t : ref) ++ref_counts[t];
    long m = 0;
    for (const auto& t : cand) {
        auto it = ref_counts.find(t);
        if (it != ref_counts.end() && it->second > 0) {
            ++m;
            --it->second;
        }
    }
    if (m == 0) return 0.0;
    double precision = static_cast<double>(m) / static_cast<double>(cand.size());
    double recall = static_cast<double>(m) / static_cast<double>(ref.size());
    return 100.0 * 2.0 * precision * recall / (precision + recall);
}

bool exact_match(const std::string& candidate, const std::string& reference) {
    return trim(candidate) == trim(reference);
}

std::vector<double> hash_embed(const std::string& text, size_t dimension, bool* degenerate) {
    if (dimension < 2) throw std::invalid_argument("hash_embed: dimension must be >= 2");
    std::vector<double> v(dimension, 0.0);
    if (text.size() < 3) {
        v[0] = 1.0;
        if (degenerate) *degenerate = true;
        return v;
    }
    if (degenerate) *degenerate = false;
    for (size_t i = 0; i + 3 <= text.size(); ++i) {
        uint64_t h = fnv1a64(std::string_view(text).substr(i, 3));
        v[h % dimension] += 1.0;
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : v) x /= norm;
    return v;
}

Embedder make_hash_embedder(size_t dimension) {
    Embedder e;
    e.name = "hash3gram";
    e.dimension = dimension;
    e.embed = [dimension](const std::string& text) { return hash_embed(text, dimension); };
    return e;
}

double cosine_similarity(const std::string& a, const std::string& b,
                         const Embedder& embedder) {
    std::vector<double> va = embedder.embed(a);
    std::vector<double> vb = embedder.embed(b);
    if (va.size() != vb.size()) {
        throw std::runtime_error("embedder returned vectors of different sizes");
    }
    double dot = 0.0;
    for (size_t i = 0; i < va.size(); ++i) dot += va[i] * vb[i];
    return 100.0 * dot;
}

std::string build_judge_prompt(const std::string& prompt_a, const std::string& prompt_b) {
    return "Are prompt A and prompt B likely to produce similar outputs?\n"
           "Prompt A: " + prompt_a + "\n"
           "Prompt B: " + prompt_b + "\n"
           "Please answer YES, NO or UNCLEAR. Answer:";
}

JudgeLabel parse_judge_response(const std::string& response) {
    // First run of alphabetic characters, compared case-insensitively.
    size_t i = 0;
    while (i < response.size() && !std::isalpha(static_cast<unsigned char>(response[i]))) ++i;
    std::string word;
    while (i < response.size() && std::isalpha(static_cast<unsigned char>(response[i]))) {
        word += static_cast<char>(std::tolower(static_cast<unsigned char>(response[i])));
        ++i;
    }
    if (word == "yes") return JudgeLabel::Yes;
    if (word == "no") return JudgeLabel::No;
    return JudgeLabel::Unclear;
}

JudgeLabel llm_eval(const std::string& prompt_a, const std::string& prompt_b,
                    const std::function<std::string(const std::string&)>& judge) {
    return parse_judge_response(judge(build_judge_prompt(prompt_a, prompt_b)));
}

double percent_yes(const std::vector<JudgeLabel>& labels) {
    if (labels.empty()) return 0.0;
    size_t yes = 0;
    for (JudgeLabel l : labels) {
        if (l == JudgeLabel::Yes) ++yes;
    }
    return 100.0 * static_cast<double>(yes) / static_cast<double>(labels.size());
}

void to_json(nlohmann::json& j, const MetricReport& r) {
    j = nlohmann::json::object();
    for (const auto& [name, s] : r.summary) {
        j["metrics"][name] = {{"mean", s.mean},
                              {"sem", s.sem},
                              {"count", s.count},
                              {"singleton", s.singleton}};
    }
    if (!r.per_item.empty()) {
        for (const auto& [name, scores] : r.per_item) j["per_item"][name] = scores;
    }
}

MetricReport aggregate_report(const std::map<std::string, std::vector<double>>& scores,
                              bool keep_per_item) {
    MetricReport report;
    for (const auto& [name, vals] : scores) {
        if (vals.empty()) throw std::invalid_argument("aggregate_report: no items for " + name);
        MetricSummary s;
        s.count = vals.size();
        double sum = 0.0;
        for (double v : vals) sum += v;
        s.mean = sum / static_cast<double>(vals.size());
        if (vals.size() == 1) {
            s.sem = 0.0;
            s.singleton = true;
        } else {
            double ss = 0.0;
            for (double v : vals) ss += (v - s.mean) * (v - s.mean);
            double sd = std::sqrt(ss / static_cast<double>(vals.size() - 1));
            s.sem = sd / std::sqrt(static_cast<double>(vals.size()));
        }
        report.summary[name] = s;
        if (keep_per_item) report.per_item[name] = vals;
    }
    return report;
}

}  // namespace promptinv
