#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace promptinv {

/// Sentence-level BLEU in [0, 100]. Whitespace tokens, clipped n-gram
/// precisions for orders 1..4 restricted to orders the candidate can
/// realize, zero-match orders floored at 1e-9, brevity penalty
/// min(1, exp(1 - r/c)). Asymmetric by construction: the first argument is
/// the candidate. Empty candidate scores 0.
double bleu(const std::string& candidate, const std::string& reference);

/// Token-level F1 in [0, 100] over lowercased whitespace tokens (multiset
/// overlap). Two empty strings score 100. strip_punctuation removes
/// punctuation characters from each token before matching.
double token_f1(const std::string& candidate, const std::string& reference,
                bool strip_punctuation = false);

/// Equality after trimming leading/trailing whitespace. No case folding.
bool exact_match(const std::string& candidate, const std::string& reference);

/// Text embedder contract: embed returns a unit-L2-norm vector of size
/// `dimension`.
struct Embedder {
    std::string name;
    size_t dimension = 0;
    std::function<std::vector<double>(const std::string&)> embed;
};

/// Character-3-gram feature hashing into `dimension` buckets, L2-normalized.
/// Texts with no 3-grams yield the first basis vector; *degenerate is set
/// when that fallback fires.
std::vector<double> hash_embed(const std::string& text, size_t dimension = 16384,
                               bool* degenerate = nullptr);

Embedder make_hash_embedder(size_t dimension = 16384);

/// Remote text-embedding endpoint (text in, vector out). Vectors are
/// L2-normalized on receipt. The bearer token is read from the environment
/// variable named by api_key_env at construction time.
struct RemoteEmbedderConfig {
    std::string base_url = "http://127.0.0.1:8080";
    std::string path = "/v1/embeddings";
    std::string model = "text-embeddings-ada-002";
    std::string api_key_env = "PROMPTINV_API_KEY";
    size_t dimension = 1536;
    int max_attempts = 3;
    int backoff_ms = 250;
};

Embedder make_remote_embedder(const RemoteEmbedderConfig& config);

/// Dot product of the two unit embeddings, scaled to [-100, 100].
double cosine_similarity(const std::string& a, const std::string& b,
                         const Embedder& embedder);

enum class JudgeLabel { Yes, No, Unclear };

/// The fixed question posed to the judge model about two prompts.
std::string build_judge_prompt(const std::string& prompt_a, const std::string& prompt_b);

/// First alphabetic token of the response, case-insensitive; anything that
/// is not YES or NO maps to Unclear.
JudgeLabel parse_judge_response(const std::string& response);

/// Asks `judge` (text in, text out) whether the two prompts are functionally
/// similar. Judge failures propagate as exceptions.
JudgeLabel llm_eval(const std::string& prompt_a, const std::string& prompt_b,
                    const std::function<std::string(const std::string&)>& judge);

/// Percentage of Yes labels over all labels.
double percent_yes(const std::vector<JudgeLabel>& labels);

struct MetricSummary {
    double mean = 0.0;
    double sem = 0.0;
    size_t count = 0;
    bool singleton = false;  // SEM defined as 0 for a single sample
};

struct MetricReport {
    std::map<std::string, MetricSummary> summary;
    std::map<std::string, std::vector<double>> per_item;  // optional
};

void to_json(nlohmann::json& j, const MetricReport& r);

/// Mean and SEM (sample standard deviation over sqrt(n)) per metric.
MetricReport aggregate_report(const std::map<std::string, std::vector<double>>& scores,
                              bool keep_per_item = false);

}  // namespace promptinv
