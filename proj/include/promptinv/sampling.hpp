#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "promptinv/datasets.hpp"

namespace promptinv {

struct SamplingParams {
    int n_outputs = 64;
    double temperature = 1.5;
    int max_tokens = 64;  // <= 0 means backend default
    std::string protocol = "user";  // "user" or "system"
};

void to_json(nlohmann::json& j, const SamplingParams& p);
void from_json(const nlohmann::json& j, SamplingParams& p);

/// The sampled outputs for one prompt. `shortfall` counts outputs the
/// backend failed to deliver; for the system protocol `query_shortfall`
/// breaks that down per query.
struct OutputBundle {
    std::string prompt_id;
    std::vector<std::string> outputs;
    SamplingParams params;
    std::string backend;
    int64_t created_unix = 0;
    int shortfall = 0;
    std::vector<int> query_shortfall;
};

void to_json(nlohmann::json& j, const OutputBundle& b);
void from_json(const nlohmann::json& j, OutputBundle& b);

struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ChatMessage {
    std::string role;
    std::string content;
};

struct GenOptions {
    double temperature = 1.0;
    int max_tokens = 0;  // <= 0: backend default
    int n = 1;
};

/// A chat-completion style target model. Implementations must tolerate
/// concurrent complete() calls.
class LmBackend {
public:
    virtual ~LmBackend() = default;
    virtual std::string name() const = 0;
    /// Returns opts.n completions of the conversation, in order.
    virtual std::vector<std::string> complete(const std::vector<ChatMessage>& messages,
                                              const GenOptions& opts) = 0;
};

/// Deterministic stand-in for a remote target model. Outputs are the
/// prompt's words in order with seeded filler words from the NOISE
/// inventory mixed in; stripping the filler recovers the prompt exactly.
std::string synthetic_lm_generate(const std::string& prompt, uint64_t sample_index,
                                  double temperature, int max_tokens,
                                  uint64_t seed = 0);

/// Removes NOISE-inventory words; the analytic inverter for the synthetic
/// model.
std::string strip_noise_words(const std::string& output);

class SyntheticLm : public LmBackend {
public:
    explicit SyntheticLm(uint64_t seed = 0) : seed_(seed) {}
    std::string name() const override { return "synthetic"; }
    std::vector<std::string> complete(const std::vector<ChatMessage>& messages,
                                      const GenOptions& opts) override;

private:
    uint64_t seed_;
};

/// The four fixed queries of the system-prompt protocol, in order.
std::span<const std::string_view> system_protocol_queries();
constexpr int kItemsPerSystemQuery = 16;

/// Splits `text` on line-initial "N:" / "N." markers into at most
/// expected_n trimmed items. Lines before the first marker are ignored;
/// unmarked continuation lines stay attached to the current item.
std::vector<std::string> parse_numbered_list(const std::string& text, int expected_n);

/// n_outputs independent completions of the bare prompt.
OutputBundle sample_user_outputs(const PromptRecord& prompt, LmBackend& backend,
                                 const SamplingParams& params);

/// One conversation per protocol query; each response is parsed as a
/// 16-item numbered list and the items are concatenated in query order.
OutputBundle sample_system_outputs(const PromptRecord& system_prompt, LmBackend& backend,
                                   const SamplingParams& params);

/// Few-shot inversion prompt with two worked (outputs, prompt) examples.
std::string build_fewshot_inversion_prompt(
    const std::vector<std::pair<std::string, std::string>>& example_pairs,
    const std::string& target_outputs);

/// Chat-completion HTTP client. The bearer token is read from the
/// environment variable named by api_key_env at construction time.
struct HttpBackendConfig {
    std::string base_url = "http://127.0.0.1:8080";
    std::string path = "/v1/chat/completions";
    std::string model = "gpt-3.5-turbo";
    std::string api_key_env = "PROMPTINV_API_KEY";
    std::string system_role = "assistant";  // role used for the hidden prefix turn
    int max_attempts = 3;
    int backoff_ms = 250;
    int read_timeout_s = 120;
};

class HttpChatBackend : public LmBackend {
public:
    explicit HttpChatBackend(HttpBackendConfig config);
    std::string name() const override { return "http:" + config_.model; }
    std::vector<std::string> complete(const std::vector<ChatMessage>& messages,
                                      const GenOptions& opts) override;

    /// Request/response translation, exposed for wire-format tests.
    static nlohmann::json build_request_body(const std::string& model,
                                             const std::vector<ChatMessage>& messages,
                                             const GenOptions& opts,
                                             const std::string& system_role);
    static std::vector<std::string> parse_response_body(const nlohmann::json& body);

private:
    HttpBackendConfig config_;
    std::string api_key_;
};

}  // namespace promptinv
