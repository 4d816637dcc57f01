#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "promptinv/sampling.hpp"

namespace promptinv {

HttpChatBackend::HttpChatBackend(HttpBackendConfig config) : config_(std::move(config)) {
    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw BackendError("http backend: credentials environment variable " +
                           config_.api_key_env + " is not set");
    }
    api_key_ = key;
}

nlohmann::json HttpChatBackend::build_request_body(const std::string& model,
                                                   const std::vector<ChatMessage>& messages,
                                                   const GenOptions& opts,
                                                   const std::string& system_role) {
    nlohmann::json msgs = nlohmann::json::array();
    for (size_t i = 0; i < messages.size(); ++i) {
        std::string role = messages[i].role;
        // The hidden prefix is built as an assistant-first turn; deployments
        // that expect a system role get it rewritten here.
        if (i == 0 && role == "assistant" && system_role == "system") role = "system";
        msgs.push_back({{"role", role}, {"content", messages[i].content}});
    }
    nlohmann::json body = {{"model", model},
                           {"messages", msgs},
                           {"temperature", opts.temperature},
                           {"n", opts.n}};
    if (opts.max_tokens > 0) body["max_tokens"] = opts.max_tokens;
    return body;
}

std::vector<std::string> HttpChatBackend::parse_response_body(const nlohmann::json& body) {
    std::vector<std::string> outputs;
    if (!body.contains("choices") || !body["choices"].is_array()) {
        throw BackendError("http backend: response has no choices array");
    }
    for (const auto& choice : body["choices"]) {
        outputs.push_back(choice.at("message").at("content").get<std::string>());
    }
    return outputs;
}

std::vector<std::string> HttpChatBackend::complete(const std::vector<ChatMessage>& messages,
                                                   const GenOptions& opts) {
    const nlohmann::json body =
        build_request_body(config_.model, messages, opts, config_.system_role);
    const std::string payload = body.dump();

    std::string last_error;
    int backoff = config_.backoff_ms;
    for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
        if (attempt > 0) {
            std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
            backoff *= 2;
        }
        httplib::Client client(config_.base_url);
        client.set_read_timeout(config_.read_timeout_s, 0);
        httplib::Headers headers = {{"Authorization", "Bearer " + api_key_}};
        auto res = client.Post(config_.path, headers, payload, "application/json");
        if (!res) {
            last_error = "connection error: " + httplib::to_string(res.error());
            continue;
        }
        if (res->status != 200) {
            last_error = "status " + std::to_string(res->status) + ": " + res->body;
            continue;
        }
        nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
        if (parsed.is_discarded()) {
            last_error = "unparseable response body";
            continue;
        }
        return parse_response_body(parsed);
    }
    throw BackendError("http backend: " + std::to_string(config_.max_attempts) +
                       " attempts failed; last: " + last_error);
}

}  // namespace promptinv
