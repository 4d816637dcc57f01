#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "promptinv/metrics.hpp"
#include "promptinv/sampling.hpp"

namespace promptinv {

Embedder make_remote_embedder(const RemoteEmbedderConfig& config) {
    const char* key = std::getenv(config.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw BackendError("remote embedder: credentials environment variable " +
                           config.api_key_env + " is not set");
    }
    const std::string api_key = key;

    Embedder e;
    e.name = "remote:" + config.model;
    e.dimension = config.dimension;
    e.embed = [config, api_key](const std::string& text) {
        const nlohmann::json body = {{"model", config.model}, {"input", text}};
        const std::string payload = body.dump();
        std::string last_error;
        int backoff = config.backoff_ms;
        for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
                backoff *= 2;
            }
            httplib::Client client(config.base_url);
            httplib::Headers headers = {{"Authorization", "Bearer " + api_key}};
            auto res = client.Post(config.path, headers, payload, "application/json");
            if (!res) {
                last_error = "connection error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status != 200) {
                last_error = "status " + std::to_string(res->status);
                continue;
            }
            nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
            if (parsed.is_discarded() || !parsed.contains("data") || parsed["data"].empty()) {
                last_error = "unparseable embedding response";
                continue;
            }
            std::vector<double> v =
                parsed["data"][0].at("embedding").get<std::vector<double>>();
            double norm = 0.0;
            for (double x : v) norm += x * x;
            norm = std::sqrt(norm);
            if (norm <= 0.0) throw BackendError("remote embedder returned a zero vector");
            for (double& x : v) x /= norm;
            return v;
        }
        throw BackendError("remote embedder: " + std::to_string(config.max_attempts) +
                           " attempts failed; last: " + last_error);
    };
    return e;
}

}  // namespace promptinv
