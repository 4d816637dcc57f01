// gen and sample subcommands: corpus construction and output collection.

#include <iostream>
#include <memory>
#include <thread>

#include "commands.hpp"
#include "promptinv/datasets.hpp"
#include "promptinv/rng.hpp"
#include "promptinv/sampling.hpp"

namespace promptinv::cli {

namespace {

struct GenArgs {
    std::string mode = "synthetic";
    std::string out;
    std::string in;
    size_t count = 1000;
    uint64_t seed = 0;
    int min_words = 3;
    int max_words = 8;
    int target_tokens = 200;
};

struct SampleArgs {
    std::string prompts;
    std::string out;
    std::string backend = "synthetic";
    std::string config;
    SamplingParams params;
    uint64_t seed = 0;
    int parallel = 1;  // bound on in-flight requests
    HttpBackendConfig http;
};

}  // namespace

void register_gen(CLI::App& app, int& exit_code) {
    auto args = std::make_shared<GenArgs>();
    CLI::App* cmd = app.add_subcommand("gen", "Generate a prompt corpus");
    cmd->add_option("--mode", args->mode, "synthetic | gpts")
        ->check(CLI::IsMember({"synthetic", "gpts"}));
    cmd->add_option("--out", args->out, "Output JSONL path")->required();
    cmd->add_option("--in", args->in, "Input JSONL of {name, description} rows (gpts mode)");
    cmd->add_option("--count", args->count, "Number of prompts (synthetic mode)");
    cmd->add_option("--seed", args->seed, "Generator seed");
    cmd->add_option("--min-words", args->min_words, "Min words per synthetic prompt");
    cmd->add_option("--max-words", args->max_words, "Max words per synthetic prompt");
    cmd->add_option("--target-tokens", args->target_tokens,
                    "Requested description length (gpts mode)");

    cmd->callback([args, &exit_code] {
        std::vector<PromptRecord> records;
        if (args->mode == "synthetic") {
            records = make_synthetic_inversion_corpus(args->count, args->seed, args->min_words,
                                                      args->max_words);
        } else {
            if (args->in.empty()) {
                std::cerr << "gen --mode gpts requires --in\n";
                exit_code = kExitUsage;
                return;
            }
            auto rows = load_jsonl<nlohmann::json>(args->in);
            for (const auto& row : rows) {
                const std::string name = row.value("name", "");
                const std::string description = row.value("description", "");
                if (name.empty() || description.empty()) {
                    std::cerr << "gen: row missing name/description\n";
                    exit_code = kExitData;
                    return;
                }
                PromptRecord rec;
                rec.id = row.value("id", "gpt-" + std::to_string(fnv1a64(name + description)));
                rec.prompt =
                    build_synthetic_gpts_metaprompt(name, description, args->target_tokens);
                rec.kind = "user";
                rec.source = "gpts-metaprompt";
                records.push_back(std::move(rec));
            }
        }
        save_jsonl(records, args->out);
        std::cerr << "wrote " << records.size() << " prompts to " << args->out << "\n";
    });
}

void register_sample(CLI::App& app, int& exit_code) {
    auto args = std::make_shared<SampleArgs>();
    CLI::App* cmd = app.add_subcommand("sample", "Sample target-model outputs for each prompt");
    cmd->add_option("--prompts", args->prompts, "Prompt JSONL")->required();
    cmd->add_option("--out", args->out, "Bundle JSONL path")->required();
    cmd->add_option("--config", args->config, "Run config JSON");
    cmd->add_option("--backend", args->backend, "synthetic | http")
        ->check(CLI::IsMember({"synthetic", "http"}));
    cmd->add_option("--protocol", args->params.protocol, "user | system")
        ->check(CLI::IsMember({"user", "system"}));
    cmd->add_option("--n", args->params.n_outputs, "Outputs per prompt (user protocol)");
    auto* temp = cmd->add_option("--temperature", args->params.temperature,
                                 "Sampling temperature (default 1.5 user / 0.8 system)");
    auto* cap = cmd->add_option("--max-tokens", args->params.max_tokens,
                                "Per-output token cap; 0 = backend default");
    cmd->add_option("--seed", args->seed, "Synthetic backend seed");
    cmd->add_option("--parallel", args->parallel, "Max in-flight prompts (default 1)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--base-url", args->http.base_url, "HTTP backend base URL");
    cmd->add_option("--model", args->http.model, "HTTP backend model name");
    cmd->add_option("--api-key-env", args->http.api_key_env,
                    "Environment variable holding the API key");
    cmd->add_option("--system-role", args->http.system_role,
                    "Role used for the hidden prefix turn (assistant | system)")
        ->check(CLI::IsMember({"assistant", "system"}));

    cmd->callback([args, temp, cap, &exit_code] {
        nlohmann::json cfg = load_run_config(args->config);
        if (cfg.contains("sampling")) {
            SamplingParams from_cfg = cfg["sampling"].get<SamplingParams>();
            SamplingParams& p = args->params;
            // Flags win over the config file.
            if (temp->count() == 0) p.temperature = from_cfg.temperature;
            if (cap->count() == 0) p.max_tokens = from_cfg.max_tokens;
        }
        if (cfg.contains("backend")) {
            const auto& b = cfg["backend"];
            args->http.base_url = b.value("base_url", args->http.base_url);
            args->http.model = b.value("model", args->http.model);
            args->http.api_key_env = b.value("api_key_env", args->http.api_key_env);
            args->http.system_role = b.value("system_role", args->http.system_role);
        }
        const bool system = args->params.protocol == "system";
        if (temp->count() == 0 && !cfg.contains("sampling")) {
            args->params.temperature = system ? 0.8 : 1.5;
        }
        if (cap->count() == 0 && !cfg.contains("sampling")) {
            args->params.max_tokens = system ? 0 : 64;
        }

        std::unique_ptr<LmBackend> backend;
        if (args->backend == "synthetic") {
            backend = std::make_unique<SyntheticLm>(args->seed);
        } else {
            backend = std::make_unique<HttpChatBackend>(args->http);
        }

        auto prompts = load_jsonl<PromptRecord>(args->prompts);
        std::vector<OutputBundle> bundles(prompts.size());
        const int workers =
            std::max(1, std::min(args->parallel, static_cast<int>(prompts.size())));
        auto run_worker = [&](int w) {
            for (size_t i = static_cast<size_t>(w); i < prompts.size();
                 i += static_cast<size_t>(workers)) {
                bundles[i] = system ? sample_system_outputs(prompts[i], *backend, args->params)
                                    : sample_user_outputs(prompts[i], *backend, args->params);
            }
        };
        if (workers == 1) {
            run_worker(0);
        } else {
            std::vector<std::thread> pool;
            for (int w = 1; w < workers; ++w) pool.emplace_back(run_worker, w);
            run_worker(0);
            for (auto& th : pool) th.join();
        }
        int short_bundles = 0;
        for (const auto& b : bundles) {
            if (b.shortfall > 0) ++short_bundles;
        }
        save_jsonl(bundles, args->out);
        std::cerr << "wrote " << bundles.size() << " bundles to " << args->out;
        if (short_bundles) std::cerr << " (" << short_bundles << " with shortfall)";
        std::cerr << "\n";
        (void)exit_code;
    });
}

}  // namespace promptinv::cli
