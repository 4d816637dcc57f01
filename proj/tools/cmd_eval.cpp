// eval and bench subcommands.

#include <fstream>
#include <iostream>
#include <memory>
#include <unordered_map>

#include "commands.hpp"
#include "promptinv/bench.hpp"
#include "promptinv/datasets.hpp"
#include "promptinv/metrics.hpp"
#include "promptinv/sampling.hpp"
#include "promptinv/train.hpp"

namespace promptinv::cli {

namespace {

struct EvalArgs {
    std::string extractions;
    std::string references;
    std::string out;
    bool with_llm_eval = false;
    bool strip_punct = false;
    bool per_item = false;
    size_t embed_dim = 16384;
    std::string embedder = "hash";
    RemoteEmbedderConfig remote;
    std::string judge_backend = "synthetic";
    HttpBackendConfig http;
    uint64_t seed = 0;
};

struct BenchArgs {
    std::string out;
    std::string table;
    std::string n_values = "2,4,8,16,32";
    std::string modes = "sparse,full";
    int trials = 5;
    int threads = 1;
    uint64_t seed = 0;
    ModelConfig model;
};

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        out.push_back(std::stoi(csv.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

}  // namespace

void register_eval(CLI::App& app, int& exit_code) {
    auto args = std::make_shared<EvalArgs>();
    CLI::App* cmd = app.add_subcommand("eval", "Score extractions against reference prompts");
    cmd->add_option("--extractions", args->extractions, "Extracted prompt JSONL")->required();
    cmd->add_option("--references", args->references, "Reference prompt JSONL")->required();
    cmd->add_option("--out", args->out, "Report JSON path")->required();
    cmd->add_flag("--with-llm-eval", args->with_llm_eval, "Add the judged-similarity metric");
    cmd->add_flag("--strip-punct", args->strip_punct, "Strip punctuation for token F1");
    cmd->add_flag("--per-item", args->per_item, "Keep per-item scores in the report");
    cmd->add_option("--embed-dim", args->embed_dim, "Hash embedder dimension");
    cmd->add_option("--embedder", args->embedder, "hash | http")
        ->check(CLI::IsMember({"hash", "http"}));
    cmd->add_option("--embed-base-url", args->remote.base_url);
    cmd->add_option("--embed-model", args->remote.model);
    cmd->add_option("--embed-api-key-env", args->remote.api_key_env);
    cmd->add_option("--judge-backend", args->judge_backend, "synthetic | http")
        ->check(CLI::IsMember({"synthetic", "http"}));
    cmd->add_option("--judge-base-url", args->http.base_url);
    cmd->add_option("--judge-model", args->http.model);
    cmd->add_option("--judge-api-key-env", args->http.api_key_env);

    cmd->callback([args, &exit_code] {
        auto extractions = load_jsonl<PromptRecord>(args->extractions);
        auto references = load_jsonl<PromptRecord>(args->references);
        std::unordered_map<std::string, const PromptRecord*> ref_by_id;
        for (const auto& r : references) ref_by_id[r.id] = &r;

        std::vector<std::string> orphans;
        std::vector<std::pair<const PromptRecord*, const PromptRecord*>> pairs;
        for (const auto& e : extractions) {
            auto it = ref_by_id.find(e.id);
            if (it == ref_by_id.end()) {
                orphans.push_back(e.id);
            } else {
                pairs.push_back({&e, it->second});
            }
        }
        if (!orphans.empty()) {
            std::cerr << "eval: extractions without references:";
            for (size_t i = 0; i < orphans.size() && i < 10; ++i) std::cerr << " " << orphans[i];
            if (orphans.size() > 10) std::cerr << " (+" << orphans.size() - 10 << " more)";
            std::cerr << "\n";
            exit_code = kExitData;
            return;
        }
        if (pairs.empty()) {
            std::cerr << "eval: nothing to score\n";
            exit_code = kExitData;
            return;
        }

        Embedder embedder = args->embedder == "http" ? make_remote_embedder(args->remote)
                                                     : make_hash_embedder(args->embed_dim);
        std::map<std::string, std::vector<double>> scores;
        for (const auto& [ext, ref] : pairs) {
            try {
                scores["cs"].push_back(cosine_similarity(ext->prompt, ref->prompt, embedder));
            } catch (const std::exception& e) {
                throw BackendError("embedding failed for item " + ext->id + ": " + e.what());
            }
            scores["bleu"].push_back(bleu(ext->prompt, ref->prompt));
            scores["exact"].push_back(exact_match(ext->prompt, ref->prompt) ? 100.0 : 0.0);
            scores["token_f1"].push_back(token_f1(ext->prompt, ref->prompt, args->strip_punct));
        }
        MetricReport report = aggregate_report(scores, args->per_item);
        nlohmann::json out_json = report;
        out_json["count"] = pairs.size();

        if (args->with_llm_eval) {
            std::unique_ptr<LmBackend> backend;
            if (args->judge_backend == "http") {
                backend = std::make_unique<HttpChatBackend>(args->http);
            } else {
                backend = std::make_unique<SyntheticLm>(args->seed);
            }
            auto judge = [&](const std::string& question) {
                auto replies = backend->complete({{"user", question}}, {0.0, 0, 1});
                if (replies.empty()) throw BackendError("judge returned no reply");
                return replies.front();
            };
            std::vector<JudgeLabel> labels;
            size_t skipped = 0;
            size_t yes = 0, no = 0, unclear = 0;
            for (const auto& [ext, ref] : pairs) {
                try {
                    JudgeLabel label = llm_eval(ref->prompt, ext->prompt, judge);
                    labels.push_back(label);
                    if (label == JudgeLabel::Yes) ++yes;
                    else if (label == JudgeLabel::No) ++no;
                    else ++unclear;
                } catch (const BackendError&) {
                    ++skipped;  // counted, never silently dropped
                }
            }
            out_json["llm_eval"] = {{"percent_yes", percent_yes(labels)},
                                    {"yes", yes},
                                    {"no", no},
                                    {"unclear", unclear},
                                    {"skipped", skipped}};
        }

        std::ofstream out(args->out);
        out << out_json.dump(2) << "\n";
        for (const auto& [name, s] : report.summary) {
            std::cerr << name << " " << s.mean << " +/- " << s.sem << "\n";
        }
    });
}

void register_bench(CLI::App& app, int& exit_code) {
    auto args = std::make_shared<BenchArgs>();
    args->model.d_model = 32;
    args->model.n_heads = 2;
    args->model.d_ff = 128;
    args->model.enc_layers = 2;
    args->model.dec_layers = 1;
    args->model.l = 64;
    args->model.n_max = 64;
    args->model.max_prompt_len = 16;

    CLI::App* cmd = app.add_subcommand("bench", "Verify sparse-encoder complexity claims");
    cmd->add_option("--out", args->out, "Report JSON path")->required();
    cmd->add_option("--table", args->table, "Plot-ready TSV table path");
    cmd->add_option("--n-values", args->n_values, "Comma-separated bundle sizes");
    cmd->add_option("--modes", args->modes, "Comma-separated subset of sparse,full,avg_pool");
    cmd->add_option("--trials", args->trials, "Timing trials per point (>= 3)");
    cmd->add_option("--threads", args->threads,
                    "1 = single-threaded timing; >1 adds a parallel throughput probe");
    cmd->add_option("--seed", args->seed);
    cmd->add_option("--d-model", args->model.d_model);
    cmd->add_option("--n-heads", args->model.n_heads);
    cmd->add_option("--d-ff", args->model.d_ff);
    cmd->add_option("--enc-layers", args->model.enc_layers);
    cmd->add_option("--dec-layers", args->model.dec_layers);
    cmd->add_option("--l", args->model.l);

    cmd->callback([args, &exit_code] {
        std::vector<EncoderMode> modes;
        size_t pos = 0;
        while (pos < args->modes.size()) {
            size_t comma = args->modes.find(',', pos);
            modes.push_back(encoder_mode_from_string(args->modes.substr(pos, comma - pos)));
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        std::vector<int> n_values = parse_int_list(args->n_values);
        int max_n = 1;
        for (int n : n_values) max_n = std::max(max_n, n);
        args->model.n_max = std::max(args->model.n_max, max_n);

        ScalingReport report =
            measure_throughput(args->model, modes, n_values, args->trials, args->seed);
        nlohmann::json j = report;

        for (const auto& [mode, e] : report.forward_growth_exponent) {
            std::cerr << mode << ": forward exponent " << e << ", step exponent "
                      << report.step_growth_exponent.at(mode) << "\n";
        }

        if (args->threads > 1) {
            // Parallel throughput probe: one fit() pass over copies of a
            // bench item with worker fan-out.
            const int n = n_values.back();
            TrainExample ex;
            Rng rng(args->seed);
            for (int s = 0; s < n; ++s) {
                ex.bundle.push_back(encode_text("probe " + std::to_string(s), args->model.l));
            }
            ex.prompt = encode_text("probe prompt", args->model.max_prompt_len);
            std::vector<TrainExample> corpus(static_cast<size_t>(args->threads) * 4, ex);
            TrainConfig tc;
            tc.epochs = 1;
            tc.batch_size = args->threads;
            tc.threads = args->threads;
            auto params = ModelParams<float>::init(args->model, args->seed);
            const auto t0 = std::chrono::steady_clock::now();
            fit(params, corpus, tc);
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            j["parallel"] = {{"threads", args->threads},
                             {"items_per_second", static_cast<double>(corpus.size()) / secs}};
        }

        std::ofstream out(args->out);
        out << j.dump(2) << "\n";
        if (!args->table.empty()) {
            std::ofstream tbl(args->table);
            tbl << scaling_table(report);
        }
        (void)exit_code;
    });
}

}  // namespace promptinv::cli
