// train and invert subcommands.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <unordered_map>

#include "commands.hpp"
#include "promptinv/datasets.hpp"
#include "promptinv/sampling.hpp"
#include "promptinv/train.hpp"

namespace fs = std::filesystem;

namespace promptinv::cli {

namespace {

struct TrainArgs {
    std::string corpus;
    std::string bundles;
    std::string out_dir;
    std::string config;
    std::string resume;
    std::string precision = "f32";
    ModelConfig model;
    TrainConfig train;
};

/// Pairs bundles with their prompts and tokenizes both sides.
std::vector<TrainExample> build_examples(const std::vector<PromptRecord>& prompts,
                                         const std::vector<OutputBundle>& bundles,
                                         const ModelConfig& cfg) {
    std::unordered_map<std::string, const PromptRecord*> by_id;
    for (const auto& p : prompts) by_id[p.id] = &p;
    std::vector<std::string> orphans;
    std::vector<TrainExample> examples;
    examples.reserve(bundles.size());
    for (const auto& b : bundles) {
        auto it = by_id.find(b.prompt_id);
        if (it == by_id.end()) {
            orphans.push_back(b.prompt_id);
            continue;
        }
        TrainExample ex;
        for (const auto& out : b.outputs) {
            if (static_cast<int>(ex.bundle.size()) >= cfg.n_max) break;
            ex.bundle.push_back(encode_text(out, cfg.l));
        }
        if (ex.bundle.empty()) continue;  // nothing usable in this bundle
        ex.prompt = encode_text(it->second->prompt, cfg.max_prompt_len);
        examples.push_back(std::move(ex));
    }
    if (!orphans.empty()) {
        std::string msg = "bundles reference unknown prompt ids:";
        for (size_t i = 0; i < orphans.size() && i < 10; ++i) msg += " " + orphans[i];
        if (orphans.size() > 10) msg += " ...";
        throw std::runtime_error(msg);
    }
    return examples;
}

void write_history(const TrainHistory& hist, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    for (const auto& s : hist.steps) {
        nlohmann::json j = {{"step", s.step}, {"loss", s.loss}, {"seconds", s.seconds}};
        out << j.dump() << "\n";
    }
}

template <typename S>
int run_train(const TrainArgs& args, const std::vector<PromptRecord>& prompts,
              const std::vector<OutputBundle>& bundles) {
    ModelConfig model_cfg = args.model;
    TrainConfig train_cfg = args.train;
    long start_step = 0;
    ModelParams<S> params = ModelParams<S>::zeros(model_cfg);
    if (!args.resume.empty()) {
        TrainConfig saved;
        params = load_checkpoint<S>(args.resume, &saved, &start_step);
        model_cfg = params.config;
        std::cerr << "resumed from " << args.resume << " at step " << start_step << "\n";
    } else {
        model_cfg.validate();
        params = ModelParams<S>::init(model_cfg, train_cfg.seed);
    }

    auto examples = build_examples(prompts, bundles, model_cfg);
    if (examples.empty()) throw std::runtime_error("no usable (bundle, prompt) pairs");
    std::cerr << "training on " << examples.size() << " examples, encoder_mode="
              << train_cfg.encoder_mode << ", precision=" << args.precision << "\n";

    TrainHistory hist = fit(params, examples, train_cfg, start_step);

    fs::create_directories(args.out_dir);
    const fs::path dir(args.out_dir);
    nlohmann::json effective = {{"model", model_cfg},
                                {"train", train_cfg},
                                {"precision", args.precision}};
    std::ofstream cfg_out(dir / "config.json");
    cfg_out << effective.dump(2) << "\n";
    write_history(hist, (dir / "history.jsonl").string());
    const long final_step = hist.steps.empty() ? start_step : hist.steps.back().step;
    save_checkpoint(params, train_cfg, final_step, (dir / "model.ckpt").string());
    std::cerr << "final epoch mean loss " << hist.final_loss() << "; wrote "
              << (dir / "model.ckpt").string() << "\n";
    return kExitOk;
}

struct InvertArgs {
    std::string checkpoint;
    std::string bundles;
    std::string out;
    int max_len = 0;  // 0: model max_prompt_len
};

template <typename S>
std::vector<PromptRecord> run_invert(const InvertArgs& args,
                                     const std::vector<OutputBundle>& bundles) {
    TrainConfig train_cfg;
    ModelParams<S> params = load_checkpoint<S>(args.checkpoint, &train_cfg);
    const EncoderMode mode = encoder_mode_from_string(train_cfg.encoder_mode);
    const int max_len = args.max_len > 0 ? args.max_len : params.config.max_prompt_len;

    std::vector<PromptRecord> extracted;
    extracted.reserve(bundles.size());
    for (const auto& b : bundles) {
        PromptRecord rec;
        rec.id = b.prompt_id;
        rec.kind = "user";
        rec.source = "inverted";
        TokenizedBundle tb;
        for (const auto& out : b.outputs) {
            if (static_cast<int>(tb.size()) >= params.config.n_max) break;
            tb.push_back(encode_text(out, params.config.l));
        }
        if (tb.empty()) {
            rec.source = "inverted:empty-bundle";
        } else {
            EncoderStates<S> h = encode(params, tb, mode);
            rec.prompt = decode_tokens(greedy_decode(params, h, max_len));
        }
        extracted.push_back(std::move(rec));
    }
    return extracted;
}

}  // namespace

void register_train(CLI::App& app, int& exit_code) {
    auto args = std::make_shared<TrainArgs>();
    CLI::App* cmd = app.add_subcommand("train", "Train an inversion model");
    cmd->add_option("--corpus", args->corpus, "Prompt JSONL")->required();
    cmd->add_option("--bundles", args->bundles, "Bundle JSONL")->required();
    cmd->add_option("--out", args->out_dir, "Run directory")->required();
    cmd->add_option("--config", args->config, "Run config JSON");
    cmd->add_option("--resume", args->resume, "Checkpoint to continue from");
    cmd->add_option("--precision", args->precision, "f32 | f64")
        ->check(CLI::IsMember({"f32", "f64"}));

    auto* o_dm = cmd->add_option("--d-model", args->model.d_model);
    auto* o_nh = cmd->add_option("--n-heads", args->model.n_heads);
    auto* o_ff = cmd->add_option("--d-ff", args->model.d_ff);
    auto* o_el = cmd->add_option("--enc-layers", args->model.enc_layers);
    auto* o_dl = cmd->add_option("--dec-layers", args->model.dec_layers);
    auto* o_l = cmd->add_option("--l", args->model.l, "Per-output token length");
    auto* o_nm = cmd->add_option("--n-max", args->model.n_max);
    auto* o_mp = cmd->add_option("--max-prompt-len", args->model.max_prompt_len);

    auto* o_mode = cmd->add_option("--encoder-mode", args->train.encoder_mode,
                                   "sparse | full | avg_pool")
                       ->check(CLI::IsMember({"sparse", "full", "avg_pool"}));
    auto* o_ep = cmd->add_option("--epochs", args->train.epochs);
    auto* o_lr = cmd->add_option("--lr", args->train.learning_rate);
    auto* o_bs = cmd->add_option("--batch-size", args->train.batch_size);
    auto* o_seed = cmd->add_option("--seed", args->train.seed);
    auto* o_thr = cmd->add_option("--threads", args->train.threads);

    cmd->callback([=, &exit_code] {
        nlohmann::json cfg = load_run_config(args->config);
        if (cfg.contains("model")) args->model = cfg["model"].get<ModelConfig>();
        if (cfg.contains("train")) args->train = cfg["train"].get<TrainConfig>();
        // Flags override the config file field by field.
        auto set_if = [](CLI::Option* o, auto& dst, const auto& src) {
            if (o->count()) dst = src;
        };
        TrainArgs flags = *args;  // values as parsed from the command line
        set_if(o_dm, args->model.d_model, flags.model.d_model);
        set_if(o_nh, args->model.n_heads, flags.model.n_heads);
        set_if(o_ff, args->model.d_ff, flags.model.d_ff);
        set_if(o_el, args->model.enc_layers, flags.model.enc_layers);
        set_if(o_dl, args->model.dec_layers, flags.model.dec_layers);
        set_if(o_l, args->model.l, flags.model.l);
        set_if(o_nm, args->model.n_max, flags.model.n_max);
        set_if(o_mp, args->model.max_prompt_len, flags.model.max_prompt_len);
        set_if(o_mode, args->train.encoder_mode, flags.train.encoder_mode);
        set_if(o_ep, args->train.epochs, flags.train.epochs);
        set_if(o_lr, args->train.learning_rate, flags.train.learning_rate);
        set_if(o_bs, args->train.batch_size, flags.train.batch_size);
        set_if(o_seed, args->train.seed, flags.train.seed);
        set_if(o_thr, args->train.threads, flags.train.threads);
        args->train.validate();

        auto prompts = load_jsonl<PromptRecord>(args->corpus);
        auto bundles = load_jsonl<OutputBundle>(args->bundles);
        exit_code = args->precision == "f64"
                        ? run_train<double>(*args, prompts, bundles)
                        : run_train<float>(*args, prompts, bundles);
    });
}

void register_invert(CLI::App& app, int& exit_code) {
    auto args = std::make_shared<InvertArgs>();
    CLI::App* cmd = app.add_subcommand("invert", "Extract prompts from output bundles");
    cmd->add_option("--checkpoint", args->checkpoint, "Trained model checkpoint")->required();
    cmd->add_option("--bundles", args->bundles, "Bundle JSONL")->required();
    cmd->add_option("--out", args->out, "Extracted prompt JSONL")->required();
    cmd->add_option("--max-len", args->max_len, "Decode length cap (0 = model default)");

    cmd->callback([args, &exit_code] {
        auto bundles = load_jsonl<OutputBundle>(args->bundles);
        CheckpointHeader header = read_checkpoint_header(args->checkpoint);
        std::vector<PromptRecord> extracted = header.dtype == "f64"
                                                  ? run_invert<double>(*args, bundles)
                                                  : run_invert<float>(*args, bundles);
        save_jsonl(extracted, args->out);
        std::cerr << "wrote " << extracted.size() << " extractions to " << args->out << "\n";
        (void)exit_code;
    });
}

}  // namespace promptinv::cli
