// End-to-end tests of the command-line binary. The binary path comes from
// the PROMPTINV_BIN environment variable (set by CTest).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include <json.hpp>

#include "promptinv/datasets.hpp"
#include "promptinv/sampling.hpp"

using namespace promptinv;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string bin() {
    const char* b = std::getenv("PROMPTINV_BIN");
    REQUIRE(b != nullptr);
    return b;
}

int run(const std::string& args) {
    const std::string cmd = bin() + " " + args + " >/dev/null 2>&1";
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)), {});
}

json load_json(const std::string& path) { return json::parse(slurp(path)); }

/// Bundle rows with volatile fields removed, for idempotency comparisons.
std::vector<json> normalized_bundles(const std::string& path) {
    auto rows = load_jsonl<json>(path);
    for (auto& r : rows) r.erase("created_unix");
    return rows;
}

struct Workspace {
    fs::path dir;
    Workspace() {
        dir = fs::temp_directory_path() / ("promptinv_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Workspace() { std::error_code ec; fs::remove_all(dir, ec); }
    std::string p(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("cli pipeline: gen, sample, train, invert, eval, bench") {
    Workspace ws;

    SUBCASE("usage errors exit 1") {
        CHECK(run("gen") == 1);                     // missing --out
        CHECK(run("definitely-not-a-command") == 1);
        CHECK(run("") == 1);                        // subcommand required
    }

    // --- gen ---------------------------------------------------------------
    const std::string corpus = ws.p("corpus.jsonl");
    REQUIRE(run("gen --mode synthetic --count 30 --seed 7 --out " + corpus) == 0);
    auto prompts = load_jsonl<PromptRecord>(corpus);
    REQUIRE(prompts.size() == 30);

    // Rerun is byte-identical.
    const std::string corpus2 = ws.p("corpus2.jsonl");
    REQUIRE(run("gen --mode synthetic --count 30 --seed 7 --out " + corpus2) == 0);
    CHECK(slurp(corpus) == slurp(corpus2));

    // gpts mode builds one meta-prompt per row.
    const std::string names = ws.p("names.jsonl");
    {
        std::ofstream out(names);
        out << R"({"name":"Bashy","description":"a shell helper"})" << "\n";
        out << R"({"id":"g2","name":"Chef","description":"a cooking coach"})" << "\n";
    }
    const std::string gpts = ws.p("gpts.jsonl");
    REQUIRE(run("gen --mode gpts --in " + names + " --out " + gpts) == 0);
    auto metaprompts = load_jsonl<PromptRecord>(gpts);
    REQUIRE(metaprompts.size() == 2);
    CHECK(metaprompts[0].prompt.find("Create a Bashy") != std::string::npos);
    CHECK(metaprompts[1].id == "g2");

    // Unwritable output path is a data error.
    CHECK(run("gen --mode synthetic --count 5 --out /nonexistent-dir/x.jsonl") == 2);

    // --- sample ------------------------------------------------------------
    const std::string bundles = ws.p("bundles.jsonl");
    REQUIRE(run("sample --prompts " + corpus + " --out " + bundles +
                " --n 4 --max-tokens 8 --seed 3") == 0);
    auto bs = load_jsonl<OutputBundle>(bundles);
    REQUIRE(bs.size() == 30);
    for (const auto& b : bs) {
        CHECK(b.outputs.size() == 4);
        CHECK(b.params.temperature == 1.5);  // user-protocol default
    }

    // Idempotent modulo timestamps, including under bounded parallelism.
    const std::string bundles2 = ws.p("bundles2.jsonl");
    REQUIRE(run("sample --prompts " + corpus + " --out " + bundles2 +
                " --n 4 --max-tokens 8 --seed 3") == 0);
    CHECK(normalized_bundles(bundles) == normalized_bundles(bundles2));
    const std::string bundles_par = ws.p("bundles_par.jsonl");
    REQUIRE(run("sample --prompts " + corpus + " --out " + bundles_par +
                " --n 4 --max-tokens 8 --seed 3 --parallel 4") == 0);
    CHECK(normalized_bundles(bundles) == normalized_bundles(bundles_par));

    // System protocol routes through the 4-query path: 64 outputs.
    const std::string sys_bundles = ws.p("sys_bundles.jsonl");
    REQUIRE(run("sample --prompts " + gpts + " --out " + sys_bundles +
                " --protocol system --seed 3") == 0);
    auto sbs = load_jsonl<OutputBundle>(sys_bundles);
    REQUIRE(sbs.size() == 2);
    for (const auto& b : sbs) {
        CHECK(b.outputs.size() == 64);
        CHECK(b.params.temperature == 0.8);  // system-protocol default
    }

    // http backend without credentials: clean startup error, exit 3.
    ::unsetenv("PROMPTINV_CLI_TEST_KEY");
    CHECK(run("sample --prompts " + corpus + " --out " + ws.p("x.jsonl") +
              " --backend http --api-key-env PROMPTINV_CLI_TEST_KEY") == 3);

    // --- train ---------------------------------------------------------------
    const std::string run1 = ws.p("run1");
    REQUIRE(run("train --corpus " + corpus + " --bundles " + bundles + " --out " + run1 +
                " --d-model 16 --n-heads 2 --d-ff 32 --enc-layers 1 --dec-layers 1" +
                " --l 8 --n-max 4 --max-prompt-len 24" +
                " --epochs 1 --batch-size 4 --seed 5 --encoder-mode sparse") == 0);
    CHECK(fs::exists(run1 + "/model.ckpt"));
    CHECK(fs::exists(run1 + "/history.jsonl"));
    json echoed = load_json(run1 + "/config.json");
    CHECK(echoed["model"]["d_model"] == 16);
    CHECK(echoed["train"]["encoder_mode"] == "sparse");

    auto history = load_jsonl<json>(run1 + "/history.jsonl");
    REQUIRE(!history.empty());
    CHECK(history.front()["step"] == 1);
    CHECK(history.front().contains("loss"));
    CHECK(history.front().contains("seconds"));
    const long steps_run1 = history.back()["step"].get<long>();

    // Re-running the identical training produces a byte-identical checkpoint.
    const std::string run1b = ws.p("run1b");
    REQUIRE(run("train --corpus " + corpus + " --bundles " + bundles + " --out " + run1b +
                " --d-model 16 --n-heads 2 --d-ff 32 --enc-layers 1 --dec-layers 1" +
                " --l 8 --n-max 4 --max-prompt-len 24" +
                " --epochs 1 --batch-size 4 --seed 5 --encoder-mode sparse") == 0);
    CHECK(slurp(run1 + "/model.ckpt") == slurp(run1b + "/model.ckpt"));

    // Resume continues the step count.
    const std::string run2 = ws.p("run2");
    REQUIRE(run("train --corpus " + corpus + " --bundles " + bundles + " --out " + run2 +
                " --resume " + run1 + "/model.ckpt --epochs 1 --batch-size 4 --seed 6") == 0);
    auto history2 = load_jsonl<json>(run2 + "/history.jsonl");
    CHECK(history2.front()["step"] == steps_run1 + 1);

    // Encoder-mode flag selects the architecture variant.
    const std::string run3 = ws.p("run3");
    REQUIRE(run("train --corpus " + corpus + " --bundles " + bundles + " --out " + run3 +
                " --d-model 16 --n-heads 2 --d-ff 32 --enc-layers 1 --dec-layers 1" +
                " --l 8 --n-max 4 --max-prompt-len 24" +
                " --epochs 1 --batch-size 8 --seed 5 --encoder-mode avg_pool") == 0);
    json echoed3 = load_json(run3 + "/config.json");
    CHECK(echoed3["train"]["encoder_mode"] == "avg_pool");

    // --- invert --------------------------------------------------------------
    const std::string extracted = ws.p("extracted.jsonl");
    REQUIRE(run("invert --checkpoint " + run1 + "/model.ckpt --bundles " + bundles +
                " --out " + extracted) == 0);
    auto ex = load_jsonl<PromptRecord>(extracted);
    REQUIRE(ex.size() == bs.size());
    for (size_t i = 0; i < ex.size(); ++i) CHECK(ex[i].id == bs[i].prompt_id);

    // Bundles with fewer outputs than trained n are still accepted.
    const std::string short_bundles = ws.p("short_bundles.jsonl");
    {
        auto rows = load_jsonl<json>(bundles);
        for (auto& r : rows) {
            auto outs = r["outputs"].get<std::vector<std::string>>();
            outs.resize(1);
            r["outputs"] = outs;
        }
        std::ofstream out(short_bundles);
        for (auto& r : rows) out << r.dump() << "\n";
    }
    REQUIRE(run("invert --checkpoint " + run1 + "/model.ckpt --bundles " + short_bundles +
                " --out " + ws.p("extracted_short.jsonl")) == 0);
    CHECK(load_jsonl<PromptRecord>(ws.p("extracted_short.jsonl")).size() == bs.size());

    // Missing checkpoint is an error.
    CHECK(run("invert --checkpoint " + ws.p("nope.ckpt") + " --bundles " + bundles +
              " --out " + ws.p("y.jsonl")) == 2);

    // --- eval ----------------------------------------------------------------
    const std::string report = ws.p("report.json");
    REQUIRE(run("eval --extractions " + corpus + " --references " + corpus + " --out " +
                report) == 0);
    json rep = load_json(report);
    CHECK(rep["metrics"]["cs"]["mean"].get<double>() == doctest::Approx(100.0));
    CHECK(rep["metrics"]["bleu"]["mean"].get<double>() == doctest::Approx(100.0));
    CHECK(rep["metrics"]["exact"]["mean"].get<double>() == doctest::Approx(100.0));
    CHECK(rep["metrics"]["token_f1"]["mean"].get<double>() == doctest::Approx(100.0));
    CHECK(rep["count"] == 30);

    // Real extractions score too (values unconstrained, fields present).
    REQUIRE(run("eval --extractions " + extracted + " --references " + corpus + " --out " +
                ws.p("report2.json")) == 0);
    CHECK(load_json(ws.p("report2.json"))["metrics"].contains("token_f1"));

    // --with-llm-eval adds the judged percentage block.
    REQUIRE(run("eval --extractions " + corpus + " --references " + corpus + " --out " +
                ws.p("report3.json") + " --with-llm-eval") == 0);
    json rep3 = load_json(ws.p("report3.json"));
    CHECK(rep3.contains("llm_eval"));
    CHECK(rep3["llm_eval"].contains("percent_yes"));

    // Mismatched ids are a data error.
    const std::string other = ws.p("other.jsonl");
    REQUIRE(run("gen --mode synthetic --count 5 --seed 99 --out " + other) == 0);
    CHECK(run("eval --extractions " + other + " --references " + corpus + " --out " +
              ws.p("r.json")) == 2);

    // --- bench ---------------------------------------------------------------
    const std::string bench_report = ws.p("bench.json");
    const std::string bench_table = ws.p("bench.tsv");
    REQUIRE(run("bench --out " + bench_report + " --table " + bench_table +
                " --n-values 2,4 --trials 3 --d-model 16 --d-ff 32 --l 16") == 0);
    json br = load_json(bench_report);
    CHECK(br.contains("forward_growth_exponent"));
    CHECK(br["points"].size() == 4);
    std::string table = slurp(bench_table);
    CHECK(table.find("n\tmode\tforward_s\tstep_s\tscore_elements") == 0);
}
