#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "promptinv/metrics.hpp"
#include "metric_oracles.hpp"
#include "promptinv/rng.hpp"

using namespace promptinv;

namespace oracle = metric_oracles;

TEST_CASE("bleu: identity, disjoint, hand case") {
    CHECK(bleu("the cat sat", "the cat sat") == doctest::Approx(100.0).epsilon(1e-9));
    CHECK(bleu("aa bb cc", "xx yy zz") < 1e-6);
    CHECK(bleu("", "anything") == 0.0);
    // p1 = p2 = 1, BP = exp(1 - 3/2).
    CHECK(bleu("the cat", "the cat sat") == doctest::Approx(100.0 * std::exp(-0.5)).epsilon(1e-6));
    CHECK(std::abs(bleu("the cat", "the cat sat") - 60.65) < 0.01);
}

TEST_CASE("bleu: asymmetric by construction") {
    CHECK(bleu("the cat", "the cat sat") != bleu("the cat sat", "the cat"));
}

TEST_CASE("token_f1: identity, disjoint, hand case, symmetry") {
    CHECK(token_f1("Same Words", "same words") == doctest::Approx(100.0));
    CHECK(token_f1("aa bb", "cc dd") == 0.0);
    CHECK(std::abs(token_f1("a b c", "a b d") - 66.67) < 0.01);
    CHECK(token_f1("", "") == 100.0);
    CHECK(token_f1("a", "") == 0.0);
    Rng rng(11);
    for (int i = 0; i < 50; ++i) {
        std::string a = oracle::random_sentence(rng, 6);
        std::string b = oracle::random_sentence(rng, 6);
        CHECK(token_f1(a, b) == doctest::Approx(token_f1(b, a)).epsilon(1e-12));
    }
}

TEST_CASE("token_f1: punctuation flag") {
    CHECK(token_f1("hello, world", "hello world") < 100.0);
    CHECK(token_f1("hello, world", "hello world", true) == doctest::Approx(100.0));
}

TEST_CASE("exact_match: trim rule only") {
    CHECK(exact_match("abc ", "abc"));
    CHECK(exact_match(" abc", "abc"));
    CHECK(!exact_match("Abc", "abc"));
    CHECK(exact_match("", ""));
    CHECK(!exact_match("a b", "a  b"));
}

TEST_CASE("oracle agreement on 200 random pairs") {
    Rng rng(2024);
    for (int i = 0; i < 200; ++i) {
        std::string a = oracle::random_sentence(rng, 8);
        std::string b = oracle::random_sentence(rng, 8);
        CHECK(bleu(a, b) == oracle::bleu_ref(a, b));
        CHECK(token_f1(a, b) == oracle::f1_ref(a, b));
    }
}

TEST_CASE("hash_embed: unit norm, determinism, order sensitivity") {
    auto v1 = hash_embed("the quick brown fox", 4096);
    auto v2 = hash_embed("the quick brown fox", 4096);
    CHECK(v1 == v2);
    double norm = 0;
    for (double x : v1) norm += x * x;
    CHECK(std::abs(std::sqrt(norm) - 1.0) < 1e-12);
    auto v3 = hash_embed("quick the brown fox", 4096);
    CHECK(v1 != v3);

    bool degenerate = false;
    auto v4 = hash_embed("", 4096, &degenerate);
    CHECK(degenerate);
    CHECK(v4[0] == 1.0);
}

TEST_CASE("cosine_similarity: identity, orthogonal, duplicate-implementation oracle") {
    Embedder e = make_hash_embedder(512);
    CHECK(cosine_similarity("abc def", "abc def", e) == doctest::Approx(100.0).epsilon(1e-12));

    // Hand-built orthogonal embedder.
    Embedder axes;
    axes.name = "axes";
    axes.dimension = 2;
    axes.embed = [](const std::string& s) {
        return s == "x" ? std::vector<double>{1, 0} : std::vector<double>{0, 1};
    };
    CHECK(cosine_similarity("x", "y", axes) == 0.0);

    // Independent dense re-implementation of the 3-gram hasher.
    auto dense = [](const std::string& text, size_t dim) {
        std::map<size_t, double> counts;
        for (size_t i = 0; i + 3 <= text.size(); ++i) {
            counts[fnv1a64(std::string_view(text).substr(i, 3)) % dim] += 1.0;
        }
        double norm = 0;
        for (auto& [_, c] : counts) norm += c * c;
        norm = std::sqrt(norm);
        std::vector<double> v(dim, 0.0);
        for (auto& [k, c] : counts) v[k] = c / norm;
        return v;
    };
    auto da = dense("abc", 512);
    auto db = dense("abd", 512);
    double dot = 0;
    for (size_t i = 0; i < da.size(); ++i) dot += da[i] * db[i];
    CHECK(cosine_similarity("abc", "abd", e) == doctest::Approx(100.0 * dot).epsilon(1e-12));
}

TEST_CASE("judge prompt and response parsing") {
    std::string p = build_judge_prompt("write a poem", "compose a poem");
    CHECK(p.find("Are prompt A and prompt B likely to produce similar outputs?") == 0);
    CHECK(p.find("Prompt A: write a poem") != std::string::npos);
    CHECK(p.find("Prompt B: compose a poem") != std::string::npos);
    CHECK(p.rfind("Please answer YES, NO or UNCLEAR. Answer:") != std::string::npos);

    CHECK(parse_judge_response("yes.") == JudgeLabel::Yes);
    CHECK(parse_judge_response("YES") == JudgeLabel::Yes);
    CHECK(parse_judge_response("  No way") == JudgeLabel::No);
    CHECK(parse_judge_response("It depends") == JudgeLabel::Unclear);
    CHECK(parse_judge_response("42") == JudgeLabel::Unclear);
    CHECK(parse_judge_response("") == JudgeLabel::Unclear);
}

TEST_CASE("llm_eval wiring and percentage") {
    auto judge = [](const std::string& prompt) -> std::string {
        REQUIRE(prompt.find("Prompt A:") != std::string::npos);
        return "YES";
    };
    CHECK(llm_eval("a", "b", judge) == JudgeLabel::Yes);
    CHECK(percent_yes({JudgeLabel::Yes, JudgeLabel::No, JudgeLabel::Unclear, JudgeLabel::Yes}) ==
          doctest::Approx(50.0));
    CHECK(percent_yes({}) == 0.0);
}

TEST_CASE("aggregate_report: mean, SEM, singleton") {
    auto r = aggregate_report({{"f1", {1.0, 2.0, 3.0}}});
    CHECK(r.summary["f1"].mean == doctest::Approx(2.0));
    CHECK(std::abs(r.summary["f1"].sem - 0.5774) < 1e-4);
    CHECK(r.summary["f1"].count == 3);
    CHECK(!r.summary["f1"].singleton);

    auto c = aggregate_report({{"x", {5.0, 5.0, 5.0, 5.0}}});
    CHECK(c.summary["x"].sem == 0.0);

    auto s = aggregate_report({{"x", {7.0}}});
    CHECK(s.summary["x"].sem == 0.0);
    CHECK(s.summary["x"].singleton);
    CHECK(s.summary["x"].count == 1);
}

TEST_CASE("property: ranges and identity at maximum") {
    Rng rng(5);
    Embedder e = make_hash_embedder(1024);
    for (int i = 0; i < 60; ++i) {
        std::string a = oracle::random_sentence(rng, 7);
        std::string b = oracle::random_sentence(rng, 7);
        double bl = bleu(a, b);
        double f1 = token_f1(a, b);
        double cs = cosine_similarity(a, b, e);
        CHECK(bl >= 0.0);
        CHECK(bl <= 100.0 + 1e-9);
        CHECK(f1 >= 0.0);
        CHECK(f1 <= 100.0 + 1e-9);
        CHECK(cs >= -100.0 - 1e-9);
        CHECK(cs <= 100.0 + 1e-9);
        CHECK(bleu(a, a) == doctest::Approx(100.0));
        CHECK(token_f1(a, a) == doctest::Approx(100.0));
        CHECK(exact_match(a, a));
        CHECK(cosine_similarity(a, b, e) == doctest::Approx(cosine_similarity(b, a, e)));
    }
}
