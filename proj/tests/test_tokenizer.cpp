#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "promptinv/rng.hpp"
#include "promptinv/tokenizer.hpp"

using namespace promptinv;

namespace {
constexpr int BOS = Vocabulary::kBosId;
constexpr int EOS = Vocabulary::kEosId;
constexpr int PAD = Vocabulary::kPadId;
}  // namespace

TEST_CASE("vocabulary layout") {
    CHECK(Vocabulary::kSize == 259);
    CHECK(PAD >= 256);
    CHECK(BOS >= 256);
    CHECK(EOS >= 256);
    CHECK(PAD != BOS);
    CHECK(BOS != EOS);
    CHECK(PAD != EOS);
}

TEST_CASE("encode: empty text") {
    TokenSeq s = encode_text("", 4);
    CHECK(s.ids == std::vector<int>{BOS, EOS, PAD, PAD});
    CHECK(s.true_len == 2);
}

TEST_CASE("encode: ascii bytes") {
    TokenSeq s = encode_text("Hi", 8);
    CHECK(s.ids == std::vector<int>{BOS, 72, 105, EOS, PAD, PAD, PAD, PAD});
    CHECK(s.true_len == 4);
}

TEST_CASE("encode: truncation keeps BOS and terminal EOS") {
    TokenSeq s = encode_text("abcdef", 4);
    CHECK(s.ids == std::vector<int>{BOS, 97, 98, EOS});
    CHECK(s.true_len == 4);
}

TEST_CASE("encode: max_len must be >= 2") {
    CHECK_THROWS_AS(encode_text("x", 1), std::invalid_argument);
}

TEST_CASE("decode: specials only") {
    TokenSeq s;
    s.ids = {BOS, EOS, PAD};
    s.true_len = 2;
    CHECK(decode_tokens(s) == "");
}

TEST_CASE("decode: round trip") {
    CHECK(decode_tokens(encode_text("Hello", 16)) == "Hello");
}

TEST_CASE("decode: ill-formed utf8 replaced") {
    TokenSeq s;
    s.ids = {BOS, 0xFF, 'a', EOS};
    s.true_len = 4;
    CHECK(decode_tokens(s) == "\xEF\xBF\xBD"
                              "a");
    // Truncated multi-byte sequence at end of content.
    TokenSeq t;
    t.ids = {BOS, 0xE2, 0x82, EOS};  // first two bytes of a 3-byte sequence
    t.true_len = 4;
    CHECK(decode_tokens(t) == "\xEF\xBF\xBD\xEF\xBF\xBD");
}

TEST_CASE("property: round trip for random ascii and utf8 strings") {
    Rng rng(41);
    for (int iter = 0; iter < 300; ++iter) {
        std::string s;
        const int len = static_cast<int>(rng.next_below(60));
        while (static_cast<int>(s.size()) < len) {
            if (rng.next_below(4) == 0) {
                // Two-byte UTF-8 code point.
                const unsigned cp = 0x80 + static_cast<unsigned>(rng.next_below(0x700));
                s += static_cast<char>(0xC0 | (cp >> 6));
                s += static_cast<char>(0x80 | (cp & 0x3F));
            } else {
                s += static_cast<char>(32 + rng.next_below(95));
            }
        }
        if (s.size() > 62) continue;
        TokenSeq enc = encode_text(s, 64);
        CHECK(decode_tokens(enc) == s);
        CHECK(enc.len() == 64);
        // Pad suffix: no pad precedes a non-pad token.
        bool seen_pad = false;
        for (int id : enc.ids) {
            if (id == PAD) {
                seen_pad = true;
            } else {
                CHECK(!seen_pad);
            }
        }
    }
}

TEST_CASE("property: determinism") {
    TokenSeq a = encode_text("same input", 32);
    TokenSeq b = encode_text("same input", 32);
    CHECK(a.ids == b.ids);
    CHECK(a.true_len == b.true_len);
}

TEST_CASE("tokenizer interface dispatches to the byte implementation") {
    ByteTokenizer byte_tok;
    const Tokenizer& tok = byte_tok;
    CHECK(tok.vocab_size() == 259);
    TokenSeq s = tok.encode("Hi", 8);
    CHECK(s.ids == encode_text("Hi", 8).ids);
    CHECK(tok.decode(s) == "Hi");
}
