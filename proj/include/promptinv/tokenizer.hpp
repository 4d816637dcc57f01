#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace promptinv {

/// Byte-level vocabulary: token ids 0..255 are raw byte values, followed by
/// the three specials. Fixed once; there is nothing to train or load.
struct Vocabulary {
    static constexpr int kSize = 259;
    static constexpr int kPadId = 256;
    static constexpr int kBosId = 257;
    static constexpr int kEosId = 258;

    static constexpr bool is_special(int id) { return id >= 256; }
    static constexpr bool is_byte(int id) { return id >= 0 && id < 256; }
};

/// A fixed-length token sequence. `ids.size()` is the padded length;
/// `true_len` counts the non-pad prefix. Pads only ever appear as a suffix.
struct TokenSeq {
    std::vector<int> ids;
    int true_len = 0;

    int len() const { return static_cast<int>(ids.size()); }
};

/// BOS + bytes + EOS, truncated so a terminal EOS always fits, then padded
/// to exactly `max_len`. max_len must be >= 2.
TokenSeq encode_text(const std::string& text, int max_len);

/// Inverse of encode_text on the byte region. Stray specials are skipped,
/// decoding stops at the first EOS, and ill-formed UTF-8 byte sequences are
/// replaced with U+FFFD.
std::string decode_tokens(const TokenSeq& seq);

/// Tokenization seam: everything downstream works against this, so a
/// subword tokenizer can be dropped in without touching the pipeline.
class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual int vocab_size() const = 0;
    virtual TokenSeq encode(const std::string& text, int max_len) const = 0;
    virtual std::string decode(const TokenSeq& seq) const = 0;
};

class ByteTokenizer final : public Tokenizer {
public:
    int vocab_size() const override { return Vocabulary::kSize; }
    TokenSeq encode(const std::string& text, int max_len) const override {
        return encode_text(text, max_len);
    }
    std::string decode(const TokenSeq& seq) const override { return decode_tokens(seq); }
};

}  // namespace promptinv
