#include "promptinv/tokenizer.hpp"

#include <stdexcept>

namespace promptinv {

TokenSeq encode_text(const std::string& text, int max_len) {
    if (max_len < 2) {
        throw std::invalid_argument("encode_text: max_len must be >= 2");
    }
    TokenSeq seq;
    seq.ids.reserve(static_cast<size_t>(max_len));
    seq.ids.push_back(Vocabulary::kBosId);
    // Keep at most max_len - 2 content bytes so BOS and EOS always fit.
    const size_t keep = std::min(text.size(), static_cast<size_t>(max_len - 2));
    for (size_t i = 0; i < keep; ++i) {
        seq.ids.push_back(static_cast<unsigned char>(text[i]));
    }
    seq.ids.push_back(Vocabulary::kEosId);
    seq.true_len = static_cast<int>(seq.ids.size());
    seq.ids.resize(static_cast<size_t>(max_len), Vocabulary::kPadId);
    return seq;
}

namespace {

// Length of a well-formed UTF-8 sequence starting at bytes[i], or 0 if the
// bytes there are ill-formed. Checks continuation bytes, overlongs,
// surrogates and the U+10FFFF ceiling.
size_t utf8_sequence_len(const std::vector<unsigned char>& b, size_t i) {
    unsigned char c = b[i];
    if (c < 0x80) return 1;
    if (c < 0xC2) return 0;  // continuation byte or overlong lead
    size_t n = b.size();
    auto cont = [&](size_t k) { return k < n && (b[k] & 0xC0) == 0x80; };
    if (c < 0xE0) {
        return cont(i + 1) ? 2 : 0;
    }
    if (c < 0xF0) {
        if (!cont(i + 1) || !cont(i + 2)) return 0;
        if (c == 0xE0 && b[i + 1] < 0xA0) return 0;  // overlong
        if (c == 0xED && b[i + 1] >= 0xA0) return 0;  // surrogate
        return 3;
    }
    if (c < 0xF5) {
        if (!cont(i + 1) || !cont(i + 2) || !cont(i + 3)) return 0;
        if (c == 0xF0 && b[i + 1] < 0x90) return 0;  // overlong
        if (c == 0xF4 && b[i + 1] >= 0x90) return 0;  // above U+10FFFF
        return 4;
    }
    return 0;
}

}  // namespace

std::string decode_tokens(const TokenSeq& seq) {
    std::vector<unsigned char> bytes;
    bytes.reserve(seq.ids.size());
    for (int id : seq.ids) {
        if (id == Vocabulary::kEosId) break;
        if (Vocabulary::is_byte(id)) {
            bytes.push_back(static_cast<unsigned char>(id));
        }
        // BOS and PAD anywhere are skipped.
    }
    std::string out;
    out.reserve(bytes.size());
    static const std::string kReplacement = "\xEF\xBF\xBD";  // U+FFFD
    size_t i = 0;
    while (i < bytes.size()) {
        size_t len = utf8_sequence_len(bytes, i);
        if (len == 0) {
            out += kReplacement;
            ++i;
        } else {
            out.append(reinterpret_cast<const char*>(&bytes[i]), len);
            i += len;
        }
    }
    return out;
}

}  // namespace promptinv
