#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "promptinv/rng.hpp"
#include "promptinv/tokenizer.hpp"

namespace promptinv {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

struct ModelConfig {
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 256;
    int enc_layers = 2;
    int dec_layers = 2;
    int vocab_size = Vocabulary::kSize;
    int l = 32;             // per-output token length
    int n_max = 64;         // maximum outputs per bundle
    int max_prompt_len = 64;

    int head_dim() const { return d_model / n_heads; }
    void validate() const {
        if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
            throw std::invalid_argument("d_model must be a positive multiple of n_heads");
        }
        if (d_ff < 1 || enc_layers < 1 || dec_layers < 1 || vocab_size < 1) {
            throw std::invalid_argument("d_ff, layer counts and vocab_size must be >= 1");
        }
        if (l < 2 || n_max < 1 || max_prompt_len < 2) {
            throw std::invalid_argument("l >= 2, n_max >= 1, max_prompt_len >= 2 required");
        }
    }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

enum class EncoderMode { Sparse, Full, AvgPool };

std::string to_string(EncoderMode mode);
EncoderMode encoder_mode_from_string(const std::string& s);

/// Boolean attention mask over (query, key) positions; true = may attend.
struct AttentionMask {
    int rows = 0;
    int cols = 0;
    std::vector<uint8_t> allow;  // row-major

    bool at(int i, int j) const { return allow[static_cast<size_t>(i) * cols + j] != 0; }
    size_t true_count() const {
        size_t c = 0;
        for (uint8_t a : allow) c += a;
        return c;
    }
};

/// Mask with n blocks of size l on the diagonal: (i, j) allowed iff both
/// positions fall in the same length-l block.
inline AttentionMask build_block_diagonal_mask(int n, int l) {
    if (n < 1 || l < 1) throw std::invalid_argument("build_block_diagonal_mask: n, l >= 1");
    AttentionMask m;
    m.rows = m.cols = n * l;
    m.allow.assign(static_cast<size_t>(m.rows) * m.cols, 0);
    for (int i = 0; i < m.rows; ++i) {
        for (int j = 0; j < m.cols; ++j) {
            if (i / l == j / l) m.allow[static_cast<size_t>(i) * m.cols + j] = 1;
        }
    }
    return m;
}

/// Encoder output handed to decoder cross-attention. Rows flagged invalid
/// (pad positions) are excluded from cross-attention.
template <typename S>
struct EncoderStates {
    Mat<S> h;                    // rows x d_model
    std::vector<uint8_t> valid;  // one flag per row
};

template <typename S>
struct AttnWeights {
    Mat<S> wq, wk, wv, wo;  // each d_model x d_model
};

template <typename S>
struct FfWeights {
    Mat<S> w1;  // d_model x d_ff
    Vec<S> b1;  // d_ff
    Mat<S> w2;  // d_ff x d_model
    Vec<S> b2;  // d_model
};

template <typename S>
struct EncLayerParams {
    Vec<S> norm1;
    AttnWeights<S> attn;
    Vec<S> norm2;
    FfWeights<S> ff;
};

template <typename S>
struct DecLayerParams {
    Vec<S> norm1;
    AttnWeights<S> self_attn;
    Vec<S> norm2;
    AttnWeights<S> cross_attn;
    Vec<S> norm3;
    FfWeights<S> ff;
};

/// Flat view of one parameter tensor, used by the optimizer, checkpoints
/// and the gradient checker. Order of enumeration is fixed.
template <typename S>
struct TensorView {
    std::string name;
    S* data;
    size_t size;
};

template <typename S>
struct ModelParams {
    ModelConfig config;
    Mat<S> embedding;  // vocab x d, shared by encoder and decoder inputs
    std::vector<EncLayerParams<S>> enc;
    Vec<S> enc_norm;
    std::vector<DecLayerParams<S>> dec;
    Vec<S> dec_norm;
    Mat<S> out_proj;  // vocab x d
    Vec<S> out_bias;  // vocab

    static ModelParams zeros(const ModelConfig& cfg);
    static ModelParams init(const ModelConfig& cfg, uint64_t seed);

    size_t parameter_count() const;
    std::vector<TensorView<S>> tensors();
    std::vector<TensorView<const S>> tensors() const;
    void set_zero();

    template <typename T>
    ModelParams<T> cast() const;
};

using TokenizedBundle = std::vector<TokenSeq>;

/// Per-thread counter of materialized attention-score elements. Install a
/// counter to measure what a forward pass actually allocates.
struct AttnAccounting {
    long long score_elements = 0;  // summed over every (layer, head) score matrix
    long long peak_single = 0;     // largest single score matrix
};
AttnAccounting* set_attention_accounting(AttnAccounting* acc);  // returns previous

struct ScopedAttnAccounting {
    explicit ScopedAttnAccounting(AttnAccounting& acc) : prev_(set_attention_accounting(&acc)) {}
    ~ScopedAttnAccounting() { set_attention_accounting(prev_); }
    ScopedAttnAccounting(const ScopedAttnAccounting&) = delete;
    ScopedAttnAccounting& operator=(const ScopedAttnAccounting&) = delete;

private:
    AttnAccounting* prev_;
};

// Forward passes. All validate the bundle: every sequence of length
// config.l, 1 <= n <= n_max.

/// One encoder pass over the concatenation of all sequences with full
/// (pad-masked) self-attention and running positions. rows = n*l.
template <typename S>
EncoderStates<S> encode_full(const ModelParams<S>& params, const TokenizedBundle& bundle);

/// Each sequence encoded independently with positions restarting at 0;
/// results concatenated row-wise. rows = n*l.
template <typename S>
EncoderStates<S> encode_sparse(const ModelParams<S>& params, const TokenizedBundle& bundle);

/// Entry-wise mean of the per-sequence encodings. rows = l. A row is valid
/// if any sequence has a real token at that position.
template <typename S>
EncoderStates<S> encode_avg_pool(const ModelParams<S>& params, const TokenizedBundle& bundle);

template <typename S>
EncoderStates<S> encode(const ModelParams<S>& params, const TokenizedBundle& bundle,
                        EncoderMode mode);

/// Single concatenated encoder pass under an explicit attention mask, with
/// either running or per-sequence positions. This is the reference route
/// that encode_sparse is checked against.
template <typename S>
EncoderStates<S> encode_full_with_mask(const ModelParams<S>& params,
                                       const TokenizedBundle& bundle,
                                       const AttentionMask& mask,
                                       bool per_sequence_positions);

/// Teacher-forced decoder pass: causal self-attention over prompt_tokens,
/// cross-attention over valid rows of h. Row t of the result is the
/// next-token distribution after consuming tokens 0..t.
template <typename S>
Mat<S> decoder_forward(const ModelParams<S>& params, const EncoderStates<S>& h,
                       const TokenSeq& prompt_tokens);

/// Greedy autoregressive decoding from BOS until EOS or max_len tokens.
/// Argmax ties break toward the lower token id; the result is unpadded.
template <typename S>
TokenSeq greedy_decode(const ModelParams<S>& params, const EncoderStates<S>& h, int max_len);

}  // namespace promptinv

#include "promptinv/model_impl.hpp"
