#pragma once

// Template implementation for model.hpp. Include model.hpp, not this file.

#include <algorithm>
#include <limits>

namespace promptinv {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = {{"d_model", c.d_model},       {"n_heads", c.n_heads},
         {"d_ff", c.d_ff},             {"enc_layers", c.enc_layers},
         {"dec_layers", c.dec_layers}, {"vocab_size", c.vocab_size},
         {"l", c.l},                   {"n_max", c.n_max},
         {"max_prompt_len", c.max_prompt_len}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    ModelConfig d;
    c.d_model = j.value("d_model", d.d_model);
    c.n_heads = j.value("n_heads", d.n_heads);
    c.d_ff = j.value("d_ff", d.d_ff);
    c.enc_layers = j.value("enc_layers", d.enc_layers);
    c.dec_layers = j.value("dec_layers", d.dec_layers);
    c.vocab_size = j.value("vocab_size", d.vocab_size);
    c.l = j.value("l", d.l);
    c.n_max = j.value("n_max", d.n_max);
    c.max_prompt_len = j.value("max_prompt_len", d.max_prompt_len);
}

inline std::string to_string(EncoderMode mode) {
    switch (mode) {
        case EncoderMode::Sparse: return "sparse";
        case EncoderMode::Full: return "full";
        case EncoderMode::AvgPool: return "avg_pool";
    }
    return "sparse";
}

inline EncoderMode encoder_mode_from_string(const std::string& s) {
    if (s == "sparse") return EncoderMode::Sparse;
    if (s == "full") return EncoderMode::Full;
    if (s == "avg_pool") return EncoderMode::AvgPool;
    throw std::invalid_argument("unknown encoder mode: " + s);
}

inline thread_local AttnAccounting* g_attn_accounting = nullptr;

inline AttnAccounting* set_attention_accounting(AttnAccounting* acc) {
    AttnAccounting* prev = g_attn_accounting;
    g_attn_accounting = acc;
    return prev;
}

// ---------------------------------------------------------------------------
// ModelParams
// ---------------------------------------------------------------------------

template <typename S>
ModelParams<S> ModelParams<S>::zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams<S> p;
    p.config = cfg;
    const int d = cfg.d_model;
    p.embedding = Mat<S>::Zero(cfg.vocab_size, d);
    p.enc.resize(static_cast<size_t>(cfg.enc_layers));
    for (auto& layer : p.enc) {
        layer.norm1 = Vec<S>::Zero(d);
        layer.attn = {Mat<S>::Zero(d, d), Mat<S>::Zero(d, d), Mat<S>::Zero(d, d),
                      Mat<S>::Zero(d, d)};
        layer.norm2 = Vec<S>::Zero(d);
        layer.ff = {Mat<S>::Zero(d, cfg.d_ff), Vec<S>::Zero(cfg.d_ff),
                    Mat<S>::Zero(cfg.d_ff, d), Vec<S>::Zero(d)};
    }
    p.enc_norm = Vec<S>::Zero(d);
    p.dec.resize(static_cast<size_t>(cfg.dec_layers));
    for (auto& layer : p.dec) {
        layer.norm1 = Vec<S>::Zero(d);
        layer.self_attn = {Mat<S>::Zero(d, d), Mat<S>::Zero(d, d), Mat<S>::Zero(d, d),
                           Mat<S>::Zero(d, d)};
        layer.norm2 = Vec<S>::Zero(d);
        layer.cross_attn = {Mat<S>::Zero(d, d), Mat<S>::Zero(d, d), Mat<S>::Zero(d, d),
                            Mat<S>::Zero(d, d)};
        layer.norm3 = Vec<S>::Zero(d);
        layer.ff = {Mat<S>::Zero(d, cfg.d_ff), Vec<S>::Zero(cfg.d_ff),
                    Mat<S>::Zero(cfg.d_ff, d), Vec<S>::Zero(d)};
    }
    p.dec_norm = Vec<S>::Zero(d);
    p.out_proj = Mat<S>::Zero(cfg.vocab_size, d);
    p.out_bias = Vec<S>::Zero(cfg.vocab_size);
    return p;
}

namespace detail {

template <typename S>
void fill_normal(Mat<S>& m, Rng& rng, double std_dev) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = static_cast<S>(rng.next_normal() * std_dev);
    }
}

}  // namespace detail

template <typename S>
ModelParams<S> ModelParams<S>::init(const ModelConfig& cfg, uint64_t seed) {
    ModelParams<S> p = zeros(cfg);
    Rng rng(seed ^ 0x7061726d73ull);  // distinct stream from data shuffles
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
    const double inv_sqrt_ff = 1.0 / std::sqrt(static_cast<double>(cfg.d_ff));
    // Projections that write into the residual stream start smaller, scaled
    // by the number of residual additions in their stack.
    const double enc_resid = 1.0 / std::sqrt(2.0 * 2.0 * cfg.enc_layers);
    const double dec_resid = 1.0 / std::sqrt(2.0 * 3.0 * cfg.dec_layers);

    detail::fill_normal(p.embedding, rng, inv_sqrt_d);
    auto init_attn = [&](AttnWeights<S>& w, double resid) {
        detail::fill_normal(w.wq, rng, inv_sqrt_d);
        detail::fill_normal(w.wk, rng, inv_sqrt_d);
        detail::fill_normal(w.wv, rng, inv_sqrt_d);
        detail::fill_normal(w.wo, rng, inv_sqrt_d * resid);
    };
    auto init_ff = [&](FfWeights<S>& w, double resid) {
        detail::fill_normal(w.w1, rng, inv_sqrt_d);
        detail::fill_normal(w.w2, rng, inv_sqrt_ff * resid);
    };
    for (auto& layer : p.enc) {
        layer.norm1.setOnes();
        init_attn(layer.attn, enc_resid);
        layer.norm2.setOnes();
        init_ff(layer.ff, enc_resid);
    }
    p.enc_norm.setOnes();
    for (auto& layer : p.dec) {
        layer.norm1.setOnes();
        init_attn(layer.self_attn, dec_resid);
        layer.norm2.setOnes();
        init_attn(layer.cross_attn, dec_resid);
        layer.norm3.setOnes();
        init_ff(layer.ff, dec_resid);
    }
    p.dec_norm.setOnes();
    detail::fill_normal(p.out_proj, rng, inv_sqrt_d);
    return p;
}

template <typename S>
std::vector<TensorView<S>> ModelParams<S>::tensors() {
    std::vector<TensorView<S>> out;
    auto add_mat = [&](const std::string& name, Mat<S>& m) {
        out.push_back({name, m.data(), static_cast<size_t>(m.size())});
    };
    auto add_vec = [&](const std::string& name, Vec<S>& v) {
        out.push_back({name, v.data(), static_cast<size_t>(v.size())});
    };
    add_mat("embedding", embedding);
    for (size_t i = 0; i < enc.size(); ++i) {
        const std::string b = "enc." + std::to_string(i) + ".";
        add_vec(b + "norm1", enc[i].norm1);
        add_mat(b + "attn.wq", enc[i].attn.wq);
        add_mat(b + "attn.wk", enc[i].attn.wk);
        add_mat(b + "attn.wv", enc[i].attn.wv);
        add_mat(b + "attn.wo", enc[i].attn.wo);
        add_vec(b + "norm2", enc[i].norm2);
        add_mat(b + "ff.w1", enc[i].ff.w1);
        add_vec(b + "ff.b1", enc[i].ff.b1);
        add_mat(b + "ff.w2", enc[i].ff.w2);
        add_vec(b + "ff.b2", enc[i].ff.b2);
    }
    add_vec("enc_norm", enc_norm);
    for (size_t i = 0; i < dec.size(); ++i) {
        const std::string b = "dec." + std::to_string(i) + ".";
        add_vec(b + "norm1", dec[i].norm1);
        add_mat(b + "self.wq", dec[i].self_attn.wq);
        add_mat(b + "self.wk", dec[i].self_attn.wk);
        add_mat(b + "self.wv", dec[i].self_attn.wv);
        add_mat(b + "self.wo", dec[i].self_attn.wo);
        add_vec(b + "norm2", dec[i].norm2);
        add_mat(b + "cross.wq", dec[i].cross_attn.wq);
        add_mat(b + "cross.wk", dec[i].cross_attn.wk);
        add_mat(b + "cross.wv", dec[i].cross_attn.wv);
        add_mat(b + "cross.wo", dec[i].cross_attn.wo);
        add_vec(b + "norm3", dec[i].norm3);
        add_mat(b + "ff.w1", dec[i].ff.w1);
        add_vec(b + "ff.b1", dec[i].ff.b1);
        add_mat(b + "ff.w2", dec[i].ff.w2);
        add_vec(b + "ff.b2", dec[i].ff.b2);
    }
    add_vec("dec_norm", dec_norm);
    add_mat("out_proj", out_proj);
    add_vec("out_bias", out_bias);
    return out;
}

template <typename S>
std::vector<TensorView<const S>> ModelParams<S>::tensors() const {
    auto views = const_cast<ModelParams<S>*>(this)->tensors();
    std::vector<TensorView<const S>> out;
    out.reserve(views.size());
    for (auto& v : views) out.push_back({v.name, v.data, v.size});
    return out;
}

template <typename S>
size_t ModelParams<S>::parameter_count() const {
    size_t n = 0;
    for (const auto& t : tensors()) n += t.size;
    return n;
}

template <typename S>
void ModelParams<S>::set_zero() {
    for (auto& t : tensors()) std::fill(t.data, t.data + t.size, S{0});
}

template <typename S>
template <typename T>
ModelParams<T> ModelParams<S>::cast() const {
    ModelParams<T> out = ModelParams<T>::zeros(config);
    auto src = tensors();
    auto dst = out.tensors();
    for (size_t i = 0; i < src.size(); ++i) {
        for (size_t k = 0; k < src[i].size; ++k) {
            dst[i].data[k] = static_cast<T>(src[i].data[k]);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forward/backward building blocks
// ---------------------------------------------------------------------------

namespace detail {

constexpr double kNormEps = 1e-6;

enum class MaskKind { AllValid, Causal, Custom };

template <typename S>
struct NormCache {
    Mat<S> x;        // pre-norm input
    Vec<S> inv_rms;  // per row
};

template <typename S>
struct AttnCache {
    Mat<S> query_in, key_in;    // normed inputs
    Mat<S> q, k, v;             // post-projection
    std::vector<Mat<S>> probs;  // per head
    Mat<S> ctx;                 // pre-output-projection
};

template <typename S>
struct FfCache {
    Mat<S> x;    // normed input
    Mat<S> pre;  // pre-activation
};

template <typename S>
struct EncLayerCache {
    NormCache<S> n1;
    AttnCache<S> attn;
    NormCache<S> n2;
    FfCache<S> ff;
};

template <typename S>
struct DecLayerCache {
    NormCache<S> n1;
    AttnCache<S> self;
    NormCache<S> n2;
    AttnCache<S> cross;
    NormCache<S> n3;
    FfCache<S> ff;
};

/// Sinusoidal absolute positions for the given position indices. The
/// wavelength base is sized for short sequences; the classic 10000 would
/// leave most dimensions near-constant at these lengths.
constexpr double kPosBase = 100.0;

template <typename S>
Mat<S> positional_encoding(const std::vector<int>& positions, int d) {
    Mat<S> pe(static_cast<Eigen::Index>(positions.size()), d);
    for (size_t r = 0; r < positions.size(); ++r) {
        const double pos = static_cast<double>(positions[r]);
        for (int c = 0; c < d; ++c) {
            const double freq = std::pow(kPosBase, -2.0 * (c / 2) / static_cast<double>(d));
            const double angle = pos * freq;
            pe(static_cast<Eigen::Index>(r), c) =
                static_cast<S>((c % 2 == 0) ? std::sin(angle) : std::cos(angle));
        }
    }
    return pe;
}

template <typename S>
Mat<S> embed_tokens(const ModelParams<S>& p, const std::vector<int>& ids,
                    const std::vector<int>& positions) {
    const int d = p.config.d_model;
    const S scale = static_cast<S>(std::sqrt(static_cast<double>(d)));
    Mat<S> x(static_cast<Eigen::Index>(ids.size()), d);
    for (size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] < 0 || ids[r] >= p.config.vocab_size) {
            throw std::invalid_argument("token id out of range: " + std::to_string(ids[r]));
        }
        x.row(static_cast<Eigen::Index>(r)) = p.embedding.row(ids[r]) * scale;
    }
    x += positional_encoding<S>(positions, d);
    return x;
}

template <typename S>
Mat<S> rms_norm_forward(const Mat<S>& x, const Vec<S>& gain, NormCache<S>* cache) {
    const Eigen::Index rows = x.rows(), d = x.cols();
    Mat<S> y(rows, d);
    Vec<S> inv_rms(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double ms = static_cast<double>(x.row(i).squaredNorm()) / static_cast<double>(d);
        const S ir = static_cast<S>(1.0 / std::sqrt(ms + kNormEps));
        inv_rms(i) = ir;
        y.row(i) = (x.row(i) * ir).cwiseProduct(gain.transpose());
    }
    if (cache) {
        cache->x = x;
        cache->inv_rms = std::move(inv_rms);
    }
    return y;
}

template <typename S>
void rms_norm_backward(const Vec<S>& gain, const NormCache<S>& cache, const Mat<S>& dy,
                       Vec<S>& dgain, Mat<S>& dx_acc) {
    const Eigen::Index rows = cache.x.rows(), d = cache.x.cols();
    for (Eigen::Index i = 0; i < rows; ++i) {
        const S ir = cache.inv_rms(i);
        auto xr = cache.x.row(i);
        auto dyr = dy.row(i);
        dgain += (dyr.cwiseProduct(xr) * ir).transpose();
        Eigen::Matrix<S, 1, Eigen::Dynamic> a = dyr.cwiseProduct(gain.transpose());
        const S dot = a.dot(xr);
        dx_acc.row(i) += a * ir - xr * (dot * ir * ir * ir / static_cast<S>(d));
    }
}

inline void account_scores(Eigen::Index rq, Eigen::Index rk) {
    if (g_attn_accounting) {
        const long long e = static_cast<long long>(rq) * static_cast<long long>(rk);
        g_attn_accounting->score_elements += e;
        g_attn_accounting->peak_single = std::max(g_attn_accounting->peak_single, e);
    }
}

/// Multi-head attention. key_valid may be empty (all keys valid). Query
/// rows with no allowed key produce a zero output row.
template <typename S>
Mat<S> attention_forward(const AttnWeights<S>& w, int n_heads, const Mat<S>& query_in,
                         const Mat<S>& key_in, const std::vector<uint8_t>& key_valid,
                         MaskKind kind, const AttentionMask* custom, AttnCache<S>* cache) {
    const Eigen::Index rq = query_in.rows(), rk = key_in.rows(), d = query_in.cols();
    const int hd = static_cast<int>(d) / n_heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

    Mat<S> q(rq, d), k(rk, d), v(rk, d), ctx(rq, d);
    q.noalias() = query_in * w.wq;
    k.noalias() = key_in * w.wk;
    v.noalias() = key_in * w.wv;

    auto allowed = [&](Eigen::Index i, Eigen::Index j) -> bool {
        if (!key_valid.empty() && !key_valid[static_cast<size_t>(j)]) return false;
        switch (kind) {
            case MaskKind::AllValid: return true;
            case MaskKind::Causal: return j <= i;
            case MaskKind::Custom: return custom->at(static_cast<int>(i), static_cast<int>(j));
        }
        return true;
    };

    if (cache) cache->probs.resize(static_cast<size_t>(n_heads));
    Mat<S> scores(rq, rk);
    for (int h = 0; h < n_heads; ++h) {
        auto qh = q.middleCols(h * hd, hd);
        auto kh = k.middleCols(h * hd, hd);
        auto vh = v.middleCols(h * hd, hd);
        scores.noalias() = qh * kh.transpose();
        scores *= scale;
        account_scores(rq, rk);
        // Masked softmax per query row; masked entries become exact zeros.
        for (Eigen::Index i = 0; i < rq; ++i) {
            S max_s = std::numeric_limits<S>::lowest();
            bool any = false;
            for (Eigen::Index j = 0; j < rk; ++j) {
                if (allowed(i, j)) {
                    any = true;
                    max_s = std::max(max_s, scores(i, j));
                }
            }
            if (!any) {
                scores.row(i).setZero();
                continue;
            }
            S sum = S{0};
            for (Eigen::Index j = 0; j < rk; ++j) {
                if (allowed(i, j)) {
                    const S e = std::exp(scores(i, j) - max_s);
                    scores(i, j) = e;
                    sum += e;
                } else {
                    scores(i, j) = S{0};
                }
            }
            scores.row(i) /= sum;
        }
        ctx.middleCols(h * hd, hd).noalias() = scores * vh;
        if (cache) cache->probs[static_cast<size_t>(h)] = scores;
    }

    Mat<S> out(rq, d);
    out.noalias() = ctx * w.wo;
    if (cache) {
        cache->query_in = query_in;
        cache->key_in = key_in;
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->ctx = std::move(ctx);
    }
    return out;
}

template <typename S>
void attention_backward(const AttnWeights<S>& w, int n_heads, const AttnCache<S>& cache,
                        const Mat<S>& dout, AttnWeights<S>& gw, Mat<S>& dquery_acc,
                        Mat<S>& dkey_acc) {
    const Eigen::Index rq = cache.query_in.rows(), rk = cache.key_in.rows(),
                       d = cache.query_in.cols();
    const int hd = static_cast<int>(d) / n_heads;
    const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(hd)));

    gw.wo.noalias() += cache.ctx.transpose() * dout;
    Mat<S> dctx(rq, d);
    dctx.noalias() = dout * w.wo.transpose();

    Mat<S> dq = Mat<S>::Zero(rq, d), dk = Mat<S>::Zero(rk, d), dv = Mat<S>::Zero(rk, d);
    Mat<S> dprobs(rq, rk), dscores(rq, rk);
    for (int h = 0; h < n_heads; ++h) {
        const Mat<S>& probs = cache.probs[static_cast<size_t>(h)];
        auto dctx_h = dctx.middleCols(h * hd, hd);
        auto qh = cache.q.middleCols(h * hd, hd);
        auto kh = cache.k.middleCols(h * hd, hd);
        auto vh = cache.v.middleCols(h * hd, hd);

        dprobs.noalias() = dctx_h * vh.transpose();
        dv.middleCols(h * hd, hd).noalias() += probs.transpose() * dctx_h;
        // Softmax backward; fully masked rows have all-zero probs and yield
        // zero dscores.
        for (Eigen::Index i = 0; i < rq; ++i) {
            auto pr = probs.row(i);
            auto dpr = dprobs.row(i);
            const S inner = pr.dot(dpr);
            dscores.row(i) = pr.cwiseProduct(dpr) - pr * inner;
        }
        dq.middleCols(h * hd, hd).noalias() += dscores * kh * scale;
        dk.middleCols(h * hd, hd).noalias() += dscores.transpose() * qh * scale;
    }

    gw.wq.noalias() += cache.query_in.transpose() * dq;
    gw.wk.noalias() += cache.key_in.transpose() * dk;
    gw.wv.noalias() += cache.key_in.transpose() * dv;
    dquery_acc.noalias() += dq * w.wq.transpose();
    dkey_acc.noalias() += dk * w.wk.transpose();
    dkey_acc.noalias() += dv * w.wv.transpose();
}

template <typename S>
Mat<S> ff_forward(const FfWeights<S>& w, const Mat<S>& x, FfCache<S>* cache) {
    Mat<S> pre = (x * w.w1).rowwise() + w.b1.transpose();
    Mat<S> act = pre.cwiseMax(S{0});
    Mat<S> y = (act * w.w2).rowwise() + w.b2.transpose();
    if (cache) {
        cache->x = x;
        cache->pre = std::move(pre);
    }
    return y;
}

template <typename S>
void ff_backward(const FfWeights<S>& w, const FfCache<S>& cache, const Mat<S>& dy,
                 FfWeights<S>& gw, Mat<S>& dx_acc) {
    Mat<S> act = cache.pre.cwiseMax(S{0});
    gw.w2.noalias() += act.transpose() * dy;
    gw.b2 += dy.colwise().sum().transpose();
    Mat<S> dpre(dy.rows(), cache.pre.cols());
    dpre.noalias() = dy * w.w2.transpose();
    dpre = dpre.cwiseProduct((cache.pre.array() > S{0}).template cast<S>().matrix());
    gw.w1.noalias() += cache.x.transpose() * dpre;
    gw.b1 += dpre.colwise().sum().transpose();
    dx_acc.noalias() += dpre * w.w1.transpose();
}

// ---------------------------------------------------------------------------
// Encoder / decoder stacks
// ---------------------------------------------------------------------------

template <typename S>
struct SegCache {
    std::vector<int> ids;
    std::vector<uint8_t> valid;
    std::vector<EncLayerCache<S>> layers;
    NormCache<S> final_norm;
};

template <typename S>
Mat<S> encoder_stack_forward(const ModelParams<S>& p, const std::vector<int>& ids,
                             const std::vector<int>& positions,
                             const std::vector<uint8_t>& valid, MaskKind kind,
                             const AttentionMask* mask, SegCache<S>* cache) {
    Mat<S> x = embed_tokens(p, ids, positions);
    if (cache) {
        cache->ids = ids;
        cache->valid = valid;
        cache->layers.resize(p.enc.size());
    }
    for (size_t li = 0; li < p.enc.size(); ++li) {
        const auto& layer = p.enc[li];
        EncLayerCache<S>* lc = cache ? &cache->layers[li] : nullptr;
        Mat<S> y1 = rms_norm_forward(x, layer.norm1, lc ? &lc->n1 : nullptr);
        x += attention_forward(layer.attn, p.config.n_heads, y1, y1, valid, kind, mask,
                               lc ? &lc->attn : nullptr);
        Mat<S> y2 = rms_norm_forward(x, layer.norm2, lc ? &lc->n2 : nullptr);
        x += ff_forward(layer.ff, y2, lc ? &lc->ff : nullptr);
    }
    return rms_norm_forward(x, p.enc_norm, cache ? &cache->final_norm : nullptr);
}

template <typename S>
void encoder_stack_backward(const ModelParams<S>& p, const SegCache<S>& cache,
                            const Mat<S>& dh, ModelParams<S>& grads) {
    const Eigen::Index rows = dh.rows();
    const Eigen::Index d = dh.cols();
    Mat<S> g = Mat<S>::Zero(rows, d);
    rms_norm_backward(p.enc_norm, cache.final_norm, dh, grads.enc_norm, g);

    for (size_t li = p.enc.size(); li-- > 0;) {
        const auto& layer = p.enc[li];
        auto& glayer = grads.enc[li];
        const auto& lc = cache.layers[li];

        Mat<S> dy2 = Mat<S>::Zero(rows, d);
        ff_backward(layer.ff, lc.ff, g, glayer.ff, dy2);
        rms_norm_backward(layer.norm2, lc.n2, dy2, glayer.norm2, g);

        Mat<S> dy1 = Mat<S>::Zero(rows, d);
        attention_backward(layer.attn, p.config.n_heads, lc.attn, g, glayer.attn, dy1, dy1);
        rms_norm_backward(layer.norm1, lc.n1, dy1, glayer.norm1, g);
    }

    const S scale = static_cast<S>(std::sqrt(static_cast<double>(p.config.d_model)));
    for (size_t r = 0; r < cache.ids.size(); ++r) {
        grads.embedding.row(cache.ids[r]) += g.row(static_cast<Eigen::Index>(r)) * scale;
    }
}

template <typename S>
struct DecCache {
    std::vector<int> ids;
    std::vector<uint8_t> h_valid;
    std::vector<DecLayerCache<S>> layers;
    NormCache<S> final_norm;
    Mat<S> final_y;  // post final norm, input to the output projection
};

template <typename S>
Mat<S> decoder_stack_forward(const ModelParams<S>& p, const Mat<S>& h,
                             const std::vector<uint8_t>& h_valid,
                             const std::vector<int>& ids, DecCache<S>* cache) {
    std::vector<int> positions(ids.size());
    for (size_t i = 0; i < ids.size(); ++i) positions[i] = static_cast<int>(i);
    Mat<S> x = embed_tokens(p, ids, positions);
    if (cache) {
        cache->ids = ids;
        cache->h_valid = h_valid;
        cache->layers.resize(p.dec.size());
    }
    const std::vector<uint8_t> no_mask;  // self-attention keys all usable
    for (size_t li = 0; li < p.dec.size(); ++li) {
        const auto& layer = p.dec[li];
        DecLayerCache<S>* lc = cache ? &cache->layers[li] : nullptr;
        Mat<S> y1 = rms_norm_forward(x, layer.norm1, lc ? &lc->n1 : nullptr);
        x += attention_forward(layer.self_attn, p.config.n_heads, y1, y1, no_mask,
                               MaskKind::Causal, nullptr, lc ? &lc->self : nullptr);
        Mat<S> y2 = rms_norm_forward(x, layer.norm2, lc ? &lc->n2 : nullptr);
        x += attention_forward(layer.cross_attn, p.config.n_heads, y2, h, h_valid,
                               MaskKind::AllValid, nullptr, lc ? &lc->cross : nullptr);
        Mat<S> y3 = rms_norm_forward(x, layer.norm3, lc ? &lc->n3 : nullptr);
        x += ff_forward(layer.ff, y3, lc ? &lc->ff : nullptr);
    }
    Mat<S> y = rms_norm_forward(x, p.dec_norm, cache ? &cache->final_norm : nullptr);
    Mat<S> logits = (y * p.out_proj.transpose()).rowwise() + p.out_bias.transpose();
    if (cache) cache->final_y = std::move(y);
    return logits;
}

/// Backward through the decoder stack. dh_acc receives the gradient with
/// respect to the encoder states (same shape as h).
template <typename S>
void decoder_stack_backward(const ModelParams<S>& p, const DecCache<S>& cache,
                            const Mat<S>& dlogits, ModelParams<S>& grads, Mat<S>& dh_acc) {
    const Eigen::Index rows = dlogits.rows();
    const Eigen::Index d = p.config.d_model;

    grads.out_proj.noalias() += dlogits.transpose() * cache.final_y;
    grads.out_bias += dlogits.colwise().sum().transpose();
    Mat<S> dy(rows, d);
    dy.noalias() = dlogits * p.out_proj;

    Mat<S> g = Mat<S>::Zero(rows, d);
    rms_norm_backward(p.dec_norm, cache.final_norm, dy, grads.dec_norm, g);

    for (size_t li = p.dec.size(); li-- > 0;) {
        const auto& layer = p.dec[li];
        auto& glayer = grads.dec[li];
        const auto& lc = cache.layers[li];

        Mat<S> dy3 = Mat<S>::Zero(rows, d);
        ff_backward(layer.ff, lc.ff, g, glayer.ff, dy3);
        rms_norm_backward(layer.norm3, lc.n3, dy3, glayer.norm3, g);

        Mat<S> dy2 = Mat<S>::Zero(rows, d);
        attention_backward(layer.cross_attn, p.config.n_heads, lc.cross, g, glayer.cross_attn,
                           dy2, dh_acc);
        rms_norm_backward(layer.norm2, lc.n2, dy2, glayer.norm2, g);

        Mat<S> dy1 = Mat<S>::Zero(rows, d);
        attention_backward(layer.self_attn, p.config.n_heads, lc.self, g, glayer.self_attn,
                           dy1, dy1);
        rms_norm_backward(layer.norm1, lc.n1, dy1, glayer.norm1, g);
    }

    const S scale = static_cast<S>(std::sqrt(static_cast<double>(p.config.d_model)));
    for (size_t r = 0; r < cache.ids.size(); ++r) {
        grads.embedding.row(cache.ids[r]) += g.row(static_cast<Eigen::Index>(r)) * scale;
    }
}

inline void validate_bundle(const ModelConfig& cfg, const TokenizedBundle& bundle) {
    if (bundle.empty()) throw std::invalid_argument("bundle has no sequences");
    if (static_cast<int>(bundle.size()) > cfg.n_max) {
        throw std::invalid_argument("bundle has " + std::to_string(bundle.size()) +
                                    " sequences, n_max is " + std::to_string(cfg.n_max));
    }
    for (const TokenSeq& seq : bundle) {
        if (seq.len() != cfg.l) {
            throw std::invalid_argument("sequence length " + std::to_string(seq.len()) +
                                        " does not match l=" + std::to_string(cfg.l));
        }
    }
}

inline std::vector<uint8_t> seq_valid_flags(const TokenSeq& seq) {
    std::vector<uint8_t> v(static_cast<size_t>(seq.len()));
    for (int i = 0; i < seq.len(); ++i) v[static_cast<size_t>(i)] = i < seq.true_len ? 1 : 0;
    return v;
}

/// Caches for a whole encoder pass: one segment per independent forward.
template <typename S>
struct EncoderCache {
    EncoderMode mode = EncoderMode::Sparse;
    int n = 0;
    int l = 0;
    std::vector<SegCache<S>> segments;       // one per encoded sequence (or one, full)
    std::vector<int> segment_row_offset;     // row offset of each segment's block
    std::vector<bool> segment_skipped;       // all-pad sequences are not run
};

template <typename S>
EncoderStates<S> encode_cached(const ModelParams<S>& p, const TokenizedBundle& bundle,
                               EncoderMode mode, EncoderCache<S>* cache) {
    validate_bundle(p.config, bundle);
    const int n = static_cast<int>(bundle.size());
    const int l = p.config.l;
    const int d = p.config.d_model;
    if (cache) {
        cache->mode = mode;
        cache->n = n;
        cache->l = l;
        cache->segments.clear();
        cache->segment_row_offset.clear();
        cache->segment_skipped.assign(static_cast<size_t>(n), false);
    }

    if (mode == EncoderMode::Full) {
        std::vector<int> ids, positions;
        std::vector<uint8_t> valid;
        ids.reserve(static_cast<size_t>(n) * l);
        positions.reserve(ids.capacity());
        valid.reserve(ids.capacity());
        for (const TokenSeq& seq : bundle) {
            for (int i = 0; i < l; ++i) {
                ids.push_back(seq.ids[static_cast<size_t>(i)]);
                positions.push_back(static_cast<int>(positions.size()));
                valid.push_back(i < seq.true_len ? 1 : 0);
            }
        }
        EncoderStates<S> out;
        if (cache) {
            cache->segments.resize(1);
            cache->segment_row_offset = {0};
        }
        out.h = encoder_stack_forward(p, ids, positions, valid, MaskKind::AllValid, nullptr,
                                      cache ? &cache->segments[0] : nullptr);
        out.valid = std::move(valid);
        return out;
    }

    // Sparse and avg-pool: each sequence encoded independently with
    // positions restarting at 0.
    std::vector<int> positions(static_cast<size_t>(l));
    for (int i = 0; i < l; ++i) positions[static_cast<size_t>(i)] = i;

    EncoderStates<S> out;
    const bool avg = mode == EncoderMode::AvgPool;
    const int rows = avg ? l : n * l;
    out.h = Mat<S>::Zero(rows, d);
    out.valid.assign(static_cast<size_t>(rows), 0);

    for (int s = 0; s < n; ++s) {
        const TokenSeq& seq = bundle[static_cast<size_t>(s)];
        std::vector<uint8_t> valid = seq_valid_flags(seq);
        if (seq.true_len == 0) {
            // Nothing to attend to; block stays zero and invalid.
            if (cache) {
                cache->segments.emplace_back();
                cache->segment_row_offset.push_back(avg ? 0 : s * l);
                cache->segment_skipped[static_cast<size_t>(s)] = true;
            }
            continue;
        }
        SegCache<S>* sc = nullptr;
        if (cache) {
            cache->segments.emplace_back();
            cache->segment_row_offset.push_back(avg ? 0 : s * l);
            sc = &cache->segments.back();
        }
        Mat<S> block = encoder_stack_forward(p, seq.ids, positions, valid,
                                             MaskKind::AllValid, nullptr, sc);
        if (avg) {
            out.h += block;
            for (int i = 0; i < l; ++i) {
                if (valid[static_cast<size_t>(i)]) out.valid[static_cast<size_t>(i)] = 1;
            }
        } else {
            out.h.middleRows(static_cast<Eigen::Index>(s) * l, l) = block;
            for (int i = 0; i < l; ++i) {
                out.valid[static_cast<size_t>(s * l + i)] = valid[static_cast<size_t>(i)];
            }
        }
    }
    if (avg) out.h /= static_cast<S>(n);
    return out;
}

template <typename S>
void encoder_backward_cached(const ModelParams<S>& p, const EncoderCache<S>& cache,
                             const Mat<S>& dh, ModelParams<S>& grads) {
    if (cache.mode == EncoderMode::Full) {
        encoder_stack_backward(p, cache.segments[0], dh, grads);
        return;
    }
    const int l = cache.l;
    size_t seg_idx = 0;
    for (int s = 0; s < cache.n; ++s) {
        if (cache.segment_skipped[static_cast<size_t>(s)]) {
            ++seg_idx;
            continue;
        }
        const SegCache<S>& seg = cache.segments[seg_idx];
        if (cache.mode == EncoderMode::AvgPool) {
            Mat<S> dseg = dh / static_cast<S>(cache.n);
            encoder_stack_backward(p, seg, dseg, grads);
        } else {
            Mat<S> dseg = dh.middleRows(static_cast<Eigen::Index>(s) * l, l);
            encoder_stack_backward(p, seg, dseg, grads);
        }
        ++seg_idx;
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Public forward API
// ---------------------------------------------------------------------------

template <typename S>
EncoderStates<S> encode_full(const ModelParams<S>& params, const TokenizedBundle& bundle) {
    return detail::encode_cached<S>(params, bundle, EncoderMode::Full, nullptr);
}

template <typename S>
EncoderStates<S> encode_sparse(const ModelParams<S>& params, const TokenizedBundle& bundle) {
    return detail::encode_cached<S>(params, bundle, EncoderMode::Sparse, nullptr);
}

template <typename S>
EncoderStates<S> encode_avg_pool(const ModelParams<S>& params, const TokenizedBundle& bundle) {
    return detail::encode_cached<S>(params, bundle, EncoderMode::AvgPool, nullptr);
}

template <typename S>
EncoderStates<S> encode(const ModelParams<S>& params, const TokenizedBundle& bundle,
                        EncoderMode mode) {
    return detail::encode_cached<S>(params, bundle, mode, nullptr);
}

template <typename S>
EncoderStates<S> encode_full_with_mask(const ModelParams<S>& params,
                                       const TokenizedBundle& bundle,
                                       const AttentionMask& mask,
                                       bool per_sequence_positions) {
    detail::validate_bundle(params.config, bundle);
    const int n = static_cast<int>(bundle.size());
    const int l = params.config.l;
    if (mask.rows != n * l || mask.cols != n * l) {
        throw std::invalid_argument("mask shape does not match bundle");
    }
    std::vector<int> ids, positions;
    std::vector<uint8_t> valid;
    for (int s = 0; s < n; ++s) {
        const TokenSeq& seq = bundle[static_cast<size_t>(s)];
        for (int i = 0; i < l; ++i) {
            ids.push_back(seq.ids[static_cast<size_t>(i)]);
            positions.push_back(per_sequence_positions ? i : s * l + i);
            valid.push_back(i < seq.true_len ? 1 : 0);
        }
    }
    EncoderStates<S> out;
    out.h = detail::encoder_stack_forward<S>(params, ids, positions, valid,
                                             detail::MaskKind::Custom, &mask, nullptr);
    out.valid = std::move(valid);
    return out;
}

template <typename S>
Mat<S> decoder_forward(const ModelParams<S>& params, const EncoderStates<S>& h,
                       const TokenSeq& prompt_tokens) {
    if (prompt_tokens.ids.empty()) {
        throw std::invalid_argument("decoder_forward: empty prompt input");
    }
    if (prompt_tokens.len() > params.config.max_prompt_len) {
        throw std::invalid_argument("decoder_forward: prompt longer than max_prompt_len");
    }
    return detail::decoder_stack_forward<S>(params, h.h, h.valid, prompt_tokens.ids, nullptr);
}

template <typename S>
TokenSeq greedy_decode(const ModelParams<S>& params, const EncoderStates<S>& h, int max_len) {
    if (max_len < 2) throw std::invalid_argument("greedy_decode: max_len must be >= 2");
    TokenSeq seq;
    seq.ids = {Vocabulary::kBosId};
    while (static_cast<int>(seq.ids.size()) < max_len) {
        Mat<S> logits = detail::decoder_stack_forward<S>(params, h.h, h.valid, seq.ids, nullptr);
        const Eigen::Index last = logits.rows() - 1;
        int best = 0;
        S best_v = logits(last, 0);
        for (int t = 1; t < params.config.vocab_size; ++t) {
            if (logits(last, t) > best_v) {  // ties keep the lower id
                best_v = logits(last, t);
                best = t;
            }
        }
        seq.ids.push_back(best);
        if (best == Vocabulary::kEosId) break;
    }
    seq.true_len = static_cast<int>(seq.ids.size());
    return seq;
}

}  // namespace promptinv
