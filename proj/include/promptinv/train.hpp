#pragma once

#include <chrono>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <thread>

#include "promptinv/model.hpp"

namespace promptinv {

struct TrainConfig {
    double learning_rate = 2e-4;
    int epochs = 3;
    int batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    uint64_t seed = 0;
    std::string encoder_mode = "sparse";
    int threads = 0;  // 0: hardware concurrency

    void validate() const {
        if (learning_rate <= 0) throw std::invalid_argument("learning_rate must be > 0");
        if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        encoder_mode_from_string(encoder_mode);
    }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
    j = {{"learning_rate", c.learning_rate},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"beta1", c.beta1},
         {"beta2", c.beta2},
         {"epsilon", c.epsilon},
         {"seed", c.seed},
         {"encoder_mode", c.encoder_mode},
         {"threads", c.threads}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
    TrainConfig d;
    c.learning_rate = j.value("learning_rate", d.learning_rate);
    c.epochs = j.value("epochs", d.epochs);
    c.batch_size = j.value("batch_size", d.batch_size);
    c.beta1 = j.value("beta1", d.beta1);
    c.beta2 = j.value("beta2", d.beta2);
    c.epsilon = j.value("epsilon", d.epsilon);
    c.seed = j.value("seed", d.seed);
    c.encoder_mode = j.value("encoder_mode", d.encoder_mode);
    c.threads = j.value("threads", d.threads);
}

struct StepRecord {
    long step = 0;
    double loss = 0.0;
    double seconds = 0.0;
};

struct TrainHistory {
    std::vector<StepRecord> steps;
    std::vector<double> epoch_mean_loss;

    double final_loss() const {
        return epoch_mean_loss.empty() ? 0.0 : epoch_mean_loss.back();
    }
};

struct TrainError : std::runtime_error {
    explicit TrainError(const std::string& what, long step = -1)
        : std::runtime_error(what), step(step) {}
    long step;
};

/// One pre-tokenized training pair: the sampled outputs and the prompt that
/// produced them.
struct TrainExample {
    TokenizedBundle bundle;
    TokenSeq prompt;
};

/// Decoder input ids (trimmed to the non-pad prefix) and per-position
/// next-token targets; PAD targets are excluded from the loss.
struct TeacherForced {
    std::vector<int> input_ids;
    std::vector<int> targets;
};

inline TeacherForced teacher_forced_pair(const TokenSeq& prompt) {
    TeacherForced tf;
    const int len = std::max(prompt.true_len, 1);
    tf.input_ids.assign(prompt.ids.begin(), prompt.ids.begin() + len);
    tf.targets.resize(static_cast<size_t>(len));
    for (int t = 0; t + 1 < len; ++t) tf.targets[static_cast<size_t>(t)] = tf.input_ids[t + 1];
    tf.targets[static_cast<size_t>(len - 1)] = Vocabulary::kPadId;
    return tf;
}

namespace detail {

/// Mean token-level cross-entropy over non-pad target positions. When
/// dlogits is given it receives the gradient. Accumulation in double.
template <typename S>
double lm_loss_impl(const Mat<S>& logits, const std::vector<int>& targets, Mat<S>* dlogits) {
    if (static_cast<size_t>(logits.rows()) != targets.size()) {
        throw std::invalid_argument("lm_loss: logits rows must equal targets length");
    }
    int n_valid = 0;
    for (int t : targets) {
        if (t != Vocabulary::kPadId) ++n_valid;
    }
    if (n_valid == 0) throw std::invalid_argument("lm_loss: all-pad targets");
    if (dlogits) *dlogits = Mat<S>::Zero(logits.rows(), logits.cols());

    const double inv_n = 1.0 / static_cast<double>(n_valid);
    double loss = 0.0;
    for (Eigen::Index t = 0; t < logits.rows(); ++t) {
        const int target = targets[static_cast<size_t>(t)];
        if (target == Vocabulary::kPadId) continue;
        if (target < 0 || target >= logits.cols()) {
            throw std::invalid_argument("lm_loss: target id out of range");
        }
        const auto row = logits.row(t);
        double max_v = static_cast<double>(row.maxCoeff());
        double sum = 0.0;
        for (Eigen::Index c = 0; c < row.size(); ++c) {
            sum += std::exp(static_cast<double>(row(c)) - max_v);
        }
        const double lse = max_v + std::log(sum);
        loss += lse - static_cast<double>(row(target));
        if (dlogits) {
            for (Eigen::Index c = 0; c < row.size(); ++c) {
                const double p = std::exp(static_cast<double>(row(c)) - lse);
                (*dlogits)(t, c) = static_cast<S>(p * inv_n);
            }
            (*dlogits)(t, target) -= static_cast<S>(inv_n);
        }
    }
    return loss * inv_n;
}

template <typename S>
void add_params(ModelParams<S>& dst, const ModelParams<S>& src) {
    auto d = dst.tensors();
    auto s = src.tensors();
    for (size_t i = 0; i < d.size(); ++i) {
        for (size_t k = 0; k < d[i].size; ++k) d[i].data[k] += s[i].data[k];
    }
}

template <typename S>
void scale_params(ModelParams<S>& p, S factor) {
    for (auto& t : p.tensors()) {
        for (size_t k = 0; k < t.size; ++k) t.data[k] *= factor;
    }
}

}  // namespace detail

template <typename S>
double lm_loss(const Mat<S>& logits, const std::vector<int>& targets) {
    return detail::lm_loss_impl<S>(logits, targets, nullptr);
}

template <typename S>
double lm_loss(const Mat<S>& logits, const TokenSeq& targets) {
    return detail::lm_loss_impl<S>(logits, targets.ids, nullptr);
}

/// Forward + backward for one example; gradients are added into `grads`
/// (which must be zero- or batch-accumulated ModelParams of the same
/// config). Returns the example's loss.
template <typename S>
double accumulate_loss_and_grads(const ModelParams<S>& params, const TrainExample& ex,
                                 EncoderMode mode, ModelParams<S>& grads) {
    detail::EncoderCache<S> enc_cache;
    EncoderStates<S> h = detail::encode_cached(params, ex.bundle, mode, &enc_cache);
    const TeacherForced tf = teacher_forced_pair(ex.prompt);
    detail::DecCache<S> dec_cache;
    Mat<S> logits =
        detail::decoder_stack_forward(params, h.h, h.valid, tf.input_ids, &dec_cache);
    Mat<S> dlogits;
    const double loss = detail::lm_loss_impl(logits, tf.targets, &dlogits);
    Mat<S> dh = Mat<S>::Zero(h.h.rows(), h.h.cols());
    detail::decoder_stack_backward(params, dec_cache, dlogits, grads, dh);
    detail::encoder_backward_cached(params, enc_cache, dh, grads);
    return loss;
}

/// Loss only, no caches kept.
template <typename S>
double example_loss(const ModelParams<S>& params, const TrainExample& ex, EncoderMode mode) {
    EncoderStates<S> h = encode(params, ex.bundle, mode);
    const TeacherForced tf = teacher_forced_pair(ex.prompt);
    Mat<S> logits = detail::decoder_stack_forward<S>(params, h.h, h.valid, tf.input_ids, nullptr);
    return detail::lm_loss_impl<S>(logits, tf.targets, nullptr);
}

template <typename S>
struct AdamState {
    ModelParams<S> m;
    ModelParams<S> v;
    long t = 0;

    static AdamState zeros(const ModelConfig& cfg) {
        return {ModelParams<S>::zeros(cfg), ModelParams<S>::zeros(cfg), 0};
    }
};

/// Standard Adam update with bias correction at a constant learning rate.
/// A non-finite gradient aborts the step before any state is touched.
template <typename S>
void adam_step(ModelParams<S>& params, const ModelParams<S>& grads, AdamState<S>& state,
               const TrainConfig& cfg) {
    auto g = grads.tensors();
    for (const auto& t : g) {
        for (size_t k = 0; k < t.size; ++k) {
            if (!std::isfinite(static_cast<double>(t.data[k]))) {
                throw TrainError("non-finite gradient in " + t.name);
            }
        }
    }
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    auto p = params.tensors();
    auto m = state.m.tensors();
    auto v = state.v.tensors();
    const S b1 = static_cast<S>(cfg.beta1), b2 = static_cast<S>(cfg.beta2);
    const S lr = static_cast<S>(cfg.learning_rate), eps = static_cast<S>(cfg.epsilon);
    for (size_t i = 0; i < p.size(); ++i) {
        for (size_t k = 0; k < p[i].size; ++k) {
            const S gk = g[i].data[k];
            S& mk = m[i].data[k];
            S& vk = v[i].data[k];
            mk = b1 * mk + (S{1} - b1) * gk;
            vk = b2 * vk + (S{1} - b2) * gk * gk;
            const S mhat = mk / static_cast<S>(bc1);
            const S vhat = vk / static_cast<S>(bc2);
            p[i].data[k] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
}

/// Teacher-forced training over the corpus. Per-epoch shuffles and the
/// whole run are deterministic given the seed: batch items are partitioned
/// into fixed index blocks per worker and per-worker gradients are reduced
/// in worker order, so the result does not depend on scheduling.
template <typename S>
TrainHistory fit(ModelParams<S>& params, const std::vector<TrainExample>& corpus,
                 const TrainConfig& cfg, long start_step = 0) {
    cfg.validate();
    if (corpus.empty()) throw std::invalid_argument("fit: corpus is empty");
    const EncoderMode mode = encoder_mode_from_string(cfg.encoder_mode);

    int hw = static_cast<int>(std::thread::hardware_concurrency());
    const int n_threads = std::max(1, cfg.threads > 0 ? cfg.threads : hw);

    AdamState<S> state = AdamState<S>::zeros(params.config);
    // One gradient buffer per batch item, folded in item order after the
    // parallel section, so results cannot depend on the worker count.
    const size_t max_batch = std::min(static_cast<size_t>(cfg.batch_size), corpus.size());
    std::vector<ModelParams<S>> item_grads;
    for (size_t i = 0; i < max_batch; ++i) item_grads.push_back(ModelParams<S>::zeros(params.config));
    std::vector<double> item_loss(max_batch, 0.0);

    TrainHistory history;
    long step = start_step;
    std::vector<size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Rng rng(cfg.seed ^ (0x65706f6368ull + static_cast<uint64_t>(epoch) * 0x9e3779b97f4a7c15ull));
        rng.shuffle(order);
        double epoch_loss = 0.0;
        size_t epoch_steps = 0;

        for (size_t b0 = 0; b0 < order.size(); b0 += static_cast<size_t>(cfg.batch_size)) {
            const auto t_start = std::chrono::steady_clock::now();
            const size_t bsz = std::min(static_cast<size_t>(cfg.batch_size), order.size() - b0);
            const int workers = static_cast<int>(std::min<size_t>(n_threads, bsz));

            auto run_worker = [&](int w) {
                for (size_t i = static_cast<size_t>(w); i < bsz; i += static_cast<size_t>(workers)) {
                    item_grads[i].set_zero();
                    item_loss[i] =
                        accumulate_loss_and_grads(params, corpus[order[b0 + i]], mode, item_grads[i]);
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
            double loss_sum = item_loss[0];
            for (size_t i = 1; i < bsz; ++i) {
                detail::add_params(item_grads[0], item_grads[i]);
                loss_sum += item_loss[i];
            }
            detail::scale_params(item_grads[0], static_cast<S>(1.0 / static_cast<double>(bsz)));
            const double loss = loss_sum / static_cast<double>(bsz);
            if (!std::isfinite(loss)) {
                throw TrainError("non-finite loss at step " + std::to_string(step + 1), step + 1);
            }
            try {
                adam_step(params, item_grads[0], state, cfg);
            } catch (const TrainError& e) {
                throw TrainError(std::string(e.what()) + " at step " + std::to_string(step + 1),
                                 step + 1);
            }
            ++step;
            const double secs =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
            history.steps.push_back({step, loss, secs});
            epoch_loss += loss;
            ++epoch_steps;
        }
        history.epoch_mean_loss.push_back(epoch_loss / static_cast<double>(epoch_steps));
    }
    return history;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    double mean_abs_error = 0.0;
    size_t coords = 0;
    std::map<std::string, double> family_max_rel;  // per parameter tensor
};

/// Central finite differences against the analytic gradient on randomly
/// sampled coordinates covering every parameter tensor. 64-bit only.
inline GradCheckReport grad_check(const ModelParams<double>& params, const TrainExample& batch,
                                  EncoderMode mode, double eps, size_t min_coords = 200,
                                  uint64_t seed = 0) {
    if (eps < 1e-7 || eps > 1e-3) {
        throw std::invalid_argument("grad_check: eps must lie in [1e-7, 1e-3]");
    }
    ModelParams<double> grads = ModelParams<double>::zeros(params.config);
    accumulate_loss_and_grads(params, batch, mode, grads);

    ModelParams<double> work = params;
    auto wt = work.tensors();
    auto gt = grads.tensors();
    const size_t per_tensor = (min_coords + wt.size() - 1) / wt.size();

    Rng rng(seed ^ 0x67726164ull);
    GradCheckReport report;
    double abs_sum = 0.0;
    for (size_t i = 0; i < wt.size(); ++i) {
        double family_max = 0.0;
        for (size_t c = 0; c < per_tensor; ++c) {
            const size_t idx = rng.next_below(wt[i].size);
            const double orig = wt[i].data[idx];
            wt[i].data[idx] = orig + eps;
            const double lp = example_loss(work, batch, mode);
            wt[i].data[idx] = orig - eps;
            const double lm = example_loss(work, batch, mode);
            wt[i].data[idx] = orig;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double analytic = gt[i].data[idx];
            const double abs_err = std::abs(analytic - numeric);
            const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            const double rel = abs_err / denom;
            family_max = std::max(family_max, rel);
            abs_sum += abs_err;
            ++report.coords;
        }
        report.family_max_rel[wt[i].name] = family_max;
        report.max_rel_error = std::max(report.max_rel_error, family_max);
    }
    report.mean_abs_error = abs_sum / static_cast<double>(report.coords);
    return report;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

struct CheckpointError : std::runtime_error {
    enum class Kind { Version, Shape, Truncated };
    CheckpointError(Kind kind, const std::string& what)
        : std::runtime_error(what), kind(kind) {}
    Kind kind;
};

namespace detail {
constexpr char kCkptMagic[8] = {'P', 'I', 'N', 'V', 'C', 'K', 'P', 'T'};
constexpr uint32_t kCkptVersion = 1;

template <typename S>
const char* dtype_name() {
    if constexpr (sizeof(S) == 4) return "f32";
    else return "f64";
}
}  // namespace detail

struct CheckpointHeader {
    std::string dtype;
    ModelConfig model_config;
    TrainConfig train_config;
    long step = 0;
    size_t param_count = 0;
};

/// Fixed header (magic, version, JSON with configs) followed by the raw
/// little-endian weight arrays in tensor-enumeration order.
template <typename S>
void save_checkpoint(const ModelParams<S>& params, const TrainConfig& train_cfg, long step,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    nlohmann::json header = {{"dtype", detail::dtype_name<S>()},
                             {"model_config", params.config},
                             {"train_config", train_cfg},
                             {"step", step},
                             {"param_count", params.parameter_count()}};
    const std::string hj = header.dump();
    out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
    const uint32_t version = detail::kCkptVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t hlen = hj.size();
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hj.data(), static_cast<std::streamsize>(hj.size()));
    for (const auto& t : params.tensors()) {
        out.write(reinterpret_cast<const char*>(t.data),
                  static_cast<std::streamsize>(t.size * sizeof(S)));
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline CheckpointHeader read_checkpoint_header_stream(std::ifstream& in, const std::string& path) {
    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) ||
        std::memcmp(magic, detail::kCkptMagic, sizeof(magic)) != 0) {
        throw CheckpointError(CheckpointError::Kind::Version,
                              path + ": not a checkpoint (bad magic)");
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != detail::kCkptVersion) {
        throw CheckpointError(CheckpointError::Kind::Version,
                              path + ": unsupported checkpoint version " + std::to_string(version));
    }
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    if (!in || hlen > (1u << 24)) {
        throw CheckpointError(CheckpointError::Kind::Truncated, path + ": bad header length");
    }
    std::string hj(hlen, '\0');
    in.read(hj.data(), static_cast<std::streamsize>(hlen));
    if (static_cast<uint64_t>(in.gcount()) != hlen) {
        throw CheckpointError(CheckpointError::Kind::Truncated, path + ": truncated header");
    }
    nlohmann::json j = nlohmann::json::parse(hj, nullptr, false);
    if (j.is_discarded()) {
        throw CheckpointError(CheckpointError::Kind::Version, path + ": unparseable header");
    }
    CheckpointHeader h;
    h.dtype = j.value("dtype", "f32");
    h.model_config = j.at("model_config").get<ModelConfig>();
    if (j.contains("train_config")) h.train_config = j.at("train_config").get<TrainConfig>();
    h.step = j.value("step", 0l);
    h.param_count = j.value("param_count", size_t{0});
    return h;
}

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    return read_checkpoint_header_stream(in, path);
}

template <typename S>
ModelParams<S> load_checkpoint(const std::string& path, TrainConfig* train_cfg = nullptr,
                               long* step = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open: " + path);
    CheckpointHeader h = read_checkpoint_header_stream(in, path);
    if (h.dtype != detail::dtype_name<S>()) {
        throw CheckpointError(CheckpointError::Kind::Shape,
                              path + ": checkpoint dtype is " + h.dtype);
    }
    ModelParams<S> params = ModelParams<S>::zeros(h.model_config);
    if (h.param_count != params.parameter_count()) {
        throw CheckpointError(CheckpointError::Kind::Shape,
                              path + ": parameter count mismatch");
    }
    for (auto& t : params.tensors()) {
        in.read(reinterpret_cast<char*>(t.data),
                static_cast<std::streamsize>(t.size * sizeof(S)));
        if (static_cast<size_t>(in.gcount()) != t.size * sizeof(S)) {
            throw CheckpointError(CheckpointError::Kind::Truncated,
                                  path + ": truncated weights at " + t.name);
        }
    }
    char extra;
    if (in.read(&extra, 1)) {
        throw CheckpointError(CheckpointError::Kind::Shape, path + ": trailing bytes");
    }
    if (train_cfg) *train_cfg = h.train_config;
    if (step) *step = h.step;
    return params;
}

}  // namespace promptinv
