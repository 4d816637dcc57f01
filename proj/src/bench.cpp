#include "promptinv/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "promptinv/train.hpp"

namespace promptinv {

long long count_attention_elements(const ModelConfig& cfg, int n, EncoderMode mode) {
    if (n < 1 || n > cfg.n_max) throw std::invalid_argument("count_attention_elements: bad n");
    const long long layers = cfg.enc_layers;
    const long long heads = cfg.n_heads;
    const long long nl = static_cast<long long>(n) * cfg.l;
    if (mode == EncoderMode::Full) return layers * heads * nl * nl;
    // Sparse and avg-pool both encode per sequence: n score matrices of l*l.
    return layers * heads * static_cast<long long>(n) * cfg.l * cfg.l;
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

/// Least-squares slope of log(y) against log(x).
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const size_t n = x.size();
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (size_t i = 0; i < n; ++i) {
        const double lx = std::log(x[i]);
        const double ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    const double denom = static_cast<double>(n) * sxx - sx * sx;
    return (static_cast<double>(n) * sxy - sx * sy) / denom;
}

TrainExample make_bench_example(const ModelConfig& cfg, int n, uint64_t seed) {
    Rng rng(seed);
    TrainExample ex;
    for (int s = 0; s < n; ++s) {
        TokenSeq seq;
        seq.ids.resize(static_cast<size_t>(cfg.l));
        seq.ids[0] = Vocabulary::kBosId;
        for (int i = 1; i + 1 < cfg.l; ++i) {
            seq.ids[static_cast<size_t>(i)] = static_cast<int>(rng.next_below(256));
        }
        seq.ids[static_cast<size_t>(cfg.l - 1)] = Vocabulary::kEosId;
        seq.true_len = cfg.l;
        ex.bundle.push_back(std::move(seq));
    }
    const int plen = std::min(16, cfg.max_prompt_len);
    ex.prompt.ids.resize(static_cast<size_t>(plen));
    ex.prompt.ids[0] = Vocabulary::kBosId;
    for (int i = 1; i + 1 < plen; ++i) {
        ex.prompt.ids[static_cast<size_t>(i)] = static_cast<int>(rng.next_below(256));
    }
    ex.prompt.ids[static_cast<size_t>(plen - 1)] = Vocabulary::kEosId;
    ex.prompt.true_len = plen;
    return ex;
}

}  // namespace

ScalingReport measure_throughput(const ModelConfig& cfg, const std::vector<EncoderMode>& modes,
                                 const std::vector<int>& n_values, int trials, uint64_t seed) {
    if (trials < 3) throw std::invalid_argument("measure_throughput: trials must be >= 3");
    cfg.validate();
    ScalingReport report;
    report.config = cfg;
    report.trials = trials;

    using Clock = std::chrono::steady_clock;
    TrainConfig tcfg;
    tcfg.batch_size = 1;
    tcfg.encoder_mode = "sparse";  // not used directly below

    // Burn-in: run real work until the clock has ramped, so the first timed
    // cell is not measured on a cold core. Order cells n-major with modes
    // adjacent for the same reason.
    {
        ModelParams<float> params = ModelParams<float>::init(cfg, seed ^ 0xbe9c4ull);
        TrainExample ex =
            make_bench_example(cfg, n_values.back(), seed + static_cast<uint64_t>(n_values.back()));
        AdamState<float> state = AdamState<float>::zeros(cfg);
        ModelParams<float> grads = ModelParams<float>::zeros(cfg);
        const auto burn_start = Clock::now();
        while (std::chrono::duration<double>(Clock::now() - burn_start).count() < 0.25) {
            grads.set_zero();
            (void)accumulate_loss_and_grads(params, ex, modes.front(), grads);
            adam_step(params, grads, state, tcfg);
        }
    }

    std::map<std::string, std::vector<double>> xs, fwd_ys, step_ys;
    for (int n : n_values) {
        for (EncoderMode mode : modes) {
            ModelParams<float> params = ModelParams<float>::init(cfg, seed ^ 0xbe9c4ull);
            TrainExample ex = make_bench_example(cfg, n, seed + static_cast<uint64_t>(n));
            AdamState<float> state = AdamState<float>::zeros(cfg);
            ModelParams<float> grads = ModelParams<float>::zeros(cfg);

            // Warm both paths twice before timing.
            for (int w = 0; w < 2; ++w) {
                (void)encode(params, ex.bundle, mode);
                grads.set_zero();
                (void)accumulate_loss_and_grads(params, ex, mode, grads);
                adam_step(params, grads, state, tcfg);
            }

            AttnAccounting acct;
            {
                ScopedAttnAccounting scope(acct);
                (void)encode(params, ex.bundle, mode);
            }

            std::vector<double> fwd_times, step_times;
            for (int t = 0; t < trials; ++t) {
                auto t0 = Clock::now();
                (void)encode(params, ex.bundle, mode);
                fwd_times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());

                t0 = Clock::now();
                grads.set_zero();
                (void)accumulate_loss_and_grads(params, ex, mode, grads);
                adam_step(params, grads, state, tcfg);
                step_times.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
            }

            ScalingPoint pt;
            pt.n = n;
            pt.mode = to_string(mode);
            pt.forward_seconds = median(fwd_times);
            pt.step_seconds = median(step_times);
            pt.score_elements = count_attention_elements(cfg, n, mode);
            pt.measured_elements = acct.score_elements;
            pt.peak_single_elements = acct.peak_single;
            pt.peak_bytes_estimate = acct.peak_single * static_cast<long long>(sizeof(float));
            report.points.push_back(pt);

            const std::string key = to_string(mode);
            xs[key].push_back(static_cast<double>(n));
            fwd_ys[key].push_back(pt.forward_seconds);
            step_ys[key].push_back(pt.step_seconds);
        }
    }
    for (const auto& [key, x] : xs) {
        if (x.size() >= 2) {
            report.forward_growth_exponent[key] = loglog_slope(x, fwd_ys[key]);
            report.step_growth_exponent[key] = loglog_slope(x, step_ys[key]);
        }
    }
    return report;
}

void to_json(nlohmann::json& j, const ScalingReport& r) {
    j = {{"config", r.config},
         {"trials", r.trials},
         {"forward_growth_exponent", r.forward_growth_exponent},
         {"step_growth_exponent", r.step_growth_exponent}};
    j["points"] = nlohmann::json::array();
    for (const auto& p : r.points) {
        j["points"].push_back({{"n", p.n},
                               {"mode", p.mode},
                               {"forward_seconds", p.forward_seconds},
                               {"step_seconds", p.step_seconds},
                               {"score_elements", p.score_elements},
                               {"measured_elements", p.measured_elements},
                               {"peak_single_elements", p.peak_single_elements},
                               {"peak_bytes_estimate", p.peak_bytes_estimate}});
    }
}

std::string scaling_table(const ScalingReport& r) {
    std::ostringstream out;
    out << "n\tmode\tforward_s\tstep_s\tscore_elements\n";
    for (const auto& p : r.points) {
        out << p.n << '\t' << p.mode << '\t' << p.forward_seconds << '\t' << p.step_seconds
            << '\t' << p.score_elements << '\n';
    }
    return out.str();
}

}  // namespace promptinv
