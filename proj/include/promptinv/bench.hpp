#pragma once

#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "promptinv/model.hpp"

namespace promptinv {

/// Attention-score elements one encoder forward materializes, per bundle
/// item, in closed form. Full attention scales with (n*l)^2, the
/// per-sequence modes with n*l^2.
long long count_attention_elements(const ModelConfig& cfg, int n, EncoderMode mode);

struct ScalingPoint {
    int n = 0;
    std::string mode;
    double forward_seconds = 0.0;       // median over trials, encoder forward
    double step_seconds = 0.0;          // median over trials, full training step
    long long score_elements = 0;       // closed form
    long long measured_elements = 0;    // counted by instrumentation
    long long peak_single_elements = 0; // largest single score matrix
    long long peak_bytes_estimate = 0;  // peak transient score allocation
};

struct ScalingReport {
    ModelConfig config;
    int trials = 0;
    std::vector<ScalingPoint> points;
    std::map<std::string, double> forward_growth_exponent;  // per mode, time vs n
    std::map<std::string, double> step_growth_exponent;
};

void to_json(nlohmann::json& j, const ScalingReport& r);

/// Plot-ready tab-separated table: n, mode, forward_s, step_s, elements.
std::string scaling_table(const ScalingReport& r);

/// Times encoder forwards and single-item training steps at each n, reports
/// medians and the least-squares slope of log(time) against log(n).
/// trials must be >= 3; one warmup run precedes measurement.
ScalingReport measure_throughput(const ModelConfig& cfg, const std::vector<EncoderMode>& modes,
                                 const std::vector<int>& n_values, int trials,
                                 uint64_t seed = 0);

}  // namespace promptinv
