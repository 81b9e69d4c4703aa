#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exchanger/graph.hpp"
#include "exchanger/model.hpp"

namespace exchanger {

// Vanilla temporal self-attention block used as the quadratic-cost
// comparison arm: pre-norm multi-head self-attention with the same
// untied position term, residual, output projection, and FFN, at the
// same width and head count as the exchanger.
template <typename S>
struct SelfAttentionParams {
    ValuePtr<S> norm1_gain, norm1_bias;
    AttentionProjections<S> attention;
    ValuePtr<S> out_proj;  // [width x width]
    ValuePtr<S> norm2_gain, norm2_bias;
    ValuePtr<S> ffn_fc1_w, ffn_fc1_b;
    ValuePtr<S> ffn_fc2_w, ffn_fc2_b;

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".norm1_gain", norm1_gain);
        fn(prefix + ".norm1_bias", norm1_bias);
        fn(prefix + ".attention.query", attention.query);
        fn(prefix + ".attention.key", attention.key);
        fn(prefix + ".attention.value", attention.value);
        fn(prefix + ".attention.pos_query", attention.pos_query);
        fn(prefix + ".attention.pos_key", attention.pos_key);
        fn(prefix + ".out_proj", out_proj);
        fn(prefix + ".norm2_gain", norm2_gain);
        fn(prefix + ".norm2_bias", norm2_bias);
        fn(prefix + ".ffn_fc1_w", ffn_fc1_w);
        fn(prefix + ".ffn_fc1_b", ffn_fc1_b);
        fn(prefix + ".ffn_fc2_w", ffn_fc2_w);
        fn(prefix + ".ffn_fc2_b", ffn_fc2_b);
    }
};

template <typename S>
SelfAttentionParams<S> init_self_attention_params(const ExchangerConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    const std::int64_t d = cfg.width;
    const std::int64_t hc = cfg.ffn_expansion * d;
    const double proj_std = detail::fan_in_std(d);
    using detail::init_param;
    SelfAttentionParams<S> p;
    p.norm1_gain = init_param<S>("selfattn.norm1_gain", {d}, seed, 0, 1.0, false);
    p.norm1_bias = init_param<S>("selfattn.norm1_bias", {d}, seed, 0, 0.0, false);
    p.attention.query = init_param<S>("selfattn.query", {d, d}, seed, proj_std);
    p.attention.key = init_param<S>("selfattn.key", {d, d}, seed, proj_std);
    p.attention.value = init_param<S>("selfattn.value", {d, d}, seed, proj_std);
    if (cfg.position_queries) {
        p.attention.pos_query = init_param<S>("selfattn.pos_query", {d, d}, seed, proj_std);
        p.attention.pos_key = init_param<S>("selfattn.pos_key", {d, d}, seed, proj_std);
    } else {
        p.attention.pos_query = zeros<S>({d, d}, true);
        p.attention.pos_key = zeros<S>({d, d}, true);
    }
    p.out_proj = init_param<S>("selfattn.out_proj", {d, d}, seed, proj_std);
    p.norm2_gain = init_param<S>("selfattn.norm2_gain", {d}, seed, 0, 1.0, false);
    p.norm2_bias = init_param<S>("selfattn.norm2_bias", {d}, seed, 0, 0.0, false);
    p.ffn_fc1_w = init_param<S>("selfattn.ffn_fc1_w", {d, hc}, seed, proj_std);
    p.ffn_fc1_b = init_param<S>("selfattn.ffn_fc1_b", {hc}, seed, 0, 0.0, false);
    p.ffn_fc2_w = init_param<S>("selfattn.ffn_fc2_w", {hc, d}, seed, detail::fan_in_std(hc));
    p.ffn_fc2_b = init_param<S>("selfattn.ffn_fc2_b", {d}, seed, 0, 0.0, false);
    return p;
}

// Same input/output contract as one exchanger stage: [T x d] tokens and
// positions in, [T x d] out, masked rows suppressed.
template <typename S>
ValuePtr<S> self_attention_forward(GraphT<S>& g, const ExchangerConfig& cfg,
                                   const SelfAttentionParams<S>& p, const ValuePtr<S>& tokens,
                                   const ValuePtr<S>& positions,
                                   const std::vector<std::uint8_t>& mask) {
    if (tokens->rank() != 2 || tokens->shape[1] != cfg.width) {
        throw DimensionError("self_attention: tokens " + shape_str(tokens->shape) + " vs width " +
                             std::to_string(cfg.width));
    }
    bool any_valid = false;
    for (const auto m : mask) any_valid = any_valid || m;
    if (!any_valid) throw DataError("self_attention: every temporal step is masked");

    auto normed = g.layer_norm(tokens, p.norm1_gain, p.norm1_bias, kLayerNormEps);
    auto attended = detail::untied_cross_attention(g, cfg, p.attention, normed, normed, positions,
                                                   positions, detail::key_mask_bias<S>(mask));
    auto x = g.add(tokens, g.matmul(attended, p.out_proj));
    auto normed2 = g.layer_norm(x, p.norm2_gain, p.norm2_bias, kLayerNormEps);
    auto h = g.gelu(detail::linear(g, normed2, p.ffn_fc1_w, p.ffn_fc1_b));
    auto out = g.add(x, detail::linear(g, h, p.ffn_fc2_w, p.ffn_fc2_b));

    bool any_masked = false;
    for (const auto m : mask) any_masked = any_masked || !m;
    if (any_masked) {
        auto row_mask = zeros<S>({out->shape[0], out->shape[1]});
        for (std::int64_t t = 0; t < out->shape[0]; ++t) {
            if (!mask[static_cast<std::size_t>(t)]) continue;
            for (std::int64_t j = 0; j < out->shape[1]; ++j)
                row_mask->values[static_cast<std::size_t>(t * out->shape[1] + j)] = S(1);
        }
        out = g.mul(out, row_mask);
    }
    return out;
}

// Analytic MAC count of the baseline block: quadratic in T.
inline std::uint64_t self_attention_count_flops(const ExchangerConfig& cfg, std::int64_t t_len) {
    cfg.validate();
    if (t_len < 0) throw ContractError("self_attention_count_flops: negative T");
    const std::uint64_t t = static_cast<std::uint64_t>(t_len);
    const std::uint64_t d = static_cast<std::uint64_t>(cfg.width);
    const std::uint64_t hc = static_cast<std::uint64_t>(cfg.ffn_expansion) * d;
    const std::uint64_t pos = cfg.position_queries ? 1 : 0;
    std::uint64_t total = 0;
    total += 3 * t * d * d;          // query/key/value projections
    total += pos * (2 * t * d * d);  // position projections
    total += t * t * d;              // content affinity
    total += pos * (t * t * d);      // position affinity
    total += t * t * d;              // attention application
    total += t * d * d;              // output projection
    total += 2 * t * d * hc;         // FFN
    return total;
}

// One scaling measurement: an encoder at sequence length T.
struct BenchRecord {
    std::string encoder;
    std::int64_t t_len = 0;
    std::int64_t clusters = 0;
    std::int64_t width = 0;
    std::int64_t heads = 0;
    std::uint64_t flops = 0;
    double median_ms = 0;
    double min_ms = 0;
    int repeats = 0;
};

struct ScalingResult {
    std::vector<BenchRecord> records;
    // encoder name -> fitted log-log slope of median wall-clock vs T
    std::vector<std::pair<std::string, double>> slopes;
};

// Least-squares slope of log(y) against log(x).
double fit_loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

// Known encoder names: "exchanger", "self_attention".
ScalingResult run_scaling(const std::vector<std::string>& encoders,
                          const std::vector<std::int64_t>& t_list, const ExchangerConfig& cfg,
                          int repeats, std::uint64_t seed);

// Best-effort pin of the process to one CPU to reduce timing variance.
void pin_to_single_cpu();

std::string bench_records_csv(const std::vector<BenchRecord>& records);

}  // namespace exchanger
