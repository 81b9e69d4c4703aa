#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "exchanger/errors.hpp"
#include "exchanger/graph.hpp"
#include "exchanger/random.hpp"
#include "exchanger/tensor.hpp"

namespace exchanger {

// Temporal encoder configuration. Defaults follow the setting that
// scored best in our reference experiments: 8 cluster tokens and two
// stacked stages, with untied content/position attention enabled.
struct ExchangerConfig {
    std::int64_t width = 64;          // token feature dimension d
    std::int64_t clusters = 8;        // number of content/position queries
    std::int64_t heads = 4;
    std::int64_t stages = 2;
    std::int64_t ffn_expansion = 4;   // channel-mix and FFN hidden = expansion*width
    std::int64_t token_mlp_hidden = 32;  // token-mix hidden width, fixed w.r.t. clusters
    bool position_queries = true;     // false: drop the position attention term

    void validate() const {
        if (width < 1 || clusters < 1 || heads < 1 || stages < 1 || ffn_expansion < 1 ||
            token_mlp_hidden < 1) {
            throw ConfigError("exchanger config: all sizes must be >= 1");
        }
        if (width % heads != 0) {
            throw ConfigError("exchanger config: width " + std::to_string(width) +
                              " not divisible by " + std::to_string(heads) + " heads");
        }
    }
};

constexpr double kLayerNormEps = 1e-5;
constexpr float kMaskLogitBias = -1e9f;  // finite stand-in for -inf on masked keys

// Projections of one cross-attention: content query/key/value plus the
// untied position query/key pair. All are [width x width]; heads are
// column slices.
template <typename S>
struct AttentionProjections {
    ValuePtr<S> query;
    ValuePtr<S> key;
    ValuePtr<S> value;
    ValuePtr<S> pos_query;
    ValuePtr<S> pos_key;
};

template <typename S>
struct ExchangerStageParams {
    ValuePtr<S> content_queries;   // [clusters x width]
    ValuePtr<S> position_queries;  // [clusters x width]

    AttentionProjections<S> collect;

    // Cluster update: token-mixing MLP across clusters, then
    // channel-mixing MLP across features, each behind a layer norm and
    // a residual.
    ValuePtr<S> token_norm_gain, token_norm_bias;
    ValuePtr<S> token_fc1_w, token_fc1_b;  // clusters -> token_mlp_hidden
    ValuePtr<S> token_fc2_w, token_fc2_b;  // token_mlp_hidden -> clusters
    ValuePtr<S> channel_norm_gain, channel_norm_bias;
    ValuePtr<S> channel_fc1_w, channel_fc1_b;  // width -> expansion*width
    ValuePtr<S> channel_fc2_w, channel_fc2_b;  // expansion*width -> width

    AttentionProjections<S> distribute;
    ValuePtr<S> merge_proj;               // [2*width x width]
    ValuePtr<S> ffn_fc1_w, ffn_fc1_b;     // width -> expansion*width
    ValuePtr<S> ffn_fc2_w, ffn_fc2_b;     // expansion*width -> width

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".content_queries", content_queries);
        fn(prefix + ".position_queries", position_queries);
        fn(prefix + ".collect.query", collect.query);
        fn(prefix + ".collect.key", collect.key);
        fn(prefix + ".collect.value", collect.value);
        fn(prefix + ".collect.pos_query", collect.pos_query);
        fn(prefix + ".collect.pos_key", collect.pos_key);
        fn(prefix + ".token_norm_gain", token_norm_gain);
        fn(prefix + ".token_norm_bias", token_norm_bias);
        fn(prefix + ".token_fc1_w", token_fc1_w);
        fn(prefix + ".token_fc1_b", token_fc1_b);
        fn(prefix + ".token_fc2_w", token_fc2_w);
        fn(prefix + ".token_fc2_b", token_fc2_b);
        fn(prefix + ".channel_norm_gain", channel_norm_gain);
        fn(prefix + ".channel_norm_bias", channel_norm_bias);
        fn(prefix + ".channel_fc1_w", channel_fc1_w);
        fn(prefix + ".channel_fc1_b", channel_fc1_b);
        fn(prefix + ".channel_fc2_w", channel_fc2_w);
        fn(prefix + ".channel_fc2_b", channel_fc2_b);
        fn(prefix + ".distribute.query", distribute.query);
        fn(prefix + ".distribute.key", distribute.key);
        fn(prefix + ".distribute.value", distribute.value);
        fn(prefix + ".distribute.pos_query", distribute.pos_query);
        fn(prefix + ".distribute.pos_key", distribute.pos_key);
        fn(prefix + ".merge_proj", merge_proj);
        fn(prefix + ".ffn_fc1_w", ffn_fc1_w);
        fn(prefix + ".ffn_fc1_b", ffn_fc1_b);
        fn(prefix + ".ffn_fc2_w", ffn_fc2_w);
        fn(prefix + ".ffn_fc2_b", ffn_fc2_b);
    }
};

namespace detail {

// Every parameter gets its own stream seeded from (seed, name), so an
// individual tensor's initialization does not depend on creation order
// or on what else was initialized before it.
template <typename S>
ValuePtr<S> init_param(const std::string& name, Shape shape, std::uint64_t seed, double stddev,
                       double constant = 0.0, bool gaussian = true) {
    if (!gaussian) {
        auto t = full<S>(std::move(shape), static_cast<S>(constant), true);
        return t;
    }
    Rng rng(mix_seed(seed, fnv1a64(name)));
    return randn<S>(std::move(shape), rng, stddev, true);
}

inline double fan_in_std(std::int64_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

}  // namespace detail

// Queries start near zero (std 0.02); projections use fan-in scaled
// Gaussians; norms start at identity; biases at zero. The position
// projections of a no-position-query configuration stay zero and are
// skipped in the forward pass.
template <typename S>
ExchangerStageParams<S> init_stage_params(const ExchangerConfig& cfg, int stage_index,
                                          std::uint64_t seed) {
    cfg.validate();
    const std::int64_t d = cfg.width;
    const std::int64_t n = cfg.clusters;
    const std::int64_t ht = cfg.token_mlp_hidden;
    const std::int64_t hc = cfg.ffn_expansion * d;
    const std::string p = "stage" + std::to_string(stage_index);
    const double proj_std = detail::fan_in_std(d);
    using detail::init_param;

    ExchangerStageParams<S> sp;
    sp.content_queries = init_param<S>(p + ".content_queries", {n, d}, seed, 0.02);
    sp.position_queries = init_param<S>(p + ".position_queries", {n, d}, seed, 0.02);

    auto init_attention = [&](const std::string& ap, AttentionProjections<S>& a) {
        a.query = init_param<S>(ap + ".query", {d, d}, seed, proj_std);
        a.key = init_param<S>(ap + ".key", {d, d}, seed, proj_std);
        a.value = init_param<S>(ap + ".value", {d, d}, seed, proj_std);
        if (cfg.position_queries) {
            a.pos_query = init_param<S>(ap + ".pos_query", {d, d}, seed, proj_std);
            a.pos_key = init_param<S>(ap + ".pos_key", {d, d}, seed, proj_std);
        } else {
            a.pos_query = zeros<S>({d, d}, true);
            a.pos_key = zeros<S>({d, d}, true);
        }
    };
    init_attention(p + ".collect", sp.collect);
    init_attention(p + ".distribute", sp.distribute);

    sp.token_norm_gain = init_param<S>(p + ".token_norm_gain", {d}, seed, 0, 1.0, false);
    sp.token_norm_bias = init_param<S>(p + ".token_norm_bias", {d}, seed, 0, 0.0, false);
    sp.token_fc1_w = init_param<S>(p + ".token_fc1_w", {n, ht}, seed, detail::fan_in_std(n));
    sp.token_fc1_b = init_param<S>(p + ".token_fc1_b", {ht}, seed, 0, 0.0, false);
    sp.token_fc2_w = init_param<S>(p + ".token_fc2_w", {ht, n}, seed, detail::fan_in_std(ht));
    sp.token_fc2_b = init_param<S>(p + ".token_fc2_b", {n}, seed, 0, 0.0, false);
    sp.channel_norm_gain = init_param<S>(p + ".channel_norm_gain", {d}, seed, 0, 1.0, false);
    sp.channel_norm_bias = init_param<S>(p + ".channel_norm_bias", {d}, seed, 0, 0.0, false);
    sp.channel_fc1_w = init_param<S>(p + ".channel_fc1_w", {d, hc}, seed, proj_std);
    sp.channel_fc1_b = init_param<S>(p + ".channel_fc1_b", {hc}, seed, 0, 0.0, false);
    sp.channel_fc2_w = init_param<S>(p + ".channel_fc2_w", {hc, d}, seed, detail::fan_in_std(hc));
    sp.channel_fc2_b = init_param<S>(p + ".channel_fc2_b", {d}, seed, 0, 0.0, false);

    sp.merge_proj = init_param<S>(p + ".merge_proj", {2 * d, d}, seed, detail::fan_in_std(2 * d));
    sp.ffn_fc1_w = init_param<S>(p + ".ffn_fc1_w", {d, hc}, seed, proj_std);
    sp.ffn_fc1_b = init_param<S>(p + ".ffn_fc1_b", {hc}, seed, 0, 0.0, false);
    sp.ffn_fc2_w = init_param<S>(p + ".ffn_fc2_w", {hc, d}, seed, detail::fan_in_std(hc));
    sp.ffn_fc2_b = init_param<S>(p + ".ffn_fc2_b", {d}, seed, 0, 0.0, false);
    return sp;
}

template <typename S>
std::vector<ExchangerStageParams<S>> init_exchanger_params(const ExchangerConfig& cfg,
                                                           std::uint64_t seed) {
    std::vector<ExchangerStageParams<S>> stages;
    stages.reserve(static_cast<std::size_t>(cfg.stages));
    for (std::int64_t i = 0; i < cfg.stages; ++i)
        stages.push_back(init_stage_params<S>(cfg, static_cast<int>(i), seed));
    return stages;
}

namespace detail {

template <typename S>
ValuePtr<S> linear(GraphT<S>& g, const ValuePtr<S>& x, const ValuePtr<S>& w, const ValuePtr<S>& b) {
    return g.add_row(g.matmul(x, w), b);
}

// Additive logit bias with kMaskLogitBias on invalid key columns, or
// null when every step is valid.
template <typename S>
ValuePtr<S> key_mask_bias(const std::vector<std::uint8_t>& mask) {
    bool any_masked = false;
    for (const auto v : mask) any_masked = any_masked || !v;
    if (!any_masked) return nullptr;
    std::vector<S> bias(mask.size());
    for (std::size_t i = 0; i < mask.size(); ++i)
        bias[i] = mask[i] ? S(0) : static_cast<S>(kMaskLogitBias);
    return make_tensor<S>({static_cast<std::int64_t>(mask.size())}, std::move(bias));
}

// Untied two-stream multi-head cross-attention. Queries come from
// (content_q, position_q), keys from (content_k, position_k); the two
// affinity terms are added, scaled by 1/sqrt(2*width), masked, row
// softmaxed, and applied to the value projection of `content_v`.
template <typename S>
ValuePtr<S> untied_cross_attention(GraphT<S>& g, const ExchangerConfig& cfg,
                                   const AttentionProjections<S>& proj,
                                   const ValuePtr<S>& content_q, const ValuePtr<S>& content_k,
                                   const ValuePtr<S>& position_q, const ValuePtr<S>& position_k,
                                   const ValuePtr<S>& key_bias) {
    const std::int64_t d = cfg.width;
    const std::int64_t dh = d / cfg.heads;
    const double logit_scale = 1.0 / std::sqrt(2.0 * static_cast<double>(d));

    auto q = g.matmul(content_q, proj.query);
    auto k = g.matmul(content_k, proj.key);
    auto v = g.matmul(content_k, proj.value);
    ValuePtr<S> pq, pk;
    if (cfg.position_queries) {
        pq = g.matmul(position_q, proj.pos_query);
        pk = g.matmul(position_k, proj.pos_key);
    }

    ValuePtr<S> heads_out;
    for (std::int64_t h = 0; h < cfg.heads; ++h) {
        const std::int64_t c0 = h * dh, c1 = (h + 1) * dh;
        auto logits = g.matmul(g.slice_cols(q, c0, c1), g.transpose(g.slice_cols(k, c0, c1)));
        if (cfg.position_queries) {
            auto pos_logits =
                g.matmul(g.slice_cols(pq, c0, c1), g.transpose(g.slice_cols(pk, c0, c1)));
            logits = g.add(logits, pos_logits);
        }
        logits = g.scale(logits, logit_scale);
        if (key_bias) logits = g.add_row(logits, key_bias);
        auto attn = g.softmax(logits, 1);
        auto head = g.matmul(attn, g.slice_cols(v, c0, c1));
        heads_out = heads_out ? g.concat_cols(heads_out, head) : head;
    }
    return heads_out;
}

}  // namespace detail

// COLLECT: cluster tokens pull information from the temporal tokens.
// Returns content queries updated with the attended values (residual).
template <typename S>
ValuePtr<S> collect(GraphT<S>& g, const ExchangerConfig& cfg, const ExchangerStageParams<S>& sp,
                    const ValuePtr<S>& tokens, const ValuePtr<S>& positions,
                    const std::vector<std::uint8_t>& mask) {
    if (tokens->rank() != 2 || tokens->shape[1] != cfg.width) {
        throw DimensionError("collect: tokens " + shape_str(tokens->shape) + " vs width " +
                             std::to_string(cfg.width));
    }
    if (static_cast<std::int64_t>(mask.size()) != tokens->shape[0]) {
        throw DimensionError("collect: mask length " + std::to_string(mask.size()) + " vs " +
                             shape_str(tokens->shape));
    }
    bool any_valid = false;
    for (const auto m : mask) any_valid = any_valid || m;
    if (!any_valid) throw DataError("collect: every temporal step is masked");

    auto attended = detail::untied_cross_attention(
        g, cfg, sp.collect, sp.content_queries, tokens, sp.position_queries, positions,
        detail::key_mask_bias<S>(mask));
    return g.add(sp.content_queries, attended);
}

// UPDATE: global information exchange among clusters only. Token
// mixing runs across the cluster axis (on the transposed matrix),
// channel mixing across features; both behind layer norms with
// residual connections. Position queries are read-only here.
template <typename S>
ValuePtr<S> update(GraphT<S>& g, [[maybe_unused]] const ExchangerConfig& cfg,
                   const ExchangerStageParams<S>& sp, const ValuePtr<S>& clusters) {
    auto x = clusters;
    {
        auto normed = g.layer_norm(x, sp.token_norm_gain, sp.token_norm_bias, kLayerNormEps);
        auto tr = g.transpose(normed);  // [width x clusters]
        auto h = g.gelu(detail::linear(g, tr, sp.token_fc1_w, sp.token_fc1_b));
        auto mixed = detail::linear(g, h, sp.token_fc2_w, sp.token_fc2_b);
        x = g.add(x, g.transpose(mixed));
    }
    {
        auto normed = g.layer_norm(x, sp.channel_norm_gain, sp.channel_norm_bias, kLayerNormEps);
        auto h = g.gelu(detail::linear(g, normed, sp.channel_fc1_w, sp.channel_fc1_b));
        auto mixed = detail::linear(g, h, sp.channel_fc2_w, sp.channel_fc2_b);
        x = g.add(x, mixed);
    }
    return x;
}

// DISTRIBUTE: tokens query the updated clusters, the attended context
// is merged with the token features and refined by an FFN. Rows of
// masked steps are zeroed.
template <typename S>
ValuePtr<S> distribute(GraphT<S>& g, const ExchangerConfig& cfg, const ExchangerStageParams<S>& sp,
                       const ValuePtr<S>& tokens, const ValuePtr<S>& positions,
                       const ValuePtr<S>& clusters, const std::vector<std::uint8_t>& mask) {
    auto attended = detail::untied_cross_attention(g, cfg, sp.distribute, tokens, clusters,
                                                   positions, sp.position_queries, ValuePtr<S>{});
    auto merged = g.matmul(g.concat_cols(attended, tokens), sp.merge_proj);
    auto h = g.gelu(detail::linear(g, merged, sp.ffn_fc1_w, sp.ffn_fc1_b));
    auto ffn_out = detail::linear(g, h, sp.ffn_fc2_w, sp.ffn_fc2_b);
    auto out = g.add(merged, ffn_out);

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

template <typename S>
ValuePtr<S> stage_forward(GraphT<S>& g, const ExchangerConfig& cfg,
                          const ExchangerStageParams<S>& sp, const ValuePtr<S>& tokens,
                          const ValuePtr<S>& positions, const std::vector<std::uint8_t>& mask) {
    auto clusters = collect(g, cfg, sp, tokens, positions, mask);
    clusters = update(g, cfg, sp, clusters);
    return distribute(g, cfg, sp, tokens, positions, clusters, mask);
}

// Full encoder: stages chained on the token stream; the position
// stream is fixed across stages.
template <typename S>
ValuePtr<S> exchanger_forward(GraphT<S>& g, const ExchangerConfig& cfg,
                              const std::vector<ExchangerStageParams<S>>& stages,
                              const ValuePtr<S>& tokens, const ValuePtr<S>& positions,
                              const std::vector<std::uint8_t>& mask) {
    if (stages.empty()) throw ContractError("exchanger_forward: no stages");
    auto x = tokens;
    for (const auto& sp : stages) x = stage_forward(g, cfg, sp, x, positions, mask);
    return x;
}

// Analytic multiply-accumulate count of one forward pass over T steps.
// Exactly affine in both T and the cluster count for a fixed width.
inline std::uint64_t count_flops(const ExchangerConfig& cfg, std::int64_t t_len) {
    cfg.validate();
    if (t_len < 0) throw ContractError("count_flops: negative T");
    const std::uint64_t t = static_cast<std::uint64_t>(t_len);
    const std::uint64_t d = static_cast<std::uint64_t>(cfg.width);
    const std::uint64_t n = static_cast<std::uint64_t>(cfg.clusters);
    const std::uint64_t ht = static_cast<std::uint64_t>(cfg.token_mlp_hidden);
    const std::uint64_t hc = static_cast<std::uint64_t>(cfg.ffn_expansion) * d;
    const std::uint64_t pos = cfg.position_queries ? 1 : 0;

    // collect: query/key/value projections, position pair, affinity and
    // application (per-head costs sum to the full-width products).
    std::uint64_t per_stage = 0;
    per_stage += n * d * d;            // content query projection
    per_stage += t * d * d;            // content key projection
    per_stage += t * d * d;            // value projection
    per_stage += pos * (n * d * d);    // position query projection
    per_stage += pos * (t * d * d);    // position key projection
    per_stage += n * t * d;            // content affinity
    per_stage += pos * (n * t * d);    // position affinity
    per_stage += n * t * d;            // attention application
    // update: token mixing and channel mixing MLPs.
    per_stage += 2 * d * n * ht;
    per_stage += 2 * n * d * hc;
    // distribute: mirrored projections, affinities, application, merge
    // projection and FFN.
    per_stage += t * d * d;            // content query projection
    per_stage += n * d * d;            // content key projection
    per_stage += n * d * d;            // value projection
    per_stage += pos * (t * d * d);    // position query projection
    per_stage += pos * (n * d * d);    // position key projection
    per_stage += t * n * d;            // content affinity
    per_stage += pos * (t * n * d);    // position affinity
    per_stage += t * n * d;            // attention application
    per_stage += t * (2 * d) * d;      // merge projection
    per_stage += 2 * t * d * hc;       // FFN

    return per_stage * static_cast<std::uint64_t>(cfg.stages);
}

}  // namespace exchanger
