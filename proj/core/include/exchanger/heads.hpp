#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "exchanger/errors.hpp"
#include "exchanger/graph.hpp"
#include "exchanger/model.hpp"

namespace exchanger {

namespace detail {

// Masked mean over rows expressed as a [1 x rows] weight product, so
// the gradient w.r.t. the rows falls out of the matmul rule.
template <typename S>
ValuePtr<S> masked_row_mean(GraphT<S>& g, const ValuePtr<S>& rows,
                            const std::vector<std::uint8_t>& mask, const char* what) {
    if (rows->rank() != 2) throw DimensionError(std::string(what) + ": expected rank-2 input");
    if (static_cast<std::int64_t>(mask.size()) != rows->shape[0]) {
        throw DimensionError(std::string(what) + ": mask length " + std::to_string(mask.size()) +
                             " vs " + shape_str(rows->shape));
    }
    std::int64_t n_valid = 0;
    for (const auto m : mask) n_valid += m ? 1 : 0;
    if (n_valid == 0) throw DataError(std::string(what) + ": every row is masked");
    std::vector<S> w(mask.size(), S(0));
    const S inv = static_cast<S>(1.0 / static_cast<double>(n_valid));
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) w[i] = inv;
    auto weights = make_tensor<S>({1, static_cast<std::int64_t>(mask.size())}, std::move(w));
    return g.matmul(weights, rows);
}

}  // namespace detail

// Bag-level aggregation of unordered pixel instances (masked mean).
template <typename S>
ValuePtr<S> mil_pool(GraphT<S>& g, const ValuePtr<S>& per_pixel_features,
                     const std::vector<std::uint8_t>& pixel_mask) {
    return detail::masked_row_mean(g, per_pixel_features, pixel_mask, "mil_pool");
}

// Masked mean over valid time steps of an encoded sequence.
template <typename S>
ValuePtr<S> temporal_pool(GraphT<S>& g, const ValuePtr<S>& encoded,
                          const std::vector<std::uint8_t>& mask) {
    return detail::masked_row_mean(g, encoded, mask, "temporal_pool");
}

// Pretraining projector: linear -> layer norm -> GELU -> linear,
// kept during pretraining and discarded for finetuning.
template <typename S>
struct ProjectorParams {
    ValuePtr<S> fc1_w, fc1_b;
    ValuePtr<S> norm_gain, norm_bias;
    ValuePtr<S> fc2_w, fc2_b;

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".fc1_w", fc1_w);
        fn(prefix + ".fc1_b", fc1_b);
        fn(prefix + ".norm_gain", norm_gain);
        fn(prefix + ".norm_bias", norm_bias);
        fn(prefix + ".fc2_w", fc2_w);
        fn(prefix + ".fc2_b", fc2_b);
    }
};

template <typename S>
ProjectorParams<S> init_projector(std::int64_t d_in, std::int64_t d_hidden, std::int64_t d_proj,
                                  std::uint64_t seed) {
    using detail::init_param;
    ProjectorParams<S> pp;
    pp.fc1_w = init_param<S>("projector.fc1_w", {d_in, d_hidden}, seed, detail::fan_in_std(d_in));
    pp.fc1_b = init_param<S>("projector.fc1_b", {d_hidden}, seed, 0, 0.0, false);
    pp.norm_gain = init_param<S>("projector.norm_gain", {d_hidden}, seed, 0, 1.0, false);
    pp.norm_bias = init_param<S>("projector.norm_bias", {d_hidden}, seed, 0, 0.0, false);
    pp.fc2_w = init_param<S>("projector.fc2_w", {d_hidden, d_proj}, seed, detail::fan_in_std(d_hidden));
    pp.fc2_b = init_param<S>("projector.fc2_b", {d_proj}, seed, 0, 0.0, false);
    return pp;
}

template <typename S>
ValuePtr<S> projector_forward(GraphT<S>& g, const ProjectorParams<S>& pp, const ValuePtr<S>& x) {
    auto h = detail::linear(g, x, pp.fc1_w, pp.fc1_b);
    h = g.layer_norm(h, pp.norm_gain, pp.norm_bias, kLayerNormEps);
    h = g.gelu(h);
    return detail::linear(g, h, pp.fc2_w, pp.fc2_b);
}

// Cosine classifier: scaled dot products between the L2-normalized
// feature and L2-normalized class prototypes.
template <typename S>
struct CosineClassifierParams {
    ValuePtr<S> prototypes;  // [classes x d_proj]
    ValuePtr<S> scale;       // learnable, positive; initialized to 10

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".prototypes", prototypes);
        fn(prefix + ".scale", scale);
    }
};

template <typename S>
CosineClassifierParams<S> init_cosine_classifier(std::int64_t classes, std::int64_t d_proj,
                                                 std::uint64_t seed) {
    CosineClassifierParams<S> cp;
    cp.prototypes = detail::init_param<S>("cosine.prototypes", {classes, d_proj}, seed,
                                          detail::fan_in_std(d_proj));
    cp.scale = detail::init_param<S>("cosine.scale", {1}, seed, 0, 10.0, false);
    return cp;
}

constexpr double kNormEps = 1e-8;

template <typename S>
ValuePtr<S> cosine_logits(GraphT<S>& g, const CosineClassifierParams<S>& cp,
                          const ValuePtr<S>& feature) {
    auto f = g.l2_normalize_rows(feature, kNormEps);
    auto w = g.l2_normalize_rows(cp.prototypes, kNormEps);
    return g.scale_by(g.matmul(f, g.transpose(w)), cp.scale);
}

// Cosine softmax cross-entropy of one bag feature against its label.
template <typename S>
ValuePtr<S> cosine_softmax_loss(GraphT<S>& g, const CosineClassifierParams<S>& cp,
                                const ValuePtr<S>& feature, std::int64_t label) {
    if (label < 0 || label >= cp.prototypes->shape[0]) {
        throw ContractError("cosine_softmax_loss: label " + std::to_string(label) + " outside [0," +
                            std::to_string(cp.prototypes->shape[0]) + ")");
    }
    return g.cross_entropy(cosine_logits(g, cp, feature), label);
}

// Per-pixel linear classifier for dense prediction.
template <typename S>
struct DenseHeadParams {
    ValuePtr<S> w;  // [d x classes]
    ValuePtr<S> b;  // [classes]

    template <typename Fn>
    void for_each_param(const std::string& prefix, Fn&& fn) {
        fn(prefix + ".w", w);
        fn(prefix + ".b", b);
    }
};

template <typename S>
DenseHeadParams<S> init_dense_head(std::int64_t d, std::int64_t classes, std::uint64_t seed) {
    DenseHeadParams<S> dh;
    dh.w = detail::init_param<S>("dense_head.w", {d, classes}, seed, detail::fan_in_std(d));
    dh.b = detail::init_param<S>("dense_head.b", {classes}, seed, 0, 0.0, false);
    return dh;
}

// Independent linear map per pixel row: [pixels x d] -> [pixels x classes].
template <typename S>
ValuePtr<S> dense_head(GraphT<S>& g, const DenseHeadParams<S>& dh, const ValuePtr<S>& features) {
    return detail::linear(g, features, dh.w, dh.b);
}

}  // namespace exchanger
