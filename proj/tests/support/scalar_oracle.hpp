#pragma once

// Straight-line scalar re-implementation of the collect / update /
// distribute steps and the self-attention baseline, written with plain
// index loops over double vectors. This file deliberately reuses
// nothing from the graph engine: it is the independent oracle the
// encoder implementations are checked against.

#include <cmath>
#include <cstdint>
#include <vector>

#include <exchanger/bench.hpp>
#include <exchanger/model.hpp>

namespace testsupport {

using Mat = std::vector<double>;  // row-major

struct OracleAttention {
    Mat query, key, value, pos_query, pos_key;  // each d*d
};

struct OracleStage {
    std::int64_t d = 0, n = 0, heads = 0, token_hidden = 0, ffn_hidden = 0;
    bool use_pos = true;
    Mat content_queries, position_queries;  // n*d
    OracleAttention collect, distribute;
    Mat token_norm_gain, token_norm_bias, channel_norm_gain, channel_norm_bias;
    Mat token_fc1_w, token_fc1_b, token_fc2_w, token_fc2_b;
    Mat channel_fc1_w, channel_fc1_b, channel_fc2_w, channel_fc2_b;
    Mat merge_proj, ffn_fc1_w, ffn_fc1_b, ffn_fc2_w, ffn_fc2_b;
};

struct OracleSelfAttention {
    std::int64_t d = 0, heads = 0, ffn_hidden = 0;
    bool use_pos = true;
    Mat norm1_gain, norm1_bias;
    OracleAttention attention;
    Mat out_proj;
    Mat norm2_gain, norm2_bias;
    Mat ffn_fc1_w, ffn_fc1_b, ffn_fc2_w, ffn_fc2_b;
};

inline Mat to_mat(const exchanger::ValuePtr<double>& t) {
    return Mat(t->values.begin(), t->values.end());
}

inline OracleAttention to_oracle(const exchanger::AttentionProjections<double>& a) {
    return {to_mat(a.query), to_mat(a.key), to_mat(a.value), to_mat(a.pos_query),
            to_mat(a.pos_key)};
}

inline OracleStage to_oracle(const exchanger::ExchangerConfig& cfg,
                             const exchanger::ExchangerStageParams<double>& sp) {
    OracleStage o;
    o.d = cfg.width;
    o.n = cfg.clusters;
    o.heads = cfg.heads;
    o.token_hidden = cfg.token_mlp_hidden;
    o.ffn_hidden = cfg.ffn_expansion * cfg.width;
    o.use_pos = cfg.position_queries;
    o.content_queries = to_mat(sp.content_queries);
    o.position_queries = to_mat(sp.position_queries);
    o.collect = to_oracle(sp.collect);
    o.distribute = to_oracle(sp.distribute);
    o.token_norm_gain = to_mat(sp.token_norm_gain);
    o.token_norm_bias = to_mat(sp.token_norm_bias);
    o.channel_norm_gain = to_mat(sp.channel_norm_gain);
    o.channel_norm_bias = to_mat(sp.channel_norm_bias);
    o.token_fc1_w = to_mat(sp.token_fc1_w);
    o.token_fc1_b = to_mat(sp.token_fc1_b);
    o.token_fc2_w = to_mat(sp.token_fc2_w);
    o.token_fc2_b = to_mat(sp.token_fc2_b);
    o.channel_fc1_w = to_mat(sp.channel_fc1_w);
    o.channel_fc1_b = to_mat(sp.channel_fc1_b);
    o.channel_fc2_w = to_mat(sp.channel_fc2_w);
    o.channel_fc2_b = to_mat(sp.channel_fc2_b);
    o.merge_proj = to_mat(sp.merge_proj);
    o.ffn_fc1_w = to_mat(sp.ffn_fc1_w);
    o.ffn_fc1_b = to_mat(sp.ffn_fc1_b);
    o.ffn_fc2_w = to_mat(sp.ffn_fc2_w);
    o.ffn_fc2_b = to_mat(sp.ffn_fc2_b);
    return o;
}

inline OracleSelfAttention to_oracle(const exchanger::ExchangerConfig& cfg,
                                     const exchanger::SelfAttentionParams<double>& p) {
    OracleSelfAttention o;
    o.d = cfg.width;
    o.heads = cfg.heads;
    o.ffn_hidden = cfg.ffn_expansion * cfg.width;
    o.use_pos = cfg.position_queries;
    o.norm1_gain = to_mat(p.norm1_gain);
    o.norm1_bias = to_mat(p.norm1_bias);
    o.attention = to_oracle(p.attention);
    o.out_proj = to_mat(p.out_proj);
    o.norm2_gain = to_mat(p.norm2_gain);
    o.norm2_bias = to_mat(p.norm2_bias);
    o.ffn_fc1_w = to_mat(p.ffn_fc1_w);
    o.ffn_fc1_b = to_mat(p.ffn_fc1_b);
    o.ffn_fc2_w = to_mat(p.ffn_fc2_w);
    o.ffn_fc2_b = to_mat(p.ffn_fc2_b);
    return o;
}

// y[r,c] = sum_k x[r,k] w[k,c]
inline Mat oracle_matmul(const Mat& x, std::int64_t rows, std::int64_t inner, const Mat& w,
                         std::int64_t cols) {
    Mat y(static_cast<std::size_t>(rows * cols), 0.0);
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c) {
            double acc = 0;
            for (std::int64_t k = 0; k < inner; ++k)
                acc += x[static_cast<std::size_t>(r * inner + k)] *
                       w[static_cast<std::size_t>(k * cols + c)];
            y[static_cast<std::size_t>(r * cols + c)] = acc;
        }
    return y;
}

inline double oracle_gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

inline Mat oracle_layer_norm(const Mat& x, std::int64_t rows, std::int64_t d, const Mat& gain,
                             const Mat& bias, double eps) {
    Mat y(x.size());
    for (std::int64_t r = 0; r < rows; ++r) {
        double mean = 0;
        for (std::int64_t j = 0; j < d; ++j) mean += x[static_cast<std::size_t>(r * d + j)];
        mean /= static_cast<double>(d);
        double var = 0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = x[static_cast<std::size_t>(r * d + j)] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + eps);
        for (std::int64_t j = 0; j < d; ++j) {
            y[static_cast<std::size_t>(r * d + j)] =
                gain[static_cast<std::size_t>(j)] *
                    (x[static_cast<std::size_t>(r * d + j)] - mean) * inv +
                bias[static_cast<std::size_t>(j)];
        }
    }
    return y;
}

// Multi-head untied attention computed head by head with scalar loops.
// q_src: [q_rows x d], k_src: [k_rows x d]; the position pair follows
// the same split. Masked key columns receive a -1e9 logit bias.
inline Mat oracle_untied_attention(const OracleAttention& w, std::int64_t d, std::int64_t heads,
                                   bool use_pos, const Mat& q_src, std::int64_t q_rows,
                                   const Mat& k_src, std::int64_t k_rows, const Mat& pos_q_src,
                                   const Mat& pos_k_src, const std::vector<std::uint8_t>* key_mask) {
    const std::int64_t dh = d / heads;
    const double scl = 1.0 / std::sqrt(2.0 * static_cast<double>(d));
    const Mat q = oracle_matmul(q_src, q_rows, d, w.query, d);
    const Mat k = oracle_matmul(k_src, k_rows, d, w.key, d);
    const Mat v = oracle_matmul(k_src, k_rows, d, w.value, d);
    Mat pq, pk;
    if (use_pos) {
        pq = oracle_matmul(pos_q_src, q_rows, d, w.pos_query, d);
        pk = oracle_matmul(pos_k_src, k_rows, d, w.pos_key, d);
    }
    Mat out(static_cast<std::size_t>(q_rows * d), 0.0);
    for (std::int64_t h = 0; h < heads; ++h) {
        const std::int64_t off = h * dh;
        for (std::int64_t i = 0; i < q_rows; ++i) {
            std::vector<double> logits(static_cast<std::size_t>(k_rows));
            for (std::int64_t j = 0; j < k_rows; ++j) {
                double content = 0;
                for (std::int64_t c = 0; c < dh; ++c)
                    content += q[static_cast<std::size_t>(i * d + off + c)] *
                               k[static_cast<std::size_t>(j * d + off + c)];
                double position = 0;
                if (use_pos) {
                    for (std::int64_t c = 0; c < dh; ++c)
                        position += pq[static_cast<std::size_t>(i * d + off + c)] *
                                    pk[static_cast<std::size_t>(j * d + off + c)];
                }
                double l = (content + position) * scl;
                if (key_mask && !(*key_mask)[static_cast<std::size_t>(j)]) l += -1e9;
                logits[static_cast<std::size_t>(j)] = l;
            }
            double mx = logits[0];
            for (const double l : logits) mx = std::max(mx, l);
            double sum = 0;
            for (auto& l : logits) {
                l = std::exp(l - mx);
                sum += l;
            }
            for (auto& l : logits) l /= sum;
            for (std::int64_t c = 0; c < dh; ++c) {
                double acc = 0;
                for (std::int64_t j = 0; j < k_rows; ++j)
                    acc += logits[static_cast<std::size_t>(j)] *
                           v[static_cast<std::size_t>(j * d + off + c)];
                out[static_cast<std::size_t>(i * d + off + c)] = acc;
            }
        }
    }
    return out;
}

inline Mat oracle_collect(const OracleStage& o, const Mat& tokens, std::int64_t t_len,
                          const Mat& positions, const std::vector<std::uint8_t>& mask) {
    Mat attended = oracle_untied_attention(o.collect, o.d, o.heads, o.use_pos, o.content_queries,
                                           o.n, tokens, t_len, o.position_queries, positions,
                                           &mask);
    for (std::size_t i = 0; i < attended.size(); ++i) attended[i] += o.content_queries[i];
    return attended;
}

inline Mat oracle_update(const OracleStage& o, const Mat& clusters_in) {
    Mat x = clusters_in;
    // Token mixing over the cluster axis of the transposed matrix.
    {
        const Mat normed = oracle_layer_norm(x, o.n, o.d, o.token_norm_gain, o.token_norm_bias,
                                             exchanger::kLayerNormEps);
        Mat tr(static_cast<std::size_t>(o.d * o.n));
        for (std::int64_t i = 0; i < o.n; ++i)
            for (std::int64_t j = 0; j < o.d; ++j)
                tr[static_cast<std::size_t>(j * o.n + i)] = normed[static_cast<std::size_t>(i * o.d + j)];
        Mat h = oracle_matmul(tr, o.d, o.n, o.token_fc1_w, o.token_hidden);
        for (std::int64_t r = 0; r < o.d; ++r)
            for (std::int64_t c = 0; c < o.token_hidden; ++c) {
                auto& v = h[static_cast<std::size_t>(r * o.token_hidden + c)];
                v = oracle_gelu(v + o.token_fc1_b[static_cast<std::size_t>(c)]);
            }
        Mat mixed = oracle_matmul(h, o.d, o.token_hidden, o.token_fc2_w, o.n);
        for (std::int64_t r = 0; r < o.d; ++r)
            for (std::int64_t c = 0; c < o.n; ++c)
                mixed[static_cast<std::size_t>(r * o.n + c)] += o.token_fc2_b[static_cast<std::size_t>(c)];
        for (std::int64_t i = 0; i < o.n; ++i)
            for (std::int64_t j = 0; j < o.d; ++j)
                x[static_cast<std::size_t>(i * o.d + j)] += mixed[static_cast<std::size_t>(j * o.n + i)];
    }
    // Channel mixing.
    {
        const Mat normed = oracle_layer_norm(x, o.n, o.d, o.channel_norm_gain, o.channel_norm_bias,
                                             exchanger::kLayerNormEps);
        Mat h = oracle_matmul(normed, o.n, o.d, o.channel_fc1_w, o.ffn_hidden);
        for (std::int64_t r = 0; r < o.n; ++r)
            for (std::int64_t c = 0; c < o.ffn_hidden; ++c) {
                auto& v = h[static_cast<std::size_t>(r * o.ffn_hidden + c)];
                v = oracle_gelu(v + o.channel_fc1_b[static_cast<std::size_t>(c)]);
            }
        Mat mixed = oracle_matmul(h, o.n, o.ffn_hidden, o.channel_fc2_w, o.d);
        for (std::int64_t r = 0; r < o.n; ++r)
            for (std::int64_t c = 0; c < o.d; ++c)
                x[static_cast<std::size_t>(r * o.d + c)] +=
                    mixed[static_cast<std::size_t>(r * o.d + c)] + o.channel_fc2_b[static_cast<std::size_t>(c)];
    }
    return x;
}

inline Mat oracle_distribute(const OracleStage& o, const Mat& tokens, std::int64_t t_len,
                             const Mat& positions, const Mat& clusters,
                             const std::vector<std::uint8_t>& mask) {
    const Mat attended = oracle_untied_attention(o.distribute, o.d, o.heads, o.use_pos, tokens,
                                                 t_len, clusters, o.n, positions,
                                                 o.position_queries, nullptr);
    // merged = [attended | tokens] * merge_proj
    Mat cat(static_cast<std::size_t>(t_len * 2 * o.d));
    for (std::int64_t i = 0; i < t_len; ++i) {
        for (std::int64_t j = 0; j < o.d; ++j) {
            cat[static_cast<std::size_t>(i * 2 * o.d + j)] = attended[static_cast<std::size_t>(i * o.d + j)];
            cat[static_cast<std::size_t>(i * 2 * o.d + o.d + j)] = tokens[static_cast<std::size_t>(i * o.d + j)];
        }
    }
    Mat merged = oracle_matmul(cat, t_len, 2 * o.d, o.merge_proj, o.d);
    Mat h = oracle_matmul(merged, t_len, o.d, o.ffn_fc1_w, o.ffn_hidden);
    for (std::int64_t r = 0; r < t_len; ++r)
        for (std::int64_t c = 0; c < o.ffn_hidden; ++c) {
            auto& v = h[static_cast<std::size_t>(r * o.ffn_hidden + c)];
            v = oracle_gelu(v + o.ffn_fc1_b[static_cast<std::size_t>(c)]);
        }
    Mat ffn = oracle_matmul(h, t_len, o.ffn_hidden, o.ffn_fc2_w, o.d);
    Mat out(static_cast<std::size_t>(t_len * o.d));
    for (std::int64_t r = 0; r < t_len; ++r)
        for (std::int64_t c = 0; c < o.d; ++c) {
            double v = merged[static_cast<std::size_t>(r * o.d + c)] +
                       ffn[static_cast<std::size_t>(r * o.d + c)] + o.ffn_fc2_b[static_cast<std::size_t>(c)];
            if (!mask[static_cast<std::size_t>(r)]) v = 0;
            out[static_cast<std::size_t>(r * o.d + c)] = v;
        }
    return out;
}

inline Mat oracle_stage(const OracleStage& o, const Mat& tokens, std::int64_t t_len,
                        const Mat& positions, const std::vector<std::uint8_t>& mask) {
    Mat clusters = oracle_collect(o, tokens, t_len, positions, mask);
    clusters = oracle_update(o, clusters);
    return oracle_distribute(o, tokens, t_len, positions, clusters, mask);
}

inline Mat oracle_self_attention(const OracleSelfAttention& o, const Mat& tokens,
                                 std::int64_t t_len, const Mat& positions,
                                 const std::vector<std::uint8_t>& mask) {
    const Mat normed = oracle_layer_norm(tokens, t_len, o.d, o.norm1_gain, o.norm1_bias,
                                         exchanger::kLayerNormEps);
    const Mat attended = oracle_untied_attention(o.attention, o.d, o.heads, o.use_pos, normed,
                                                 t_len, normed, t_len, positions, positions, &mask);
    Mat x = oracle_matmul(attended, t_len, o.d, o.out_proj, o.d);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += tokens[i];
    const Mat normed2 = oracle_layer_norm(x, t_len, o.d, o.norm2_gain, o.norm2_bias,
                                          exchanger::kLayerNormEps);
    Mat h = oracle_matmul(normed2, t_len, o.d, o.ffn_fc1_w, o.ffn_hidden);
    for (std::int64_t r = 0; r < t_len; ++r)
        for (std::int64_t c = 0; c < o.ffn_hidden; ++c) {
            auto& v = h[static_cast<std::size_t>(r * o.ffn_hidden + c)];
            v = oracle_gelu(v + o.ffn_fc1_b[static_cast<std::size_t>(c)]);
        }
    Mat ffn = oracle_matmul(h, t_len, o.ffn_hidden, o.ffn_fc2_w, o.d);
    Mat out(static_cast<std::size_t>(t_len * o.d));
    for (std::int64_t r = 0; r < t_len; ++r)
        for (std::int64_t c = 0; c < o.d; ++c) {
            double v = x[static_cast<std::size_t>(r * o.d + c)] +
                       ffn[static_cast<std::size_t>(r * o.d + c)] + o.ffn_fc2_b[static_cast<std::size_t>(c)];
            if (!mask[static_cast<std::size_t>(r)]) v = 0;
            out[static_cast<std::size_t>(r * o.d + c)] = v;
        }
    return out;
}

}  // namespace testsupport
