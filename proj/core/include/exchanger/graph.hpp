#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "exchanger/errors.hpp"
#include "exchanger/tensor.hpp"

namespace exchanger {

// Reverse-mode tape. Every operation appends one node in execution
// order, so the tape itself is a topological order of the graph, and
// one reverse sweep applies every backward rule exactly once. Fan-out
// is handled by accumulation into the input gradients.
//
// A graph and the tensors it creates are confined to a single thread;
// independent graphs over shared (read-only) parameters may run in
// parallel, with the caller responsible for merging leaf gradients.
template <typename S>
class GraphT {
public:
    using Value = ValuePtr<S>;

    std::size_t node_count() const { return tape_.size(); }

    // ---- matrix product -------------------------------------------------

    Value matmul(const Value& a, const Value& b) {
        require_rank2(*a, "matmul lhs");
        require_rank2(*b, "matmul rhs");
        const std::int64_t m = a->shape[0], k = a->shape[1];
        const std::int64_t k2 = b->shape[0], n = b->shape[1];
        if (k != k2) {
            throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a->shape) +
                                 " x " + shape_str(b->shape));
        }
        auto out = zeros<S>({m, n});
        {
            // Row-major saxpy kernel, inner dimension unrolled by four so
            // the output row is touched once per block.
            const S* pa = a->values.data();
            const S* pb = b->values.data();
            S* pc = out->values.data();
            for (std::int64_t i = 0; i < m; ++i) {
                S* crow = pc + i * n;
                std::int64_t p = 0;
                for (; p + 4 <= k; p += 4) {
                    const S a0 = pa[i * k + p];
                    const S a1 = pa[i * k + p + 1];
                    const S a2 = pa[i * k + p + 2];
                    const S a3 = pa[i * k + p + 3];
                    const S* b0 = pb + p * n;
                    const S* b1 = b0 + n;
                    const S* b2 = b1 + n;
                    const S* b3 = b2 + n;
                    for (std::int64_t j = 0; j < n; ++j)
                        crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
                }
                for (; p < k; ++p) {
                    const S aip = pa[i * k + p];
                    const S* brow = pb + p * n;
                    for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
                }
            }
        }
        if (taping(a, b)) {
            out->requires_grad = true;
            record([a, b, out, m, k, n] {
                if (!out->has_grad()) return;
                const S* pdc = out->grad.data();
                if (a->requires_grad) {
                    a->ensure_grad();
                    S* pda = a->grad.data();
                    const S* pb = b->values.data();
                    // dA[i,p] += sum_j dC[i,j] * B[p,j]
                    for (std::int64_t i = 0; i < m; ++i) {
                        const S* dcrow = pdc + i * n;
                        std::int64_t p = 0;
                        for (; p + 4 <= k; p += 4) {
                            const S* b0 = pb + p * n;
                            const S* b1 = b0 + n;
                            const S* b2 = b1 + n;
                            const S* b3 = b2 + n;
                            S s0 = 0, s1 = 0, s2 = 0, s3 = 0;
                            for (std::int64_t j = 0; j < n; ++j) {
                                const S d = dcrow[j];
                                s0 += d * b0[j];
                                s1 += d * b1[j];
                                s2 += d * b2[j];
                                s3 += d * b3[j];
                            }
                            pda[i * k + p] += s0;
                            pda[i * k + p + 1] += s1;
                            pda[i * k + p + 2] += s2;
                            pda[i * k + p + 3] += s3;
                        }
                        for (; p < k; ++p) {
                            const S* brow = pb + p * n;
                            S acc = 0;
                            for (std::int64_t j = 0; j < n; ++j) acc += dcrow[j] * brow[j];
                            pda[i * k + p] += acc;
                        }
                    }
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    S* pdb = b->grad.data();
                    const S* pa = a->values.data();
                    // dB[p,j] += sum_i A[i,p] * dC[i,j]
                    for (std::int64_t i = 0; i < m; ++i) {
                        const S* dcrow = pdc + i * n;
                        for (std::int64_t p = 0; p < k; ++p) {
                            const S aip = pa[i * k + p];
                            if (aip == S(0)) continue;
                            S* dbrow = pdb + p * n;
                            for (std::int64_t j = 0; j < n; ++j) dbrow[j] += aip * dcrow[j];
                        }
                    }
                }
            });
        }
        return out;
    }

    Value transpose(const Value& a) {
        require_rank2(*a, "transpose");
        const std::int64_t m = a->shape[0], n = a->shape[1];
        auto out = zeros<S>({n, m});
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                out->values[static_cast<std::size_t>(j * m + i)] =
                    a->values[static_cast<std::size_t>(i * n + j)];
        if (taping(a)) {
            out->requires_grad = true;
            record([a, out, m, n] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j)
                        a->grad[static_cast<std::size_t>(i * n + j)] +=
                            out->grad[static_cast<std::size_t>(j * m + i)];
            });
        }
        return out;
    }

    // ---- elementwise family ---------------------------------------------

    Value add(const Value& a, const Value& b) {
        require_same_shape(*a, *b, "add");
        auto out = zeros<S>(a->shape);
        for (std::size_t i = 0; i < out->values.size(); ++i)
            out->values[i] = a->values[i] + b->values[i];
        if (taping(a, b)) {
            out->requires_grad = true;
            record([a, b, out] {
                if (!out->has_grad()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (std::size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
                }
            });
        }
        return out;
    }

    // Broadcast add of a row vector over every row of a 2D tensor.
    Value add_row(const Value& x, const Value& row) {
        require_rank2(*x, "add_row input");
        const std::int64_t m = x->shape[0], n = x->shape[1];
        if (row->numel() != n) {
            throw DimensionError("add_row: row " + shape_str(row->shape) +
                                 " does not broadcast over " + shape_str(x->shape));
        }
        auto out = zeros<S>(x->shape);
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < n; ++j)
                out->values[static_cast<std::size_t>(i * n + j)] =
                    x->values[static_cast<std::size_t>(i * n + j)] +
                    row->values[static_cast<std::size_t>(j)];
        if (taping(x, row)) {
            out->requires_grad = true;
            record([x, row, out, m, n] {
                if (!out->has_grad()) return;
                if (x->requires_grad) {
                    x->ensure_grad();
                    for (std::size_t i = 0; i < out->grad.size(); ++i) x->grad[i] += out->grad[i];
                }
                if (row->requires_grad) {
                    row->ensure_grad();
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < n; ++j)
                            row->grad[static_cast<std::size_t>(j)] +=
                                out->grad[static_cast<std::size_t>(i * n + j)];
                }
            });
        }
        return out;
    }

    Value mul(const Value& a, const Value& b) {
        require_same_shape(*a, *b, "mul");
        auto out = zeros<S>(a->shape);
        for (std::size_t i = 0; i < out->values.size(); ++i)
            out->values[i] = a->values[i] * b->values[i];
        if (taping(a, b)) {
            out->requires_grad = true;
            record([a, b, out] {
                if (!out->has_grad()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::size_t i = 0; i < out->grad.size(); ++i)
                        a->grad[i] += out->grad[i] * b->values[i];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (std::size_t i = 0; i < out->grad.size(); ++i)
                        b->grad[i] += out->grad[i] * a->values[i];
                }
            });
        }
        return out;
    }

    // Multiply by a compile-time-known constant.
    Value scale(const Value& a, double c) {
        auto out = zeros<S>(a->shape);
        const S cs = static_cast<S>(c);
        for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * cs;
        if (taping(a)) {
            out->requires_grad = true;
            record([a, out, cs] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i] * cs;
            });
        }
        return out;
    }

    // Multiply by a learnable one-element tensor.
    Value scale_by(const Value& x, const Value& s) {
        if (s->numel() != 1) {
            throw DimensionError("scale_by: scale must be a single element, got " +
                                 shape_str(s->shape));
        }
        auto out = zeros<S>(x->shape);
        const S sv = s->values[0];
        for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = x->values[i] * sv;
        if (taping(x, s)) {
            out->requires_grad = true;
            record([x, s, out, sv] {
                if (!out->has_grad()) return;
                if (x->requires_grad) {
                    x->ensure_grad();
                    for (std::size_t i = 0; i < out->grad.size(); ++i)
                        x->grad[i] += out->grad[i] * sv;
                }
                if (s->requires_grad) {
                    s->ensure_grad();
                    S acc = 0;
                    for (std::size_t i = 0; i < out->grad.size(); ++i)
                        acc += out->grad[i] * x->values[i];
                    s->grad[0] += acc;
                }
            });
        }
        return out;
    }

    // Concatenation along the last axis of two 2D tensors; `a` occupies
    // the first columns of the result.
    Value concat_cols(const Value& a, const Value& b) {
        require_rank2(*a, "concat lhs");
        require_rank2(*b, "concat rhs");
        if (a->shape[0] != b->shape[0]) {
            throw DimensionError("concat: row counts disagree, " + shape_str(a->shape) + " vs " +
                                 shape_str(b->shape));
        }
        const std::int64_t m = a->shape[0], p = a->shape[1], q = b->shape[1];
        auto out = zeros<S>({m, p + q});
        for (std::int64_t i = 0; i < m; ++i) {
            for (std::int64_t j = 0; j < p; ++j)
                out->values[static_cast<std::size_t>(i * (p + q) + j)] =
                    a->values[static_cast<std::size_t>(i * p + j)];
            for (std::int64_t j = 0; j < q; ++j)
                out->values[static_cast<std::size_t>(i * (p + q) + p + j)] =
                    b->values[static_cast<std::size_t>(i * q + j)];
        }
        if (taping(a, b)) {
            out->requires_grad = true;
            record([a, b, out, m, p, q] {
                if (!out->has_grad()) return;
                if (a->requires_grad) {
                    a->ensure_grad();
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < p; ++j)
                            a->grad[static_cast<std::size_t>(i * p + j)] +=
                                out->grad[static_cast<std::size_t>(i * (p + q) + j)];
                }
                if (b->requires_grad) {
                    b->ensure_grad();
                    for (std::int64_t i = 0; i < m; ++i)
                        for (std::int64_t j = 0; j < q; ++j)
                            b->grad[static_cast<std::size_t>(i * q + j)] +=
                                out->grad[static_cast<std::size_t>(i * (p + q) + p + j)];
                }
            });
        }
        return out;
    }

    // Columns [c0, c1) of a 2D tensor.
    Value slice_cols(const Value& a, std::int64_t c0, std::int64_t c1) {
        require_rank2(*a, "slice_cols");
        const std::int64_t m = a->shape[0], n = a->shape[1];
        if (c0 < 0 || c1 > n || c0 >= c1) {
            throw DimensionError("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                                 ") out of " + shape_str(a->shape));
        }
        const std::int64_t w = c1 - c0;
        auto out = zeros<S>({m, w});
        for (std::int64_t i = 0; i < m; ++i)
            for (std::int64_t j = 0; j < w; ++j)
                out->values[static_cast<std::size_t>(i * w + j)] =
                    a->values[static_cast<std::size_t>(i * n + c0 + j)];
        if (taping(a)) {
            out->requires_grad = true;
            record([a, out, m, n, w, c0] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < w; ++j)
                        a->grad[static_cast<std::size_t>(i * n + c0 + j)] +=
                            out->grad[static_cast<std::size_t>(i * w + j)];
            });
        }
        return out;
    }

    // Stack row blocks vertically. All inputs must agree on the column
    // count; rank-1 inputs are treated as single rows.
    Value stack_rows(const std::vector<Value>& parts) {
        if (parts.empty()) throw ContractError("stack_rows: no inputs");
        const std::int64_t n = parts[0]->cols();
        std::int64_t m = 0;
        for (const auto& p : parts) {
            if (p->cols() != n) {
                throw DimensionError("stack_rows: column counts disagree, " +
                                     shape_str(parts[0]->shape) + " vs " + shape_str(p->shape));
            }
            m += p->rank() <= 1 ? 1 : p->shape[0];
        }
        auto out = zeros<S>({m, n});
        std::int64_t r = 0;
        bool any_grad = false;
        std::vector<std::int64_t> offsets(parts.size());
        for (std::size_t k = 0; k < parts.size(); ++k) {
            offsets[k] = r;
            const auto& p = parts[k];
            std::copy(p->values.begin(), p->values.end(),
                      out->values.begin() + static_cast<std::ptrdiff_t>(r * n));
            r += p->rank() <= 1 ? 1 : p->shape[0];
            any_grad = any_grad || p->requires_grad;
        }
        if (grad_enabled_ && any_grad) {
            out->requires_grad = true;
            auto parts_copy = parts;
            record([parts_copy, offsets, out, n] {
                if (!out->has_grad()) return;
                for (std::size_t k = 0; k < parts_copy.size(); ++k) {
                    const auto& p = parts_copy[k];
                    if (!p->requires_grad) continue;
                    p->ensure_grad();
                    const std::size_t base = static_cast<std::size_t>(offsets[k] * n);
                    for (std::size_t i = 0; i < p->grad.size(); ++i)
                        p->grad[i] += out->grad[base + i];
                }
            });
        }
        return out;
    }

    // ---- nonlinearities ---------------------------------------------------

    // Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
    Value gelu(const Value& a) {
        constexpr double inv_sqrt2 = 0.7071067811865475244;
        auto out = zeros<S>(a->shape);
        for (std::size_t i = 0; i < out->values.size(); ++i) {
            const double x = static_cast<double>(a->values[i]);
            out->values[i] = static_cast<S>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
        }
        if (taping(a)) {
            out->requires_grad = true;
            record([a, out] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                constexpr double inv_sqrt2b = 0.7071067811865475244;
                constexpr double inv_sqrt_2pi = 0.3989422804014327;
                for (std::size_t i = 0; i < out->grad.size(); ++i) {
                    const double x = static_cast<double>(a->values[i]);
                    const double d = 0.5 * (1.0 + std::erf(x * inv_sqrt2b)) +
                                     x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
                    a->grad[i] += out->grad[i] * static_cast<S>(d);
                }
            });
        }
        return out;
    }

    // Softmax along `axis` of a 1D or 2D tensor, stabilized by
    // per-slice max subtraction.
    Value softmax(const Value& a, int axis) {
        const bool vec = a->rank() <= 1;
        const std::int64_t m = vec ? 1 : a->shape[0];
        const std::int64_t n = vec ? a->numel() : a->shape[1];
        if (a->rank() > 2) throw DimensionError("softmax: rank > 2 unsupported, " + shape_str(a->shape));
        if (axis < 0 || axis >= (vec ? 1 : 2)) {
            throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for " +
                                 shape_str(a->shape));
        }
        const bool rows = vec || axis == 1;
        auto out = zeros<S>(a->shape);
        const std::int64_t slices = rows ? m : n;
        const std::int64_t len = rows ? n : m;
        const std::int64_t stride = rows ? 1 : n;
        const std::int64_t slice_stride = rows ? n : 1;
        for (std::int64_t s = 0; s < slices; ++s) {
            const S* src = a->values.data() + s * slice_stride;
            S* dst = out->values.data() + s * slice_stride;
            S mx = src[0];
            for (std::int64_t i = 1; i < len; ++i) mx = std::max(mx, src[i * stride]);
            double sum = 0.0;
            for (std::int64_t i = 0; i < len; ++i) {
                const double e = std::exp(static_cast<double>(src[i * stride] - mx));
                dst[i * stride] = static_cast<S>(e);
                sum += e;
            }
            const S inv = static_cast<S>(1.0 / sum);
            for (std::int64_t i = 0; i < len; ++i) dst[i * stride] *= inv;
        }
        if (taping(a)) {
            out->requires_grad = true;
            record([a, out, slices, len, stride, slice_stride] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                for (std::int64_t s = 0; s < slices; ++s) {
                    const S* p = out->values.data() + s * slice_stride;
                    const S* dy = out->grad.data() + s * slice_stride;
                    S* dx = a->grad.data() + s * slice_stride;
                    S dot = 0;
                    for (std::int64_t i = 0; i < len; ++i) dot += dy[i * stride] * p[i * stride];
                    for (std::int64_t i = 0; i < len; ++i)
                        dx[i * stride] += p[i * stride] * (dy[i * stride] - dot);
                }
            });
        }
        return out;
    }

    // Layer normalization over the last axis with affine parameters.
    Value layer_norm(const Value& x, const Value& gamma, const Value& beta, double eps) {
        if (x->rank() < 1) throw DimensionError("layer_norm: scalar input");
        if (eps < 0) throw ConfigError("layer_norm: negative eps");
        const std::int64_t d = x->shape.back();
        const std::int64_t m = x->numel() / d;
        if (gamma->numel() != d || beta->numel() != d) {
            throw DimensionError("layer_norm: affine " + shape_str(gamma->shape) + "/" +
                                 shape_str(beta->shape) + " does not match last axis of " +
                                 shape_str(x->shape));
        }
        auto out = zeros<S>(x->shape);
        // Cached per-row statistics for the backward rule.
        auto xhat = std::make_shared<std::vector<S>>(x->values.size());
        auto inv_std = std::make_shared<std::vector<S>>(static_cast<std::size_t>(m));
        for (std::int64_t i = 0; i < m; ++i) {
            const S* src = x->values.data() + i * d;
            double mean = 0;
            for (std::int64_t j = 0; j < d; ++j) mean += src[j];
            mean /= static_cast<double>(d);
            double var = 0;
            for (std::int64_t j = 0; j < d; ++j) {
                const double c = src[j] - mean;
                var += c * c;
            }
            var /= static_cast<double>(d);
            const double inv = 1.0 / std::sqrt(var + eps);
            (*inv_std)[static_cast<std::size_t>(i)] = static_cast<S>(inv);
            for (std::int64_t j = 0; j < d; ++j) {
                const S xh = static_cast<S>((src[j] - mean) * inv);
                (*xhat)[static_cast<std::size_t>(i * d + j)] = xh;
                out->values[static_cast<std::size_t>(i * d + j)] =
                    gamma->values[static_cast<std::size_t>(j)] * xh +
                    beta->values[static_cast<std::size_t>(j)];
            }
        }
        if (taping(x, gamma, beta)) {
            out->requires_grad = true;
            record([x, gamma, beta, out, xhat, inv_std, m, d] {
                if (!out->has_grad()) return;
                if (gamma->requires_grad) gamma->ensure_grad();
                if (beta->requires_grad) beta->ensure_grad();
                if (x->requires_grad) x->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    const S* dy = out->grad.data() + i * d;
                    const S* xh = xhat->data() + i * d;
                    if (gamma->requires_grad || beta->requires_grad) {
                        for (std::int64_t j = 0; j < d; ++j) {
                            if (gamma->requires_grad) gamma->grad[static_cast<std::size_t>(j)] += dy[j] * xh[j];
                            if (beta->requires_grad) beta->grad[static_cast<std::size_t>(j)] += dy[j];
                        }
                    }
                    if (x->requires_grad) {
                        double mean_dxhat = 0, mean_dxhat_xhat = 0;
                        for (std::int64_t j = 0; j < d; ++j) {
                            const double dxh = static_cast<double>(dy[j]) *
                                               static_cast<double>(gamma->values[static_cast<std::size_t>(j)]);
                            mean_dxhat += dxh;
                            mean_dxhat_xhat += dxh * xh[j];
                        }
                        mean_dxhat /= static_cast<double>(d);
                        mean_dxhat_xhat /= static_cast<double>(d);
                        const double inv = (*inv_std)[static_cast<std::size_t>(i)];
                        S* dx = x->grad.data() + i * d;
                        for (std::int64_t j = 0; j < d; ++j) {
                            const double dxh = static_cast<double>(dy[j]) *
                                               static_cast<double>(gamma->values[static_cast<std::size_t>(j)]);
                            dx[j] += static_cast<S>((dxh - mean_dxhat - xh[j] * mean_dxhat_xhat) * inv);
                        }
                    }
                }
            });
        }
        return out;
    }

    // Rows scaled to unit L2 norm; eps is added to the norm so a zero
    // row maps to zero instead of NaN.
    Value l2_normalize_rows(const Value& x, double eps) {
        require_rank2(*x, "l2_normalize_rows");
        const std::int64_t m = x->shape[0], n = x->shape[1];
        auto out = zeros<S>(x->shape);
        auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(m));
        for (std::int64_t i = 0; i < m; ++i) {
            const S* src = x->values.data() + i * n;
            double ss = 0;
            for (std::int64_t j = 0; j < n; ++j) ss += static_cast<double>(src[j]) * src[j];
            const double norm = std::sqrt(ss);
            (*norms)[static_cast<std::size_t>(i)] = norm;
            const double inv = 1.0 / (norm + eps);
            for (std::int64_t j = 0; j < n; ++j)
                out->values[static_cast<std::size_t>(i * n + j)] = static_cast<S>(src[j] * inv);
        }
        if (taping(x)) {
            out->requires_grad = true;
            record([x, out, norms, m, n, eps] {
                if (!out->has_grad() || !x->requires_grad) return;
                x->ensure_grad();
                for (std::int64_t i = 0; i < m; ++i) {
                    const S* dy = out->grad.data() + i * n;
                    const S* xv = x->values.data() + i * n;
                    S* dx = x->grad.data() + i * n;
                    const double norm = std::max((*norms)[static_cast<std::size_t>(i)], 1e-30);
                    const double nr = norm + eps;
                    double dot = 0;
                    for (std::int64_t j = 0; j < n; ++j) dot += static_cast<double>(dy[j]) * xv[j];
                    const double c = dot / (nr * nr * norm);
                    for (std::int64_t j = 0; j < n; ++j)
                        dx[j] += static_cast<S>(dy[j] / nr - xv[j] * c);
                }
            });
        }
        return out;
    }

    // ---- reductions -------------------------------------------------------

    Value sum_all(const Value& a) {
        double acc = 0;
        for (const S v : a->values) acc += v;
        auto out = make_tensor<S>({1}, {static_cast<S>(acc)});
        if (taping(a)) {
            out->requires_grad = true;
            record([a, out] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                const S g = out->grad[0];
                for (auto& x : a->grad) x += g;
            });
        }
        return out;
    }

    Value mean_all(const Value& a) {
        const double inv = 1.0 / static_cast<double>(a->numel());
        double acc = 0;
        for (const S v : a->values) acc += v;
        auto out = make_tensor<S>({1}, {static_cast<S>(acc * inv)});
        if (taping(a)) {
            out->requires_grad = true;
            record([a, out, inv] {
                if (!out->has_grad() || !a->requires_grad) return;
                a->ensure_grad();
                const S g = static_cast<S>(out->grad[0] * inv);
                for (auto& x : a->grad) x += g;
            });
        }
        return out;
    }

    // ---- classification losses --------------------------------------------

    // Cross-entropy of softmax(logits) against an integer label,
    // computed with the log-sum-exp trick. Gradient w.r.t. the logits
    // is softmax(logits) - onehot(label).
    Value cross_entropy(const Value& logits, std::int64_t label) {
        return focal_cross_entropy(logits, label, 0.0);
    }

    // Focal cross-entropy: (1 - p_label)^gamma * (-log p_label).
    // gamma == 0 reduces exactly to cross-entropy.
    Value focal_cross_entropy(const Value& logits, std::int64_t label, double gamma) {
        if (logits->rank() > 2 || (logits->rank() == 2 && logits->shape[0] != 1)) {
            throw DimensionError("focal_cross_entropy: logits must be one row, got " +
                                 shape_str(logits->shape));
        }
        if (gamma < 0) throw ContractError("focal_cross_entropy: negative gamma");
        const std::int64_t k = logits->numel();
        if (label < 0 || label >= k) {
            throw ContractError("focal_cross_entropy: label " + std::to_string(label) +
                                " outside [0," + std::to_string(k) + ")");
        }
        double loss = 0;
        auto probs = std::make_shared<std::vector<double>>(static_cast<std::size_t>(k));
        row_focal(logits->values.data(), k, label, gamma, loss, probs->data());
        auto out = make_tensor<S>({1}, {static_cast<S>(loss)});
        if (taping(logits)) {
            out->requires_grad = true;
            record([logits, out, probs, k, label, gamma] {
                if (!out->has_grad() || !logits->requires_grad) return;
                logits->ensure_grad();
                const double g = out->grad[0];
                std::vector<double> dz(static_cast<std::size_t>(k));
                row_focal_backward(probs->data(), k, label, gamma, dz.data());
                for (std::int64_t j = 0; j < k; ++j)
                    logits->grad[static_cast<std::size_t>(j)] += static_cast<S>(g * dz[static_cast<std::size_t>(j)]);
            });
        }
        return out;
    }

    // Mean focal cross-entropy over rows of a logit matrix. Labels of
    // ignore_label are excluded from the mean.
    Value focal_cross_entropy_rows(const Value& logits, const std::vector<std::int32_t>& labels,
                                   double gamma, std::int32_t ignore_label = -1) {
        require_rank2(*logits, "focal_cross_entropy_rows");
        const std::int64_t m = logits->shape[0], k = logits->shape[1];
        if (static_cast<std::int64_t>(labels.size()) != m) {
            throw DimensionError("focal_cross_entropy_rows: " + std::to_string(labels.size()) +
                                 " labels for " + shape_str(logits->shape));
        }
        if (gamma < 0) throw ContractError("focal_cross_entropy_rows: negative gamma");
        std::int64_t active = 0;
        double total = 0;
        auto probs = std::make_shared<std::vector<double>>(logits->values.size());
        for (std::int64_t i = 0; i < m; ++i) {
            if (labels[static_cast<std::size_t>(i)] == ignore_label) continue;
            const std::int64_t label = labels[static_cast<std::size_t>(i)];
            if (label < 0 || label >= k) {
                throw ContractError("focal_cross_entropy_rows: label " + std::to_string(label) +
                                    " outside [0," + std::to_string(k) + ") at row " +
                                    std::to_string(i));
            }
            double loss = 0;
            row_focal(logits->values.data() + i * k, k, label, gamma, loss, probs->data() + i * k);
            total += loss;
            ++active;
        }
        if (active == 0) throw DataError("focal_cross_entropy_rows: every row is ignored");
        auto out = make_tensor<S>({1}, {static_cast<S>(total / static_cast<double>(active))});
        if (taping(logits)) {
            out->requires_grad = true;
            auto labels_copy = labels;
            record([logits, out, probs, labels_copy, m, k, gamma, ignore_label, active] {
                if (!out->has_grad() || !logits->requires_grad) return;
                logits->ensure_grad();
                const double g = out->grad[0] / static_cast<double>(active);
                std::vector<double> dz(static_cast<std::size_t>(k));
                for (std::int64_t i = 0; i < m; ++i) {
                    const std::int32_t label = labels_copy[static_cast<std::size_t>(i)];
                    if (label == ignore_label) continue;
                    row_focal_backward(probs->data() + i * k, k, label, gamma, dz.data());
                    for (std::int64_t j = 0; j < k; ++j)
                        logits->grad[static_cast<std::size_t>(i * k + j)] +=
                            static_cast<S>(g * dz[static_cast<std::size_t>(j)]);
                }
            });
        }
        return out;
    }

    // ---- backward ----------------------------------------------------------

    // Reverse sweep from a scalar loss. Populates grad for every
    // requires_grad ancestor exactly once, accumulating across fan-out
    // and across repeated backward calls (callers zero leaf grads
    // between optimization steps).
    void backward(const Value& loss) {
        if (loss->numel() != 1) {
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss->shape));
        }
        loss->ensure_grad();
        loss->grad[0] += S(1);
        for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    }

    // Temporarily disable taping (inference).
    void set_grad_enabled(bool on) { grad_enabled_ = on; }

private:
    std::vector<std::function<void()>> tape_;
    bool grad_enabled_ = true;

    void record(std::function<void()> fn) { tape_.push_back(std::move(fn)); }

    bool taping(const Value& a) const { return grad_enabled_ && a->requires_grad; }
    bool taping(const Value& a, const Value& b) const {
        return grad_enabled_ && (a->requires_grad || b->requires_grad);
    }
    bool taping(const Value& a, const Value& b, const Value& c) const {
        return grad_enabled_ && (a->requires_grad || b->requires_grad || c->requires_grad);
    }

    static void require_rank2(const TensorT<S>& t, const char* what) {
        if (t.rank() != 2) {
            throw DimensionError(std::string(what) + ": expected rank-2 tensor, got " +
                                 shape_str(t.shape));
        }
    }

    static void require_same_shape(const TensorT<S>& a, const TensorT<S>& b, const char* what) {
        if (a.shape != b.shape) {
            throw DimensionError(std::string(what) + ": shapes " + shape_str(a.shape) + " and " +
                                 shape_str(b.shape) + " differ");
        }
    }

    static void row_focal(const S* logits, std::int64_t k, std::int64_t label, double gamma,
                          double& loss, double* probs) {
        double mx = logits[0];
        for (std::int64_t j = 1; j < k; ++j) mx = std::max(mx, static_cast<double>(logits[j]));
        double sum = 0;
        for (std::int64_t j = 0; j < k; ++j) {
            probs[j] = std::exp(static_cast<double>(logits[j]) - mx);
            sum += probs[j];
        }
        for (std::int64_t j = 0; j < k; ++j) probs[j] /= sum;
        const double pl = std::max(probs[label], 1e-12);
        const double nll = -std::log(pl);
        loss = gamma == 0.0 ? nll : std::pow(1.0 - probs[label], gamma) * nll;
    }

    static void row_focal_backward(const double* probs, std::int64_t k, std::int64_t label,
                                   double gamma, double* dz) {
        const double pl = std::max(probs[label], 1e-12);
        double dl_dp;  // d loss / d p_label
        if (gamma == 0.0) {
            dl_dp = -1.0 / pl;
        } else {
            const double u = std::max(1.0 - pl, 1e-12);
            dl_dp = -gamma * std::pow(u, gamma - 1.0) * (-std::log(pl)) - std::pow(u, gamma) / pl;
        }
        // dp_label/dz_j = p_label (delta_jl - p_j)
        for (std::int64_t j = 0; j < k; ++j) {
            const double delta = j == label ? 1.0 : 0.0;
            dz[j] = dl_dp * pl * (delta - probs[j]);
        }
    }
};

using Graph = GraphT<float>;
using Graph64 = GraphT<double>;

}  // namespace exchanger
