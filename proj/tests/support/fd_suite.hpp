#pragma once

// Finite-difference coverage of every differentiable operation and of
// the full encoder forward pass, run in 64-bit mode. Shared between the
// unit tests (few instances) and the acceptance gradient suite (20+).

#include <functional>
#include <string>
#include <vector>

#include <exchanger/bench.hpp>
#include <exchanger/graph.hpp>
#include <exchanger/heads.hpp>
#include <exchanger/model.hpp>
#include <exchanger/random.hpp>

#include "gradcheck.hpp"

namespace testsupport {

using exchanger::ExchangerConfig;
using exchanger::Graph64;
using exchanger::Rng;
using exchanger::ValuePtr;

struct OpReport {
    std::string op;
    int instances = 0;
    bool ok = true;
    double max_scaled_diff = 0;
    std::string detail;
};

inline ValuePtr<double> rand_mat(Rng& rng, std::int64_t r, std::int64_t c, double scale = 1.0) {
    return exchanger::randn<double>({r, c}, rng, scale);
}

// Scalarize a tensor output with a fixed random projection so the
// check exercises the whole Jacobian.
inline ValuePtr<double> project(Graph64& g, const ValuePtr<double>& out, const ValuePtr<double>& probe) {
    return g.sum_all(g.mul(out, probe));
}

// Runs `instances` random gradient checks named `op` through `run`,
// where run(rng) performs one check and returns its report.
template <typename Fn>
OpReport run_op_check(const std::string& op, int instances, std::uint64_t seed, Fn&& run) {
    OpReport rep;
    rep.op = op;
    rep.instances = instances;
    for (int i = 0; i < instances; ++i) {
        Rng rng(exchanger::mix_seed(seed, exchanger::fnv1a64(op) + static_cast<std::uint64_t>(i)));
        GradCheckReport r = run(rng);
        rep.max_scaled_diff = std::max(rep.max_scaled_diff, r.max_scaled_diff);
        if (!r.ok && rep.ok) {
            rep.ok = false;
            rep.detail = r.detail;
        }
    }
    return rep;
}

inline std::vector<OpReport> run_fd_suite(int instances, std::uint64_t seed) {
    using namespace exchanger;
    std::vector<OpReport> reports;
    auto dim = [](Rng& rng, std::int64_t lo, std::int64_t hi) {
        return lo + static_cast<std::int64_t>(rng.uniform_index(static_cast<std::uint64_t>(hi - lo + 1)));
    };

    reports.push_back(run_op_check("matmul", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 5), k = dim(rng, 1, 5), n = dim(rng, 1, 5);
        auto a = rand_mat(rng, m, k);
        auto b = rand_mat(rng, k, n);
        auto probe = rand_mat(rng, m, n);
        return check_gradients([&](Graph64& g) { return project(g, g.matmul(a, b), probe); },
                               {a, b});
    }));

    reports.push_back(run_op_check("transpose", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 5), n = dim(rng, 1, 5);
        auto a = rand_mat(rng, m, n);
        auto probe = rand_mat(rng, n, m);
        return check_gradients([&](Graph64& g) { return project(g, g.transpose(a), probe); }, {a});
    }));

    reports.push_back(run_op_check("add", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 5), n = dim(rng, 1, 5);
        auto a = rand_mat(rng, m, n);
        auto b = rand_mat(rng, m, n);
        auto probe = rand_mat(rng, m, n);
        return check_gradients([&](Graph64& g) { return project(g, g.add(a, b), probe); }, {a, b});
    }));

    reports.push_back(run_op_check("add_row", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 5), n = dim(rng, 1, 5);
        auto a = rand_mat(rng, m, n);
        auto row = exchanger::randn<double>({n}, rng, 1.0);
        auto probe = rand_mat(rng, m, n);
        return check_gradients([&](Graph64& g) { return project(g, g.add_row(a, row), probe); },
                               {a, row});
    }));

    reports.push_back(run_op_check("mul", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 5), n = dim(rng, 1, 5);
        auto a = rand_mat(rng, m, n);
        auto b = rand_mat(rng, m, n);
        auto probe = rand_mat(rng, m, n);
        return check_gradients([&](Graph64& g) { return project(g, g.mul(a, b), probe); }, {a, b});
    }));

    reports.push_back(run_op_check("scale", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 5), n = dim(rng, 1, 5);
        auto a = rand_mat(rng, m, n);
        auto probe = rand_mat(rng, m, n);
        const double c = rng.uniform(-2, 2);
        return check_gradients([&](Graph64& g) { return project(g, g.scale(a, c), probe); }, {a});
    }));

    reports.push_back(run_op_check("scale_by", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 4), n = dim(rng, 1, 4);
        auto a = rand_mat(rng, m, n);
        auto s = exchanger::randn<double>({1}, rng, 1.0);
        auto probe = rand_mat(rng, m, n);
        return check_gradients([&](Graph64& g) { return project(g, g.scale_by(a, s), probe); },
                               {a, s});
    }));

    reports.push_back(run_op_check("concat_cols", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 4), p = dim(rng, 1, 4), q = dim(rng, 1, 4);
        auto a = rand_mat(rng, m, p);
        auto b = rand_mat(rng, m, q);
        auto probe = rand_mat(rng, m, p + q);
        return check_gradients([&](Graph64& g) { return project(g, g.concat_cols(a, b), probe); },
                               {a, b});
    }));

    reports.push_back(run_op_check("slice_cols", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 4), n = dim(rng, 2, 6);
        const auto c0 = dim(rng, 0, n - 1);
        const auto c1 = dim(rng, c0 + 1, n);
        auto a = rand_mat(rng, m, n);
        auto probe = rand_mat(rng, m, c1 - c0);
        return check_gradients(
            [&](Graph64& g) { return project(g, g.slice_cols(a, c0, c1), probe); }, {a});
    }));

    reports.push_back(run_op_check("stack_rows", instances, seed, [&](Rng& rng) {
        const auto n = dim(rng, 1, 4);
        auto a = rand_mat(rng, dim(rng, 1, 3), n);
        auto b = rand_mat(rng, dim(rng, 1, 3), n);
        auto c = rand_mat(rng, 1, n);
        auto probe = rand_mat(rng, a->shape[0] + b->shape[0] + 1, n);
        return check_gradients(
            [&](Graph64& g) { return project(g, g.stack_rows({a, b, c}), probe); }, {a, b, c});
    }));

    reports.push_back(run_op_check("gelu", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 4), n = dim(rng, 1, 4);
        auto a = rand_mat(rng, m, n, 2.0);
        auto probe = rand_mat(rng, m, n);
        return check_gradients([&](Graph64& g) { return project(g, g.gelu(a), probe); }, {a});
    }));

    reports.push_back(run_op_check("softmax_rows", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 4), n = dim(rng, 2, 6);
        auto a = rand_mat(rng, m, n, 2.0);
        auto probe = rand_mat(rng, m, n);
        return check_gradients([&](Graph64& g) { return project(g, g.softmax(a, 1), probe); }, {a});
    }));

    reports.push_back(run_op_check("softmax_cols", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 2, 5), n = dim(rng, 1, 4);
        auto a = rand_mat(rng, m, n, 2.0);
        auto probe = rand_mat(rng, m, n);
        return check_gradients([&](Graph64& g) { return project(g, g.softmax(a, 0), probe); }, {a});
    }));

    reports.push_back(run_op_check("layer_norm", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 4), n = dim(rng, 2, 6);
        auto x = rand_mat(rng, m, n);
        auto gain = exchanger::randn<double>({n}, rng, 1.0);
        auto bias = exchanger::randn<double>({n}, rng, 1.0);
        auto probe = rand_mat(rng, m, n);
        return check_gradients(
            [&](Graph64& g) {
                return project(g, g.layer_norm(x, gain, bias, 1e-5), probe);
            },
            {x, gain, bias});
    }));

    reports.push_back(run_op_check("l2_normalize_rows", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 1, 4), n = dim(rng, 2, 6);
        auto x = rand_mat(rng, m, n);
        auto probe = rand_mat(rng, m, n);
        return check_gradients(
            [&](Graph64& g) { return project(g, g.l2_normalize_rows(x, 1e-8), probe); }, {x});
    }));

    reports.push_back(run_op_check("sum_all", instances, seed, [&](Rng& rng) {
        auto x = rand_mat(rng, dim(rng, 1, 4), dim(rng, 1, 4));
        return check_gradients([&](Graph64& g) { return g.sum_all(g.mul(x, x)); }, {x});
    }));

    reports.push_back(run_op_check("mean_all", instances, seed, [&](Rng& rng) {
        auto x = rand_mat(rng, dim(rng, 1, 4), dim(rng, 1, 4));
        return check_gradients([&](Graph64& g) { return g.mean_all(g.mul(x, x)); }, {x});
    }));

    reports.push_back(run_op_check("cross_entropy", instances, seed, [&](Rng& rng) {
        const auto k = dim(rng, 2, 6);
        auto logits = rand_mat(rng, 1, k, 2.0);
        const auto label = dim(rng, 0, k - 1);
        return check_gradients([&](Graph64& g) { return g.cross_entropy(logits, label); },
                               {logits});
    }));

    reports.push_back(run_op_check("focal_cross_entropy", instances, seed, [&](Rng& rng) {
        const auto k = dim(rng, 2, 6);
        auto logits = rand_mat(rng, 1, k, 2.0);
        const auto label = dim(rng, 0, k - 1);
        const double gamma = rng.uniform(0.5, 3.0);
        return check_gradients(
            [&](Graph64& g) { return g.focal_cross_entropy(logits, label, gamma); }, {logits});
    }));

    reports.push_back(run_op_check("focal_cross_entropy_rows", instances, seed, [&](Rng& rng) {
        const auto m = dim(rng, 2, 5), k = dim(rng, 2, 5);
        auto logits = rand_mat(rng, m, k, 2.0);
        std::vector<std::int32_t> labels(static_cast<std::size_t>(m));
        for (auto& l : labels) l = static_cast<std::int32_t>(dim(rng, 0, k - 1));
        labels[0] = -1;  // one ignored row
        const double gamma = rng.uniform(0.0, 3.0);
        return check_gradients(
            [&](Graph64& g) { return g.focal_cross_entropy_rows(logits, labels, gamma, -1); },
            {logits});
    }));

    return reports;
}

// Random tiny encoder instance: gradient of a projected forward output
// w.r.t. every stage parameter.
inline OpReport run_exchanger_fd(int instances, std::uint64_t seed, bool masked_steps = true) {
    using namespace exchanger;
    return run_op_check("exchanger_forward", instances, seed, [&](Rng& rng) {
        ExchangerConfig cfg;
        cfg.width = 8;
        cfg.heads = 2;
        cfg.clusters = 2;
        cfg.stages = 2;
        cfg.ffn_expansion = 2;
        cfg.token_mlp_hidden = 3;
        const std::int64_t t_len = 3 + static_cast<std::int64_t>(rng.uniform_index(3));
        auto stages = init_exchanger_params<double>(cfg, rng.next_u64());
        auto tokens = rand_mat(rng, t_len, cfg.width);
        auto positions = rand_mat(rng, t_len, cfg.width);
        std::vector<std::uint8_t> mask(static_cast<std::size_t>(t_len), 1);
        if (masked_steps && t_len > 1 && rng.uniform() < 0.5)
            mask[rng.uniform_index(mask.size())] = 0;
        auto probe = rand_mat(rng, t_len, cfg.width);
        std::vector<ValuePtr<double>> params;
        for (auto& sp : stages) {
            sp.for_each_param("", [&](const std::string&, ValuePtr<double>& t) {
                params.push_back(t);
            });
        }
        params.push_back(tokens);
        return check_gradients(
            [&](Graph64& g) {
                return project(g, exchanger_forward(g, cfg, stages, tokens, positions, mask),
                               probe);
            },
            params);
    });
}

}  // namespace testsupport
