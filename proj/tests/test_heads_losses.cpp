#include <doctest.h>

#include <cmath>

#include <exchanger/heads.hpp>

#include "support/fd_suite.hpp"
#include "support/gradcheck.hpp"

using namespace exchanger;
using testsupport::rand_mat;

TEST_CASE("pools: constant input, two-element mean, permutation invariance") {
    Graph g;
    auto feats = make_tensor<float>({3, 2}, {0.5f, -1.f, 0.5f, -1.f, 0.5f, -1.f});
    auto pooled = mil_pool(g, feats, {1, 1, 1});
    CHECK(pooled->values[0] == doctest::Approx(0.5f));
    CHECK(pooled->values[1] == doctest::Approx(-1.f));

    auto two = make_tensor<float>({2, 2}, {1, 0, 0, 1});
    auto mean = mil_pool(g, two, {1, 1});
    CHECK(mean->values[0] == doctest::Approx(0.5f));
    CHECK(mean->values[1] == doctest::Approx(0.5f));

    auto a = make_tensor<float>({3, 2}, {1, 2, 3, 4, 5, 6});
    auto b = make_tensor<float>({3, 2}, {5, 6, 1, 2, 3, 4});  // rows permuted
    auto pa = mil_pool(g, a, {1, 1, 1});
    auto pb = mil_pool(g, b, {1, 1, 1});
    CHECK(pa->values[0] == doctest::Approx(pb->values[0]));
    CHECK(pa->values[1] == doctest::Approx(pb->values[1]));

    CHECK_THROWS_AS(mil_pool(g, a, {0, 0, 0}), DataError);
}

TEST_CASE("temporal pool ignores masked steps and their junk values") {
    Graph g;
    auto enc = make_tensor<float>({3, 2}, {1, 2, 999, -999, 3, 4});
    auto pooled = temporal_pool(g, enc, {1, 0, 1});
    CHECK(pooled->values[0] == doctest::Approx(2.f));
    CHECK(pooled->values[1] == doctest::Approx(3.f));

    // masked mean over a single valid step is that step
    auto one = temporal_pool(g, enc, {0, 1, 0});
    CHECK(one->values[0] == doctest::Approx(999.f));
    CHECK_THROWS_AS(temporal_pool(g, enc, {0, 0, 0}), DataError);
}

TEST_CASE("cosine loss of a feature aligned with its prototype") {
    // logits [1, 0] at s=1 -> loss = ln(1 + e^-1)
    CosineClassifierParams<double> cp;
    cp.prototypes = make_tensor<double>({2, 3}, {2, 0, 0, 0, 5, 0}, true);  // scaled prototypes
    cp.scale = make_tensor<double>({1}, {1.0}, true);
    auto feature = make_tensor<double>({1, 3}, {0.7, 0, 0});  // same direction as class 0
    Graph64 g;
    auto loss = cosine_softmax_loss(g, cp, feature, 0);
    CHECK(loss->values[0] == doctest::Approx(0.31326169).epsilon(1e-6));

    CHECK_THROWS_AS(cosine_softmax_loss(g, cp, feature, 2), ContractError);
}

TEST_CASE("identical prototypes give log K regardless of the feature") {
    CosineClassifierParams<double> cp;
    cp.prototypes = make_tensor<double>({3, 2}, {1, 2, 1, 2, 1, 2});
    cp.scale = make_tensor<double>({1}, {10.0});
    Rng rng(4);
    for (int it = 0; it < 5; ++it) {
        auto f = rand_mat(rng, 1, 2);
        Graph64 g;
        auto loss = cosine_softmax_loss(g, cp, f, it % 3);
        CHECK(loss->values[0] == doctest::Approx(std::log(3.0)).epsilon(1e-9));
    }
}

TEST_CASE("cosine loss is invariant to positive rescaling of feature and prototypes") {
    Rng rng(5);
    CosineClassifierParams<double> cp;
    cp.prototypes = rand_mat(rng, 4, 6);
    cp.scale = make_tensor<double>({1}, {7.0});
    auto f = rand_mat(rng, 1, 6);
    Graph64 g;
    const double base = cosine_softmax_loss(g, cp, f, 2)->values[0];

    // invariance holds up to the 1e-8 epsilon guard on the norms
    auto f_scaled = zeros<double>({1, 6});
    for (std::size_t i = 0; i < 6; ++i) f_scaled->values[i] = 123.0 * f->values[i];
    CHECK(cosine_softmax_loss(g, cp, f_scaled, 2)->values[0] ==
          doctest::Approx(base).epsilon(1e-6));

    CosineClassifierParams<double> cp2;
    cp2.prototypes = zeros<double>({4, 6});
    for (std::size_t i = 0; i < cp.prototypes->values.size(); ++i)
        cp2.prototypes->values[i] = 0.037 * cp.prototypes->values[i];
    cp2.scale = cp.scale;
    CHECK(cosine_softmax_loss(g, cp2, f, 2)->values[0] == doctest::Approx(base).epsilon(1e-6));
}

TEST_CASE("zero-norm feature survives through the epsilon guard") {
    CosineClassifierParams<double> cp;
    cp.prototypes = make_tensor<double>({2, 3}, {1, 0, 0, 0, 1, 0}, true);
    cp.scale = make_tensor<double>({1}, {5.0}, true);
    auto f = zeros<double>({1, 3});
    f->requires_grad = true;
    Graph64 g;
    auto loss = cosine_softmax_loss(g, cp, f, 0);
    CHECK(std::isfinite(loss->values[0]));
    g.backward(loss);
    for (const double gv : f->grad) CHECK(std::isfinite(gv));
}

TEST_CASE("cosine loss gradient check") {
    Rng rng(6);
    CosineClassifierParams<double> cp;
    cp.prototypes = rand_mat(rng, 3, 4);
    cp.scale = make_tensor<double>({1}, {3.0});
    auto f = rand_mat(rng, 1, 4);
    auto rep = testsupport::check_gradients(
        [&](Graph64& g) { return cosine_softmax_loss(g, cp, f, 1); },
        {f, cp.prototypes, cp.scale});
    CHECK_MESSAGE(rep.ok, rep.detail);
}

TEST_CASE("focal loss reduces to cross entropy at gamma zero") {
    Rng rng(7);
    for (int it = 0; it < 20; ++it) {
        auto logits = rand_mat(rng, 1, 5, 3.0);
        const std::int64_t label = static_cast<std::int64_t>(rng.uniform_index(5));
        Graph64 g;
        const double focal = g.focal_cross_entropy(logits, label, 0.0)->values[0];
        const double ce = g.cross_entropy(logits, label)->values[0];
        CHECK(focal == doctest::Approx(ce).epsilon(1e-7));
    }
}

TEST_CASE("focal loss frozen value and vanishing limit") {
    Graph g;
    auto logits = make_tensor<float>({1, 2}, {0, 0});
    // p = 0.5, (0.5)^2 * ln 2
    CHECK(g.focal_cross_entropy(logits, 0, 2.0)->values[0] ==
          doctest::Approx(0.17328680f).epsilon(1e-5));

    auto confident = make_tensor<float>({1, 2}, {30.f, -30.f});
    CHECK(g.focal_cross_entropy(confident, 0, 2.0)->values[0] ==
          doctest::Approx(0.0).epsilon(1e-9));

    CHECK_THROWS_AS(g.focal_cross_entropy(logits, 0, -1.0), ContractError);
}

TEST_CASE("dense head: zero weights give uniform probabilities, 1x1 grid is plain classification") {
    Graph g;
    DenseHeadParams<float> dh;
    dh.w = zeros<float>({4, 3});
    dh.b = zeros<float>({3});
    auto feats = make_tensor<float>({5, 4}, std::vector<float>(20, 0.37f));
    auto logits = dense_head(g, dh, feats);
    auto probs = g.softmax(logits, 1);
    for (const float p : probs->values) CHECK(p == doctest::Approx(1.f / 3).epsilon(1e-6));

    DenseHeadParams<float> dh2;
    Rng rng(8);
    dh2.w = randn<float>({4, 3}, rng, 1.0);
    dh2.b = randn<float>({3}, rng, 1.0);
    auto one_pixel = rand_mat(rng, 1, 4);
    auto single = zeros<float>({1, 4});
    for (std::size_t i = 0; i < 4; ++i) single->values[i] = static_cast<float>(one_pixel->values[i]);
    auto lg = dense_head(g, dh2, single);
    // same operation as a plain linear classification of one feature row
    auto manual = g.add_row(g.matmul(single, dh2.w), dh2.b);
    for (std::size_t i = 0; i < 3; ++i) CHECK(lg->values[i] == manual->values[i]);
}

TEST_CASE("dense head reproduces a fitted linear probe") {
    // Oracle: logistic-regression probe fitted by plain gradient descent
    // on a small separable feature set, independent of the graph engine.
    Rng rng(9);
    const int n = 90, d = 3, k = 3;
    std::vector<double> x(static_cast<std::size_t>(n * d));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int cls = i % k;
        y[static_cast<std::size_t>(i)] = cls;
        for (int j = 0; j < d; ++j)
            x[static_cast<std::size_t>(i * d + j)] = (j == cls ? 2.0 : 0.0) + rng.normal(0, 0.3);
    }
    std::vector<double> w(static_cast<std::size_t>(d * k), 0.0), b(static_cast<std::size_t>(k), 0.0);
    for (int iter = 0; iter < 400; ++iter) {
        std::vector<double> gw(w.size(), 0.0), gb(b.size(), 0.0);
        for (int i = 0; i < n; ++i) {
            std::vector<double> z(static_cast<std::size_t>(k));
            for (int c = 0; c < k; ++c) {
                double acc = b[static_cast<std::size_t>(c)];
                for (int j = 0; j < d; ++j)
                    acc += x[static_cast<std::size_t>(i * d + j)] * w[static_cast<std::size_t>(j * k + c)];
                z[static_cast<std::size_t>(c)] = acc;
            }
            double mx = z[0];
            for (const double v : z) mx = std::max(mx, v);
            double sum = 0;
            for (auto& v : z) {
                v = std::exp(v - mx);
                sum += v;
            }
            for (auto& v : z) v /= sum;
            for (int c = 0; c < k; ++c) {
                const double err = z[static_cast<std::size_t>(c)] - (c == y[static_cast<std::size_t>(i)] ? 1 : 0);
                gb[static_cast<std::size_t>(c)] += err;
                for (int j = 0; j < d; ++j)
                    gw[static_cast<std::size_t>(j * k + c)] += err * x[static_cast<std::size_t>(i * d + j)];
            }
        }
        for (std::size_t i2 = 0; i2 < w.size(); ++i2) w[i2] -= 0.05 * gw[i2] / n;
        for (std::size_t i2 = 0; i2 < b.size(); ++i2) b[i2] -= 0.05 * gb[i2] / n;
    }
    auto probe_accuracy = [&]() {
        int correct = 0;
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double bv = -1e300;
            for (int c = 0; c < k; ++c) {
                double acc = b[static_cast<std::size_t>(c)];
                for (int j = 0; j < d; ++j)
                    acc += x[static_cast<std::size_t>(i * d + j)] * w[static_cast<std::size_t>(j * k + c)];
                if (acc > bv) {
                    bv = acc;
                    best = c;
                }
            }
            if (best == y[static_cast<std::size_t>(i)]) ++correct;
        }
        return correct;
    }();

    DenseHeadParams<float> dh;
    dh.w = zeros<float>({d, k});
    dh.b = zeros<float>({k});
    for (std::size_t i = 0; i < w.size(); ++i) dh.w->values[i] = static_cast<float>(w[i]);
    for (std::size_t i = 0; i < b.size(); ++i) dh.b->values[i] = static_cast<float>(b[i]);
    auto feats = zeros<float>({n, d});
    for (std::size_t i = 0; i < x.size(); ++i) feats->values[i] = static_cast<float>(x[i]);
    Graph g;
    auto logits = dense_head(g, dh, feats);
    int correct = 0;
    for (int i = 0; i < n; ++i) {
        int best = 0;
        for (int c = 1; c < k; ++c)
            if (logits->at(i, c) > logits->at(i, best)) best = c;
        if (best == y[static_cast<std::size_t>(i)]) ++correct;
    }
    CHECK(correct == probe_accuracy);
    CHECK(correct >= n * 9 / 10);  // the probe itself fits this set
}

TEST_CASE("projector output changes with the feature and keeps shape") {
    auto pp = init_projector<float>(8, 16, 6, 3);
    Rng rng(10);
    auto f = zeros<float>({1, 8});
    for (auto& v : f->values) v = static_cast<float>(rng.normal());
    Graph g;
    auto z = projector_forward(g, pp, f);
    CHECK(z->shape == Shape{1, 6});
}
