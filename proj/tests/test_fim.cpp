#include <catch_amalgamated.hpp>

#include <chrono>
#include <cmath>

#include "taskprior/fim.hpp"
#include "test_util.hpp"

using namespace taskprior;
using testutil::toy_graph_dataset;
using testutil::toy_node_dataset;

namespace {

// Independent accumulation: per prediction unit, per class, square the
// public per-example gradient and weight it by the class posterior.
FimDiagonal brute_force_fim(const ModelParams& params, const GraphDataset& ds) {
    FimDiagonal diag;
    diag.entries.assign(mp_param_count(params), 0.0);
    int units = 0;
    for (std::size_t g = 0; g < ds.graphs.size(); ++g) {
        const Matrix probs = forward(params, ds, static_cast<int>(g));
        for (int u : ds.splits.train) {
            const auto [gi, row] = ds.unit_location(u);
            if (gi != static_cast<int>(g)) continue;
            for (int y = 0; y < ds.num_classes; ++y) {
                const Vector grad = loglik_grad_mp(params, ds, gi, row, y);
                for (std::size_t i = 0; i < grad.size(); ++i)
                    diag.entries[i] += probs(row, y) * grad[i] * grad[i];
            }
            ++units;
        }
    }
    for (double& v : diag.entries) v /= units;
    return diag;
}

GraphDataset five_node_dataset() {
    GraphDataset ds;
    ds.level = TaskLevel::node;
    ds.num_classes = 2;
    Graph g;
    g.node_features = Matrix(5, 3);
    Rng rng(123);
    for (double& x : g.node_features.data) x = rng.gaussian();
    g.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {0, 4}, {1, 3}};
    g.labels = {0, 1, 0, 1, 1};
    ds.graphs.push_back(std::move(g));
    ds.splits.train = {0, 1, 2, 3, 4};
    ds.check();
    return ds;
}

}  // namespace

TEST_CASE("moments of a diagonal", "[fim]") {
    REQUIRE(fim_moments(FimDiagonal{{1.0, 3.0}}).m1 == 2.0);
    REQUIRE(fim_moments(FimDiagonal{{1.0, 3.0}}).m2 == 5.0);
    const FimDiagonal constant{{0.7, 0.7, 0.7, 0.7}};
    REQUIRE(fim_moments(constant).m1 == Catch::Approx(0.7).epsilon(1e-15));
    REQUIRE(fim_moments(constant).m2 == Catch::Approx(0.49).epsilon(1e-15));
    const FimDiagonal zeros{{0.0, 0.0, 0.0}};
    REQUIRE(fim_moments(zeros).m1 == 0.0);
    REQUIRE(fim_moments(zeros).m2 == 0.0);
    REQUIRE_THROWS_AS(fim_moments(FimDiagonal{}), Error);
}

TEST_CASE("alpha arithmetic and degeneracy", "[fim]") {
    REQUIRE(alpha_from_moments(2.0, 5.0) == Catch::Approx(1.25).epsilon(1e-15));
    REQUIRE(alpha_of(FimDiagonal{{0.3, 0.3, 0.3}}) == 1.0);
    REQUIRE_THROWS_AS(alpha_from_moments(0.0, 0.0), DegenerateFim);
    REQUIRE_THROWS_AS(alpha_of(FimDiagonal{{0.0, 0.0}}), DegenerateFim);
}

TEST_CASE("alpha is bounded below by one on random diagonals", "[fim]") {
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 1 + rng.uniform_int(64);
        FimDiagonal diag;
        diag.entries.resize(n);
        for (double& v : diag.entries) v = rng.uniform01() * std::pow(10.0, rng.uniform(-4, 4));
        const double a = alpha_of(diag);
        REQUIRE(a >= 1.0 - 1e-9);
    }
}

TEST_CASE("alpha is invariant to uniform rescaling of the diagonal", "[fim]") {
    Rng rng(7);
    FimDiagonal diag;
    diag.entries.resize(40);
    for (double& v : diag.entries) v = rng.uniform01() + 0.01;
    const double base = alpha_of(diag);
    for (double c : {1e-3, 0.5, 7.0, 1e4}) {
        FimDiagonal scaled = diag;
        for (double& v : scaled.entries) v *= c * c;  // gradient scale c
        REQUIRE(std::abs(alpha_of(scaled) - base) <= 1e-9 * base);
    }
}

TEST_CASE("estimator matches the brute-force accumulation", "[fim]") {
    const GraphDataset ds = five_node_dataset();
    ModelParams params = init_model(AnchorSpec{AnchorConv::mean, 2, false, 6}, ds.d_in(),
                                    ds.num_classes, 31);
    params = train_last_layer(params, ds, 20, 0.2);
    const FimDiagonal fast = estimate_fim_diag(params, ds);
    const FimDiagonal slow = brute_force_fim(params, ds);
    REQUIRE(fast.entries.size() == slow.entries.size());
    double scale = 0.0;
    for (double v : slow.entries) scale = std::max(scale, std::abs(v));
    for (std::size_t i = 0; i < fast.entries.size(); ++i)
        REQUIRE(std::abs(fast.entries[i] - slow.entries[i]) <= 1e-10 * scale);
}

TEST_CASE("fim entries are non-negative across random inits", "[fim]") {
    const GraphDataset ds = five_node_dataset();
    for (int seed = 0; seed < 100; ++seed) {
        const ModelParams params = init_model(AnchorSpec{AnchorConv::sum, 2, true, 4},
                                              ds.d_in(), ds.num_classes, seed);
        const FimDiagonal diag = estimate_fim_diag(params, ds);
        for (double v : diag.entries) REQUIRE(v >= 0.0);
    }
}

TEST_CASE("duplicating every example leaves the diagonal unchanged", "[fim]") {
    const GraphDataset ds = toy_graph_dataset(12, 6, 5, 3);
    GraphDataset doubled = ds;
    const int n = static_cast<int>(ds.graphs.size());
    for (int i = 0; i < n; ++i) doubled.graphs.push_back(ds.graphs[i]);
    doubled.splits = ds.splits;
    for (int u : ds.splits.train) doubled.splits.train.push_back(u + n);
    for (int u : ds.splits.val) doubled.splits.val.push_back(u + n);
    for (int u : ds.splits.test) doubled.splits.test.push_back(u + n);
    doubled.check();
    const ModelParams params = init_model(AnchorSpec{AnchorConv::mean, 2, false, 6}, ds.d_in(),
                                          ds.num_classes, 8);
    const FimDiagonal base = estimate_fim_diag(params, ds);
    const FimDiagonal twice = estimate_fim_diag(params, doubled);
    REQUIRE(base.entries.size() == twice.entries.size());
    for (std::size_t i = 0; i < base.entries.size(); ++i)
        REQUIRE(twice.entries[i] ==
                Catch::Approx(base.entries[i]).epsilon(1e-12).margin(1e-300));
}

TEST_CASE("single-coordinate perturbations obey the KL quadratic form", "[fim]") {
    const GraphDataset ds = toy_node_dataset(44, 14, 4, /*signal=*/1.0);
    ModelParams params = init_model(AnchorSpec{AnchorConv::mean, 2, false, 6}, ds.d_in(),
                                    ds.num_classes, 17);
    params = train_last_layer(params, ds, 40, 0.2);
    const FimDiagonal diag = estimate_fim_diag(params, ds);
    const auto train_rows = ds.splits.train;
    const double eps = 1e-3;

    const auto mean_kl_for_coord = [&](std::size_t i) {
        ModelParams perturbed = params;
        add_mp_flat(perturbed, i, eps);
        const Matrix p = forward(params, ds, 0);
        const Matrix q = forward(perturbed, ds, 0);
        double kl = 0.0;
        for (int u : train_rows)
            for (int c = 0; c < p.cols; ++c) kl += p(u, c) * std::log(p(u, c) / q(u, c));
        return kl / static_cast<double>(train_rows.size());
    };

    int checked = 0;
    for (std::size_t i = 0; i < diag.entries.size() && checked < 12; ++i) {
        if (diag.entries[i] <= 1e-6) continue;
        const double predicted = 0.5 * eps * eps * diag.entries[i];
        const double actual = mean_kl_for_coord(i);
        INFO("coord " << i << " predicted " << predicted << " actual " << actual);
        REQUIRE(std::abs(actual - predicted) <= 0.15 * predicted);
        ++checked;
    }
    REQUIRE(checked >= 10);
}

TEST_CASE("equal anchor alphas normalize to the uniform direction", "[fim]") {
    const TaskFeature f = finalize_feature({2.5, 2.5, 2.5, 2.5});
    for (double v : f.values) REQUIRE(v == Catch::Approx(0.5).epsilon(1e-12));
    REQUIRE(l2_norm(f.values) == Catch::Approx(1.0).margin(1e-9));
    REQUIRE_THROWS_AS(finalize_feature({0.0, 0.0}), DegenerateFim);
}

TEST_CASE("default anchor set has twelve members and shared width", "[fim]") {
    const auto anchors = default_anchors(8);
    REQUIRE(anchors.size() == 12);
    for (const auto& a : anchors) REQUIRE(a.hidden_dim == 8);
}

TEST_CASE("task features have unit norm, anchor length, and are reproducible", "[fim]") {
    const GraphDataset ds = toy_node_dataset(81, 16, 4, 0.5);
    FeatureConfig cfg;
    cfg.repeats = 5;
    const auto anchors = default_anchors(4);
    const auto t0 = std::chrono::steady_clock::now();
    const TaskFeature a = task_feature(ds, anchors, cfg, 2024);
    const auto elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);
    REQUIRE(a.values.size() == 12);
    REQUIRE(l2_norm(a.values) == Catch::Approx(1.0).margin(1e-9));
    const TaskFeature b = task_feature(ds, anchors, cfg, 2024);
    REQUIRE(a.values == b.values);
    REQUIRE(elapsed.count() < 60.0);
}

TEST_CASE("identical datasets produce identical features", "[fim]") {
    const GraphDataset ds1 = toy_node_dataset(82, 12, 3, 0.5);
    const GraphDataset ds2 = toy_node_dataset(82, 12, 3, 0.5);
    FeatureConfig cfg;
    cfg.repeats = 2;
    const auto anchors = default_anchors(4);
    REQUIRE(task_feature(ds1, anchors, cfg, 5).values ==
            task_feature(ds2, anchors, cfg, 5).values);
}
