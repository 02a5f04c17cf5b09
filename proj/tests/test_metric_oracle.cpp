#include <catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "taskprior/metric_oracle.hpp"
#include "test_util.hpp"

using namespace taskprior;
using testutil::separable_node_dataset;
using testutil::toy_node_dataset;

namespace {

int sgn(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

// Classic tau-b written the other way around: concordant/discordant from sign
// products, tie corrections from value-frequency tables.
double tau_oracle(const Vector& a, const Vector& b) {
    const int n = static_cast<int>(a.size());
    long long concordant = 0, discordant = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const int s = sgn(a[i] - a[j]) * sgn(b[i] - b[j]);
            if (s > 0) ++concordant;
            else if (s < 0) ++discordant;
        }
    const auto tie_pairs = [](const Vector& v) {
        std::map<double, long long> freq;
        for (double x : v) freq[x] += 1;
        long long t = 0;
        for (const auto& [value, count] : freq) t += count * (count - 1) / 2;
        return t;
    };
    const long long n0 = static_cast<long long>(n) * (n - 1) / 2;
    const long long n1 = tie_pairs(a);
    const long long n2 = tie_pairs(b);
    if (n0 == n1 || n0 == n2) throw AllTied("oracle");
    return static_cast<double>(concordant - discordant) /
           std::sqrt(static_cast<double>(n0 - n1) * static_cast<double>(n0 - n2));
}

AnchorPerformanceProfile profile(const std::string& id, Vector perf) {
    return AnchorPerformanceProfile{id, std::move(perf)};
}

}  // namespace

TEST_CASE("kendall tau closed-form cases", "[metric_oracle]") {
    REQUIRE(kendall_tau({1, 2, 3}, {1, 2, 3}) == 1.0);
    REQUIRE(kendall_tau({1, 2, 3}, {3, 2, 1}) == -1.0);
    REQUIRE(kendall_tau({1, 2, 3, 4}, {1, 3, 2, 4}) == Catch::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("kendall tau matches the pair-counting oracle on random vectors", "[metric_oracle]") {
    Rng rng(321);
    int compared = 0;
    while (compared < 100) {
        const int n = 2 + rng.uniform_int(9);
        Vector a(n), b(n);
        const bool ties = rng.uniform01() < 0.5;
        for (int i = 0; i < n; ++i) {
            a[i] = ties ? rng.uniform_int(4) : rng.uniform01();
            b[i] = ties ? rng.uniform_int(4) : rng.uniform01();
        }
        double expected;
        try {
            expected = tau_oracle(a, b);
        } catch (const AllTied&) {
            REQUIRE_THROWS_AS(kendall_tau(a, b), AllTied);
            continue;
        }
        REQUIRE(kendall_tau(a, b) == expected);
        ++compared;
    }
}

TEST_CASE("kendall tau rejects constant input", "[metric_oracle]") {
    REQUIRE_THROWS_AS(kendall_tau({2, 2, 2}, {1, 2, 3}), AllTied);
    REQUIRE_THROWS_AS(kendall_tau({1, 2, 3}, {5, 5, 5}), AllTied);
    REQUIRE_THROWS_AS(kendall_tau({1}, {2}), Error);
}

TEST_CASE("kendall tau is symmetric and monotone-invariant", "[metric_oracle]") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 3 + rng.uniform_int(8);
        Vector a(n), b(n);
        for (int i = 0; i < n; ++i) {
            a[i] = rng.uniform(-2, 2);
            b[i] = rng.uniform(-2, 2);
        }
        const double t = kendall_tau(a, b);
        REQUIRE(kendall_tau(b, a) == t);
        Vector cubed = a;
        for (double& x : cubed) x = x * x * x;
        REQUIRE(kendall_tau(cubed, b) == Catch::Approx(t).margin(1e-12));
        Vector exped = b;
        for (double& x : exped) x = std::exp(x);
        REQUIRE(kendall_tau(a, exped) == Catch::Approx(t).margin(1e-12));
    }
}

TEST_CASE("oracle distance maps rank agreement into [0,1]", "[metric_oracle]") {
    const auto p = profile("p", {0.1, 0.2, 0.3, 0.4});
    const auto q = profile("q", {0.4, 0.3, 0.2, 0.1});
    REQUIRE(oracle_distance(p, p) == 0.0);
    REQUIRE(oracle_distance(p, q) == 1.0);
    const auto r = profile("r", {1, 3, 2, 4});
    // tau = 2/3 -> distance 1/6
    REQUIRE(oracle_distance(p, r) == Catch::Approx(1.0 / 6.0).epsilon(1e-15));
    REQUIRE_THROWS_AS(oracle_distance(p, profile("bad", {1, 2, 3})), Error);
}

TEST_CASE("anchor profiles are deterministic and anchor-length", "[metric_oracle]") {
    const GraphDataset ds = toy_node_dataset(5, 24, 4, 1.2, 0.08);
    const auto anchors = default_anchors(6);
    AnchorTrainOptions opts;
    opts.epochs = 25;
    const auto p1 = anchor_profile(ds, anchors, opts, 3, "t");
    const auto p2 = anchor_profile(ds, anchors, opts, 3, "t");
    REQUIRE(p1.perf.size() == anchors.size());
    REQUIRE(p1.perf == p2.perf);
    for (double v : p1.perf) REQUIRE(std::isfinite(v));
}

TEST_CASE("anchors all succeed on an easy task", "[metric_oracle]") {
    const GraphDataset ds = testutil::trivially_easy_dataset(62, 60, 4);
    AnchorTrainOptions opts;
    opts.epochs = 50;
    const auto prof = anchor_profile(ds, default_anchors(8), opts, 5, "easy");
    for (double v : prof.perf) REQUIRE(v >= 0.8);
}

TEST_CASE("similarity matrix is symmetric with a zero diagonal", "[metric_oracle]") {
    std::vector<AnchorPerformanceProfile> profiles;
    Rng rng(9);
    for (int i = 0; i < 5; ++i) {
        Vector perf(12);
        for (double& v : perf) v = rng.uniform01();
        profiles.push_back(profile("task" + std::to_string(i), perf));
    }
    const OracleDistances d = similarity_matrix(profiles);
    REQUIRE(d.tasks.size() == 5);
    for (int i = 0; i < 5; ++i) {
        REQUIRE(d.at(i, i) == 0.0);
        for (int j = 0; j < 5; ++j) {
            REQUIRE(std::abs(d.at(i, j) - d.at(j, i)) <= 1e-12);
            REQUIRE(d.at(i, j) >= 0.0);
            REQUIRE(d.at(i, j) <= 1.0);
        }
    }
    const Matrix sim = d.similarity_view();
    REQUIRE(sim(0, 0) == 1.0);
}

TEST_CASE("identical tasks sit at distance zero", "[metric_oracle]") {
    const GraphDataset ds = toy_node_dataset(5, 24, 4, 1.2, 0.08);
    const auto anchors = default_anchors(6);
    AnchorTrainOptions opts;
    opts.epochs = 25;
    std::vector<AnchorPerformanceProfile> profiles = {
        anchor_profile(ds, anchors, opts, 3, "one"),
        anchor_profile(ds, anchors, opts, 3, "two"),
    };
    const OracleDistances d = similarity_matrix(profiles);
    REQUIRE(d.at(0, 1) == 0.0);
}

TEST_CASE("distance csv round trips", "[metric_oracle]") {
    std::vector<AnchorPerformanceProfile> profiles;
    Rng rng(29);
    for (int i = 0; i < 4; ++i) {
        Vector perf(6);
        for (double& v : perf) v = rng.uniform01();
        profiles.push_back(profile("t" + std::to_string(i), perf));
    }
    const OracleDistances d = similarity_matrix(profiles);
    const std::string path = "distances_roundtrip_test.csv";
    save_distances_csv(d, path);
    const OracleDistances back = load_distances_csv(path);
    REQUIRE(back.tasks == d.tasks);
    REQUIRE(back.matrix == d.matrix);
    std::remove(path.c_str());
}
