#include <catch_amalgamated.hpp>

#include <cmath>

#include "taskprior/transfer.hpp"
#include "test_util.hpp"

using namespace taskprior;

namespace {

// Unit embedding at cosine distance d from the first axis.
TaskEmbedding at_distance(double d, int dim = 4) {
    TaskEmbedding e;
    e.values.assign(dim, 0.0);
    const double c = 1.0 - d;
    e.values[0] = c;
    e.values[1] = std::sqrt(std::max(0.0, 1.0 - c * c));
    return e;
}

ProcessedBankEntry entry_at(const std::string& id, double d, const DesignSpace& space,
                            Rng* rng = nullptr) {
    ProcessedBankEntry entry;
    entry.task_id = id;
    entry.z_e = at_distance(d);
    entry.dist = DesignDistribution::uniform(space);
    entry.dist.k_used = 4;
    if (rng) {
        for (auto& probs : entry.dist.per_dimension) {
            double sum = 0.0;
            for (double& p : probs) {
                p = rng->uniform01() + 0.01;
                sum += p;
            }
            for (double& p : probs) p /= sum;
        }
    }
    return entry;
}

}  // namespace

TEST_CASE("close subset filters and sorts by distance", "[transfer]") {
    const DesignSpace space = desk_design_space();
    const TaskEmbedding z_n = at_distance(0.0);
    std::vector<ProcessedBankEntry> bank = {
        entry_at("far", 0.5, space),
        entry_at("near", 0.05, space),
        entry_at("mid", 0.2, space),
    };
    const auto subset = close_subset(bank, z_n, 0.25);
    REQUIRE(subset.size() == 2);
    REQUIRE(subset[0].entry.task_id == "near");
    REQUIRE(subset[1].entry.task_id == "mid");
    REQUIRE(subset[0].distance == Catch::Approx(0.05).margin(1e-9));

    const auto everything = close_subset(bank, z_n, 2.0);
    REQUIRE(everything.size() == 3);

    REQUIRE_THROWS_AS(close_subset({}, z_n, 0.5), Error);
}

TEST_CASE("an exact twin is clamped to the distance floor", "[transfer]") {
    const DesignSpace space = desk_design_space();
    std::vector<ProcessedBankEntry> bank = {entry_at("twin", 0.0, space)};
    const auto subset = close_subset(bank, at_distance(0.0), 0.5, 1e-6);
    REQUIRE(subset.size() == 1);
    REQUIRE(subset[0].distance == 1e-6);
}

TEST_CASE("two-task aggregation follows the worked inverse-distance example", "[transfer]") {
    // weights: (1/0.1) and (1/0.3) -> 0.75 and 0.25; 0.75*0.8 + 0.25*0.4 = 0.7
    DesignSpace space{{{"X", {"A", "B"}}}};
    ProcessedBankEntry p1;
    p1.task_id = "one";
    p1.z_e = at_distance(0.1);
    p1.dist.dim_names = {"X"};
    p1.dist.per_dimension = {{0.8, 0.2}};
    p1.dist.k_used = 4;
    ProcessedBankEntry p2 = p1;
    p2.task_id = "two";
    p2.dist.per_dimension = {{0.4, 0.6}};
    std::vector<ScoredEntry> subset = {{p1, 0.1}, {p2, 0.3}};
    const DesignDistribution prior =
        aggregate_prior(subset, space, DesignDistribution::uniform(space));
    REQUIRE(std::abs(prior.per_dimension[0][0] - 0.7) <= 1e-12);
    REQUIRE(std::abs(prior.per_dimension[0][0] + prior.per_dimension[0][1] - 1.0) <= 1e-12);
}

TEST_CASE("a singleton subset is copied exactly and empty falls back", "[transfer]") {
    const DesignSpace space = desk_design_space();
    Rng rng(5);
    ProcessedBankEntry only = entry_at("only", 0.2, space, &rng);
    const DesignDistribution fallback = DesignDistribution::uniform(space);
    const DesignDistribution single = aggregate_prior({{only, 0.2}}, space, fallback);
    for (int d = 0; d < space.size(); ++d)
        for (std::size_t c = 0; c < single.per_dimension[d].size(); ++c)
            REQUIRE(single.per_dimension[d][c] ==
                    Catch::Approx(only.dist.per_dimension[d][c]).margin(1e-15));
    const DesignDistribution empty = aggregate_prior({}, space, fallback);
    REQUIRE(empty == fallback);
}

TEST_CASE("aggregation is a convex combination on random subsets", "[transfer]") {
    const DesignSpace space = desk_design_space();
    Rng rng(31);
    for (int round = 0; round < 1000; ++round) {
        const int k = 1 + rng.uniform_int(5);
        std::vector<ScoredEntry> subset;
        for (int i = 0; i < k; ++i)
            subset.push_back(
                {entry_at("t" + std::to_string(i), 0.0, space, &rng),
                 std::max(1e-6, rng.uniform01())});
        const DesignDistribution prior =
            aggregate_prior(subset, space, DesignDistribution::uniform(space));
        REQUIRE_NOTHROW(prior.check_for(space));
        for (int d = 0; d < space.size(); ++d)
            for (std::size_t c = 0; c < prior.per_dimension[d].size(); ++c) {
                double lo = 1.0, hi = 0.0;
                for (const auto& s : subset) {
                    lo = std::min(lo, s.entry.dist.per_dimension[d][c]);
                    hi = std::max(hi, s.entry.dist.per_dimension[d][c]);
                }
                REQUIRE(prior.per_dimension[d][c] >= lo - 1e-12);
                REQUIRE(prior.per_dimension[d][c] <= hi + 1e-12);
            }
    }
}

TEST_CASE("shrinking a member's distance raises its influence", "[transfer]") {
    DesignSpace space{{{"X", {"A", "B"}}}};
    ProcessedBankEntry pa;
    pa.task_id = "a";
    pa.z_e = at_distance(0.1);
    pa.dist.dim_names = {"X"};
    pa.dist.per_dimension = {{1.0, 0.0}};
    pa.dist.k_used = 1;
    ProcessedBankEntry pb = pa;
    pb.task_id = "b";
    pb.dist.per_dimension = {{0.0, 1.0}};
    const DesignDistribution fallback = DesignDistribution::uniform(space);
    const double before =
        aggregate_prior({{pa, 0.4}, {pb, 0.2}}, space, fallback).per_dimension[0][0];
    const double after =
        aggregate_prior({{pa, 0.1}, {pb, 0.2}}, space, fallback).per_dimension[0][0];
    REQUIRE(after > before);
}

TEST_CASE("preprocessing embeds every task and round trips", "[transfer]") {
    const DesignSpace space = desk_design_space();
    Bank bank;
    std::map<std::string, GraphDataset> datasets;
    const DesignDistribution uniform = DesignDistribution::uniform(space);
    Rng rng(71);
    for (const std::string id : {"t1", "t2", "t3"}) {
        datasets[id] = testutil::toy_node_dataset(hash_str(id), 12, 3, 0.8);
        TaskRecord& task = bank.declare(id, TaskLevel::node, "", "accuracy");
        for (int i = 0; i < 6; ++i) {
            TrialRecord trial;
            trial.config = sample_config(uniform, space, rng);
            trial.val_metric = rng.uniform01();
            trial.seed = i;
            task.trials.push_back(std::move(trial));
        }
    }
    const auto anchors = default_anchors(4);
    FeatureConfig fcfg;
    fcfg.repeats = 2;
    ProjectionTrainConfig pcfg;
    pcfg.iterations = 0;
    // untrained net is fine for a plumbing test
    std::vector<NamedFeature> feats;
    for (const auto& [id, ds] : datasets)
        feats.push_back({id, task_feature(ds, anchors, fcfg, hash_str(id))});
    OracleDistances oracle;
    oracle.tasks = {"t1", "t2", "t3"};
    oracle.matrix = Matrix(3, 3);
    oracle.matrix(0, 1) = oracle.matrix(1, 0) = 0.2;
    oracle.matrix(0, 2) = oracle.matrix(2, 0) = 0.4;
    oracle.matrix(1, 2) = oracle.matrix(2, 1) = 0.6;
    const ProjectionNet net = train_projection(feats, oracle, pcfg, 8);

    TransferConfig tcfg;
    tcfg.k_top = 4;
    const auto resolver = [&](const std::string& id) -> const GraphDataset& {
        return datasets.at(id);
    };
    const auto processed =
        preprocess_bank(bank, space, resolver, anchors, fcfg, net, tcfg, 99);
    REQUIRE(processed.size() == bank.tasks.size());
    for (const auto& e : processed) {
        REQUIRE(l2_norm(e.z_e.values) == Catch::Approx(1.0).margin(1e-9));
        REQUIRE_NOTHROW(e.dist.check_for(space));
    }
    const auto processed_again =
        preprocess_bank(bank, space, resolver, anchors, fcfg, net, tcfg, 99);
    for (std::size_t i = 0; i < processed.size(); ++i) {
        REQUIRE(processed[i].z_e.values == processed_again[i].z_e.values);
        REQUIRE(processed[i].dist == processed_again[i].dist);
    }

    const std::string path = "processed_roundtrip_test.jsonl";
    save_processed_bank(processed, space, path);
    const auto loaded = load_processed_bank(path, space);
    REQUIRE(loaded.size() == processed.size());
    for (std::size_t i = 0; i < processed.size(); ++i) {
        REQUIRE(loaded[i].task_id == processed[i].task_id);
        REQUIRE(loaded[i].z_e.values == processed[i].z_e.values);
        REQUIRE(loaded[i].dist == processed[i].dist);
    }
    std::remove(path.c_str());
}
