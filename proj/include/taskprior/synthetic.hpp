#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "taskprior/bank.hpp"
#include "taskprior/graph_data.hpp"
#include "taskprior/nn.hpp"
#include "taskprior/parallel.hpp"
#include "taskprior/rng.hpp"

namespace taskprior {

// Desk-scale synthetic tasks. Two families with opposite planted optima:
//   - sbm_node: two-block community graphs with near-noise node features;
//     the label is the block, so deep mean-style propagation wins.
//   - motif_graph: graph classification by planted triangle density over a
//     sparse background; degree/count information is the signal, so sum
//     aggregation wins and averaging washes it out.
// Tasks within a family share which design choices win; tasks across families
// disagree. Everything is deterministic in the spec's seed.

enum class TaskGenerator { sbm_node, motif_graph };

inline std::string to_string(TaskGenerator g) {
    return g == TaskGenerator::sbm_node ? "sbm_node" : "motif_graph";
}

inline TaskGenerator generator_from_string(const std::string& s) {
    if (s == "sbm_node") return TaskGenerator::sbm_node;
    if (s == "motif_graph") return TaskGenerator::motif_graph;
    throw Error("unknown task generator: " + s);
}

struct SyntheticTaskSpec {
    std::string task_id;
    int family_id = 0;
    TaskGenerator generator = TaskGenerator::sbm_node;
    int n_nodes = 120;            // nodes per graph
    int n_graphs = 1;             // graphs per task (motif tasks)
    int d_in = 8;
    double edge_in = 0.10;        // sbm: intra-block prob; motif: background prob
    double edge_out = 0.01;       // sbm: inter-block prob
    double feature_signal = 0.0;  // how strongly the true label leaks into features
    double label_noise = 0.05;    // fraction of labels flipped
    int motif_count_hi = 5;       // planted triangles, class 1
    int motif_count_lo = 0;       // planted triangles, class 0
    std::uint64_t seed = 1;
};

namespace detail {

inline Graph make_sbm_graph(const SyntheticTaskSpec& spec, Rng& rng,
                            std::vector<int>& true_labels) {
    const int n = spec.n_nodes;
    Graph g;
    true_labels.resize(n);
    for (int v = 0; v < n; ++v) true_labels[v] = v < n / 2 ? 0 : 1;
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v) {
            const double p = true_labels[u] == true_labels[v] ? spec.edge_in : spec.edge_out;
            if (rng.uniform01() < p) g.edges.emplace_back(u, v);
        }
    g.node_features = Matrix(n, spec.d_in);
    for (int v = 0; v < n; ++v)
        for (int d = 0; d < spec.d_in; ++d) {
            const double mu = (d < spec.d_in / 2) == (true_labels[v] == 0) ? 1.0 : -1.0;
            g.node_features(v, d) = spec.feature_signal * mu + rng.gaussian();
        }
    g.labels = true_labels;
    for (int v = 0; v < n; ++v)
        if (rng.uniform01() < spec.label_noise) g.labels[v] = 1 - g.labels[v];
    return g;
}

inline Graph make_motif_graph(const SyntheticTaskSpec& spec, int true_label, Rng& rng) {
    const int n = spec.n_nodes;
    std::set<std::pair<int, int>> edges;
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v)
            if (rng.uniform01() < spec.edge_in) edges.emplace(u, v);
    const int triangles = true_label == 1 ? spec.motif_count_hi : spec.motif_count_lo;
    for (int t = 0; t < triangles; ++t) {
        int a = rng.uniform_int(n);
        int b = rng.uniform_int(n);
        int c = rng.uniform_int(n);
        if (a == b || a == c || b == c) {
            --t;
            continue;
        }
        edges.emplace(std::min(a, b), std::max(a, b));
        edges.emplace(std::min(a, c), std::max(a, c));
        edges.emplace(std::min(b, c), std::max(b, c));
    }
    Graph g;
    g.edges.assign(edges.begin(), edges.end());
    g.node_features = Matrix(n, spec.d_in);
    for (int v = 0; v < n; ++v) {
        g.node_features(v, 0) = 1.0;
        for (int d = 1; d < spec.d_in; ++d) g.node_features(v, d) = 0.2 * rng.gaussian();
    }
    g.labels = {true_label};
    return g;
}

}  // namespace detail

// Deterministic task materialization: same spec and seed give byte-identical
// datasets.
inline std::pair<TaskRecord, GraphDataset> generate_task(const SyntheticTaskSpec& spec) {
    Rng rng(mix_seed(spec.seed, hash_str(spec.task_id), 0xDA7AULL));
    GraphDataset ds;
    TaskRecord task;
    task.task_id = spec.task_id;
    task.metric_name = "accuracy";
    task.dataset_ref = "datasets/" + spec.task_id + ".jsonl";
    if (spec.generator == TaskGenerator::sbm_node) {
        ds.level = TaskLevel::node;
        task.level = TaskLevel::node;
        std::vector<int> true_labels;
        ds.graphs.push_back(detail::make_sbm_graph(spec, rng, true_labels));
        ds.num_classes = 2;
        ds.splits = split_by_seed(ds.unit_count(), 0.5, 0.25, mix_seed(spec.seed, 0x5B17ULL));
    } else {
        ds.level = TaskLevel::graph;
        task.level = TaskLevel::graph;
        for (int i = 0; i < spec.n_graphs; ++i) {
            const int true_label = i % 2;
            Graph g = detail::make_motif_graph(spec, true_label, rng);
            if (rng.uniform01() < spec.label_noise) g.labels[0] = 1 - g.labels[0];
            ds.graphs.push_back(std::move(g));
        }
        ds.num_classes = 2;
        ds.splits = split_by_seed(ds.unit_count(), 0.6, 0.2, mix_seed(spec.seed, 0x5B17ULL));
    }
    ds.check();
    return {std::move(task), std::move(ds)};
}

// The stock two-family, twelve-task suite used by the evaluation harness.
inline std::vector<SyntheticTaskSpec> default_suite() {
    std::vector<SyntheticTaskSpec> specs;
    const int sbm_nodes[6] = {200, 220, 240, 210, 230, 250};
    const double sbm_pin[6] = {0.080, 0.096, 0.088, 0.072, 0.104, 0.064};
    const double sbm_sig[6] = {0.05, 0.05, 0.06, 0.04, 0.055, 0.045};
    for (int i = 0; i < 6; ++i) {
        SyntheticTaskSpec s;
        s.task_id = std::string("sbm-") + static_cast<char>('a' + i);
        s.family_id = 1;
        s.generator = TaskGenerator::sbm_node;
        s.n_nodes = sbm_nodes[i];
        s.n_graphs = 1;
        s.d_in = 8;
        s.edge_in = sbm_pin[i];
        s.edge_out = 0.008;
        s.feature_signal = sbm_sig[i];
        s.label_noise = 0.05;
        s.seed = 101 + i;
        specs.push_back(std::move(s));
    }
    const int motif_graphs[6] = {120, 150, 135, 165, 180, 144};
    const int motif_hi[6] = {5, 5, 6, 4, 5, 6};
    const double motif_p[6] = {0.10, 0.10, 0.11, 0.09, 0.10, 0.12};
    for (int i = 0; i < 6; ++i) {
        SyntheticTaskSpec s;
        s.task_id = std::string("motif-") + static_cast<char>('a' + i);
        s.family_id = 2;
        s.generator = TaskGenerator::motif_graph;
        s.n_nodes = 12;
        s.n_graphs = motif_graphs[i];
        s.d_in = 4;
        s.edge_in = motif_p[i];
        s.edge_out = 0.0;
        s.feature_signal = 0.0;
        s.label_noise = 0.05;
        s.motif_count_hi = motif_hi[i];
        s.motif_count_lo = 0;
        s.seed = 201 + i;
        specs.push_back(std::move(s));
    }
    return specs;
}

// Dimensions each family plants a clear winner for; used by the harness when
// checking that transferred priors point at the right choices.
inline std::vector<std::string> planted_dimensions() {
    return {"Convolution", "Aggregation", "MP-layers", "LR", "Epochs"};
}

inline nlohmann::json spec_to_json(const SyntheticTaskSpec& s) {
    return nlohmann::json{
        {"task_id", s.task_id},
        {"family_id", s.family_id},
        {"generator", to_string(s.generator)},
        {"n_nodes", s.n_nodes},
        {"n_graphs", s.n_graphs},
        {"d_in", s.d_in},
        {"edge_in", s.edge_in},
        {"edge_out", s.edge_out},
        {"feature_signal", s.feature_signal},
        {"label_noise", s.label_noise},
        {"motif_count_hi", s.motif_count_hi},
        {"motif_count_lo", s.motif_count_lo},
        {"seed", s.seed},
    };
}

inline SyntheticTaskSpec spec_from_json(const nlohmann::json& j) {
    SyntheticTaskSpec s;
    s.task_id = j.at("task_id").get<std::string>();
    s.family_id = j.at("family_id").get<int>();
    s.generator = generator_from_string(j.at("generator").get<std::string>());
    s.n_nodes = j.at("n_nodes").get<int>();
    s.n_graphs = j.at("n_graphs").get<int>();
    s.d_in = j.at("d_in").get<int>();
    s.edge_in = j.at("edge_in").get<double>();
    s.edge_out = j.at("edge_out").get<double>();
    s.feature_signal = j.at("feature_signal").get<double>();
    s.label_noise = j.at("label_noise").get<double>();
    s.motif_count_hi = j.at("motif_count_hi").get<int>();
    s.motif_count_lo = j.at("motif_count_lo").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    return s;
}

inline void save_suite(const std::vector<SyntheticTaskSpec>& specs, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    nlohmann::json j = nlohmann::json::array();
    for (const auto& s : specs) j.push_back(spec_to_json(s));
    out << j.dump(2) << "\n";
}

inline std::vector<SyntheticTaskSpec> load_suite(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), 1);
    }
    std::vector<SyntheticTaskSpec> specs;
    for (const auto& item : j) specs.push_back(spec_from_json(item));
    return specs;
}

// Evaluate trials_per_task uniform-random configs on every task. Suggestion
// order and per-trial seeds are fixed up front, so the result is identical for
// any job count.
inline Bank build_bank(const std::vector<SyntheticTaskSpec>& specs,
                       const std::vector<const GraphDataset*>& datasets,
                       const DesignSpace& space, int trials_per_task, std::uint64_t seed,
                       int jobs = 1) {
    if (specs.size() != datasets.size()) throw Error("spec/dataset count mismatch");
    const DesignDistribution uniform = DesignDistribution::uniform(space);
    struct Job {
        int task = 0;
        int trial = 0;
        DesignConfig config;
        std::uint64_t seed = 0;
    };
    std::vector<Job> jobs_list;
    for (std::size_t t = 0; t < specs.size(); ++t) {
        Rng suggest(mix_seed(seed, hash_str(specs[t].task_id), 0xBA2DULL));
        for (int i = 0; i < trials_per_task; ++i) {
            Job job;
            job.task = static_cast<int>(t);
            job.trial = i;
            job.config = sample_config(uniform, space, suggest);
            job.seed = mix_seed(seed, hash_str(specs[t].task_id), 0x7B1AULL, i);
            jobs_list.push_back(std::move(job));
        }
    }
    std::vector<TrialRecord> results(jobs_list.size());
    parallel_for(static_cast<int>(jobs_list.size()), jobs, [&](int i) {
        const Job& job = jobs_list[i];
        results[i] = train_full(job.config, *datasets[job.task], job.seed).second;
    });
    Bank bank;
    for (std::size_t t = 0; t < specs.size(); ++t)
        bank.declare(specs[t].task_id, datasets[t]->level,
                     "datasets/" + specs[t].task_id + ".jsonl", "accuracy");
    for (std::size_t i = 0; i < jobs_list.size(); ++i)
        bank.tasks[jobs_list[i].task].trials.push_back(std::move(results[i]));
    return bank;
}

}  // namespace taskprior
