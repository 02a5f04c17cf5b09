#pragma once

#include "taskprior/graph_data.hpp"
#include "taskprior/rng.hpp"

namespace taskprior::testutil {

// Small random node-level dataset: sparse graph, labels independent of
// features unless signal > 0.
inline GraphDataset toy_node_dataset(std::uint64_t seed, int n = 12, int d_in = 3,
                                     double signal = 0.0, double edge_prob = 0.25) {
    Rng rng(mix_seed(seed, 0x70D0ULL));
    Graph g;
    g.node_features = Matrix(n, d_in);
    g.labels.resize(n);
    for (int v = 0; v < n; ++v) {
        g.labels[v] = rng.uniform_int(2);
        for (int d = 0; d < d_in; ++d) {
            double x = rng.gaussian();
            if (d < 2) x += signal * (g.labels[v] == (d % 2) ? 1.0 : -1.0);
            g.node_features(v, d) = x;
        }
    }
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v)
            if (rng.uniform01() < edge_prob) g.edges.emplace_back(u, v);
    GraphDataset ds;
    ds.level = TaskLevel::node;
    ds.num_classes = 2;
    ds.graphs.push_back(std::move(g));
    ds.splits = split_by_seed(n, 0.5, 0.25, mix_seed(seed, 0x5EEDULL));
    ds.check();
    return ds;
}

// Tiny graph-level dataset with a handful of graphs.
inline GraphDataset toy_graph_dataset(std::uint64_t seed, int n_graphs = 8, int n_nodes = 6,
                                      int d_in = 3) {
    Rng rng(mix_seed(seed, 0x6A4FULL));
    GraphDataset ds;
    ds.level = TaskLevel::graph;
    ds.num_classes = 2;
    for (int i = 0; i < n_graphs; ++i) {
        Graph g;
        g.node_features = Matrix(n_nodes, d_in);
        for (double& x : g.node_features.data) x = rng.gaussian();
        for (int u = 0; u < n_nodes; ++u)
            for (int v = u + 1; v < n_nodes; ++v)
                if (rng.uniform01() < 0.4) g.edges.emplace_back(u, v);
        g.labels = {i % 2};
        ds.graphs.push_back(std::move(g));
    }
    ds.splits = split_by_seed(n_graphs, 0.5, 0.25, mix_seed(seed, 0x5EEDULL));
    ds.check();
    return ds;
}

// Two disconnected communities with strong class-constant features: easy for
// any aggregation depth, since smoothing never crosses a class boundary.
inline GraphDataset trivially_easy_dataset(std::uint64_t seed, int n = 40, int d_in = 4) {
    Rng rng(mix_seed(seed, 0xEA51ULL));
    Graph g;
    g.node_features = Matrix(n, d_in);
    g.labels.resize(n);
    for (int v = 0; v < n; ++v) {
        g.labels[v] = v < n / 2 ? 0 : 1;
        for (int d = 0; d < d_in; ++d)
            g.node_features(v, d) =
                2.0 * ((d % 2 == g.labels[v]) ? 1.0 : -1.0) + 0.1 * rng.gaussian();
    }
    for (int u = 0; u < n; ++u)
        for (int v = u + 1; v < n; ++v)
            if (g.labels[u] == g.labels[v] && rng.uniform01() < 0.2) g.edges.emplace_back(u, v);
    GraphDataset ds;
    ds.level = TaskLevel::node;
    ds.num_classes = 2;
    ds.graphs.push_back(std::move(g));
    ds.splits = split_by_seed(n, 0.5, 0.25, mix_seed(seed, 0x5EEDULL));
    ds.check();
    return ds;
}

// Node task whose labels are linearly readable from the features.
inline GraphDataset separable_node_dataset(std::uint64_t seed, int n = 40, int d_in = 4) {
    return toy_node_dataset(seed, n, d_in, /*signal=*/3.0, /*edge_prob=*/0.04);
}

}  // namespace taskprior::testutil
