#pragma once

#include <algorithm>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "taskprior/bank.hpp"
#include "taskprior/errors.hpp"
#include "taskprior/linalg.hpp"
#include "taskprior/rng.hpp"

namespace taskprior {

struct Graph {
    Matrix node_features;                     // [n_nodes x d_in]
    std::vector<std::pair<int, int>> edges;   // undirected, each stored once
    std::vector<int> labels;                  // per node, or a single graph label

    int num_nodes() const { return node_features.rows; }

    friend bool operator==(const Graph&, const Graph&) = default;
};

struct Split {
    std::vector<int> train, val, test;

    friend bool operator==(const Split&, const Split&) = default;
};

// A labeled collection of graphs plus train/val/test splits over "prediction
// units": individual nodes for node-level tasks (numbered consecutively across
// graphs), whole graphs for graph-level tasks.
struct GraphDataset {
    std::vector<Graph> graphs;
    TaskLevel level = TaskLevel::node;
    int num_classes = 0;
    Split splits;

    int d_in() const { return graphs.empty() ? 0 : graphs.front().node_features.cols; }

    int unit_count() const {
        if (level == TaskLevel::graph) return static_cast<int>(graphs.size());
        int n = 0;
        for (const auto& g : graphs) n += g.num_nodes();
        return n;
    }

    // (graph index, row index) for a global unit id.
    std::pair<int, int> unit_location(int unit) const {
        if (level == TaskLevel::graph) return {unit, 0};
        int offset = 0;
        for (std::size_t g = 0; g < graphs.size(); ++g) {
            const int n = graphs[g].num_nodes();
            if (unit < offset + n) return {static_cast<int>(g), unit - offset};
            offset += n;
        }
        throw Error("unit id out of range: " + std::to_string(unit));
    }

    int unit_label(int unit) const {
        const auto [g, row] = unit_location(unit);
        return level == TaskLevel::graph ? graphs[g].labels.at(0) : graphs[g].labels.at(row);
    }

    void check() const {
        if (graphs.empty()) throw Error("dataset has no graphs");
        const int d = d_in();
        for (const auto& g : graphs) {
            if (g.node_features.cols != d)
                throw Error("node feature width differs between graphs");
            for (const auto& [s, t] : g.edges)
                if (s < 0 || t < 0 || s >= g.num_nodes() || t >= g.num_nodes())
                    throw Error("edge endpoint out of range");
            const std::size_t expected =
                level == TaskLevel::graph ? 1 : static_cast<std::size_t>(g.num_nodes());
            if (g.labels.size() != expected) throw Error("label count mismatch");
            for (int y : g.labels)
                if (y < 0 || y >= num_classes) throw Error("label out of class range");
        }
        const int units = unit_count();
        std::vector<char> seen(units, 0);
        for (const std::vector<int>* part : {&splits.train, &splits.val, &splits.test})
            for (int u : *part) {
                if (u < 0 || u >= units) throw Error("split unit out of range");
                if (seen[u]) throw Error("splits are not disjoint");
                seen[u] = 1;
            }
    }

    friend bool operator==(const GraphDataset&, const GraphDataset&) = default;
};

// Deterministic shuffle split over prediction units.
inline Split split_by_seed(int unit_count, double train_frac, double val_frac,
                           std::uint64_t seed) {
    std::vector<int> order(unit_count);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix_seed(seed, 0x5EED5EEDULL));
    for (int i = unit_count - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_int(i + 1)]);
    const int n_train = static_cast<int>(train_frac * unit_count);
    const int n_val = static_cast<int>(val_frac * unit_count);
    Split split;
    split.train.assign(order.begin(), order.begin() + n_train);
    split.val.assign(order.begin() + n_train, order.begin() + n_train + n_val);
    split.test.assign(order.begin() + n_train + n_val, order.end());
    return split;
}

// JSON-lines: one graph per line.
inline void save_dataset(const GraphDataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& g : ds.graphs) {
        nlohmann::json j;
        nlohmann::json nodes = nlohmann::json::array();
        for (int r = 0; r < g.node_features.rows; ++r) {
            nlohmann::json row = nlohmann::json::array();
            for (int c = 0; c < g.node_features.cols; ++c) row.push_back(g.node_features(r, c));
            nodes.push_back(std::move(row));
        }
        j["nodes"] = std::move(nodes);
        nlohmann::json edges = nlohmann::json::array();
        for (const auto& [s, t] : g.edges) edges.push_back({s, t});
        j["edges"] = std::move(edges);
        j["labels"] = g.labels;
        j["level"] = to_string(ds.level);
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

// Splits are not part of the graph lines; pass them in, or derive them later
// with split_by_seed.
inline GraphDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    GraphDataset ds;
    std::string line;
    int line_no = 0;
    bool level_set = false;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
        try {
            const TaskLevel level = task_level_from_string(j.at("level").get<std::string>());
            if (!level_set) {
                ds.level = level;
                level_set = true;
            } else if (level != ds.level) {
                throw ParseError("mixed task levels in one dataset", line_no);
            }
            Graph g;
            const auto& nodes = j.at("nodes");
            const int n = static_cast<int>(nodes.size());
            const int d = n > 0 ? static_cast<int>(nodes.at(0).size()) : 0;
            g.node_features = Matrix(n, d);
            for (int r = 0; r < n; ++r)
                for (int c = 0; c < d; ++c)
                    g.node_features(r, c) = nodes.at(r).at(c).get<double>();
            for (const auto& e : j.at("edges"))
                g.edges.emplace_back(e.at(0).get<int>(), e.at(1).get<int>());
            g.labels = j.at("labels").get<std::vector<int>>();
            for (int y : g.labels) max_label = std::max(max_label, y);
            ds.graphs.push_back(std::move(g));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    if (ds.graphs.empty()) throw ParseError("dataset file has no graphs", line_no);
    ds.num_classes = max_label + 1;
    return ds;
}

inline void save_split(const Split& split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    nlohmann::json j{{"train", split.train}, {"val", split.val}, {"test", split.test}};
    out << j.dump() << "\n";
}

inline Split load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), 1);
    }
    return Split{j.at("train").get<std::vector<int>>(), j.at("val").get<std::vector<int>>(),
                 j.at("test").get<std::vector<int>>()};
}

}  // namespace taskprior
