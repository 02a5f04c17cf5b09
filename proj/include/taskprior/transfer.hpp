#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskprior/bank.hpp"
#include "taskprior/embedding.hpp"
#include "taskprior/errors.hpp"
#include "taskprior/fim.hpp"
#include "taskprior/graph_data.hpp"

namespace taskprior {

// Knowledge transfer: pick the bank tasks whose embeddings sit within a
// distance threshold of the novel task, then mix their design distributions
// with inverse-distance weights into a task-informed prior.

struct ProcessedBankEntry {
    std::string task_id;
    TaskEmbedding z_e;
    DesignDistribution dist;
};

struct TransferConfig {
    double d_thres = 0.5;       // embedding-distance cutoff for the close subset
    int k_top = 16;             // trials summarized into each design distribution
    double dist_epsilon = 1e-6; // lower clamp so a twin task cannot divide by zero
    double smoothing = 0.01;    // add-eps smoothing for design distributions
};

struct ScoredEntry {
    ProcessedBankEntry entry;
    double distance = 0.0;  // clamped below at dist_epsilon
};

// Entries with d_e <= d_thres, ascending by distance (ties keep bank order).
inline std::vector<ScoredEntry> close_subset(const std::vector<ProcessedBankEntry>& bank,
                                             const TaskEmbedding& z_n, double d_thres,
                                             double dist_epsilon = 1e-6) {
    if (bank.empty()) throw Error("close_subset needs a non-empty processed bank");
    std::vector<ScoredEntry> subset;
    for (const auto& entry : bank) {
        const double d = std::max(embed_distance(z_n, entry.z_e), dist_epsilon);
        if (d <= d_thres) subset.push_back(ScoredEntry{entry, d});
    }
    std::stable_sort(subset.begin(), subset.end(),
                     [](const ScoredEntry& a, const ScoredEntry& b) {
                         return a.distance < b.distance;
                     });
    return subset;
}

// Inverse-distance mixture of the subset's design distributions:
//   P_t(c) = sum_i w_i P_i(c),  w_i = (1/d_i) / sum_j (1/d_j).
// An empty subset falls back to the provided distribution (uniform when the
// caller has no better idea).
inline DesignDistribution aggregate_prior(const std::vector<ScoredEntry>& subset,
                                          const DesignSpace& space,
                                          const DesignDistribution& fallback) {
    if (subset.empty()) return fallback;
    double weight_sum = 0.0;
    std::vector<double> weights;
    weights.reserve(subset.size());
    for (const auto& s : subset) {
        if (s.distance <= 0.0) throw Error("aggregate_prior needs positive distances");
        weights.push_back(1.0 / s.distance);
        weight_sum += weights.back();
    }
    for (double& w : weights) w /= weight_sum;

    DesignDistribution out;
    out.k_used = subset.front().entry.dist.k_used;
    for (int d = 0; d < space.size(); ++d) {
        const auto& dim = space.dimensions[d];
        std::vector<double> probs(dim.choices.size(), 0.0);
        for (std::size_t i = 0; i < subset.size(); ++i) {
            const auto& src = subset[i].entry.dist;
            if (src.dim_names[d] != dim.name)
                throw Error("processed entry does not match space: " + src.dim_names[d]);
            for (std::size_t c = 0; c < probs.size(); ++c)
                probs[c] += weights[i] * src.per_dimension[d][c];
        }
        out.dim_names.push_back(dim.name);
        out.per_dimension.push_back(std::move(probs));
    }
    return out;
}

// Build the processed view of a raw bank: task feature -> embedding, plus the
// top-k design distribution per task. `dataset_for` resolves each task's data.
inline std::vector<ProcessedBankEntry> preprocess_bank(
    const Bank& bank, const DesignSpace& space,
    const std::function<const GraphDataset&(const std::string&)>& dataset_for,
    const std::vector<AnchorSpec>& anchors, const FeatureConfig& fcfg,
    const ProjectionNet& net, const TransferConfig& tcfg, std::uint64_t seed) {
    std::vector<ProcessedBankEntry> out;
    out.reserve(bank.tasks.size());
    for (const auto& task : bank.tasks) {
        if (task.trials.empty()) throw EmptyTask(task.task_id);
        const TaskFeature z_f =
            task_feature(dataset_for(task.task_id), anchors, fcfg,
                         mix_seed(seed, hash_str(task.task_id)));
        ProcessedBankEntry entry;
        entry.task_id = task.task_id;
        entry.z_e = project(net, z_f);
        entry.dist = design_distribution(task, space, tcfg.k_top, tcfg.smoothing);
        out.push_back(std::move(entry));
    }
    return out;
}

// JSON-lines: {task_id, z_e, dist:{dim:{choice:prob}}, k_used} per task.
inline void save_processed_bank(const std::vector<ProcessedBankEntry>& entries,
                                const DesignSpace& space, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& entry : entries) {
        nlohmann::json dist = nlohmann::json::object();
        for (int d = 0; d < space.size(); ++d) {
            nlohmann::json dim = nlohmann::json::object();
            for (std::size_t c = 0; c < space.dimensions[d].choices.size(); ++c)
                dim[space.dimensions[d].choices[c]] = entry.dist.per_dimension[d][c];
            dist[space.dimensions[d].name] = std::move(dim);
        }
        nlohmann::json j{{"task_id", entry.task_id},
                         {"z_e", entry.z_e.values},
                         {"dist", std::move(dist)},
                         {"k_used", entry.dist.k_used}};
        out << j.dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

inline std::vector<ProcessedBankEntry> load_processed_bank(const std::string& path,
                                                           const DesignSpace& space) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    std::vector<ProcessedBankEntry> entries;
    std::string line;
    int line_no = 0;
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
            ProcessedBankEntry entry;
            entry.task_id = j.at("task_id").get<std::string>();
            entry.z_e.values = j.at("z_e").get<Vector>();
            entry.dist.k_used = j.at("k_used").get<int>();
            const auto& dist = j.at("dist");
            for (const auto& dim : space.dimensions) {
                const auto& probs_json = dist.at(dim.name);
                std::vector<double> probs;
                probs.reserve(dim.choices.size());
                for (const auto& choice : dim.choices)
                    probs.push_back(probs_json.at(choice).get<double>());
                entry.dist.dim_names.push_back(dim.name);
                entry.dist.per_dimension.push_back(std::move(probs));
            }
            entries.push_back(std::move(entry));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return entries;
}

}  // namespace taskprior
