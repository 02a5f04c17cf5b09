#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskprior/design_space.hpp"
#include "taskprior/errors.hpp"
#include "taskprior/rng.hpp"

namespace taskprior {

enum class TaskLevel { node, graph };

inline std::string to_string(TaskLevel level) {
    return level == TaskLevel::node ? "node" : "graph";
}

inline TaskLevel task_level_from_string(const std::string& s) {
    if (s == "node") return TaskLevel::node;
    if (s == "graph") return TaskLevel::graph;
    throw Error("unknown task level: " + s);
}

// One training attempt: the config that was trained and what it scored.
struct TrialRecord {
    DesignConfig config;
    double val_metric = 0.0;                 // in [0,1], higher is better
    std::optional<double> test_metric;
    std::optional<std::vector<std::pair<int, double>>> train_curve;  // (epoch, loss)
    std::int64_t seed = 0;

    friend bool operator==(const TrialRecord&, const TrialRecord&) = default;
};

struct TaskRecord {
    std::string task_id;
    TaskLevel level = TaskLevel::node;
    std::string dataset_ref;
    std::string metric_name = "accuracy";
    std::vector<TrialRecord> trials;

    friend bool operator==(const TaskRecord&, const TaskRecord&) = default;
};

struct Bank {
    std::vector<TaskRecord> tasks;

    TaskRecord* find(const std::string& task_id) {
        for (auto& t : tasks)
            if (t.task_id == task_id) return &t;
        return nullptr;
    }
    const TaskRecord* find(const std::string& task_id) const {
        for (const auto& t : tasks)
            if (t.task_id == task_id) return &t;
        return nullptr;
    }

    TaskRecord& get(const std::string& task_id) {
        if (TaskRecord* t = find(task_id)) return *t;
        throw Error("no such task in bank: " + task_id);
    }
    const TaskRecord& get(const std::string& task_id) const {
        if (const TaskRecord* t = find(task_id)) return *t;
        throw Error("no such task in bank: " + task_id);
    }

    // Creates the task if absent; rejects duplicate ids with mismatched metadata.
    TaskRecord& declare(const std::string& task_id, TaskLevel level,
                        const std::string& dataset_ref, const std::string& metric_name) {
        if (TaskRecord* t = find(task_id)) {
            if (t->level != level || t->metric_name != metric_name ||
                t->dataset_ref != dataset_ref)
                throw Error("conflicting metadata for task: " + task_id);
            return *t;
        }
        tasks.push_back(TaskRecord{task_id, level, dataset_ref, metric_name, {}});
        return tasks.back();
    }

    std::size_t trial_count() const {
        std::size_t n = 0;
        for (const auto& t : tasks) n += t.trials.size();
        return n;
    }

    friend bool operator==(const Bank&, const Bank&) = default;
};

// The min(k, |trials|) trials with highest val_metric. Ties break by lower
// seed, then by insertion order, so summaries are reproducible.
inline std::vector<TrialRecord> top_k_trials(const TaskRecord& task, int k) {
    if (k < 1) throw Error("top_k_trials requires k >= 1");
    if (task.trials.empty()) throw EmptyTask(task.task_id);
    std::vector<int> order(task.trials.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        const TrialRecord& ta = task.trials[a];
        const TrialRecord& tb = task.trials[b];
        if (ta.val_metric != tb.val_metric) return ta.val_metric > tb.val_metric;
        return ta.seed < tb.seed;
    });
    const int take = std::min<int>(k, static_cast<int>(order.size()));
    std::vector<TrialRecord> out;
    out.reserve(take);
    for (int i = 0; i < take; ++i) out.push_back(task.trials[order[i]]);
    return out;
}

// Per-dimension categorical distributions; their product approximates the
// task's distribution over good designs.
struct DesignDistribution {
    std::vector<std::string> dim_names;               // space order
    std::vector<std::vector<double>> per_dimension;   // aligned with each dimension's choices
    int k_used = 0;

    const std::vector<double>& probs_for(const std::string& dim) const {
        for (std::size_t i = 0; i < dim_names.size(); ++i)
            if (dim_names[i] == dim) return per_dimension[i];
        throw Error("distribution has no dimension: " + dim);
    }

    void check_for(const DesignSpace& space, double tol = 1e-9) const {
        if (static_cast<int>(dim_names.size()) != space.size())
            throw Error("distribution/space dimension count mismatch");
        for (int d = 0; d < space.size(); ++d) {
            if (dim_names[d] != space.dimensions[d].name)
                throw Error("distribution/space dimension name mismatch: " + dim_names[d]);
            if (per_dimension[d].size() != space.dimensions[d].choices.size())
                throw Error("distribution/space choice count mismatch: " + dim_names[d]);
            double sum = 0.0;
            for (double p : per_dimension[d]) {
                if (p < 0.0) throw Error("negative probability in dimension: " + dim_names[d]);
                sum += p;
            }
            if (std::abs(sum - 1.0) > tol)
                throw Error("probabilities do not sum to 1 in dimension: " + dim_names[d]);
        }
    }

    static DesignDistribution uniform(const DesignSpace& space) {
        DesignDistribution dist;
        for (const auto& d : space.dimensions) {
            dist.dim_names.push_back(d.name);
            dist.per_dimension.emplace_back(d.choices.size(),
                                            1.0 / static_cast<double>(d.choices.size()));
        }
        return dist;
    }

    friend bool operator==(const DesignDistribution&, const DesignDistribution&) = default;
};

// Frequency distribution of choices among the task's top-k trials, with add-eps
// smoothing: p(c) = (count(c) + smoothing) / (k_used + smoothing * n_choices).
inline DesignDistribution design_distribution(const TaskRecord& task, const DesignSpace& space,
                                              int k, double smoothing) {
    if (smoothing < 0.0) throw Error("smoothing must be >= 0");
    const std::vector<TrialRecord> top = top_k_trials(task, k);
    DesignDistribution dist;
    dist.k_used = static_cast<int>(top.size());
    for (const auto& d : space.dimensions) {
        std::vector<double> counts(d.choices.size(), 0.0);
        for (const auto& trial : top) {
            const std::string& value = trial.config.at(d.name);
            counts[space.choice_index(d.name, value)] += 1.0;
        }
        const double denom =
            dist.k_used + smoothing * static_cast<double>(d.choices.size());
        for (double& c : counts) c = (c + smoothing) / denom;
        dist.dim_names.push_back(d.name);
        dist.per_dimension.push_back(std::move(counts));
    }
    return dist;
}

// Independent draw per dimension (product-form prior).
inline DesignConfig sample_config(const DesignDistribution& dist, const DesignSpace& space,
                                  Rng& rng) {
    DesignConfig config;
    for (int d = 0; d < space.size(); ++d) {
        const int idx = rng.categorical(dist.per_dimension[d]);
        config.assignment[space.dimensions[d].name] = space.dimensions[d].choices[idx];
    }
    return config;
}

inline DesignConfig sample_config(const DesignDistribution& dist, const DesignSpace& space,
                                  std::uint64_t rng_seed) {
    Rng rng(rng_seed);
    return sample_config(dist, space, rng);
}

namespace detail {

inline nlohmann::json trial_line(const TaskRecord& task, const TrialRecord& trial) {
    nlohmann::json j;
    j["task_id"] = task.task_id;
    j["level"] = to_string(task.level);
    j["metric_name"] = task.metric_name;
    if (!task.dataset_ref.empty()) j["dataset_ref"] = task.dataset_ref;
    j["config"] = config_to_json(trial.config);
    j["val_metric"] = trial.val_metric;
    if (trial.test_metric) j["test_metric"] = *trial.test_metric;
    j["seed"] = trial.seed;
    if (trial.train_curve) {
        nlohmann::json curve = nlohmann::json::array();
        for (const auto& [epoch, loss] : *trial.train_curve)
            curve.push_back({epoch, loss});
        j["curve"] = curve;
    }
    return j;
}

}  // namespace detail

// JSON-lines, one line per trial with the task metadata embedded, so banks can
// be appended without rewriting. A task with zero trials is kept representable
// by a metadata-only line.
inline void save_bank(const Bank& bank, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& task : bank.tasks) {
        if (task.trials.empty()) {
            nlohmann::json j;
            j["task_id"] = task.task_id;
            j["level"] = to_string(task.level);
            j["metric_name"] = task.metric_name;
            if (!task.dataset_ref.empty()) j["dataset_ref"] = task.dataset_ref;
            out << j.dump() << "\n";
            continue;
        }
        for (const auto& trial : task.trials)
            out << detail::trial_line(task, trial).dump() << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

inline Bank load_bank(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    Bank bank;
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
            TaskRecord& task = bank.declare(
                j.at("task_id").get<std::string>(),
                task_level_from_string(j.at("level").get<std::string>()),
                j.value("dataset_ref", std::string{}), j.at("metric_name").get<std::string>());
            if (!j.contains("config")) continue;  // metadata-only line
            TrialRecord trial;
            trial.config = config_from_json(j.at("config"));
            trial.val_metric = j.at("val_metric").get<double>();
            if (j.contains("test_metric")) trial.test_metric = j.at("test_metric").get<double>();
            trial.seed = j.at("seed").get<std::int64_t>();
            if (j.contains("curve")) {
                std::vector<std::pair<int, double>> curve;
                for (const auto& point : j.at("curve"))
                    curve.emplace_back(point.at(0).get<int>(), point.at(1).get<double>());
                trial.train_curve = std::move(curve);
            }
            task.trials.push_back(std::move(trial));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(e.what(), line_no);
        }
    }
    return bank;
}

}  // namespace taskprior
