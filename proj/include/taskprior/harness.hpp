#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskprior/bank.hpp"
#include "taskprior/embedding.hpp"
#include "taskprior/errors.hpp"
#include "taskprior/fim.hpp"
#include "taskprior/metric_oracle.hpp"
#include "taskprior/parallel.hpp"
#include "taskprior/search.hpp"
#include "taskprior/synthetic.hpp"
#include "taskprior/transfer.hpp"

namespace taskprior {

// Experiment harness: builds the synthetic suite (datasets, raw bank, task
// features, oracle distances), and runs the leave-one-out and few-trial
// efficiency studies on top of it. Every step is deterministic in the config
// seed; intermediate products can be cached to (and reloaded from) a directory
// using the same file formats the CLI speaks.

struct HarnessConfig {
    bool desk_space = true;
    int trials_per_task = 100;
    int anchor_hidden = 8;
    FeatureConfig feature;
    AnchorTrainOptions oracle{80, 0.01, 5};
    ProjectionTrainConfig projection{0.1, 5e-3, 1000, 128, 16, 2};
    TransferConfig transfer;
    TpeConfig tpe;
    EvoConfig evo;
    int warmup = 5;
    int normloss_steps = 10;
    int jobs = 2;
    std::uint64_t seed = 7;

    DesignSpace space() const { return desk_space ? desk_design_space() : default_design_space(); }
    std::vector<AnchorSpec> anchors() const { return default_anchors(anchor_hidden); }
};

// key = value lines, '#' comments.
inline std::map<std::string, std::string> load_key_values(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw ParseError("expected key = value", line_no);
            continue;
        }
        const auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            const auto b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
        };
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline HarnessConfig apply_config(HarnessConfig cfg,
                                  const std::map<std::string, std::string>& kv) {
    const auto geti = [&](const char* key, int& out) {
        if (auto it = kv.find(key); it != kv.end()) out = std::stoi(it->second);
    };
    const auto getd = [&](const char* key, double& out) {
        if (auto it = kv.find(key); it != kv.end()) out = std::stod(it->second);
    };
    const auto getb = [&](const char* key, bool& out) {
        if (auto it = kv.find(key); it != kv.end()) out = it->second == "true" || it->second == "1";
    };
    getb("space.desk", cfg.desk_space);
    geti("bank.trials_per_task", cfg.trials_per_task);
    geti("feature.anchor_hidden", cfg.anchor_hidden);
    geti("feature.repeats", cfg.feature.repeats);
    geti("feature.last_layer_steps", cfg.feature.last_layer_steps);
    getd("feature.last_layer_lr", cfg.feature.last_layer_lr);
    geti("oracle.epochs", cfg.oracle.epochs);
    getd("oracle.lr", cfg.oracle.lr);
    getd("projection.margin", cfg.projection.margin);
    getd("projection.lr", cfg.projection.lr);
    geti("projection.iterations", cfg.projection.iterations);
    geti("projection.batch_size", cfg.projection.batch_size);
    geti("projection.hidden", cfg.projection.hidden);
    geti("projection.out_dim", cfg.projection.out_dim);
    getd("transfer.d_thres", cfg.transfer.d_thres);
    geti("transfer.k_top", cfg.transfer.k_top);
    getd("transfer.smoothing", cfg.transfer.smoothing);
    getd("transfer.dist_epsilon", cfg.transfer.dist_epsilon);
    getd("tpe.gamma", cfg.tpe.gamma);
    geti("tpe.candidates", cfg.tpe.n_candidates);
    getd("tpe.prior_weight", cfg.tpe.prior_weight);
    geti("evo.population", cfg.evo.population);
    geti("evo.tournament", cfg.evo.tournament);
    geti("search.warmup", cfg.warmup);
    geti("harness.normloss_steps", cfg.normloss_steps);
    geti("jobs", cfg.jobs);
    if (auto it = kv.find("seed"); it != kv.end()) cfg.seed = std::stoull(it->second);
    return cfg;
}

// ---------------------------------------------------------------------------
// Normalized-loss baseline feature
// ---------------------------------------------------------------------------

// Per anchor: run a few full-training steps and record the train-loss
// trajectory divided by its starting value; concatenate across anchors and
// L2-normalize. A flat trajectory contributes all-ones before normalization.
inline TaskFeature normalized_loss_feature(const GraphDataset& ds,
                                           const std::vector<AnchorSpec>& anchors, int steps,
                                           double lr, std::uint64_t seed) {
    if (steps < 1) throw Error("normalized_loss_feature needs steps >= 1");
    TaskFeature feature;
    for (std::size_t u = 0; u < anchors.size(); ++u) {
        TrainOptions opts;
        opts.record_curve = false;
        opts.record_loss_seq = true;
        opts.cosine_schedule = false;
        const TrainOutcome outcome =
            train_model(to_arch(anchors[u]), ds, steps, lr, mix_seed(seed, 0x10E5ULL, u), opts);
        Vector seq = outcome.train_loss_seq;  // loss before each step, then final
        if (seq.empty()) seq.assign(steps + 1, 1.0);
        const double initial = std::isfinite(seq.front()) && seq.front() > 1e-12
                                   ? seq.front()
                                   : 1.0;
        for (int t = 1; t <= steps; ++t) {
            double v = t < static_cast<int>(seq.size()) ? seq[t] / initial : 10.0;
            if (!std::isfinite(v)) v = 10.0;  // diverged step: pinned penalty value
            feature.values.push_back(v);
        }
    }
    const double norm = l2_norm(feature.values);
    if (norm > 1e-12) scale(feature.values, 1.0 / norm);
    return feature;
}

// ---------------------------------------------------------------------------
// Suite context
// ---------------------------------------------------------------------------

struct SuiteTask {
    SyntheticTaskSpec spec;
    TaskRecord shell;
    GraphDataset dataset;
};

struct SuiteContext {
    HarnessConfig cfg;
    DesignSpace space;
    std::vector<AnchorSpec> anchors;
    std::vector<SuiteTask> tasks;
    Bank bank;
    std::vector<NamedFeature> features;           // FIM task features
    std::vector<std::vector<std::vector<double>>> per_anchor_alpha;  // [task][anchor][repeat]
    std::vector<NamedFeature> normloss_features;  // baseline
    std::vector<AnchorPerformanceProfile> profiles;
    OracleDistances oracle;

    int index_of(const std::string& task_id) const {
        for (std::size_t i = 0; i < tasks.size(); ++i)
            if (tasks[i].spec.task_id == task_id) return static_cast<int>(i);
        throw Error("no such suite task: " + task_id);
    }

    const GraphDataset& dataset_of(const std::string& task_id) const {
        return tasks[index_of(task_id)].dataset;
    }
};

namespace detail {

inline void save_features_json(const SuiteContext& ctx, const std::string& path) {
    nlohmann::json tasks = nlohmann::json::array();
    for (std::size_t i = 0; i < ctx.features.size(); ++i) {
        tasks.push_back({{"task_id", ctx.features[i].task_id},
                         {"z_f", ctx.features[i].z_f.values},
                         {"per_anchor_alpha", ctx.per_anchor_alpha[i]},
                         {"normalized_loss", ctx.normloss_features[i].z_f.values}});
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << nlohmann::json{{"tasks", tasks}}.dump(2) << "\n";
}

inline bool load_features_json(SuiteContext& ctx, const std::string& path) {
    std::ifstream in(path);
    if (!in) return false;
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        return false;
    }
    ctx.features.clear();
    ctx.per_anchor_alpha.clear();
    ctx.normloss_features.clear();
    for (const auto& t : j.at("tasks")) {
        NamedFeature f;
        f.task_id = t.at("task_id").get<std::string>();
        f.z_f.values = t.at("z_f").get<Vector>();
        ctx.features.push_back(f);
        ctx.per_anchor_alpha.push_back(
            t.at("per_anchor_alpha").get<std::vector<std::vector<double>>>());
        NamedFeature nl;
        nl.task_id = f.task_id;
        nl.z_f.values = t.at("normalized_loss").get<Vector>();
        ctx.normloss_features.push_back(nl);
    }
    return true;
}

inline void save_profiles_json(const std::vector<AnchorPerformanceProfile>& profiles,
                               const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& p : profiles) j.push_back({{"task_id", p.task_id}, {"perf", p.perf}});
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
}

inline bool load_profiles_json(std::vector<AnchorPerformanceProfile>& profiles,
                               const std::string& path) {
    std::ifstream in(path);
    if (!in) return false;
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception&) {
        return false;
    }
    profiles.clear();
    for (const auto& p : j)
        profiles.push_back({p.at("task_id").get<std::string>(), p.at("perf").get<Vector>()});
    return true;
}

}  // namespace detail

// Materialize datasets, run the uniform-random bank, compute oracle profiles
// and both feature variants. If cache_dir is non-empty, finished products are
// stored there and reused on the next call.
inline SuiteContext build_suite_context(const std::vector<SyntheticTaskSpec>& specs,
                                        const HarnessConfig& cfg,
                                        const std::string& cache_dir = {}) {
    namespace fs = std::filesystem;
    SuiteContext ctx;
    ctx.cfg = cfg;
    ctx.space = cfg.space();
    ctx.anchors = cfg.anchors();
    for (const auto& spec : specs) {
        auto [shell, ds] = generate_task(spec);
        ctx.tasks.push_back(SuiteTask{spec, std::move(shell), std::move(ds)});
    }
    const bool cache = !cache_dir.empty();
    if (cache) fs::create_directories(fs::path(cache_dir) / "datasets");

    if (cache) {
        save_suite(specs, (fs::path(cache_dir) / "suite.json").string());
        save_space(ctx.space, (fs::path(cache_dir) / "space.json").string());
        for (const auto& task : ctx.tasks) {
            const fs::path p = fs::path(cache_dir) / task.shell.dataset_ref;
            if (!fs::exists(p)) {
                save_dataset(task.dataset, p.string());
                save_split(task.dataset.splits, (p.string() + ".splits.json"));
            }
        }
    }

    // raw bank
    const std::string bank_path =
        cache ? (fs::path(cache_dir) / "bank.jsonl").string() : std::string{};
    if (cache && fs::exists(bank_path)) {
        ctx.bank = load_bank(bank_path);
    } else {
        std::vector<const GraphDataset*> datasets;
        for (const auto& t : ctx.tasks) datasets.push_back(&t.dataset);
        ctx.bank = build_bank(specs, datasets, ctx.space, cfg.trials_per_task, cfg.seed,
                              cfg.jobs);
        if (cache) save_bank(ctx.bank, bank_path);
    }

    // task features (both variants)
    const std::string features_path =
        cache ? (fs::path(cache_dir) / "features.json").string() : std::string{};
    if (!(cache && detail::load_features_json(ctx, features_path))) {
        const int n = static_cast<int>(ctx.tasks.size());
        ctx.features.resize(n);
        ctx.per_anchor_alpha.resize(n);
        ctx.normloss_features.resize(n);
        parallel_for(n, cfg.jobs, [&](int i) {
            const SuiteTask& task = ctx.tasks[i];
            const std::uint64_t task_seed = mix_seed(cfg.seed, hash_str(task.spec.task_id));
            const TaskFeatureAudit audit =
                task_feature_audit(task.dataset, ctx.anchors, cfg.feature, task_seed);
            ctx.features[i] = NamedFeature{task.spec.task_id, audit.z_f};
            ctx.per_anchor_alpha[i] = audit.per_anchor_alpha;
            ctx.normloss_features[i] = NamedFeature{
                task.spec.task_id,
                normalized_loss_feature(task.dataset, ctx.anchors, cfg.normloss_steps,
                                        cfg.oracle.lr, task_seed)};
        });
        if (cache) detail::save_features_json(ctx, features_path);
    }

    // oracle profiles and distances
    const std::string profiles_path =
        cache ? (fs::path(cache_dir) / "profiles.json").string() : std::string{};
    if (!(cache && detail::load_profiles_json(ctx.profiles, profiles_path))) {
        const int n = static_cast<int>(ctx.tasks.size());
        ctx.profiles.resize(n);
        parallel_for(n, cfg.jobs, [&](int i) {
            const SuiteTask& task = ctx.tasks[i];
            ctx.profiles[i] =
                anchor_profile(task.dataset, ctx.anchors, cfg.oracle,
                               mix_seed(cfg.seed, hash_str(task.spec.task_id), 0x02ACULL),
                               task.spec.task_id);
        });
        if (cache) detail::save_profiles_json(ctx.profiles, profiles_path);
    }
    ctx.oracle = similarity_matrix(ctx.profiles);
    if (cache) save_distances_csv(ctx.oracle, (fs::path(cache_dir) / "distances.csv").string());
    return ctx;
}

// Per-task top-k design distribution from the raw bank.
inline DesignDistribution suite_distribution(const SuiteContext& ctx,
                                             const std::string& task_id) {
    return design_distribution(ctx.bank.get(task_id), ctx.space, ctx.cfg.transfer.k_top,
                               ctx.cfg.transfer.smoothing);
}

// Projection net trained with one task held out.
inline ProjectionNet train_projection_loo(const SuiteContext& ctx, int held_out,
                                          std::uint64_t seed) {
    std::vector<NamedFeature> rest;
    for (std::size_t j = 0; j < ctx.features.size(); ++j)
        if (static_cast<int>(j) != held_out) rest.push_back(ctx.features[j]);
    return train_projection(rest, ctx.oracle, ctx.cfg.projection, seed);
}

// Processed bank over every task except the held-out one, embedded with the
// provided net.
inline std::vector<ProcessedBankEntry> processed_bank_excluding(const SuiteContext& ctx,
                                                                int held_out,
                                                                const ProjectionNet& net) {
    std::vector<ProcessedBankEntry> entries;
    for (std::size_t j = 0; j < ctx.tasks.size(); ++j) {
        if (static_cast<int>(j) == held_out) continue;
        ProcessedBankEntry entry;
        entry.task_id = ctx.tasks[j].spec.task_id;
        entry.z_e = project(net, ctx.features[j].z_f);
        entry.dist = suite_distribution(ctx, entry.task_id);
        entries.push_back(std::move(entry));
    }
    return entries;
}

// ---------------------------------------------------------------------------
// Leave-one-out feature-quality study
// ---------------------------------------------------------------------------

struct LooRow {
    std::string task_id;
    double corr_embedding = 0.0;
    double corr_feature = 0.0;
    double corr_normloss = 0.0;
};

struct LooReport {
    std::vector<LooRow> rows;
    double mean_embedding = 0.0, std_embedding = 0.0;
    double mean_feature = 0.0, std_feature = 0.0;
    double mean_normloss = 0.0, std_normloss = 0.0;
};

namespace detail {

inline std::pair<double, double> mean_std(const Vector& xs) {
    if (xs.empty()) return {0.0, 0.0};
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= xs.size();
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= xs.size();
    return {mean, std::sqrt(var)};
}

}  // namespace detail

// For each held-out task: retrain the projection on the rest, then rank the
// remaining tasks by embedding distance / raw-feature distance /
// normalized-loss distance and report Kendall agreement with the oracle
// ranking.
inline LooReport evaluate_loo(const SuiteContext& ctx) {
    const int n = static_cast<int>(ctx.tasks.size());
    if (n < 4) throw InsufficientTasks("leave-one-out study needs >= 4 tasks");
    LooReport report;
    report.rows.resize(n);
    parallel_for(n, ctx.cfg.jobs, [&](int i) {
        const ProjectionNet net =
            train_projection_loo(ctx, i, mix_seed(ctx.cfg.seed, 0x100ULL, i));
        std::vector<TaskEmbedding> embeds(n);
        for (int j = 0; j < n; ++j) embeds[j] = project(net, ctx.features[j].z_f);
        Vector d_e, d_f, d_l, d_g;
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            d_e.push_back(embed_distance(embeds[i], embeds[j]));
            d_f.push_back(1.0 - dot(ctx.features[i].z_f.values, ctx.features[j].z_f.values));
            d_l.push_back(1.0 - dot(ctx.normloss_features[i].z_f.values,
                                    ctx.normloss_features[j].z_f.values));
            d_g.push_back(ctx.oracle.at(ctx.oracle.index_of(ctx.tasks[i].spec.task_id),
                                        ctx.oracle.index_of(ctx.tasks[j].spec.task_id)));
        }
        LooRow row;
        row.task_id = ctx.tasks[i].spec.task_id;
        row.corr_embedding = kendall_tau(d_e, d_g);
        row.corr_feature = kendall_tau(d_f, d_g);
        row.corr_normloss = kendall_tau(d_l, d_g);
        report.rows[i] = row;
    });
    Vector e, f, l;
    for (const auto& row : report.rows) {
        e.push_back(row.corr_embedding);
        f.push_back(row.corr_feature);
        l.push_back(row.corr_normloss);
    }
    std::tie(report.mean_embedding, report.std_embedding) = detail::mean_std(e);
    std::tie(report.mean_feature, report.std_feature) = detail::mean_std(f);
    std::tie(report.mean_normloss, report.std_normloss) = detail::mean_std(l);
    return report;
}

inline void save_loo_csv(const LooReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "task_id,corr_embedding,corr_feature,corr_normloss\n";
    out.precision(17);
    for (const auto& row : report.rows)
        out << row.task_id << "," << row.corr_embedding << "," << row.corr_feature << ","
            << row.corr_normloss << "\n";
    out << "mean," << report.mean_embedding << "," << report.mean_feature << ","
        << report.mean_normloss << "\n";
    out << "std," << report.std_embedding << "," << report.std_feature << ","
        << report.std_normloss << "\n";
}

// ---------------------------------------------------------------------------
// Few-trial efficiency study
// ---------------------------------------------------------------------------

struct MethodSpec {
    std::string name;
    SearchAlgo algo = SearchAlgo::random;
    bool transfer_prior = false;
    int trials = 3;
};

struct RunRecord {
    std::string method;
    std::string task_id;
    int seed_index = 0;
    std::vector<double> best_val;   // running best val per trial
    std::vector<double> test_at_best;
};

struct CurvesReport {
    std::vector<MethodSpec> methods;
    std::vector<RunRecord> runs;
    // aggregates per method: index t -> mean/std over (task, seed) runs
    std::map<std::string, std::vector<double>> mean_val, std_val, mean_test, std_test;
    std::map<std::string, double> mean_trials_to_target;
    std::map<std::string, double> target_by_task;  // task_id -> target value

    const RunRecord& run(const std::string& method, const std::string& task,
                         int seed_index) const {
        for (const auto& r : runs)
            if (r.method == method && r.task_id == task && r.seed_index == seed_index) return r;
        throw Error("no such run: " + method + "/" + task);
    }
};

// Runs every method on every task as a novel task (leave-one-out bank), over
// n_seeds repetitions. Targets for the trials-to-target statistic are the
// mean final best of `target_method` on each task.
inline CurvesReport efficiency_curves(const SuiteContext& ctx,
                                      const std::vector<MethodSpec>& methods, int n_seeds,
                                      const std::string& target_method = {}) {
    if (n_seeds < 2) throw Error("efficiency_curves needs n_seeds >= 2");
    const int n_tasks = static_cast<int>(ctx.tasks.size());
    CurvesReport report;
    report.methods = methods;

    // Per-task transfer machinery, shared across seeds and methods.
    std::vector<ProjectionNet> nets;
    std::vector<std::vector<ProcessedBankEntry>> banks;
    nets.resize(n_tasks);
    banks.resize(n_tasks);
    parallel_for(n_tasks, ctx.cfg.jobs, [&](int i) {
        nets[i] = train_projection_loo(ctx, i, mix_seed(ctx.cfg.seed, 0x200ULL, i));
        banks[i] = processed_bank_excluding(ctx, i, nets[i]);
    });

    struct Work {
        int method = 0;
        int task = 0;
        int seed_index = 0;
    };
    std::vector<Work> work;
    for (int m = 0; m < static_cast<int>(methods.size()); ++m)
        for (int t = 0; t < n_tasks; ++t)
            for (int s = 0; s < n_seeds; ++s) work.push_back(Work{m, t, s});
    std::vector<RunRecord> runs(work.size());
    parallel_for(static_cast<int>(work.size()), ctx.cfg.jobs, [&](int w) {
        const MethodSpec& method = methods[work[w].method];
        const int ti = work[w].task;
        const SuiteTask& task = ctx.tasks[ti];
        const std::uint64_t run_seed = mix_seed(ctx.cfg.seed, hash_str(task.spec.task_id),
                                                0xC0DEULL, work[w].seed_index);
        const EvalFn eval = [&task](const DesignConfig& config, std::uint64_t trial_seed) {
            const auto [params, record] = train_full(config, task.dataset, trial_seed);
            return std::make_pair(record.val_metric, record.test_metric);
        };
        const SearchBudget budget = make_budget(method.trials, ctx.cfg.warmup);
        SearchResult result;
        if (method.transfer_prior) {
            result = autotransfer_search(banks[ti], task.dataset, ctx.anchors, ctx.cfg.feature,
                                         nets[ti], ctx.cfg.transfer, method.algo, budget,
                                         run_seed, ctx.space, eval, ctx.cfg.tpe, ctx.cfg.evo)
                         .result;
        } else {
            result = run_search(method.algo, ctx.space, DesignDistribution::uniform(ctx.space),
                                budget, eval, run_seed, ctx.cfg.tpe, ctx.cfg.evo);
        }
        RunRecord record;
        record.method = method.name;
        record.task_id = task.spec.task_id;
        record.seed_index = work[w].seed_index;
        record.best_val = result.best_by_trial;
        record.test_at_best = result.test_at_best_by_trial();
        runs[w] = std::move(record);
    });
    report.runs = std::move(runs);

    // aggregate curves
    for (const auto& method : methods) {
        std::vector<Vector> val_at(method.trials), test_at(method.trials);
        for (const auto& run : report.runs) {
            if (run.method != method.name) continue;
            for (int t = 0; t < method.trials && t < static_cast<int>(run.best_val.size()); ++t) {
                val_at[t].push_back(run.best_val[t]);
                test_at[t].push_back(run.test_at_best[t]);
            }
        }
        for (int t = 0; t < method.trials; ++t) {
            const auto [mv, sv] = detail::mean_std(val_at[t]);
            const auto [mt, st] = detail::mean_std(test_at[t]);
            report.mean_val[method.name].push_back(mv);
            report.std_val[method.name].push_back(sv);
            report.mean_test[method.name].push_back(mt);
            report.std_test[method.name].push_back(st);
        }
    }

    // trials-to-target
    if (!target_method.empty()) {
        for (const auto& task : ctx.tasks) {
            Vector finals;
            for (const auto& run : report.runs)
                if (run.method == target_method && run.task_id == task.spec.task_id)
                    finals.push_back(run.best_val.back());
            report.target_by_task[task.spec.task_id] = detail::mean_std(finals).first;
        }
        for (const auto& method : methods) {
            Vector firsts;
            for (const auto& run : report.runs) {
                if (run.method != method.name) continue;
                const double target = report.target_by_task.at(run.task_id);
                int first = static_cast<int>(run.best_val.size()) + 1;  // censored
                for (std::size_t t = 0; t < run.best_val.size(); ++t)
                    if (run.best_val[t] >= target) {
                        first = static_cast<int>(t) + 1;
                        break;
                    }
                firsts.push_back(first);
            }
            report.mean_trials_to_target[method.name] = detail::mean_std(firsts).first;
        }
    }
    return report;
}

inline void save_curves_csv(const CurvesReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "method,trial,mean_best_val,std_best_val,mean_test_at_best,std_test_at_best\n";
    out.precision(17);
    for (const auto& method : report.methods)
        for (int t = 0; t < method.trials; ++t)
            out << method.name << "," << (t + 1) << "," << report.mean_val.at(method.name)[t]
                << "," << report.std_val.at(method.name)[t] << ","
                << report.mean_test.at(method.name)[t] << ","
                << report.std_test.at(method.name)[t] << "\n";
}

// Minimal static line chart of the mean running-best curves.
inline void save_curves_svg(const CurvesReport& report, const std::string& path) {
    const int width = 720, height = 440, margin = 56;
    double lo = 1.0, hi = 0.0;
    int max_trials = 1;
    for (const auto& method : report.methods) {
        max_trials = std::max(max_trials, method.trials);
        for (double v : report.mean_val.at(method.name)) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }
    if (hi <= lo) hi = lo + 1e-3;
    const double pad = 0.05 * (hi - lo);
    lo -= pad;
    hi += pad;
    const auto sx = [&](double t) {
        return margin + (width - 2 * margin) * (t - 1) / std::max(1, max_trials - 1);
    };
    const auto sy = [&](double v) {
        return height - margin - (height - 2 * margin) * (v - lo) / (hi - lo);
    };
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
    out << "<line x1='" << margin << "' y1='" << height - margin << "' x2='" << width - margin
        << "' y2='" << height - margin << "' stroke='black'/>\n";
    out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='"
        << height - margin << "' stroke='black'/>\n";
    out << "<text x='" << width / 2 << "' y='" << height - 12
        << "' font-size='13' text-anchor='middle'>trial</text>\n";
    out << "<text x='16' y='" << height / 2
        << "' font-size='13' text-anchor='middle' transform='rotate(-90 16 " << height / 2
        << ")'>best validation metric</text>\n";
    for (int tick = 0; tick <= 4; ++tick) {
        const double v = lo + (hi - lo) * tick / 4.0;
        out << "<text x='" << margin - 6 << "' y='" << sy(v) + 4
            << "' font-size='11' text-anchor='end'>";
        out.precision(3);
        out << v << "</text>\n";
    }
    int color = 0;
    for (const auto& method : report.methods) {
        const auto& ys = report.mean_val.at(method.name);
        out << "<polyline fill='none' stroke='" << palette[color % 8] << "' stroke-width='2' points='";
        for (int t = 0; t < method.trials; ++t) out << sx(t + 1) << "," << sy(ys[t]) << " ";
        out << "'/>\n";
        out << "<text x='" << width - margin + 4 << "' y='" << margin + 16 * color
            << "' font-size='11' fill='" << palette[color % 8] << "' text-anchor='end'>";
        out << "</text>\n";
        out << "<text x='" << width - margin - 4 << "' y='" << margin + 16 * color
            << "' font-size='11' fill='" << palette[color % 8] << "' text-anchor='end'>"
            << method.name << "</text>\n";
        ++color;
    }
    out << "</svg>\n";
}

// Top choice per dimension from a distribution (lowest index wins ties).
inline std::map<std::string, std::string> argmax_choices(const DesignDistribution& dist,
                                                         const DesignSpace& space) {
    std::map<std::string, std::string> out;
    for (int d = 0; d < space.size(); ++d) {
        int best = 0;
        for (std::size_t c = 1; c < dist.per_dimension[d].size(); ++c)
            if (dist.per_dimension[d][c] > dist.per_dimension[d][best])
                best = static_cast<int>(c);
        out[space.dimensions[d].name] = space.dimensions[d].choices[best];
    }
    return out;
}

}  // namespace taskprior
