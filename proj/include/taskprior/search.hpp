#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "taskprior/bank.hpp"
#include "taskprior/design_space.hpp"
#include "taskprior/embedding.hpp"
#include "taskprior/errors.hpp"
#include "taskprior/fim.hpp"
#include "taskprior/parallel.hpp"
#include "taskprior/rng.hpp"
#include "taskprior/transfer.hpp"

namespace taskprior {

// Prior-informed hyperparameter search. All algorithms draw their warm-up
// trials from the same prior with the same generator consumption and the same
// per-trial evaluation seeds, so with warmup == max_trials the advanced
// algorithms reproduce the plain prior-sampling trace bit for bit.

struct SearchBudget {
    int max_trials = 30;
    int warmup_trials = 5;
    int parallelism = 1;
};

inline SearchBudget make_budget(int max_trials, int warmup = 5, int parallelism = 1) {
    return SearchBudget{max_trials, std::max(1, std::min(warmup, max_trials)), parallelism};
}

struct SearchTrial {
    DesignConfig config;
    double val_metric = 0.0;
    std::optional<double> test_metric;

    friend bool operator==(const SearchTrial&, const SearchTrial&) = default;
};

struct SearchResult {
    std::vector<SearchTrial> trials;
    std::vector<double> best_by_trial;  // running max of val_metric

    // Index of the best-validation trial (earliest wins ties).
    int best_index() const {
        if (trials.empty()) throw Error("empty search result");
        int best = 0;
        for (std::size_t i = 1; i < trials.size(); ++i)
            if (trials[i].val_metric > trials[best].val_metric) best = static_cast<int>(i);
        return best;
    }

    // Test metric of the best-validation trial among the first t+1 trials.
    std::vector<double> test_at_best_by_trial() const {
        std::vector<double> out;
        out.reserve(trials.size());
        int best = 0;
        for (std::size_t i = 0; i < trials.size(); ++i) {
            if (trials[i].val_metric > trials[best].val_metric) best = static_cast<int>(i);
            out.push_back(trials[best].test_metric.value_or(0.0));
        }
        return out;
    }

    friend bool operator==(const SearchResult&, const SearchResult&) = default;
};

// Evaluates one configuration; returns (val_metric, test_metric). Must be
// deterministic in (config, trial_seed).
using EvalFn =
    std::function<std::pair<double, std::optional<double>>(const DesignConfig&, std::uint64_t)>;

namespace detail {

inline std::uint64_t trial_seed(std::uint64_t master, int trial_index) {
    return mix_seed(master, 0xE7A1ULL, static_cast<std::uint64_t>(trial_index));
}

inline SearchTrial run_trial(const EvalFn& eval, const DesignConfig& config,
                             std::uint64_t seed) {
    SearchTrial trial;
    trial.config = config;
    try {
        const auto [val, test] = eval(config, seed);
        trial.val_metric = std::isfinite(val) ? val : 0.0;
        trial.test_metric = test;
    } catch (const std::exception&) {
        trial.val_metric = 0.0;  // a bad config must not kill the search
    }
    return trial;
}

inline void push_trial(SearchResult& result, SearchTrial trial) {
    const double prev = result.best_by_trial.empty() ? -1.0 : result.best_by_trial.back();
    result.best_by_trial.push_back(std::max(prev, trial.val_metric));
    result.trials.push_back(std::move(trial));
}

inline void check_budget(const SearchBudget& budget) {
    if (budget.max_trials < 1) throw InvalidBudget("max_trials must be >= 1");
    if (budget.warmup_trials < 1 || budget.warmup_trials > budget.max_trials)
        throw InvalidBudget("need 1 <= warmup_trials <= max_trials");
}

// Indices of trials ordered by val_metric descending, earlier index first on
// ties.
inline std::vector<int> order_by_val(const std::vector<SearchTrial>& trials) {
    std::vector<int> order(trials.size());
    for (std::size_t i = 0; i < trials.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return trials[a].val_metric > trials[b].val_metric;
    });
    return order;
}

}  // namespace detail

// Sample every trial i.i.d. from the prior. With a uniform prior this is plain
// random search.
inline SearchResult random_search(const DesignSpace& space, const DesignDistribution& prior,
                                  const SearchBudget& budget, const EvalFn& eval,
                                  std::uint64_t seed) {
    detail::check_budget(budget);
    prior.check_for(space);
    Rng suggest(mix_seed(seed, 0x5A3E57ULL));
    std::vector<DesignConfig> configs;
    configs.reserve(budget.max_trials);
    for (int t = 0; t < budget.max_trials; ++t)
        configs.push_back(sample_config(prior, space, suggest));
    std::vector<SearchTrial> slots(budget.max_trials);
    parallel_for(budget.max_trials, budget.parallelism, [&](int t) {
        slots[t] = detail::run_trial(eval, configs[t], detail::trial_seed(seed, t));
    });
    SearchResult result;
    for (auto& trial : slots) detail::push_trial(result, std::move(trial));
    return result;
}

struct TpeConfig {
    double gamma = 0.25;       // top quantile regarded as "good"
    int n_candidates = 24;
    double prior_weight = 1.0; // pseudo-count mass given to the prior
};

struct TpeDensities {
    std::vector<std::vector<double>> good;  // l(c), per dimension
    std::vector<std::vector<double>> bad;   // g(c), per dimension
    int n_good = 0;
    int n_bad = 0;
};

// Split the observed trials at the top-gamma validation quantile and build the
// smoothed per-dimension densities. Pseudo-counts are proportional to the
// prior, so prior_weight -> infinity drives both densities to the prior.
inline TpeDensities tpe_densities(const DesignSpace& space, const DesignDistribution& prior,
                                  const std::vector<SearchTrial>& trials,
                                  const TpeConfig& cfg) {
    const auto order = detail::order_by_val(trials);
    const int n = static_cast<int>(order.size());
    if (n < 1) throw Error("tpe_densities needs at least one observed trial");
    TpeDensities out;
    out.n_good = std::max(1, static_cast<int>(std::ceil(cfg.gamma * n)));
    out.n_bad = n - out.n_good;
    out.good.resize(space.size());
    out.bad.resize(space.size());
    for (int d = 0; d < space.size(); ++d) {
        const auto& dim = space.dimensions[d];
        std::vector<double> good_counts(dim.choices.size(), 0.0);
        std::vector<double> bad_counts(dim.choices.size(), 0.0);
        for (int r = 0; r < n; ++r) {
            const auto& value = trials[order[r]].config.at(dim.name);
            const int c = space.choice_index(dim.name, value);
            (r < out.n_good ? good_counts : bad_counts)[c] += 1.0;
        }
        out.good[d].resize(dim.choices.size());
        out.bad[d].resize(dim.choices.size());
        for (std::size_t c = 0; c < dim.choices.size(); ++c) {
            const double pr = cfg.prior_weight * prior.per_dimension[d][c];
            out.good[d][c] = (good_counts[c] + pr) / (out.n_good + cfg.prior_weight);
            out.bad[d][c] = (bad_counts[c] + pr) / (out.n_bad + cfg.prior_weight);
        }
    }
    return out;
}

// Tree-structured Parzen estimator over categorical dimensions. Observed
// trials are split at the top-gamma validation quantile; each dimension gets
// smoothed good/bad densities
//   l(c) = (count_good(c) + rho * prior(c)) / (n_good + rho)
// and candidates drawn from l are ranked by sum_w log l(c_w)/g(c_w).
inline SearchResult tpe_search(const DesignSpace& space, const DesignDistribution& prior,
                               const SearchBudget& budget, const EvalFn& eval,
                               std::uint64_t seed, const TpeConfig& cfg = {}) {
    detail::check_budget(budget);
    prior.check_for(space);
    Rng suggest(mix_seed(seed, 0x5A3E57ULL));
    SearchResult result;
    for (int t = 0; t < budget.max_trials; ++t) {
        DesignConfig config;
        if (t < budget.warmup_trials) {
            config = sample_config(prior, space, suggest);
        } else {
            const TpeDensities density = tpe_densities(space, prior, result.trials, cfg);
            double best_score = -std::numeric_limits<double>::infinity();
            for (int cand = 0; cand < cfg.n_candidates; ++cand) {
                DesignConfig candidate;
                double score = 0.0;
                for (int d = 0; d < space.size(); ++d) {
                    const int c = suggest.categorical(density.good[d]);
                    candidate.assignment[space.dimensions[d].name] =
                        space.dimensions[d].choices[c];
                    score += std::log(density.good[d][c]) - std::log(density.bad[d][c]);
                }
                if (score > best_score) {
                    best_score = score;
                    config = std::move(candidate);
                }
            }
        }
        detail::push_trial(result,
                           detail::run_trial(eval, config, detail::trial_seed(seed, t)));
    }
    return result;
}

struct EvoConfig {
    int population = 20;
    int tournament = 3;
};

// Regularized-evolution style search. The initial population comes from the
// prior; afterwards a tournament-selected parent is copied with exactly one
// dimension resampled from the prior's marginal, and the worst member is
// evicted once the population overflows.
inline SearchResult evolution_search(const DesignSpace& space, const DesignDistribution& prior,
                                     const SearchBudget& budget, const EvalFn& eval,
                                     std::uint64_t seed, const EvoConfig& cfg = {}) {
    detail::check_budget(budget);
    prior.check_for(space);
    Rng suggest(mix_seed(seed, 0x5A3E57ULL));
    SearchResult result;
    std::vector<int> population;  // indices into result.trials, insertion order
    const int init_phase = std::max(cfg.population, budget.warmup_trials);
    for (int t = 0; t < budget.max_trials; ++t) {
        DesignConfig config;
        if (t < init_phase) {
            config = sample_config(prior, space, suggest);
        } else {
            // tournament selection among the current population
            int parent = -1;
            for (int round = 0; round < cfg.tournament; ++round) {
                const int pick = population[suggest.uniform_int(
                    static_cast<int>(population.size()))];
                if (parent < 0 ||
                    result.trials[pick].val_metric > result.trials[parent].val_metric)
                    parent = pick;
            }
            config = result.trials[parent].config;
            const int d = suggest.uniform_int(space.size());
            const auto& dim = space.dimensions[d];
            config.assignment[dim.name] =
                dim.choices[suggest.categorical(prior.per_dimension[d])];
        }
        detail::push_trial(result,
                           detail::run_trial(eval, config, detail::trial_seed(seed, t)));
        population.push_back(t);
        if (static_cast<int>(population.size()) > cfg.population) {
            int worst = 0;
            for (std::size_t i = 1; i < population.size(); ++i)
                if (result.trials[population[i]].val_metric <
                    result.trials[population[worst]].val_metric)
                    worst = static_cast<int>(i);
            population.erase(population.begin() + worst);
        }
    }
    return result;
}

enum class SearchAlgo { random, tpe, evolution };

inline std::string to_string(SearchAlgo algo) {
    switch (algo) {
        case SearchAlgo::random: return "random";
        case SearchAlgo::tpe: return "tpe";
        case SearchAlgo::evolution: return "evolution";
    }
    return "random";
}

inline SearchAlgo search_algo_from_string(const std::string& s) {
    if (s == "random") return SearchAlgo::random;
    if (s == "tpe") return SearchAlgo::tpe;
    if (s == "evolution") return SearchAlgo::evolution;
    throw Error("unknown search algorithm: " + s);
}

inline SearchResult run_search(SearchAlgo algo, const DesignSpace& space,
                               const DesignDistribution& prior, const SearchBudget& budget,
                               const EvalFn& eval, std::uint64_t seed, const TpeConfig& tpe = {},
                               const EvoConfig& evo = {}) {
    switch (algo) {
        case SearchAlgo::random: return random_search(space, prior, budget, eval, seed);
        case SearchAlgo::tpe: return tpe_search(space, prior, budget, eval, seed, tpe);
        case SearchAlgo::evolution: return evolution_search(space, prior, budget, eval, seed, evo);
    }
    throw Error("unknown search algorithm");
}

// ---------------------------------------------------------------------------
// End-to-end pipeline
// ---------------------------------------------------------------------------

struct AutoTransferOutcome {
    SearchResult result;
    TaskFeature z_f;
    TaskEmbedding z_e;
    DesignDistribution prior;                              // the prior the search used
    std::vector<std::pair<std::string, double>> subset;    // (task_id, distance)
};

// Embed the novel task, select the close subset from the processed bank,
// aggregate the task-informed prior, and hand it to the chosen algorithm.
// The caller must keep the novel task's own records out of the bank.
inline AutoTransferOutcome autotransfer_search(
    const std::vector<ProcessedBankEntry>& processed_bank, const GraphDataset& novel_dataset,
    const std::vector<AnchorSpec>& anchors, const FeatureConfig& fcfg, const ProjectionNet& net,
    const TransferConfig& tcfg, SearchAlgo algo, const SearchBudget& budget,
    std::uint64_t seed, const DesignSpace& space, const EvalFn& eval,
    const TpeConfig& tpe = {}, const EvoConfig& evo = {}) {
    detail::check_budget(budget);
    if (processed_bank.empty()) throw Error("autotransfer needs a non-empty processed bank");
    AutoTransferOutcome out;
    out.z_f = task_feature(novel_dataset, anchors, fcfg, mix_seed(seed, 0xFEA7ULL));
    out.z_e = project(net, out.z_f);
    const auto subset = close_subset(processed_bank, out.z_e, tcfg.d_thres, tcfg.dist_epsilon);
    for (const auto& s : subset) out.subset.emplace_back(s.entry.task_id, s.distance);
    out.prior = aggregate_prior(subset, space, DesignDistribution::uniform(space));
    out.result = run_search(algo, space, out.prior, budget, eval, seed, tpe, evo);
    return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

inline nlohmann::json distribution_to_json(const DesignDistribution& dist,
                                           const DesignSpace& space) {
    nlohmann::json j = nlohmann::json::object();
    for (int d = 0; d < space.size(); ++d) {
        nlohmann::json dim = nlohmann::json::object();
        for (std::size_t c = 0; c < space.dimensions[d].choices.size(); ++c)
            dim[space.dimensions[d].choices[c]] = dist.per_dimension[d][c];
        j[space.dimensions[d].name] = std::move(dim);
    }
    return j;
}

inline nlohmann::json search_result_to_json(const SearchResult& result) {
    nlohmann::json trials = nlohmann::json::array();
    for (const auto& t : result.trials) {
        nlohmann::json j{{"config", config_to_json(t.config)}, {"val_metric", t.val_metric}};
        if (t.test_metric) j["test_metric"] = *t.test_metric;
        trials.push_back(std::move(j));
    }
    return nlohmann::json{{"trials", std::move(trials)},
                          {"best_by_trial", result.best_by_trial}};
}

}  // namespace taskprior
