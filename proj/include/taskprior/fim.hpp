#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "taskprior/errors.hpp"
#include "taskprior/graph_data.hpp"
#include "taskprior/linalg.hpp"
#include "taskprior/nn.hpp"
#include "taskprior/rng.hpp"

namespace taskprior {

// Diagonal Fisher information over the message-passing parameter block, and
// the scale-invariant alpha = m2 / m1^2 statistic built from its first two
// moments. alpha is at least 1 (Jensen) and is invariant to rescaling every
// score gradient by a common factor; a value near 1 means the diagonal
// spectrum is concentrated.

struct FimDiagonal {
    Vector entries;  // all >= 0

    std::size_t n() const { return entries.size(); }
};

struct Moments {
    double m1 = 0.0;
    double m2 = 0.0;
};

inline Moments fim_moments(const FimDiagonal& diag) {
    if (diag.entries.empty()) throw Error("fim_moments needs n >= 1");
    Moments m;
    for (double v : diag.entries) {
        m.m1 += v;
        m.m2 += v * v;
    }
    const double n = static_cast<double>(diag.entries.size());
    m.m1 /= n;
    m.m2 /= n;
    return m;
}

inline constexpr double kDegenerateTrace = 1e-12;

inline double alpha_from_moments(double m1, double m2) {
    if (m1 <= kDegenerateTrace)
        throw DegenerateFim("trace/n = " + std::to_string(m1));
    return m2 / (m1 * m1);
}

inline double alpha_of(const FimDiagonal& diag) {
    if (diag.entries.empty()) throw Error("alpha needs n >= 1");
    // A point-mass spectrum has alpha 1 by definition; do not let summation
    // round-off manufacture curvature.
    bool constant = true;
    for (double v : diag.entries)
        if (v != diag.entries.front()) {
            constant = false;
            break;
        }
    if (constant) {
        if (diag.entries.front() <= kDegenerateTrace)
            throw DegenerateFim("constant diagonal at zero");
        return 1.0;
    }
    const Moments m = fim_moments(diag);
    return alpha_from_moments(m.m1, m.m2);
}

// Diagonal FIM estimate: exact expectation over classes, empirical average
// over the train-split prediction units.
//   entries[i] = mean over units x of  sum_y P(y|x) (d log P(y|x) / d theta_i)^2
inline FimDiagonal estimate_fim_diag(const ModelParams& params, const GraphDataset& ds) {
    if (ds.splits.train.empty()) throw Error("estimate_fim_diag needs a non-empty train split");
    const bool graph_level = ds.level == TaskLevel::graph;
    const auto train_rows = detail::rows_per_graph(ds, ds.splits.train);

    FimDiagonal diag;
    diag.entries.assign(mp_param_count(params), 0.0);
    ModelParams grads = zeros_like(params);
    Vector flat;
    int units = 0;
    for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi) {
        if (train_rows[gi].empty()) continue;
        const Graph& g = ds.graphs[gi];
        const AdjCache adj = build_adj(g);
        ForwardTrace tr;
        forward_trace(params, g, adj, graph_level, tr);
        Matrix dLogits(tr.probs.rows, tr.probs.cols);
        for (int row : train_rows[gi]) {
            for (int y = 0; y < tr.probs.cols; ++y) {
                const double py = tr.probs(row, y);
                dLogits.zero();
                for (int c = 0; c < tr.probs.cols; ++c)
                    dLogits(row, c) = (c == y ? 1.0 : 0.0) - tr.probs(row, c);
                zero_params(grads);
                backward_trace(params, adj, tr, dLogits, grads);
                copy_flat(mp_params(grads), flat);
                for (std::size_t i = 0; i < flat.size(); ++i)
                    diag.entries[i] += py * flat[i] * flat[i];
            }
            ++units;
        }
    }
    for (double& v : diag.entries) v /= units;
    return diag;
}

// ---------------------------------------------------------------------------
// Task features
// ---------------------------------------------------------------------------

struct FeatureConfig {
    int repeats = 5;           // initializations averaged per anchor
    int last_layer_steps = 30;
    double last_layer_lr = 0.3;
    int degenerate_retries = 3;
};

struct TaskFeature {
    Vector values;  // length = number of anchors, unit L2 norm
};

// The stock probe set: three aggregation types x two depths x two
// connectivity patterns, all at one shared hidden width.
inline std::vector<AnchorSpec> default_anchors(int hidden_dim = 8) {
    std::vector<AnchorSpec> anchors;
    for (AnchorConv conv : {AnchorConv::mean, AnchorConv::max, AnchorConv::sum})
        for (int layers : {2, 4})
            for (bool skip : {false, true})
                anchors.push_back(AnchorSpec{conv, layers, skip, hidden_dim});
    return anchors;
}

struct TaskFeatureAudit {
    TaskFeature z_f;
    std::vector<std::vector<double>> per_anchor_alpha;  // [anchor][repeat]
};

// One (anchor, repeat) evaluation: random init, brief last-layer fit, Fisher
// diagonal, alpha. Two numeric guards keep wide-magnitude anchors (deep sum
// stacks reach feature norms of 1e3 and more, having no batch normalization)
// from saturating the softmax, which would zero out the information:
//   - the freshly initialized head is rescaled so initial logits are O(1);
//     alpha is scale-invariant, so this only moves the estimate away from the
//     exp-underflow region,
//   - the head's gradient step is divided by the frozen feature scale so each
//     step moves logits by about last_layer_lr.
// A dead network (vanishing trace) is retried on fresh seeds before giving up.
inline double anchor_alpha(const GraphDataset& ds, const AnchorSpec& anchor,
                           const FeatureConfig& cfg, std::uint64_t seed) {
    constexpr double kLogitScale = 4.0;
    for (int attempt = 0; attempt <= cfg.degenerate_retries; ++attempt) {
        const std::uint64_t s = attempt == 0 ? seed : mix_seed(seed, 0xDEADULL, attempt);
        ModelParams params = init_model(anchor, ds.d_in(), ds.num_classes, s);
        const double scale2 = head_input_scale(params, ds);
        const double norm = std::sqrt(std::max(1.0, scale2));
        if (norm > kLogitScale)
            for (auto& layer : params.post)
                for (double& w : layer.W.data) w *= kLogitScale / norm;
        const double lr = cfg.last_layer_lr / (1.0 + scale2);
        params = train_last_layer(params, ds, cfg.last_layer_steps, lr);
        const FimDiagonal diag = estimate_fim_diag(params, ds);
        try {
            return alpha_of(diag);
        } catch (const DegenerateFim&) {
            if (attempt == cfg.degenerate_retries) throw;
        }
    }
    throw DegenerateFim("unreachable");
}

// Unit-normalize a vector of per-anchor mean alphas into the final feature;
// only the relative ranking among anchors is retained.
inline TaskFeature finalize_feature(Vector mean_alphas) {
    const double norm = l2_norm(mean_alphas);
    if (norm <= 1e-12) throw DegenerateFim("all anchor alphas vanished");
    scale(mean_alphas, 1.0 / norm);
    return TaskFeature{std::move(mean_alphas)};
}

inline TaskFeatureAudit task_feature_audit(const GraphDataset& ds,
                                           const std::vector<AnchorSpec>& anchors,
                                           const FeatureConfig& cfg, std::uint64_t seed) {
    if (anchors.empty()) throw Error("task_feature needs at least one anchor");
    if (cfg.repeats < 1) throw Error("task_feature needs repeats >= 1");
    TaskFeatureAudit audit;
    audit.per_anchor_alpha.resize(anchors.size());
    Vector mean_alphas(anchors.size());
    for (std::size_t u = 0; u < anchors.size(); ++u) {
        double sum = 0.0;
        for (int r = 0; r < cfg.repeats; ++r) {
            const double a = anchor_alpha(ds, anchors[u], cfg, mix_seed(seed, u, r));
            audit.per_anchor_alpha[u].push_back(a);
            sum += a;
        }
        mean_alphas[u] = sum / cfg.repeats;
    }
    audit.z_f = finalize_feature(std::move(mean_alphas));
    return audit;
}

// Unit-norm concatenation of per-anchor mean alphas.
inline TaskFeature task_feature(const GraphDataset& ds, const std::vector<AnchorSpec>& anchors,
                                const FeatureConfig& cfg, std::uint64_t seed) {
    return task_feature_audit(ds, anchors, cfg, seed).z_f;
}

}  // namespace taskprior
