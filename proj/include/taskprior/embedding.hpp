#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "taskprior/errors.hpp"
#include "taskprior/fim.hpp"
#include "taskprior/linalg.hpp"
#include "taskprior/metric_oracle.hpp"
#include "taskprior/rng.hpp"

namespace taskprior {

// Learned projection from task features to unit-norm task embeddings. Training
// is metric learning against the expensive oracle distances: triplets are
// labeled by which of two candidates is closer to the pivot, and a margin
// ranking loss enforces the same order among embedding cosine similarities.

struct TaskEmbedding {
    Vector values;  // unit L2 norm
};

struct ProjectionNet {
    Matrix W1;  // [hidden x in]
    Vector b1;
    Matrix W2;  // [out x hidden]
    Vector b2;

    int in_dim() const { return W1.cols; }
    int hidden_dim() const { return W1.rows; }
    int out_dim() const { return W2.rows; }
};

inline double margin_ranking_loss(double s_ij, double s_ik, int y, double margin) {
    if (y != 1 && y != -1) throw Error("margin_ranking_loss: y must be +1 or -1");
    const double v = -static_cast<double>(y) * (s_ij - s_ik) + margin;
    return v > 0.0 ? v : 0.0;
}

// Cosine distance between unit-norm embeddings, in [0, 2].
inline double embed_distance(const TaskEmbedding& a, const TaskEmbedding& b) {
    return 1.0 - dot(a.values, b.values);
}

namespace detail {

struct ProjectionTrace {
    Vector x, v1, h, v2;
    double norm = 0.0;
    Vector z;
};

inline void projection_forward(const ProjectionNet& net, const Vector& x,
                               ProjectionTrace& tr) {
    tr.x = x;
    tr.v1.assign(net.W1.rows, 0.0);
    for (int o = 0; o < net.W1.rows; ++o) {
        double s = net.b1[o];
        const double* wr = net.W1.row(o);
        for (int c = 0; c < net.W1.cols; ++c) s += wr[c] * x[c];
        tr.v1[o] = s;
    }
    tr.h = tr.v1;
    for (double& v : tr.h) v = v > 0.0 ? v : 0.0;
    tr.v2.assign(net.W2.rows, 0.0);
    for (int o = 0; o < net.W2.rows; ++o) {
        double s = net.b2[o];
        const double* wr = net.W2.row(o);
        for (int c = 0; c < net.W2.cols; ++c) s += wr[c] * tr.h[c];
        tr.v2[o] = s;
    }
    tr.norm = l2_norm(tr.v2);
    tr.z = tr.v2;
    if (tr.norm > 1e-12) scale(tr.z, 1.0 / tr.norm);
}

struct ProjectionGrads {
    Matrix dW1;
    Vector db1;
    Matrix dW2;
    Vector db2;

    explicit ProjectionGrads(const ProjectionNet& net)
        : dW1(net.W1.rows, net.W1.cols),
          db1(net.b1.size(), 0.0),
          dW2(net.W2.rows, net.W2.cols),
          db2(net.b2.size(), 0.0) {}
};

// Backward through normalize -> affine -> relu -> affine.
inline void projection_backward(const ProjectionNet& net, const ProjectionTrace& tr,
                                const Vector& dz, ProjectionGrads& g) {
    // z = v2 / ||v2||  =>  dv2 = (dz - z (z . dz)) / ||v2||
    const double zdz = dot(tr.z, dz);
    Vector dv2(dz.size());
    for (std::size_t i = 0; i < dz.size(); ++i) dv2[i] = (dz[i] - tr.z[i] * zdz) / tr.norm;
    Vector dh(net.W2.cols, 0.0);
    for (int o = 0; o < net.W2.rows; ++o) {
        g.db2[o] += dv2[o];
        double* dwr = g.dW2.row(o);
        const double* wr = net.W2.row(o);
        for (int c = 0; c < net.W2.cols; ++c) {
            dwr[c] += dv2[o] * tr.h[c];
            dh[c] += dv2[o] * wr[c];
        }
    }
    for (std::size_t c = 0; c < dh.size(); ++c)
        if (tr.v1[c] <= 0.0) dh[c] = 0.0;
    for (int o = 0; o < net.W1.rows; ++o) {
        g.db1[o] += dh[o];
        double* dwr = g.dW1.row(o);
        for (int c = 0; c < net.W1.cols; ++c) dwr[c] += dh[o] * tr.x[c];
    }
}

}  // namespace detail

inline TaskEmbedding project(const ProjectionNet& net, const TaskFeature& z_f) {
    if (static_cast<int>(z_f.values.size()) != net.in_dim())
        throw Error("feature length does not match projection input width");
    detail::ProjectionTrace tr;
    detail::projection_forward(net, z_f.values, tr);
    if (tr.norm <= 1e-12) throw ZeroVector("projection output collapsed");
    return TaskEmbedding{tr.z};
}

struct ProjectionTrainConfig {
    double margin = 0.1;
    double lr = 5e-3;
    int iterations = 1000;
    int batch_size = 128;
    int hidden = 16;
    int out_dim = 16;
};

struct NamedFeature {
    std::string task_id;
    TaskFeature z_f;
};

struct Triplet {
    int i, j, k;
    int y;  // +1 if task j is oracle-closer to i than k is
};

// Shared by the trainer and by gradient checks: mean margin-ranking loss of a
// triplet batch plus, optionally, gradients for every net parameter.
inline double projection_batch_loss(const ProjectionNet& net,
                                    const std::vector<NamedFeature>& features,
                                    const std::vector<Triplet>& batch, double margin,
                                    detail::ProjectionGrads* grads_out = nullptr) {
    const int n_tasks = static_cast<int>(features.size());
    std::vector<detail::ProjectionTrace> traces(n_tasks);
    for (int t = 0; t < n_tasks; ++t)
        detail::projection_forward(net, features[t].z_f.values, traces[t]);
    std::vector<Vector> dz;
    if (grads_out) dz.assign(n_tasks, Vector(net.out_dim(), 0.0));
    double loss_sum = 0.0;
    const double inv = batch.empty() ? 0.0 : 1.0 / batch.size();
    for (const Triplet& tpl : batch) {
        const Vector& zi = traces[tpl.i].z;
        const Vector& zj = traces[tpl.j].z;
        const Vector& zk = traces[tpl.k].z;
        const double s_ij = dot(zi, zj);
        const double s_ik = dot(zi, zk);
        const double margin_term = -static_cast<double>(tpl.y) * (s_ij - s_ik) + margin;
        if (margin_term <= 0.0) continue;
        loss_sum += margin_term;
        if (!grads_out) continue;
        const double y = static_cast<double>(tpl.y);
        for (int c = 0; c < net.out_dim(); ++c) {
            dz[tpl.i][c] += inv * y * (zk[c] - zj[c]);
            dz[tpl.j][c] += inv * -y * zi[c];
            dz[tpl.k][c] += inv * y * zi[c];
        }
    }
    if (grads_out)
        for (int t = 0; t < n_tasks; ++t)
            detail::projection_backward(net, traces[t], dz[t], *grads_out);
    return loss_sum * inv;
}

// Samples one valid triplet: distinct tasks with an unambiguous oracle order.
// Pairs at exactly equal oracle distance carry no label and are skipped.
inline Triplet sample_triplet(const OracleDistances& oracle, const std::vector<int>& oracle_idx,
                              int n_tasks, Rng& rng) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        const int i = rng.uniform_int(n_tasks);
        const int j = rng.uniform_int(n_tasks);
        const int k = rng.uniform_int(n_tasks);
        if (i == j || i == k || j == k) continue;
        const double d_ij = oracle.at(oracle_idx[i], oracle_idx[j]);
        const double d_ik = oracle.at(oracle_idx[i], oracle_idx[k]);
        if (d_ij == d_ik) continue;
        return Triplet{i, j, k, d_ij < d_ik ? 1 : -1};
    }
    throw Error("could not sample a triplet with distinct oracle distances");
}

// Adam on the margin ranking objective over uniformly sampled triplets.
inline ProjectionNet train_projection(const std::vector<NamedFeature>& features,
                                      const OracleDistances& oracle,
                                      const ProjectionTrainConfig& cfg, std::uint64_t seed) {
    const int n_tasks = static_cast<int>(features.size());
    if (n_tasks < 3) throw InsufficientTasks("projection training needs >= 3 tasks");
    const int in_dim = static_cast<int>(features.front().z_f.values.size());
    for (const auto& f : features)
        if (static_cast<int>(f.z_f.values.size()) != in_dim)
            throw Error("task features have inconsistent lengths");
    std::vector<int> oracle_idx;
    for (const auto& f : features) oracle_idx.push_back(oracle.index_of(f.task_id));

    ProjectionNet net;
    {
        Rng rng(mix_seed(seed, 0x9E11ULL));
        const double bound1 = 1.0 / std::sqrt(static_cast<double>(in_dim));
        net.W1 = Matrix(cfg.hidden, in_dim);
        for (double& w : net.W1.data) w = rng.uniform(-bound1, bound1);
        net.b1.assign(cfg.hidden, 0.0);
        const double bound2 = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
        net.W2 = Matrix(cfg.out_dim, cfg.hidden);
        for (double& w : net.W2.data) w = rng.uniform(-bound2, bound2);
        net.b2.assign(cfg.out_dim, 0.0);
    }

    const std::size_t n_params =
        net.W1.data.size() + net.b1.size() + net.W2.data.size() + net.b2.size();
    Vector adam_m(n_params, 0.0), adam_v(n_params, 0.0);
    Rng rng(mix_seed(seed, 0x7121ULL));
    for (int iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<Triplet> batch;
        batch.reserve(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(sample_triplet(oracle, oracle_idx, n_tasks, rng));
        detail::ProjectionGrads grads(net);
        projection_batch_loss(net, features, batch, cfg.margin, &grads);
        const double bc1 = 1.0 - std::pow(0.9, iter + 1);
        const double bc2 = 1.0 - std::pow(0.999, iter + 1);
        std::size_t at = 0;
        const auto step = [&](double* theta, const double* grad, std::size_t size) {
            for (std::size_t k = 0; k < size; ++k, ++at) {
                adam_m[at] = 0.9 * adam_m[at] + 0.1 * grad[k];
                adam_v[at] = 0.999 * adam_v[at] + 0.001 * grad[k] * grad[k];
                theta[k] -= cfg.lr * (adam_m[at] / bc1) / (std::sqrt(adam_v[at] / bc2) + 1e-8);
            }
        };
        step(net.W1.data.data(), grads.dW1.data.data(), net.W1.data.size());
        step(net.b1.data(), grads.db1.data(), net.b1.size());
        step(net.W2.data.data(), grads.dW2.data.data(), net.W2.data.size());
        step(net.b2.data(), grads.db2.data(), net.b2.size());
    }
    return net;
}

inline nlohmann::json projection_to_json(const ProjectionNet& net) {
    return nlohmann::json{
        {"in_dim", net.in_dim()},
        {"hidden", net.hidden_dim()},
        {"out_dim", net.out_dim()},
        {"W1", net.W1.data},
        {"b1", net.b1},
        {"W2", net.W2.data},
        {"b2", net.b2},
    };
}

inline ProjectionNet projection_from_json(const nlohmann::json& j) {
    ProjectionNet net;
    const int in_dim = j.at("in_dim").get<int>();
    const int hidden = j.at("hidden").get<int>();
    const int out_dim = j.at("out_dim").get<int>();
    net.W1 = Matrix(hidden, in_dim);
    net.W1.data = j.at("W1").get<Vector>();
    net.b1 = j.at("b1").get<Vector>();
    net.W2 = Matrix(out_dim, hidden);
    net.W2.data = j.at("W2").get<Vector>();
    net.b2 = j.at("b2").get<Vector>();
    if (net.W1.data.size() != static_cast<std::size_t>(hidden) * in_dim ||
        net.W2.data.size() != static_cast<std::size_t>(out_dim) * hidden)
        throw Error("projection weight shapes do not match header");
    return net;
}

inline void save_projection(const ProjectionNet& net, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << projection_to_json(net).dump(2) << "\n";
}

inline ProjectionNet load_projection(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(e.what(), 1);
    }
    return projection_from_json(j);
}

}  // namespace taskprior
