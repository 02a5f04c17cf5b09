#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "taskprior/bank.hpp"
#include "taskprior/design_space.hpp"
#include "taskprior/errors.hpp"
#include "taskprior/graph_data.hpp"
#include "taskprior/linalg.hpp"
#include "taskprior/rng.hpp"

namespace taskprior {

// A small message-passing network engine with explicit reverse-mode gradients.
// The layer stack is: pre-process MLP -> message-passing layers -> (mean pool
// for graph-level tasks) -> post-process MLP -> softmax. Message-passing
// weights live in one flat index space so Fisher statistics can be taken over
// exactly that parameter block.

enum class ConvKind { general, gcn, sage, gin, gat };
enum class AggKind { sum, mean, max };
enum class ActKind { relu, prelu, leaky_relu, elu };
enum class ConnectKind { stack, skip_sum, skip_concat };

struct ModelArch {
    ConvKind conv = ConvKind::general;
    AggKind agg = AggKind::mean;
    ActKind act = ActKind::relu;
    ConnectKind connect = ConnectKind::stack;
    int heads = 1;
    int hidden = 16;
    int pre_layers = 1;
    int mp_layers = 2;
    int post_layers = 1;
};

// Anchor models are fixed probe designs shared across tasks: plain
// aggregate-then-transform convolutions, no attention, one pre and one post
// layer, so their message-passing parameter count never depends on the data.
enum class AnchorConv { mean, max, sum };

struct AnchorSpec {
    AnchorConv conv_type = AnchorConv::mean;
    int num_mp_layers = 2;
    bool skip_sum = false;  // false: stack connectivity
    int hidden_dim = 8;
};

inline ModelArch to_arch(const AnchorSpec& spec) {
    ModelArch arch;
    arch.conv = ConvKind::general;
    switch (spec.conv_type) {
        case AnchorConv::mean: arch.agg = AggKind::mean; break;
        case AnchorConv::max: arch.agg = AggKind::max; break;
        case AnchorConv::sum: arch.agg = AggKind::sum; break;
    }
    arch.act = ActKind::relu;
    arch.connect = spec.skip_sum ? ConnectKind::skip_sum : ConnectKind::stack;
    arch.heads = 1;
    arch.hidden = spec.hidden_dim;
    arch.pre_layers = 1;
    arch.mp_layers = spec.num_mp_layers;
    arch.post_layers = 1;
    return arch;
}

struct TrialSetup {
    ModelArch arch;
    double lr = 0.01;
    int epochs = 100;
};

inline TrialSetup setup_from_config(const DesignConfig& config) {
    TrialSetup s;
    const std::string& conv = config.at("Convolution");
    if (conv == "GeneralConv") s.arch.conv = ConvKind::general;
    else if (conv == "GCNConv") s.arch.conv = ConvKind::gcn;
    else if (conv == "SAGEConv") s.arch.conv = ConvKind::sage;
    else if (conv == "GINConv") s.arch.conv = ConvKind::gin;
    else if (conv == "GATConv") s.arch.conv = ConvKind::gat;
    else throw UnknownChoice("Convolution", conv);

    const std::string& agg = config.at("Aggregation");
    if (agg == "Sum") s.arch.agg = AggKind::sum;
    else if (agg == "Mean") s.arch.agg = AggKind::mean;
    else if (agg == "Max") s.arch.agg = AggKind::max;
    else throw UnknownChoice("Aggregation", agg);

    const std::string& act = config.at("Activation");
    if (act == "ReLU") s.arch.act = ActKind::relu;
    else if (act == "pReLU") s.arch.act = ActKind::prelu;
    else if (act == "leaky_ReLU") s.arch.act = ActKind::leaky_relu;
    else if (act == "ELU") s.arch.act = ActKind::elu;
    else throw UnknownChoice("Activation", act);

    const std::string& conn = config.at("Connectivity");
    if (conn == "Stack") s.arch.connect = ConnectKind::stack;
    else if (conn == "Skip-Sum") s.arch.connect = ConnectKind::skip_sum;
    else if (conn == "Skip-Concat") s.arch.connect = ConnectKind::skip_concat;
    else throw UnknownChoice("Connectivity", conn);

    s.arch.heads = std::stoi(config.at("Heads"));
    s.arch.hidden = std::stoi(config.at("Hidden"));
    s.arch.pre_layers = std::stoi(config.at("Pre-layers"));
    s.arch.mp_layers = std::stoi(config.at("MP-layers"));
    s.arch.post_layers = std::stoi(config.at("Post-layers"));
    s.lr = std::stod(config.at("LR"));
    s.epochs = std::stoi(config.at("Epochs"));
    if (s.arch.conv == ConvKind::gat && s.arch.hidden % s.arch.heads != 0)
        throw Error("hidden dimension must be divisible by heads for attention");
    return s;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

struct Affine {
    Matrix W;  // [out x in]
    Vector b;  // [out]

    friend bool operator==(const Affine&, const Affine&) = default;
};

struct MpLayer {
    Matrix W;       // [out x in]; for gat the rows are grouped per head
    Vector b;       // [out]
    Matrix W_self;  // sage only: [out x in]
    Matrix a_src;   // gat only: [heads x head_dim]
    Matrix a_dst;   // gat only: [heads x head_dim]

    friend bool operator==(const MpLayer&, const MpLayer&) = default;
};

struct ModelParams {
    ModelArch arch;
    int d_in = 0;
    int num_classes = 0;
    std::vector<Affine> pre;
    std::vector<MpLayer> mp;
    std::vector<Affine> post;
};

namespace detail {

inline int mp_in_dim(const ModelArch& arch, int layer) {
    return arch.connect == ConnectKind::skip_concat ? arch.hidden * (layer + 1) : arch.hidden;
}

inline int post_in_dim(const ModelArch& arch) {
    return arch.connect == ConnectKind::skip_concat ? arch.hidden * (arch.mp_layers + 1)
                                                    : arch.hidden;
}

inline void init_affine(Affine& a, int out, int in, Rng& rng) {
    a.W = Matrix(out, in);
    a.b.assign(out, 0.0);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : a.W.data) w = rng.uniform(-bound, bound);
}

inline void init_matrix(Matrix& m, int rows, int cols, double bound, Rng& rng) {
    m = Matrix(rows, cols);
    for (double& w : m.data) w = rng.uniform(-bound, bound);
}

}  // namespace detail

// Weights are uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
inline ModelParams init_model(const ModelArch& arch, int d_in, int num_classes,
                              std::uint64_t seed) {
    if (d_in < 1 || num_classes < 1) throw Error("init_model needs d_in, num_classes >= 1");
    if (arch.mp_layers < 1) throw Error("need at least one message-passing layer");
    ModelParams p;
    p.arch = arch;
    p.d_in = d_in;
    p.num_classes = num_classes;
    Rng rng(mix_seed(seed, 0x1217ULL));

    p.pre.resize(arch.pre_layers);
    for (int i = 0; i < arch.pre_layers; ++i)
        detail::init_affine(p.pre[i], arch.hidden, i == 0 ? d_in : arch.hidden, rng);

    p.mp.resize(arch.mp_layers);
    for (int l = 0; l < arch.mp_layers; ++l) {
        MpLayer& layer = p.mp[l];
        const int in = detail::mp_in_dim(arch, l);
        const int out = arch.hidden;
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        detail::init_matrix(layer.W, out, in, bound, rng);
        layer.b.assign(out, 0.0);
        if (arch.conv == ConvKind::sage) detail::init_matrix(layer.W_self, out, in, bound, rng);
        if (arch.conv == ConvKind::gat) {
            const int head_dim = out / arch.heads;
            const double abound = 1.0 / std::sqrt(static_cast<double>(head_dim));
            detail::init_matrix(layer.a_src, arch.heads, head_dim, abound, rng);
            detail::init_matrix(layer.a_dst, arch.heads, head_dim, abound, rng);
        }
    }

    p.post.resize(arch.post_layers);
    const int post_in = detail::post_in_dim(arch);
    for (int i = 0; i < arch.post_layers; ++i) {
        const int in = i == 0 ? post_in : arch.hidden;
        const int out = i == arch.post_layers - 1 ? num_classes : arch.hidden;
        detail::init_affine(p.post[i], out, in, rng);
    }
    return p;
}

inline ModelParams init_model(const AnchorSpec& spec, int d_in, int num_classes,
                              std::uint64_t seed) {
    return init_model(to_arch(spec), d_in, num_classes, seed);
}

// Zero-valued parameter set with the same shapes; used as a gradient container.
inline ModelParams zeros_like(const ModelParams& p) {
    ModelParams z = p;
    for (auto& a : z.pre) {
        a.W.zero();
        std::fill(a.b.begin(), a.b.end(), 0.0);
    }
    for (auto& l : z.mp) {
        l.W.zero();
        std::fill(l.b.begin(), l.b.end(), 0.0);
        l.W_self.zero();
        l.a_src.zero();
        l.a_dst.zero();
    }
    for (auto& a : z.post) {
        a.W.zero();
        std::fill(a.b.begin(), a.b.end(), 0.0);
    }
    return z;
}

inline void zero_params(ModelParams& p) {
    for (auto& a : p.pre) {
        a.W.zero();
        std::fill(a.b.begin(), a.b.end(), 0.0);
    }
    for (auto& l : p.mp) {
        l.W.zero();
        std::fill(l.b.begin(), l.b.end(), 0.0);
        l.W_self.zero();
        l.a_src.zero();
        l.a_dst.zero();
    }
    for (auto& a : p.post) {
        a.W.zero();
        std::fill(a.b.begin(), a.b.end(), 0.0);
    }
}

// Flat view over parameter blocks in a fixed order.
struct ParamView {
    std::vector<std::pair<double*, std::size_t>> blocks;
    std::size_t total = 0;

    void add(Matrix& m) {
        if (!m.empty()) {
            blocks.emplace_back(m.data.data(), m.data.size());
            total += m.data.size();
        }
    }
    void add(Vector& v) {
        if (!v.empty()) {
            blocks.emplace_back(v.data(), v.size());
            total += v.size();
        }
    }
};

inline ParamView all_params(ModelParams& p) {
    ParamView view;
    for (auto& a : p.pre) {
        view.add(a.W);
        view.add(a.b);
    }
    for (auto& l : p.mp) {
        view.add(l.W);
        view.add(l.b);
        view.add(l.W_self);
        view.add(l.a_src);
        view.add(l.a_dst);
    }
    for (auto& a : p.post) {
        view.add(a.W);
        view.add(a.b);
    }
    return view;
}

// Message-passing parameters only, in their canonical flat order:
// per layer W (row-major), b, then W_self / a_src / a_dst where present.
inline ParamView mp_params(ModelParams& p) {
    ParamView view;
    for (auto& l : p.mp) {
        view.add(l.W);
        view.add(l.b);
        view.add(l.W_self);
        view.add(l.a_src);
        view.add(l.a_dst);
    }
    return view;
}

inline ParamView post_params(ModelParams& p) {
    ParamView view;
    for (auto& a : p.post) {
        view.add(a.W);
        view.add(a.b);
    }
    return view;
}

inline std::size_t mp_param_count(const ModelParams& p) {
    return mp_params(const_cast<ModelParams&>(p)).total;
}

inline double get_mp_flat(const ModelParams& p, std::size_t index) {
    ParamView view = mp_params(const_cast<ModelParams&>(p));
    for (const auto& [ptr, size] : view.blocks) {
        if (index < size) return ptr[index];
        index -= size;
    }
    throw Error("mp flat index out of range");
}

inline void add_mp_flat(ModelParams& p, std::size_t index, double delta) {
    ParamView view = mp_params(p);
    for (const auto& [ptr, size] : view.blocks) {
        if (index < size) {
            ptr[index] += delta;
            return;
        }
        index -= size;
    }
    throw Error("mp flat index out of range");
}

inline void copy_flat(const ParamView& view, Vector& out) {
    out.resize(view.total);
    std::size_t at = 0;
    for (const auto& [ptr, size] : view.blocks) {
        std::copy(ptr, ptr + size, out.begin() + at);
        at += size;
    }
}

// ---------------------------------------------------------------------------
// Adjacency
// ---------------------------------------------------------------------------

struct AdjCache {
    std::vector<std::vector<int>> nbrs;  // sorted, unique, self excluded
    std::vector<int> offset;             // prefix sums of (1 + deg), for attention layouts

    int deg(int v) const { return static_cast<int>(nbrs[v].size()); }
    int n() const { return static_cast<int>(nbrs.size()); }
};

inline AdjCache build_adj(const Graph& g) {
    AdjCache adj;
    adj.nbrs.resize(g.num_nodes());
    for (const auto& [s, t] : g.edges) {
        if (s == t) continue;
        adj.nbrs[s].push_back(t);
        adj.nbrs[t].push_back(s);
    }
    for (auto& list : adj.nbrs) {
        std::sort(list.begin(), list.end());
        list.erase(std::unique(list.begin(), list.end()), list.end());
    }
    adj.offset.resize(g.num_nodes() + 1);
    adj.offset[0] = 0;
    for (int v = 0; v < g.num_nodes(); ++v)
        adj.offset[v + 1] = adj.offset[v] + 1 + adj.deg(v);
    return adj;
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

namespace detail {

inline double act_fwd(ActKind k, double v) {
    switch (k) {
        case ActKind::relu: return v > 0.0 ? v : 0.0;
        case ActKind::prelu: return v > 0.0 ? v : 0.25 * v;
        case ActKind::leaky_relu: return v > 0.0 ? v : 0.01 * v;
        case ActKind::elu: return v > 0.0 ? v : std::expm1(v);
    }
    return v;
}

inline double act_grad(ActKind k, double v) {
    switch (k) {
        case ActKind::relu: return v > 0.0 ? 1.0 : 0.0;
        case ActKind::prelu: return v > 0.0 ? 1.0 : 0.25;
        case ActKind::leaky_relu: return v > 0.0 ? 1.0 : 0.01;
        case ActKind::elu: return v > 0.0 ? 1.0 : std::exp(v);
    }
    return 1.0;
}

inline constexpr double kAttnLeak = 0.2;

// out = x * W^T + broadcast(b)
inline void affine_rows(const Matrix& x, const Matrix& W, const Vector& b, Matrix& out) {
    out = Matrix(x.rows, W.rows);
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        double* outr = out.row(r);
        for (int o = 0; o < W.rows; ++o) {
            const double* wr = W.row(o);
            double s = b.empty() ? 0.0 : b[o];
            for (int c = 0; c < W.cols; ++c) s += wr[c] * xr[c];
            outr[o] = s;
        }
    }
}

// dW += dOut^T * x ; db += colsum(dOut) ; dx += dOut * W
inline void affine_backward(const Matrix& x, const Matrix& W, const Matrix& dOut, Matrix& dW,
                            Vector* db, Matrix* dx) {
    for (int r = 0; r < x.rows; ++r) {
        const double* xr = x.row(r);
        const double* dr = dOut.row(r);
        for (int o = 0; o < W.rows; ++o) {
            const double d = dr[o];
            if (d == 0.0) continue;
            double* dwr = dW.row(o);
            for (int c = 0; c < W.cols; ++c) dwr[c] += d * xr[c];
            if (db) (*db)[o] += d;
        }
        if (dx) {
            double* dxr = dx->row(r);
            for (int o = 0; o < W.rows; ++o) {
                const double d = dr[o];
                if (d == 0.0) continue;
                const double* wr = W.row(o);
                for (int c = 0; c < W.cols; ++c) dxr[c] += d * wr[c];
            }
        }
    }
}

// Linear neighborhood combine: m[v] = sum over {v} + nbrs(v) of coeff * x[u].
template <typename CoeffFn>
inline void agg_linear(const AdjCache& adj, const Matrix& x, Matrix& m, CoeffFn coeff) {
    m = Matrix(x.rows, x.cols);
    for (int v = 0; v < x.rows; ++v) {
        double* mv = m.row(v);
        const double cs = coeff(v, v);
        const double* xv = x.row(v);
        for (int c = 0; c < x.cols; ++c) mv[c] = cs * xv[c];
        for (int u : adj.nbrs[v]) {
            const double cu = coeff(v, u);
            const double* xu = x.row(u);
            for (int c = 0; c < x.cols; ++c) mv[c] += cu * xu[c];
        }
    }
}

template <typename CoeffFn>
inline void agg_linear_backward(const AdjCache& adj, const Matrix& dm, Matrix& dx,
                                CoeffFn coeff) {
    for (int v = 0; v < dm.rows; ++v) {
        const double* dmv = dm.row(v);
        const double cs = coeff(v, v);
        double* dxv = dx.row(v);
        for (int c = 0; c < dm.cols; ++c) dxv[c] += cs * dmv[c];
        for (int u : adj.nbrs[v]) {
            const double cu = coeff(v, u);
            double* dxu = dx.row(u);
            for (int c = 0; c < dm.cols; ++c) dxu[c] += cu * dmv[c];
        }
    }
}

// Self-inclusive elementwise max with argmax bookkeeping.
inline void agg_max_self(const AdjCache& adj, const Matrix& x, Matrix& m,
                         std::vector<int>& max_src) {
    m = Matrix(x.rows, x.cols);
    max_src.assign(static_cast<std::size_t>(x.rows) * x.cols, -1);
    for (int v = 0; v < x.rows; ++v) {
        double* mv = m.row(v);
        const double* xv = x.row(v);
        for (int c = 0; c < x.cols; ++c) {
            mv[c] = xv[c];
            max_src[static_cast<std::size_t>(v) * x.cols + c] = v;
        }
        for (int u : adj.nbrs[v]) {
            const double* xu = x.row(u);
            for (int c = 0; c < x.cols; ++c)
                if (xu[c] > mv[c]) {
                    mv[c] = xu[c];
                    max_src[static_cast<std::size_t>(v) * x.cols + c] = u;
                }
        }
    }
}

inline void agg_max_backward(const Matrix& dm, Matrix& dx, const std::vector<int>& max_src) {
    for (int v = 0; v < dm.rows; ++v) {
        const double* dmv = dm.row(v);
        for (int c = 0; c < dm.cols; ++c) {
            const int u = max_src[static_cast<std::size_t>(v) * dm.cols + c];
            if (u >= 0) dx(u, c) += dmv[c];
        }
    }
}

// Neighbor-only combine used by the sage self/neighbor split.
inline void agg_neighbors(const AdjCache& adj, AggKind kind, const Matrix& x, Matrix& m,
                          std::vector<int>* max_src) {
    m = Matrix(x.rows, x.cols);
    if (kind == AggKind::max) {
        max_src->assign(static_cast<std::size_t>(x.rows) * x.cols, -1);
        for (int v = 0; v < x.rows; ++v) {
            double* mv = m.row(v);
            for (int u : adj.nbrs[v]) {
                const double* xu = x.row(u);
                for (int c = 0; c < x.cols; ++c) {
                    const std::size_t at = static_cast<std::size_t>(v) * x.cols + c;
                    if ((*max_src)[at] < 0 || xu[c] > mv[c]) {
                        mv[c] = xu[c];
                        (*max_src)[at] = u;
                    }
                }
            }
        }
        return;
    }
    for (int v = 0; v < x.rows; ++v) {
        double* mv = m.row(v);
        const double scale = kind == AggKind::mean && adj.deg(v) > 0 ? 1.0 / adj.deg(v) : 1.0;
        for (int u : adj.nbrs[v]) {
            const double* xu = x.row(u);
            for (int c = 0; c < x.cols; ++c) mv[c] += scale * xu[c];
        }
    }
}

inline void agg_neighbors_backward(const AdjCache& adj, AggKind kind, const Matrix& dm,
                                   Matrix& dx, const std::vector<int>& max_src) {
    if (kind == AggKind::max) {
        agg_max_backward(dm, dx, max_src);
        return;
    }
    for (int v = 0; v < dm.rows; ++v) {
        const double* dmv = dm.row(v);
        const double scale = kind == AggKind::mean && adj.deg(v) > 0 ? 1.0 / adj.deg(v) : 1.0;
        for (int u : adj.nbrs[v]) {
            double* dxu = dx.row(u);
            for (int c = 0; c < dm.cols; ++c) dxu[c] += scale * dmv[c];
        }
    }
}

inline void softmax_rows(const Matrix& logits, Matrix& probs) {
    probs = Matrix(logits.rows, logits.cols);
    for (int r = 0; r < logits.rows; ++r) {
        const double* lr = logits.row(r);
        double* pr = probs.row(r);
        double mx = lr[0];
        for (int c = 1; c < logits.cols; ++c) mx = std::max(mx, lr[c]);
        double denom = 0.0;
        for (int c = 0; c < logits.cols; ++c) {
            pr[c] = std::exp(lr[c] - mx);
            denom += pr[c];
        }
        for (int c = 0; c < logits.cols; ++c) pr[c] /= denom;
    }
}

}  // namespace detail

struct MlpTrace {
    Matrix x;       // layer input
    Matrix preact;  // x W^T + b
    Matrix out;     // activation applied (identity on the final post layer)
};

struct MpTrace {
    Matrix x;                   // composed layer input
    Matrix m;                   // aggregated neighborhood / attention combine
    Matrix preact;
    Matrix out;                 // after activation and connectivity compose
    std::vector<int> max_src;   // max aggregation: source node per (v, feature)
    Matrix z;                   // gat: projected features
    Matrix s_src, s_dst;        // gat: [n x heads] per-node attention scores
    std::vector<Vector> q;      // gat, per head: pre-leaky logits, offset layout
    std::vector<Vector> alpha;  // gat, per head: attention weights, offset layout
};

struct ForwardTrace {
    std::vector<MlpTrace> pre;
    std::vector<MpTrace> mp;
    Matrix mp_out;   // final composed node state [n x post_in]
    bool pooled = false;
    std::vector<MlpTrace> post;  // post[0].x is mp_out or its mean-pooled row
    Matrix logits;   // [units x classes]
    Matrix probs;
};

namespace detail {

inline void gat_forward(const ModelParams& p, const MpLayer& layer, const AdjCache& adj,
                        MpTrace& tr) {
    const int n = tr.x.rows;
    const int heads = p.arch.heads;
    const int out = layer.W.rows;
    const int head_dim = out / heads;
    affine_rows(tr.x, layer.W, Vector{}, tr.z);
    tr.s_src = Matrix(n, heads);
    tr.s_dst = Matrix(n, heads);
    for (int v = 0; v < n; ++v)
        for (int h = 0; h < heads; ++h) {
            double ss = 0.0, sd = 0.0;
            const double* zr = tr.z.row(v) + h * head_dim;
            for (int f = 0; f < head_dim; ++f) {
                ss += zr[f] * layer.a_src(h, f);
                sd += zr[f] * layer.a_dst(h, f);
            }
            tr.s_src(v, h) = ss;
            tr.s_dst(v, h) = sd;
        }
    tr.q.assign(heads, Vector(adj.offset.back(), 0.0));
    tr.alpha.assign(heads, Vector(adj.offset.back(), 0.0));
    tr.m = Matrix(n, out);
    for (int h = 0; h < heads; ++h) {
        Vector& q = tr.q[h];
        Vector& alpha = tr.alpha[h];
        for (int v = 0; v < n; ++v) {
            const int base = adj.offset[v];
            const int count = 1 + adj.deg(v);
            // attention over {v} then nbrs(v): softmax of leaky(q)
            for (int j = 0; j < count; ++j) {
                const int u = j == 0 ? v : adj.nbrs[v][j - 1];
                q[base + j] = tr.s_src(u, h) + tr.s_dst(v, h);
            }
            double shift = -1e300;
            for (int j = 0; j < count; ++j) {
                const double qj = q[base + j];
                const double e = qj > 0.0 ? qj : kAttnLeak * qj;
                alpha[base + j] = e;
                shift = std::max(shift, e);
            }
            double denom = 0.0;
            for (int j = 0; j < count; ++j) {
                alpha[base + j] = std::exp(alpha[base + j] - shift);
                denom += alpha[base + j];
            }
            for (int j = 0; j < count; ++j) alpha[base + j] /= denom;
            double* mv = tr.m.row(v) + h * head_dim;
            for (int j = 0; j < count; ++j) {
                const int u = j == 0 ? v : adj.nbrs[v][j - 1];
                const double a = alpha[base + j];
                const double* zu = tr.z.row(u) + h * head_dim;
                for (int f = 0; f < head_dim; ++f) mv[f] += a * zu[f];
            }
        }
    }
    tr.preact = tr.m;
    for (int v = 0; v < n; ++v) {
        double* pv = tr.preact.row(v);
        for (int o = 0; o < out; ++o) pv[o] += layer.b[o];
    }
}

inline void gat_backward(const ModelParams& p, const MpLayer& layer, const AdjCache& adj,
                         const MpTrace& tr, const Matrix& dPre, MpLayer& grad, Matrix& dX) {
    const int n = tr.x.rows;
    const int heads = p.arch.heads;
    const int out = layer.W.rows;
    const int head_dim = out / heads;
    for (int v = 0; v < n; ++v) {
        const double* dr = dPre.row(v);
        for (int o = 0; o < out; ++o) grad.b[o] += dr[o];
    }
    Matrix dZ(n, out);
    Matrix dSsrc(n, heads);
    Matrix dSdst(n, heads);
    std::vector<double> dalpha;
    for (int h = 0; h < heads; ++h) {
        const Vector& q = tr.q[h];
        const Vector& alpha = tr.alpha[h];
        for (int v = 0; v < n; ++v) {
            const int base = adj.offset[v];
            const int count = 1 + adj.deg(v);
            const double* dmv = dPre.row(v) + h * head_dim;
            dalpha.assign(count, 0.0);
            double inner = 0.0;
            for (int j = 0; j < count; ++j) {
                const int u = j == 0 ? v : adj.nbrs[v][j - 1];
                const double* zu = tr.z.row(u) + h * head_dim;
                double* dzu = dZ.row(u) + h * head_dim;
                const double a = alpha[base + j];
                double da = 0.0;
                for (int f = 0; f < head_dim; ++f) {
                    da += dmv[f] * zu[f];
                    dzu[f] += a * dmv[f];
                }
                dalpha[j] = da;
                inner += a * da;
            }
            for (int j = 0; j < count; ++j) {
                const double de = alpha[base + j] * (dalpha[j] - inner);
                const double dq = q[base + j] > 0.0 ? de : kAttnLeak * de;
                const int u = j == 0 ? v : adj.nbrs[v][j - 1];
                dSsrc(u, h) += dq;
                dSdst(v, h) += dq;
            }
        }
    }
    for (int v = 0; v < n; ++v)
        for (int h = 0; h < heads; ++h) {
            const double ds = dSsrc(v, h);
            const double dd = dSdst(v, h);
            if (ds == 0.0 && dd == 0.0) continue;
            const double* zr = tr.z.row(v) + h * head_dim;
            double* dzr = dZ.row(v) + h * head_dim;
            for (int f = 0; f < head_dim; ++f) {
                dzr[f] += ds * layer.a_src(h, f) + dd * layer.a_dst(h, f);
                grad.a_src(h, f) += ds * zr[f];
                grad.a_dst(h, f) += dd * zr[f];
            }
        }
    affine_backward(tr.x, layer.W, dZ, grad.W, nullptr, &dX);
}

}  // namespace detail

// Forward pass over one graph; `graph_level` pools node states before the
// post-process head, giving a single prediction unit.
inline void forward_trace(const ModelParams& p, const Graph& g, const AdjCache& adj,
                          bool graph_level, ForwardTrace& tr) {
    const ModelArch& arch = p.arch;
    tr.pre.resize(p.pre.size());
    const Matrix* cur = &g.node_features;
    for (std::size_t i = 0; i < p.pre.size(); ++i) {
        MlpTrace& mt = tr.pre[i];
        mt.x = *cur;
        detail::affine_rows(mt.x, p.pre[i].W, p.pre[i].b, mt.preact);
        mt.out = mt.preact;
        for (double& v : mt.out.data) v = detail::act_fwd(arch.act, v);
        cur = &mt.out;
    }

    tr.mp.resize(p.mp.size());
    for (std::size_t l = 0; l < p.mp.size(); ++l) {
        MpTrace& mt = tr.mp[l];
        mt.x = *cur;
        const MpLayer& layer = p.mp[l];
        switch (arch.conv) {
            case ConvKind::gat:
                detail::gat_forward(p, layer, adj, mt);
                break;
            case ConvKind::sage: {
                detail::agg_neighbors(adj, arch.agg, mt.x, mt.m, &mt.max_src);
                detail::affine_rows(mt.m, layer.W, layer.b, mt.preact);
                Matrix self_part;
                detail::affine_rows(mt.x, layer.W_self, Vector{}, self_part);
                for (std::size_t i = 0; i < mt.preact.data.size(); ++i)
                    mt.preact.data[i] += self_part.data[i];
                break;
            }
            case ConvKind::gcn:
                detail::agg_linear(adj, mt.x, mt.m, [&](int v, int u) {
                    return 1.0 / std::sqrt(static_cast<double>(adj.deg(v) + 1) *
                                           static_cast<double>(adj.deg(u) + 1));
                });
                detail::affine_rows(mt.m, layer.W, layer.b, mt.preact);
                break;
            default: {  // general / gin: self-inclusive aggregate then transform
                const AggKind agg = arch.conv == ConvKind::gin ? AggKind::sum : arch.agg;
                if (agg == AggKind::max)
                    detail::agg_max_self(adj, mt.x, mt.m, mt.max_src);
                else if (agg == AggKind::mean)
                    detail::agg_linear(adj, mt.x, mt.m,
                                       [&](int v, int) { return 1.0 / (adj.deg(v) + 1.0); });
                else
                    detail::agg_linear(adj, mt.x, mt.m, [](int, int) { return 1.0; });
                detail::affine_rows(mt.m, layer.W, layer.b, mt.preact);
                break;
            }
        }
        Matrix conv_out = mt.preact;
        for (double& v : conv_out.data) v = detail::act_fwd(arch.act, v);
        switch (arch.connect) {
            case ConnectKind::stack:
                mt.out = std::move(conv_out);
                break;
            case ConnectKind::skip_sum:
                mt.out = std::move(conv_out);
                for (std::size_t i = 0; i < mt.out.data.size(); ++i)
                    mt.out.data[i] += mt.x.data[i];
                break;
            case ConnectKind::skip_concat: {
                mt.out = Matrix(mt.x.rows, conv_out.cols + mt.x.cols);
                for (int r = 0; r < mt.out.rows; ++r) {
                    double* dst = mt.out.row(r);
                    std::copy(conv_out.row(r), conv_out.row(r) + conv_out.cols, dst);
                    std::copy(mt.x.row(r), mt.x.row(r) + mt.x.cols, dst + conv_out.cols);
                }
                break;
            }
        }
        cur = &mt.out;
    }
    tr.mp_out = *cur;

    tr.pooled = graph_level;
    Matrix post_input;
    if (graph_level) {
        post_input = Matrix(1, tr.mp_out.cols);
        for (int r = 0; r < tr.mp_out.rows; ++r) {
            const double* src = tr.mp_out.row(r);
            for (int c = 0; c < tr.mp_out.cols; ++c) post_input(0, c) += src[c];
        }
        const double inv = 1.0 / std::max(1, tr.mp_out.rows);
        for (double& v : post_input.data) v *= inv;
    } else {
        post_input = tr.mp_out;
    }

    tr.post.resize(p.post.size());
    const Matrix* cur2 = &post_input;
    for (std::size_t i = 0; i < p.post.size(); ++i) {
        MlpTrace& mt = tr.post[i];
        mt.x = *cur2;
        detail::affine_rows(mt.x, p.post[i].W, p.post[i].b, mt.preact);
        mt.out = mt.preact;
        if (i + 1 < p.post.size())
            for (double& v : mt.out.data) v = detail::act_fwd(arch.act, v);
        cur2 = &mt.out;
    }
    tr.logits = *cur2;
    detail::softmax_rows(tr.logits, tr.probs);
}

// Posterior rows for one graph: one row per node (node level) or a single row
// (graph level).
inline Matrix forward(const ModelParams& p, const GraphDataset& ds, int graph_index) {
    if (graph_index < 0 || graph_index >= static_cast<int>(ds.graphs.size()))
        throw Error("graph index out of range");
    const Graph& g = ds.graphs[graph_index];
    const AdjCache adj = build_adj(g);
    ForwardTrace tr;
    forward_trace(p, g, adj, ds.level == TaskLevel::graph, tr);
    return tr.probs;
}

// Reverse pass from d(logits); accumulates into `grads` (same shapes as `p`).
inline void backward_trace(const ModelParams& p, const AdjCache& adj, const ForwardTrace& tr,
                           const Matrix& dLogits, ModelParams& grads) {
    const ModelArch& arch = p.arch;
    Matrix d = dLogits;
    for (int i = static_cast<int>(p.post.size()) - 1; i >= 0; --i) {
        const MlpTrace& mt = tr.post[i];
        if (i + 1 < static_cast<int>(p.post.size()))
            for (std::size_t k = 0; k < d.data.size(); ++k)
                d.data[k] *= detail::act_grad(arch.act, mt.preact.data[k]);
        Matrix dx(mt.x.rows, mt.x.cols);
        detail::affine_backward(mt.x, p.post[i].W, d, grads.post[i].W, &grads.post[i].b, &dx);
        d = std::move(dx);
    }

    // Unpool: gradient of the mean spreads evenly over nodes.
    Matrix dX;
    if (tr.pooled) {
        const int n = tr.mp_out.rows;
        dX = Matrix(n, tr.mp_out.cols);
        const double inv = 1.0 / std::max(1, n);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < dX.cols; ++c) dX(r, c) = d(0, c) * inv;
    } else {
        dX = std::move(d);
    }

    for (int l = static_cast<int>(p.mp.size()) - 1; l >= 0; --l) {
        const MpTrace& mt = tr.mp[l];
        const MpLayer& layer = p.mp[l];
        Matrix dConv;  // gradient w.r.t. act(preact)
        Matrix dXl(mt.x.rows, mt.x.cols);
        switch (arch.connect) {
            case ConnectKind::stack:
                dConv = std::move(dX);
                break;
            case ConnectKind::skip_sum:
                dConv = dX;
                for (std::size_t k = 0; k < dXl.data.size(); ++k) dXl.data[k] += dX.data[k];
                break;
            case ConnectKind::skip_concat: {
                dConv = Matrix(mt.x.rows, arch.hidden);
                for (int r = 0; r < mt.x.rows; ++r) {
                    const double* src = dX.row(r);
                    std::copy(src, src + arch.hidden, dConv.row(r));
                    double* dst = dXl.row(r);
                    for (int c = 0; c < mt.x.cols; ++c) dst[c] += src[arch.hidden + c];
                }
                break;
            }
        }
        for (std::size_t k = 0; k < dConv.data.size(); ++k)
            dConv.data[k] *= detail::act_grad(arch.act, mt.preact.data[k]);

        switch (arch.conv) {
            case ConvKind::gat:
                detail::gat_backward(p, layer, adj, mt, dConv, grads.mp[l], dXl);
                break;
            case ConvKind::sage: {
                Matrix dm(mt.m.rows, mt.m.cols);
                detail::affine_backward(mt.m, layer.W, dConv, grads.mp[l].W, &grads.mp[l].b,
                                        &dm);
                detail::affine_backward(mt.x, layer.W_self, dConv, grads.mp[l].W_self, nullptr,
                                        &dXl);
                detail::agg_neighbors_backward(adj, arch.agg, dm, dXl, mt.max_src);
                break;
            }
            case ConvKind::gcn: {
                Matrix dm(mt.m.rows, mt.m.cols);
                detail::affine_backward(mt.m, layer.W, dConv, grads.mp[l].W, &grads.mp[l].b,
                                        &dm);
                detail::agg_linear_backward(adj, dm, dXl, [&](int v, int u) {
                    return 1.0 / std::sqrt(static_cast<double>(adj.deg(v) + 1) *
                                           static_cast<double>(adj.deg(u) + 1));
                });
                break;
            }
            default: {
                Matrix dm(mt.m.rows, mt.m.cols);
                detail::affine_backward(mt.m, layer.W, dConv, grads.mp[l].W, &grads.mp[l].b,
                                        &dm);
                const AggKind agg = arch.conv == ConvKind::gin ? AggKind::sum : arch.agg;
                if (agg == AggKind::max)
                    detail::agg_max_backward(dm, dXl, mt.max_src);
                else if (agg == AggKind::mean)
                    detail::agg_linear_backward(adj, dm, dXl,
                                                [&](int v, int) { return 1.0 / (adj.deg(v) + 1.0); });
                else
                    detail::agg_linear_backward(adj, dm, dXl, [](int, int) { return 1.0; });
                break;
            }
        }
        dX = std::move(dXl);
    }

    for (int i = static_cast<int>(p.pre.size()) - 1; i >= 0; --i) {
        const MlpTrace& mt = tr.pre[i];
        for (std::size_t k = 0; k < dX.data.size(); ++k)
            dX.data[k] *= detail::act_grad(arch.act, mt.preact.data[k]);
        if (i > 0) {
            Matrix dx(mt.x.rows, mt.x.cols);
            detail::affine_backward(mt.x, p.pre[i].W, dX, grads.pre[i].W, &grads.pre[i].b, &dx);
            dX = std::move(dx);
        } else {
            detail::affine_backward(mt.x, p.pre[i].W, dX, grads.pre[i].W, &grads.pre[i].b,
                                    nullptr);
        }
    }
}

// ---------------------------------------------------------------------------
// Log-likelihood gradient over message-passing parameters
// ---------------------------------------------------------------------------

// Exact gradient of log P(class | unit) with respect to the flattened
// message-passing parameters.
inline Vector loglik_grad_mp(const ModelParams& p, const GraphDataset& ds, int graph_index,
                             int unit_index, int class_index) {
    if (class_index < 0 || class_index >= p.num_classes) throw Error("class index out of range");
    const Graph& g = ds.graphs.at(graph_index);
    const AdjCache adj = build_adj(g);
    ForwardTrace tr;
    forward_trace(p, g, adj, ds.level == TaskLevel::graph, tr);
    if (unit_index < 0 || unit_index >= tr.probs.rows) throw Error("unit index out of range");
    Matrix dLogits(tr.probs.rows, tr.probs.cols);
    for (int c = 0; c < tr.probs.cols; ++c)
        dLogits(unit_index, c) =
            (c == class_index ? 1.0 : 0.0) - tr.probs(unit_index, c);
    ModelParams grads = zeros_like(p);
    backward_trace(p, adj, tr, dLogits, grads);
    Vector flat;
    copy_flat(mp_params(grads), flat);
    return flat;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace detail {

// Per-graph row lists for a list of global unit ids.
inline std::vector<std::vector<int>> rows_per_graph(const GraphDataset& ds,
                                                    const std::vector<int>& units) {
    std::vector<std::vector<int>> rows(ds.graphs.size());
    for (int u : units) {
        const auto [g, row] = ds.unit_location(u);
        rows[g].push_back(row);
    }
    for (auto& r : rows) std::sort(r.begin(), r.end());
    return rows;
}

struct EvalAccum {
    double loss_sum = 0.0;
    int loss_count = 0;
    int val_correct = 0, val_total = 0;
    int test_correct = 0, test_total = 0;

    double mean_loss() const { return loss_count > 0 ? loss_sum / loss_count : 0.0; }
    double val_acc() const { return val_total > 0 ? double(val_correct) / val_total : 0.0; }
    double test_acc() const { return test_total > 0 ? double(test_correct) / test_total : 0.0; }
};

inline int argmax_row(const Matrix& m, int row) {
    int best = 0;
    for (int c = 1; c < m.cols; ++c)
        if (m(row, c) > m(row, best)) best = c;
    return best;
}

}  // namespace detail

struct TrainOptions {
    double weight_decay = 5e-4;
    bool cosine_schedule = true;
    bool record_curve = true;
    int curve_stride = 0;       // 0: max(1, epochs / 10)
    bool record_loss_seq = false;
};

struct TrainOutcome {
    double val_metric = 0.0;
    std::optional<double> test_metric;
    int best_epoch = -1;
    bool diverged = false;
    std::vector<std::pair<int, double>> curve;  // (epoch, train loss at that epoch)
    Vector train_loss_seq;                      // loss before each update, then final
    ModelParams params;                          // snapshot at the best-validation epoch
};

// Full-batch training of all parameters with Adam, cosine-annealed learning
// rate and L2 weight decay. Validation/test accuracy are tracked every epoch
// and the best-validation snapshot is returned. A non-finite loss marks the
// outcome diverged with val_metric = 0 instead of raising.
inline TrainOutcome train_model(const ModelArch& arch, const GraphDataset& ds, int epochs,
                                double lr, std::uint64_t seed, const TrainOptions& opts = {}) {
    if (epochs < 1) throw Error("training needs epochs >= 1");
    if (ds.splits.train.empty()) throw Error("training needs a non-empty train split");
    ModelParams params = init_model(arch, ds.d_in(), ds.num_classes, seed);

    std::vector<AdjCache> adj;
    adj.reserve(ds.graphs.size());
    for (const auto& g : ds.graphs) adj.push_back(build_adj(g));
    const bool graph_level = ds.level == TaskLevel::graph;
    const auto train_rows = detail::rows_per_graph(ds, ds.splits.train);
    const auto val_rows = detail::rows_per_graph(ds, ds.splits.val);
    const auto test_rows = detail::rows_per_graph(ds, ds.splits.test);
    const int n_train = static_cast<int>(ds.splits.train.size());

    ParamView pview = all_params(params);
    Vector adam_m(pview.total, 0.0), adam_v(pview.total, 0.0);
    int adam_t = 0;

    TrainOutcome outcome;
    const int stride = opts.curve_stride > 0 ? opts.curve_stride : std::max(1, epochs / 10);

    ModelParams grads = zeros_like(params);
    std::vector<ForwardTrace> traces(ds.graphs.size());

    // One pass: forward all graphs, accumulate loss/metrics, optionally fill
    // d(logits) rows for the train units.
    const auto evaluate = [&](bool with_grad, detail::EvalAccum& acc) {
        if (with_grad) zero_params(grads);
        for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi) {
            const Graph& g = ds.graphs[gi];
            ForwardTrace& tr = traces[gi];
            forward_trace(params, g, adj[gi], graph_level, tr);
            Matrix dLogits;
            if (with_grad) dLogits = Matrix(tr.probs.rows, tr.probs.cols);
            const auto label_of = [&](int row) {
                return graph_level ? g.labels[0] : g.labels[row];
            };
            for (int row : train_rows[gi]) {
                const int y = label_of(row);
                const double p = std::max(tr.probs(row, y), 1e-300);
                acc.loss_sum += -std::log(p);
                acc.loss_count += 1;
                if (with_grad)
                    for (int c = 0; c < tr.probs.cols; ++c)
                        dLogits(row, c) =
                            (tr.probs(row, c) - (c == y ? 1.0 : 0.0)) / n_train;
            }
            for (int row : val_rows[gi]) {
                acc.val_total += 1;
                if (detail::argmax_row(tr.probs, row) == label_of(row)) acc.val_correct += 1;
            }
            for (int row : test_rows[gi]) {
                acc.test_total += 1;
                if (detail::argmax_row(tr.probs, row) == label_of(row)) acc.test_correct += 1;
            }
            if (with_grad) backward_trace(params, adj[gi], tr, dLogits, grads);
        }
    };

    double best_val = -1.0;
    const auto consider = [&](int epoch, const detail::EvalAccum& acc) {
        if (acc.val_acc() > best_val) {
            best_val = acc.val_acc();
            outcome.val_metric = acc.val_acc();
            outcome.test_metric = acc.test_acc();
            outcome.best_epoch = epoch;
            outcome.params = params;
        }
    };

    for (int epoch = 0; epoch < epochs; ++epoch) {
        detail::EvalAccum acc;
        evaluate(true, acc);
        const double loss = acc.mean_loss();
        if (!std::isfinite(loss)) {
            outcome.diverged = true;
            outcome.val_metric = 0.0;
            outcome.test_metric = 0.0;
            outcome.best_epoch = -1;
            outcome.params = params;
            return outcome;
        }
        if (opts.record_curve && (epoch % stride == 0)) outcome.curve.emplace_back(epoch, loss);
        if (opts.record_loss_seq) outcome.train_loss_seq.push_back(loss);
        if (epoch >= 1) consider(epoch, acc);

        constexpr double kPi = 3.14159265358979323846;
        const double lr_t =
            opts.cosine_schedule ? lr * 0.5 * (1.0 + std::cos(kPi * epoch / epochs)) : lr;
        ParamView gview = all_params(grads);
        adam_t += 1;
        const double bc1 = 1.0 - std::pow(0.9, adam_t);
        const double bc2 = 1.0 - std::pow(0.999, adam_t);
        std::size_t at = 0;
        for (std::size_t b = 0; b < pview.blocks.size(); ++b) {
            double* theta = pview.blocks[b].first;
            const double* grad = gview.blocks[b].first;
            const std::size_t size = pview.blocks[b].second;
            for (std::size_t k = 0; k < size; ++k, ++at) {
                const double gk = grad[k] + opts.weight_decay * theta[k];
                adam_m[at] = 0.9 * adam_m[at] + 0.1 * gk;
                adam_v[at] = 0.999 * adam_v[at] + 0.001 * gk * gk;
                theta[k] -= lr_t * (adam_m[at] / bc1) / (std::sqrt(adam_v[at] / bc2) + 1e-8);
            }
        }
        bool finite = true;
        for (const auto& [ptr, size] : pview.blocks)
            for (std::size_t k = 0; k < size && finite; ++k)
                if (!std::isfinite(ptr[k])) finite = false;
        if (!finite) {
            outcome.diverged = true;
            outcome.val_metric = 0.0;
            outcome.test_metric = 0.0;
            outcome.best_epoch = -1;
            outcome.params = params;
            return outcome;
        }
    }
    detail::EvalAccum final_acc;
    evaluate(false, final_acc);
    const double final_loss = final_acc.mean_loss();
    if (!std::isfinite(final_loss)) {
        outcome.diverged = true;
        outcome.val_metric = 0.0;
        outcome.test_metric = 0.0;
        outcome.best_epoch = -1;
        return outcome;
    }
    if (opts.record_curve) outcome.curve.emplace_back(epochs, final_loss);
    if (opts.record_loss_seq) outcome.train_loss_seq.push_back(final_loss);
    consider(epochs, final_acc);
    return outcome;
}

// Evaluate one design-space configuration as a search trial.
inline std::pair<ModelParams, TrialRecord> train_full(const DesignConfig& config,
                                                      const GraphDataset& ds,
                                                      std::uint64_t seed,
                                                      int epochs_cap = 0) {
    const TrialSetup setup = setup_from_config(config);
    const int epochs = epochs_cap > 0 ? std::min(setup.epochs, epochs_cap) : setup.epochs;
    TrainOutcome outcome = train_model(setup.arch, ds, epochs, setup.lr, seed);
    TrialRecord record;
    record.config = config;
    record.val_metric = outcome.val_metric;
    record.test_metric = outcome.test_metric;
    record.train_curve = outcome.curve;
    record.seed = static_cast<std::int64_t>(seed);
    return {std::move(outcome.params), std::move(record)};
}

inline std::pair<ModelParams, TrainOutcome> train_full(const AnchorSpec& spec,
                                                       const GraphDataset& ds, int epochs,
                                                       double lr, std::uint64_t seed) {
    TrainOutcome outcome = train_model(to_arch(spec), ds, epochs, lr, seed);
    ModelParams params = std::move(outcome.params);
    return {std::move(params), std::move(outcome)};
}

// Largest squared norm of the frozen post-head input over the train units.
// Deep sum-aggregation stacks can push this to 1e8 and beyond; probes use it
// to bound their step sizes.
inline double head_input_scale(const ModelParams& params, const GraphDataset& ds) {
    const bool graph_level = ds.level == TaskLevel::graph;
    const auto train_rows = detail::rows_per_graph(ds, ds.splits.train);
    double scale = 0.0;
    for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi) {
        if (train_rows[gi].empty()) continue;
        const AdjCache adj = build_adj(ds.graphs[gi]);
        ForwardTrace tr;
        forward_trace(params, ds.graphs[gi], adj, graph_level, tr);
        const Matrix& head_in = tr.post.front().x;
        for (int row : train_rows[gi]) {
            double sq = 0.0;
            const double* h = head_in.row(row);
            for (int c = 0; c < head_in.cols; ++c) sq += h[c] * h[c];
            scale = std::max(scale, sq);
        }
    }
    return scale;
}

// Full-batch gradient descent on the post-process head only; everything else
// stays frozen. The frozen part of the forward pass is computed once and
// reused across steps.
inline ModelParams train_last_layer(const ModelParams& params, const GraphDataset& ds,
                                    int steps, double lr) {
    if (steps < 0) throw Error("steps must be >= 0");
    ModelParams out = params;
    if (steps == 0) return out;
    if (ds.splits.train.empty()) throw Error("training needs a non-empty train split");

    const bool graph_level = ds.level == TaskLevel::graph;
    const auto train_rows = detail::rows_per_graph(ds, ds.splits.train);

    // Frozen features: post-head inputs for every train unit.
    std::vector<Vector> feats;
    std::vector<int> labels;
    for (std::size_t gi = 0; gi < ds.graphs.size(); ++gi) {
        if (train_rows[gi].empty()) continue;
        const Graph& g = ds.graphs[gi];
        const AdjCache adj = build_adj(g);
        ForwardTrace tr;
        forward_trace(out, g, adj, graph_level, tr);
        const Matrix& head_in = tr.post.front().x;
        for (int row : train_rows[gi]) {
            feats.emplace_back(head_in.row(row), head_in.row(row) + head_in.cols);
            labels.push_back(graph_level ? g.labels[0] : g.labels[row]);
        }
    }
    const int n = static_cast<int>(feats.size());
    Matrix X(n, static_cast<int>(feats.front().size()));
    for (int r = 0; r < n; ++r) std::copy(feats[r].begin(), feats[r].end(), X.row(r));

    const int post_count = static_cast<int>(out.post.size());
    for (int step = 0; step < steps; ++step) {
        // forward through the head
        std::vector<MlpTrace> head(post_count);
        const Matrix* cur = &X;
        for (int i = 0; i < post_count; ++i) {
            head[i].x = *cur;
            detail::affine_rows(head[i].x, out.post[i].W, out.post[i].b, head[i].preact);
            head[i].out = head[i].preact;
            if (i + 1 < post_count)
                for (double& v : head[i].out.data) v = detail::act_fwd(out.arch.act, v);
            cur = &head[i].out;
        }
        Matrix probs;
        detail::softmax_rows(*cur, probs);
        Matrix d(n, probs.cols);
        for (int r = 0; r < n; ++r)
            for (int c = 0; c < probs.cols; ++c)
                d(r, c) = (probs(r, c) - (c == labels[r] ? 1.0 : 0.0)) / n;
        std::vector<Affine> grad(post_count);
        for (int i = 0; i < post_count; ++i) {
            grad[i].W = Matrix(out.post[i].W.rows, out.post[i].W.cols);
            grad[i].b.assign(out.post[i].b.size(), 0.0);
        }
        for (int i = post_count - 1; i >= 0; --i) {
            if (i + 1 < post_count)
                for (std::size_t k = 0; k < d.data.size(); ++k)
                    d.data[k] *= detail::act_grad(out.arch.act, head[i].preact.data[k]);
            if (i > 0) {
                Matrix dx(head[i].x.rows, head[i].x.cols);
                detail::affine_backward(head[i].x, out.post[i].W, d, grad[i].W, &grad[i].b,
                                        &dx);
                d = std::move(dx);
            } else {
                detail::affine_backward(head[i].x, out.post[i].W, d, grad[i].W, &grad[i].b,
                                        nullptr);
            }
        }
        for (int i = 0; i < post_count; ++i) {
            for (std::size_t k = 0; k < out.post[i].W.data.size(); ++k)
                out.post[i].W.data[k] -= lr * grad[i].W.data[k];
            for (std::size_t k = 0; k < out.post[i].b.size(); ++k)
                out.post[i].b[k] -= lr * grad[i].b[k];
        }
    }
    return out;
}

}  // namespace taskprior
