#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "taskprior/errors.hpp"
#include "taskprior/fim.hpp"
#include "taskprior/linalg.hpp"
#include "taskprior/nn.hpp"

namespace taskprior {

// The expensive ground-truth side of the metric space: train every anchor to
// convergence on a task, rank their validation scores, and turn rank agreement
// between tasks into a distance.

// Kendall tau-b (tie corrected). Throws AllTied when either input is constant.
inline double kendall_tau(const Vector& a, const Vector& b) {
    if (a.size() != b.size()) throw Error("kendall_tau: length mismatch");
    const int n = static_cast<int>(a.size());
    if (n < 2) throw Error("kendall_tau needs length >= 2");
    long long concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double da = a[i] - a[j];
            const double db = b[i] - b[j];
            if (da == 0.0 && db == 0.0) continue;  // joint ties drop from both denominators
            if (da == 0.0) ++ties_a;
            else if (db == 0.0) ++ties_b;
            else if ((da > 0.0) == (db > 0.0)) ++concordant;
            else ++discordant;
        }
    const long long na = concordant + discordant + ties_a;
    const long long nb = concordant + discordant + ties_b;
    if (na == 0 || nb == 0) throw AllTied("constant input to kendall_tau");
    return static_cast<double>(concordant - discordant) /
           std::sqrt(static_cast<double>(na) * static_cast<double>(nb));
}

struct AnchorPerformanceProfile {
    std::string task_id;
    Vector perf;  // converged validation metric, one entry per anchor
};

struct AnchorTrainOptions {
    int epochs = 60;
    double lr = 0.01;
    int repeats = 3;  // averaging smooths tie-heavy rankings on small val splits
};

// Trains every anchor to (desk-scale) convergence; failures score 0.
inline AnchorPerformanceProfile anchor_profile(const GraphDataset& ds,
                                               const std::vector<AnchorSpec>& anchors,
                                               const AnchorTrainOptions& opts,
                                               std::uint64_t seed,
                                               const std::string& task_id = {}) {
    AnchorPerformanceProfile profile;
    profile.task_id = task_id;
    profile.perf.resize(anchors.size());
    for (std::size_t u = 0; u < anchors.size(); ++u) {
        TrainOptions topts;
        topts.record_curve = false;
        double sum = 0.0;
        for (int r = 0; r < std::max(1, opts.repeats); ++r) {
            const TrainOutcome outcome = train_model(to_arch(anchors[u]), ds, opts.epochs,
                                                     opts.lr, mix_seed(seed, u, r), topts);
            sum += outcome.val_metric;
        }
        profile.perf[u] = sum / std::max(1, opts.repeats);
    }
    return profile;
}

// Rank distance in [0, 1]: 0 for identical rankings, 1 for exactly reversed.
inline double oracle_distance(const AnchorPerformanceProfile& p,
                              const AnchorPerformanceProfile& q) {
    if (p.perf.size() != q.perf.size()) throw Error("profiles have different anchor counts");
    return (1.0 - kendall_tau(p.perf, q.perf)) / 2.0;
}

struct OracleDistances {
    std::vector<std::string> tasks;
    Matrix matrix;  // symmetric, zero diagonal, entries in [0, 1]

    double at(int i, int j) const { return matrix(i, j); }

    int index_of(const std::string& task_id) const {
        for (std::size_t i = 0; i < tasks.size(); ++i)
            if (tasks[i] == task_id) return static_cast<int>(i);
        throw Error("no such task in distance matrix: " + task_id);
    }

    // 1 - d, handy for reports.
    Matrix similarity_view() const {
        Matrix s = matrix;
        for (double& v : s.data) v = 1.0 - v;
        return s;
    }
};

inline OracleDistances similarity_matrix(const std::vector<AnchorPerformanceProfile>& profiles) {
    if (profiles.size() < 2) throw Error("similarity_matrix needs at least two tasks");
    OracleDistances out;
    const int n = static_cast<int>(profiles.size());
    out.matrix = Matrix(n, n);
    for (const auto& p : profiles) out.tasks.push_back(p.task_id);
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double d = oracle_distance(profiles[i], profiles[j]);
            out.matrix(i, j) = d;
            out.matrix(j, i) = d;
        }
    return out;
}

// CSV with a header row and a leading id column, symmetric body.
inline void save_distances_csv(const OracleDistances& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << "task_id";
    for (const auto& t : d.tasks) out << "," << t;
    out << "\n";
    out.precision(17);
    for (std::size_t i = 0; i < d.tasks.size(); ++i) {
        out << d.tasks[i];
        for (std::size_t j = 0; j < d.tasks.size(); ++j) out << "," << d.matrix(i, j);
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

inline OracleDistances load_distances_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open for reading: " + path);
    OracleDistances d;
    std::string line;
    int line_no = 0;
    if (!std::getline(in, line)) throw ParseError("empty distance csv", 1);
    ++line_no;
    {
        std::stringstream ss(line);
        std::string cell;
        bool first = true;
        while (std::getline(ss, cell, ',')) {
            if (first) {
                first = false;
                continue;
            }
            d.tasks.push_back(cell);
        }
    }
    const int n = static_cast<int>(d.tasks.size());
    if (n < 1) throw ParseError("distance csv has no tasks", 1);
    d.matrix = Matrix(n, n);
    int row = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        if (row >= n) throw ParseError("too many rows in distance csv", line_no);
        std::stringstream ss(line);
        std::string cell;
        if (!std::getline(ss, cell, ',')) throw ParseError("missing id column", line_no);
        if (cell != d.tasks[row]) throw ParseError("row/column order mismatch", line_no);
        for (int j = 0; j < n; ++j) {
            if (!std::getline(ss, cell, ',')) throw ParseError("missing matrix cell", line_no);
            try {
                d.matrix(row, j) = std::stod(cell);
            } catch (const std::exception&) {
                throw ParseError("bad number: " + cell, line_no);
            }
        }
        ++row;
    }
    if (row != n) throw ParseError("too few rows in distance csv", line_no);
    return d;
}

}  // namespace taskprior
