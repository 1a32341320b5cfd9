#include "esk/svm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "esk/binary_io.hpp"
#include "esk/error.hpp"
#include "esk/rng.hpp"

namespace esk {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double dual_objective(std::span<const double> alpha, std::span<const double> w, double b) {
    return std::accumulate(alpha.begin(), alpha.end(), 0.0) - 0.5 * (dot(w, w) + b * b);
}

}  // namespace

double binary_primal_objective(std::span<const double> w, double b, const Matrix& X, std::span<const double> y, double C) {
    double hinge = 0.0;
    for (std::size_t i = 0; i < X.rows; ++i) hinge += std::max(0.0, 1.0 - y[i] * (dot(w, X.row(i)) + b));
    return 0.5 * (dot(w, w) + b * b) + C * hinge;
}

BinarySolveInfo solve_binary(const Matrix& X, std::span<const double> y, double C, std::uint64_t seed, double tolerance,
                             int max_epochs, std::vector<double>& w, double& b) {
    const std::size_t n = X.rows;
    BinarySolveInfo info;
    info.alpha.assign(n, 0.0);
    w.assign(X.cols, 0.0);
    b = 0.0;
    std::vector<double> q_diag(n);
    for (std::size_t i = 0; i < n; ++i) q_diag[i] = dot(X.row(i), X.row(i)) + 1.0;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    // Dual steps can raise the primal objective, so the best epoch-end iterate is kept.
    std::vector<double> wc(X.cols, 0.0);
    double bc = 0.0;
    double best = binary_primal_objective(w, b, X, y, C);

    for (int epoch = 1; epoch <= max_epochs; ++epoch) {
        rng.shuffle(std::span(order));
        double max_pg = 0.0;
        for (std::size_t i : order) {
            const auto xi = X.row(i);
            const double g = y[i] * (dot(wc, xi) + bc) - 1.0;
            double& a = info.alpha[i];
            double pg = g;
            if (a <= 0.0) pg = std::min(g, 0.0);
            else if (a >= C) pg = std::max(g, 0.0);
            max_pg = std::max(max_pg, std::abs(pg));
            if (pg == 0.0) continue;
            const double next = std::clamp(a - g / q_diag[i], 0.0, C);
            const double step = (next - a) * y[i];
            a = next;
            for (std::size_t j = 0; j < xi.size(); ++j) wc[j] += step * xi[j];
            bc += step;
        }
        info.epochs = epoch;
        info.max_violation = max_pg;
        const double p = binary_primal_objective(wc, bc, X, y, C);
        if (p <= best) {
            best = p;
            w = wc;
            b = bc;
        }
        info.primal.push_back(best);
        info.dual.push_back(dual_objective(info.alpha, wc, bc));
        if (max_pg < tolerance) {
            info.converged = true;
            break;
        }
    }
    return info;
}

SvmModel svm_train(const Matrix& X, std::span<const int> y, const SvmConfig& cfg, SvmTrainInfo* info) {
    if (X.rows != y.size()) throw Error("svm_train: " + std::to_string(X.rows) + " rows vs " + std::to_string(y.size()) + " labels");
    if (X.rows == 0 || X.cols == 0) throw Error("svm_train: empty training matrix");
    if (!(cfg.C > 0)) throw Error("svm_train: C must be positive");
    for (double v : X.data)
        if (!std::isfinite(v)) throw Error("svm_train: non-finite feature value");
    int k_max = 0;
    for (int label : y) {
        if (label < 0) throw Error("svm_train: negative label");
        k_max = std::max(k_max, label + 1);
    }
    const int K = std::max(k_max, 2);
    std::vector<std::size_t> counts(K, 0);
    for (int label : y) ++counts[label];
    for (int k = 0; k < K; ++k)
        if (!counts[k]) throw Error("svm_train: class " + std::to_string(k) + " absent from training labels");
    if (X.rows < std::size_t(K)) throw Error("svm_train: fewer examples than classes");

    SvmModel model;
    model.n_classes = K;
    model.dim = static_cast<int>(X.cols);
    model.C = cfg.C;

    Matrix Z = X;
    if (cfg.standardize) {
        model.mean.assign(X.cols, 0.0);
        model.scale.assign(X.cols, 1.0);
        for (std::size_t j = 0; j < X.cols; ++j) {
            double s = 0.0;
            for (std::size_t i = 0; i < X.rows; ++i) s += X(i, j);
            const double mean = s / double(X.rows);
            double ss = 0.0;
            for (std::size_t i = 0; i < X.rows; ++i) ss += (X(i, j) - mean) * (X(i, j) - mean);
            const double sd = std::sqrt(ss / double(X.rows));
            model.mean[j] = mean;
            model.scale[j] = sd > 0 ? 1.0 / sd : 1.0;
            for (std::size_t i = 0; i < X.rows; ++i) Z(i, j) = (X(i, j) - mean) * model.scale[j];
        }
    }

    model.weights.resize(K);
    model.bias.resize(K);
    if (info) info->problems.clear();
    std::vector<double> target(X.rows);
    for (int k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < X.rows; ++i) target[i] = y[i] == k ? 1.0 : -1.0;
        auto solve = solve_binary(Z, target, cfg.C, mix_seed(cfg.seed, std::uint64_t(k)), cfg.tolerance, cfg.max_epochs,
                                  model.weights[k], model.bias[k]);
        if (info) info->problems.push_back(std::move(solve));
    }
    return model;
}

SvmPrediction svm_predict(const SvmModel& model, std::span<const double> x) {
    if (x.size() != std::size_t(model.dim))
        throw Error("svm_predict: input has dimension " + std::to_string(x.size()) + ", model expects " +
                    std::to_string(model.dim));
    std::vector<double> z(x.begin(), x.end());
    if (!model.mean.empty())
        for (std::size_t j = 0; j < z.size(); ++j) z[j] = (z[j] - model.mean[j]) * model.scale[j];
    SvmPrediction p;
    p.decision.resize(model.n_classes);
    for (int k = 0; k < model.n_classes; ++k) {
        p.decision[k] = dot(model.weights[k], z) + model.bias[k];
        if (p.decision[k] > p.decision[p.label]) p.label = k;
    }
    return p;
}

void save_svm(const std::filesystem::path& path, const SvmModel& m) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    binio::put_magic(f, "ESKS");
    binio::put<std::uint16_t>(f, 1);
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(m.n_classes));
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(m.dim));
    binio::put<double>(f, m.C);
    binio::put<std::uint8_t>(f, m.mean.empty() ? 0 : 1);
    if (!m.mean.empty()) {
        for (double v : m.mean) binio::put<float>(f, static_cast<float>(v));
        for (double v : m.scale) binio::put<float>(f, static_cast<float>(v));
    }
    for (int k = 0; k < m.n_classes; ++k) {
        for (double v : m.weights[k]) binio::put<float>(f, static_cast<float>(v));
        binio::put<float>(f, static_cast<float>(m.bias[k]));
    }
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

SvmModel load_svm(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    binio::expect_magic(f, "ESKS");
    const auto version = binio::get<std::uint16_t>(f);
    if (version != 1) throw FormatError("svm model version " + std::to_string(version) + " unsupported");
    SvmModel m;
    m.n_classes = static_cast<int>(binio::get<std::uint32_t>(f));
    m.dim = static_cast<int>(binio::get<std::uint32_t>(f));
    if (m.n_classes < 2 || m.dim < 1) throw FormatError("svm model header invalid");
    m.C = binio::get<double>(f);
    if (binio::get<std::uint8_t>(f)) {
        m.mean.resize(m.dim);
        m.scale.resize(m.dim);
        for (auto& v : m.mean) v = binio::get<float>(f);
        for (auto& v : m.scale) v = binio::get<float>(f);
    }
    m.weights.assign(m.n_classes, std::vector<double>(m.dim));
    m.bias.resize(m.n_classes);
    for (int k = 0; k < m.n_classes; ++k) {
        for (auto& v : m.weights[k]) v = binio::get<float>(f);
        m.bias[k] = binio::get<float>(f);
    }
    return m;
}

}  // namespace esk
