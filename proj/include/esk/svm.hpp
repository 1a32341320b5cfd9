#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "esk/matrix.hpp"

namespace esk {

struct SvmConfig {
    double C = 1.0;
    // Z-score every dimension with training-set statistics before fitting.
    bool standardize = false;
    std::uint64_t seed = 0;
    double tolerance = 1e-4;
    int max_epochs = 1000;
};

// One-vs-rest linear SVM. Decision value k is w_k . x + b_k.
struct SvmModel {
    int n_classes = 0;
    int dim = 0;
    double C = 1.0;
    std::vector<std::vector<double>> weights;
    std::vector<double> bias;
    // Empty unless trained with standardization.
    std::vector<double> mean;
    std::vector<double> scale;

    bool operator==(const SvmModel&) const = default;
};

// Per binary subproblem diagnostics.
struct BinarySolveInfo {
    int epochs = 0;
    bool converged = false;
    double max_violation = 0.0;
    std::vector<double> alpha;
    // Objective values after every epoch.
    std::vector<double> primal;
    std::vector<double> dual;
};

struct SvmTrainInfo {
    std::vector<BinarySolveInfo> problems;
};

// Hinge-loss binary problem over targets in {-1, +1}, bias folded in as a
// constant unit feature: 1/2 (|w|^2 + b^2) + C sum max(0, 1 - y (w.x + b)).
double binary_primal_objective(std::span<const double> w, double b, const Matrix& X, std::span<const double> y, double C);

// Dual coordinate descent on one binary problem; writes w and b.
BinarySolveInfo solve_binary(const Matrix& X, std::span<const double> y, double C, std::uint64_t seed, double tolerance,
                             int max_epochs, std::vector<double>& w, double& b);

SvmModel svm_train(const Matrix& X, std::span<const int> y, const SvmConfig& cfg, SvmTrainInfo* info = nullptr);

struct SvmPrediction {
    int label = 0;
    std::vector<double> decision;
};

// Ties go to the smallest class index.
SvmPrediction svm_predict(const SvmModel& model, std::span<const double> x);

// ESKS: magic, u16 version, K, D, C, standardization flag + vectors, K x (D + 1) float32.
void save_svm(const std::filesystem::path& path, const SvmModel& model);
SvmModel load_svm(const std::filesystem::path& path);

}  // namespace esk
