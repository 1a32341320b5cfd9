#pragma once

#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "esk/dataset_io.hpp"
#include "esk/matrix.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("esk_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream s;
    s << f.rdbuf();
    return s.str();
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    f << text;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& gen, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(gen);
    return v;
}

// |X_k|^2 by the O(N^2) definition, k = 0..n/2, frame zero-padded to n.
inline std::vector<double> brute_power_spectrum(const std::vector<double>& frame, std::size_t n) {
    std::vector<double> out(n / 2 + 1);
    for (std::size_t k = 0; k <= n / 2; ++k) {
        long double re = 0, im = 0;
        for (std::size_t t = 0; t < frame.size() && t < n; ++t) {
            const long double a = -2.0L * std::numbers::pi_v<long double> * (long double)(k * t % n) / (long double)n;
            re += frame[t] * std::cos(a);
            im += frame[t] * std::sin(a);
        }
        out[k] = double(re * re + im * im);
    }
    return out;
}

// Orthonormal DCT-II by the cosine sum.
inline std::vector<double> naive_dct(const std::vector<double>& x, std::size_t n_out) {
    const std::size_t n = x.size();
    std::vector<double> c(n_out);
    for (std::size_t k = 0; k < n_out; ++k) {
        long double s = 0;
        for (std::size_t i = 0; i < n; ++i)
            s += x[i] * std::cos(std::numbers::pi_v<long double> * (long double)k * (2.0L * i + 1) / (2.0L * n));
        const long double scale = k == 0 ? std::sqrt(1.0L / n) : std::sqrt(2.0L / n);
        c[k] = double(s * scale);
    }
    return c;
}

// RMS of every complete frame.
inline std::vector<double> frame_rms(const std::vector<double>& x, std::size_t len) {
    std::vector<double> out;
    for (std::size_t s = 0; s + len <= x.size(); s += len) {
        double e = 0;
        for (std::size_t i = 0; i < len; ++i) e += x[s + i] * x[s + i];
        out.push_back(std::sqrt(e / len));
    }
    return out;
}

// 1/2 (|w|^2 + b^2) + C sum hinge, minimized by projected subgradient
// descent with step 1/t; returns the best objective seen.
inline double subgradient_svm_objective(const esk::Matrix& X, const std::vector<double>& y, double C, long iterations,
                                        std::vector<double>* w_out = nullptr, double* b_out = nullptr) {
    const std::size_t n = X.rows, d = X.cols;
    std::vector<double> w(d, 0.0), g(d);
    double b = 0.0;
    auto objective = [&](const std::vector<double>& ww, double bb) {
        double o = 0.5 * bb * bb;
        for (double v : ww) o += 0.5 * v * v;
        for (std::size_t i = 0; i < n; ++i) {
            double m = bb;
            for (std::size_t j = 0; j < d; ++j) m += ww[j] * X(i, j);
            o += C * std::max(0.0, 1.0 - y[i] * m);
        }
        return o;
    };
    double best = objective(w, b);
    std::vector<double> best_w = w;
    double best_b = b;
    for (long t = 1; t <= iterations; ++t) {
        g = w;
        double gb = b;
        for (std::size_t i = 0; i < n; ++i) {
            double m = b;
            for (std::size_t j = 0; j < d; ++j) m += w[j] * X(i, j);
            if (y[i] * m < 1.0) {
                for (std::size_t j = 0; j < d; ++j) g[j] -= C * y[i] * X(i, j);
                gb -= C * y[i];
            }
        }
        const double step = 1.0 / double(t);
        for (std::size_t j = 0; j < d; ++j) w[j] -= step * g[j];
        b -= step * gb;
        const double o = objective(w, b);
        if (o < best) {
            best = o;
            best_w = w;
            best_b = b;
        }
    }
    if (w_out) *w_out = best_w;
    if (b_out) *b_out = best_b;
    return best;
}

}  // namespace testing
