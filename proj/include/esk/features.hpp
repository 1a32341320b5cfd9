#pragma once

#include <complex>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "esk/dataset_io.hpp"
#include "esk/matrix.hpp"

namespace esk {

enum class FeatureKind : unsigned char { mfcc = 0, logfbank = 1 };

const char* feature_kind_name(FeatureKind k);
FeatureKind parse_feature_kind(const std::string& s);

struct FeatureConfig {
    double win_len_s = 0.025;
    double step_s = 0.01;
    std::string window = "hamming";
    int n_mels = 256;
    double fmin_hz = 50.0;
    double fmax_hz = 8000.0;
    double preemph = 0.97;
    int n_fft = 512;
    int n_mfcc = 40;
    double log_floor = 1e-10;
};

// Throws when the configuration is inconsistent for the given sample rate.
void validate(const FeatureConfig& cfg, int sample_rate);

// T x D matrix, one row per analysis frame.
struct FeatureMatrix {
    Matrix values;
    FeatureKind kind = FeatureKind::mfcc;

    std::size_t frames() const { return values.rows; }
    std::size_t dims() const { return values.cols; }
};

std::vector<double> pre_emphasize(std::span<const double> signal, double alpha);

// Symmetric Hamming window, 0.54 - 0.46 cos(2 pi n / (N - 1)).
std::vector<double> hamming_window(std::size_t n);

// In-place iterative radix-2 transform; size must be a power of two.
void fft(std::vector<std::complex<double>>& x);

// |X_k|^2 for k = 0..n_fft/2 of the zero-padded frame.
std::vector<double> power_spectrum(std::span<const double> frame, std::size_t n_fft);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// n_mels + 2 frequencies (Hz) equally spaced on the mel scale from fmin to fmax.
std::vector<double> mel_grid_hz(const FeatureConfig& cfg);

// Weight of a triangle with the given corner frequencies at frequency f.
double triangle_response(double lo, double center, double hi, double f);

// n_mels x (n_fft/2 + 1) matrix of triangular filters with unit peak.
Matrix mel_filterbank(const FeatureConfig& cfg, int sample_rate);

std::size_t frame_count(std::size_t n_samples, std::size_t win, std::size_t step);

FeatureMatrix logfbank(const AudioClip& clip, const FeatureConfig& cfg);
FeatureMatrix mfcc(const AudioClip& clip, const FeatureConfig& cfg);
FeatureMatrix extract_features(const AudioClip& clip, const FeatureConfig& cfg, FeatureKind kind);

// Orthonormal DCT-II of x, first n_out coefficients.
std::vector<double> dct_ortho(std::span<const double> x, std::size_t n_out);
// Orthonormal DCT-III (inverse of dct_ortho) producing n_out samples.
std::vector<double> idct_ortho(std::span<const double> c, std::size_t n_out);

// ESKF: magic, u32 T, u32 D, u8 kind, T*D float32 row-major.
void save_features(const std::filesystem::path& path, const FeatureMatrix& m);
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace esk
