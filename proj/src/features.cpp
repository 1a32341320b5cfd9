#include "esk/features.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "esk/binary_io.hpp"
#include "esk/error.hpp"

namespace esk {

const char* feature_kind_name(FeatureKind k) { return k == FeatureKind::mfcc ? "mfcc" : "logfbank"; }

FeatureKind parse_feature_kind(const std::string& s) {
    if (s == "mfcc") return FeatureKind::mfcc;
    if (s == "logfbank") return FeatureKind::logfbank;
    throw Error("unknown feature kind '" + s + "' (expected mfcc or logfbank)");
}

namespace {

std::size_t samples_for(double seconds, int sample_rate) {
    return static_cast<std::size_t>(std::llround(seconds * sample_rate));
}

bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

}  // namespace

void validate(const FeatureConfig& cfg, int sample_rate) {
    if (sample_rate <= 0) throw Error("sample rate must be positive");
    if (cfg.window != "hamming") throw Error("unsupported window '" + cfg.window + "'");
    if (!(cfg.fmin_hz >= 0 && cfg.fmin_hz < cfg.fmax_hz)) throw Error("need 0 <= fmin < fmax");
    if (cfg.fmax_hz > sample_rate / 2.0)
        throw Error("fmax " + std::to_string(cfg.fmax_hz) + " Hz exceeds Nyquist " + std::to_string(sample_rate / 2));
    if (cfg.n_mels < 1) throw Error("n_mels must be positive");
    if (cfg.n_mfcc < 1 || cfg.n_mfcc > cfg.n_mels) throw Error("n_mfcc must be in 1..n_mels");
    const auto win = samples_for(cfg.win_len_s, sample_rate);
    if (win < 2) throw Error("window shorter than two samples");
    if (samples_for(cfg.step_s, sample_rate) < 1) throw Error("step shorter than one sample");
    if (!is_pow2(static_cast<std::size_t>(cfg.n_fft)) || static_cast<std::size_t>(cfg.n_fft) < win)
        throw Error("n_fft must be a power of two no smaller than the window");
    if (!(cfg.preemph >= 0 && cfg.preemph < 1)) throw Error("pre-emphasis must be in [0, 1)");
    if (!(cfg.log_floor > 0)) throw Error("log floor must be positive");
}

std::vector<double> pre_emphasize(std::span<const double> x, double alpha) {
    if (x.empty()) throw Error("pre_emphasize: empty signal");
    std::vector<double> y(x.size());
    y[0] = x[0];
    for (std::size_t n = 1; n < x.size(); ++n) y[n] = x[n] - alpha * x[n - 1];
    return y;
}

std::vector<double> hamming_window(std::size_t n) {
    std::vector<double> w(n, 1.0);
    if (n < 2) return w;
    for (std::size_t i = 0; i < n; ++i) w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * i / double(n - 1));
    return w;
}

void fft(std::vector<std::complex<double>>& x) {
    const std::size_t n = x.size();
    if (!is_pow2(n)) throw Error("fft size must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(x[i], x[j]);
    }
    std::vector<std::complex<double>> twiddle(n / 2);
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double ang = -2.0 * std::numbers::pi * double(k) / double(n);
        twiddle[k] = {std::cos(ang), std::sin(ang)};
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t stride = n / len;
        for (std::size_t i = 0; i < n; i += len) {
            for (std::size_t k = 0; k < len / 2; ++k) {
                const auto u = x[i + k];
                const auto v = x[i + k + len / 2] * twiddle[k * stride];
                x[i + k] = u + v;
                x[i + k + len / 2] = u - v;
            }
        }
    }
}

std::vector<double> power_spectrum(std::span<const double> frame, std::size_t n_fft) {
    if (frame.size() > n_fft) throw Error("frame longer than transform");
    std::vector<std::complex<double>> buf(n_fft);
    for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i];
    fft(buf);
    std::vector<double> p(n_fft / 2 + 1);
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::norm(buf[k]);
    return p;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_grid_hz(const FeatureConfig& cfg) {
    const double lo = hz_to_mel(cfg.fmin_hz);
    const double hi = hz_to_mel(cfg.fmax_hz);
    std::vector<double> grid(cfg.n_mels + 2);
    for (std::size_t i = 0; i < grid.size(); ++i)
        grid[i] = mel_to_hz(lo + (hi - lo) * double(i) / double(cfg.n_mels + 1));
    return grid;
}

double triangle_response(double lo, double center, double hi, double f) {
    if (f <= lo || f >= hi) return 0.0;
    if (f == center) return 1.0;
    return f < center ? (f - lo) / (center - lo) : (hi - f) / (hi - center);
}

Matrix mel_filterbank(const FeatureConfig& cfg, int sample_rate) {
    validate(cfg, sample_rate);
    const auto grid = mel_grid_hz(cfg);
    const std::size_t bins = cfg.n_fft / 2 + 1;
    Matrix fb(cfg.n_mels, bins);
    for (int m = 0; m < cfg.n_mels; ++m)
        for (std::size_t k = 0; k < bins; ++k)
            fb(m, k) = triangle_response(grid[m], grid[m + 1], grid[m + 2], double(k) * sample_rate / cfg.n_fft);
    return fb;
}

std::size_t frame_count(std::size_t n_samples, std::size_t win, std::size_t step) {
    return n_samples < win ? 0 : 1 + (n_samples - win) / step;
}

FeatureMatrix logfbank(const AudioClip& clip, const FeatureConfig& cfg) {
    validate(cfg, clip.sample_rate);
    const auto win = samples_for(cfg.win_len_s, clip.sample_rate);
    const auto step = samples_for(cfg.step_s, clip.sample_rate);
    const auto n_frames = frame_count(clip.samples.size(), win, step);
    if (n_frames == 0)
        throw Error("clip of " + std::to_string(clip.samples.size()) + " samples is shorter than one window (" +
                    std::to_string(win) + ")");

    const auto emphasized = pre_emphasize(clip.samples, cfg.preemph);
    const auto window = hamming_window(win);
    const auto fb = mel_filterbank(cfg, clip.sample_rate);

    FeatureMatrix out;
    out.kind = FeatureKind::logfbank;
    out.values = Matrix(n_frames, cfg.n_mels);
    std::vector<double> frame(win);
    for (std::size_t t = 0; t < n_frames; ++t) {
        for (std::size_t i = 0; i < win; ++i) frame[i] = emphasized[t * step + i] * window[i];
        const auto power = power_spectrum(frame, cfg.n_fft);
        for (int m = 0; m < cfg.n_mels; ++m) {
            double e = 0.0;
            const auto w = fb.row(m);
            for (std::size_t k = 0; k < power.size(); ++k) e += w[k] * power[k];
            out.values(t, m) = std::log(std::max(e, cfg.log_floor));
        }
    }
    return out;
}

std::vector<double> dct_ortho(std::span<const double> x, std::size_t n_out) {
    const std::size_t n = x.size();
    if (n == 0 || n_out > n) throw Error("dct: need 0 < n_out <= input length");
    std::vector<double> c(n_out);
    const double s0 = std::sqrt(1.0 / n), s = std::sqrt(2.0 / n);
    for (std::size_t k = 0; k < n_out; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) acc += x[i] * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
        c[k] = (k == 0 ? s0 : s) * acc;
    }
    return c;
}

std::vector<double> idct_ortho(std::span<const double> c, std::size_t n_out) {
    if (c.size() > n_out) throw Error("idct: more coefficients than outputs");
    std::vector<double> x(n_out);
    const double s0 = std::sqrt(1.0 / n_out), s = std::sqrt(2.0 / n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
        double acc = s0 * c[0];
        for (std::size_t k = 1; k < c.size(); ++k)
            acc += s * c[k] * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n_out));
        x[i] = acc;
    }
    return x;
}

FeatureMatrix mfcc(const AudioClip& clip, const FeatureConfig& cfg) {
    const auto fbank = logfbank(clip, cfg);
    const std::size_t n = cfg.n_mels, n_out = cfg.n_mfcc;
    // Cosine table; one row per retained coefficient.
    Matrix basis(n_out, n);
    for (std::size_t k = 0; k < n_out; ++k) {
        const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
        for (std::size_t i = 0; i < n; ++i)
            basis(k, i) = scale * std::cos(std::numbers::pi * k * (2.0 * i + 1.0) / (2.0 * n));
    }
    FeatureMatrix out;
    out.kind = FeatureKind::mfcc;
    out.values = Matrix(fbank.frames(), n_out);
    for (std::size_t t = 0; t < fbank.frames(); ++t) {
        const auto row = fbank.values.row(t);
        for (std::size_t k = 0; k < n_out; ++k) {
            const auto b = basis.row(k);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) acc += b[i] * row[i];
            out.values(t, k) = acc;
        }
    }
    return out;
}

FeatureMatrix extract_features(const AudioClip& clip, const FeatureConfig& cfg, FeatureKind kind) {
    return kind == FeatureKind::mfcc ? mfcc(clip, cfg) : logfbank(clip, cfg);
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& m) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    binio::put_magic(f, "ESKF");
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(m.frames()));
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(m.dims()));
    binio::put<std::uint8_t>(f, static_cast<std::uint8_t>(m.kind));
    for (double v : m.values.data) binio::put<float>(f, static_cast<float>(v));
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

FeatureMatrix load_features(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    binio::expect_magic(f, "ESKF");
    const auto t = binio::get<std::uint32_t>(f);
    const auto d = binio::get<std::uint32_t>(f);
    const auto kind = binio::get<std::uint8_t>(f);
    if (kind > 1) throw FormatError("unknown feature kind code " + std::to_string(kind));
    if (t == 0 || d == 0) throw FormatError("empty feature matrix");
    FeatureMatrix m;
    m.kind = static_cast<FeatureKind>(kind);
    m.values = Matrix(t, d);
    for (auto& v : m.values.data) v = binio::get<float>(f);
    return m;
}

}  // namespace esk
