#include <doctest.h>

#include <algorithm>
#include <numbers>

#include "esk/error.hpp"
#include "esk/features.hpp"
#include "support.hpp"

using namespace esk;
using doctest::Approx;

namespace {

AudioClip sine(double hz, double amplitude, std::size_t n, int sr = 16000) {
    AudioClip c{std::vector<double>(n), sr};
    for (std::size_t i = 0; i < n; ++i) c.samples[i] = amplitude * std::sin(2 * std::numbers::pi * hz * double(i) / sr);
    return c;
}

double rel_err(double a, double b, double floor) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor}); }

}  // namespace

TEST_CASE("defaults") {
    FeatureConfig c;
    CHECK(c.n_mels == 256);
    CHECK(c.fmin_hz == 50);
    CHECK(c.fmax_hz == 8000);
    CHECK(c.preemph == 0.97);
    CHECK(c.win_len_s == 0.025);
    CHECK(c.step_s == 0.01);
    CHECK(c.n_fft == 512);
    CHECK(c.n_mfcc == 40);
}

TEST_CASE("pre-emphasis") {
    std::vector<double> x = {1, 1, 1};
    CHECK(pre_emphasize(x, 0.0) == x);
    auto y = pre_emphasize(x, 0.97);
    CHECK(y[0] == 1.0);
    CHECK(y[1] == Approx(0.03).epsilon(1e-12));
    CHECK(y[2] == Approx(0.03).epsilon(1e-12));

    std::mt19937_64 gen(5);
    auto r = testing::random_vector(100, gen);
    auto z = pre_emphasize(r, 0.97);
    CHECK(z[0] == r[0]);
    for (std::size_t n = 1; n < r.size(); ++n) CHECK(z[n] == r[n] - 0.97 * r[n - 1]);
    CHECK_THROWS_AS(pre_emphasize(std::vector<double>{}, 0.97), Error);
}

TEST_CASE("hamming window is symmetric with 0.08 at the ends") {
    auto w = hamming_window(400);
    CHECK(w[0] == Approx(0.08));
    CHECK(w[399] == Approx(0.08));
    for (std::size_t i = 0; i < 200; ++i) CHECK(w[i] == Approx(w[399 - i]).epsilon(1e-12));
    auto odd = hamming_window(5);
    CHECK(odd[2] == Approx(1.0));
}

TEST_CASE("fast power spectrum equals the brute-force DFT") {
    std::mt19937_64 gen(2);
    for (int trial = 0; trial < 10; ++trial) {
        auto frame = testing::random_vector(400, gen);
        auto fast = power_spectrum(frame, 512);
        auto slow = testing::brute_power_spectrum(frame, 512);
        REQUIRE(fast.size() == 257);
        for (std::size_t k = 0; k < fast.size(); ++k) CHECK(rel_err(fast[k], slow[k], 1e-12) < 1e-6);
    }
    std::vector<std::complex<double>> bad(6);
    CHECK_THROWS_AS(fft(bad), Error);
}

TEST_CASE("mel scale") {
    CHECK(hz_to_mel(0) == 0);
    CHECK(hz_to_mel(700) == Approx(2595 * std::log10(2.0)));
    for (double f : {50.0, 440.0, 1000.0, 8000.0}) CHECK(mel_to_hz(hz_to_mel(f)) == Approx(f).epsilon(1e-12));
}

TEST_CASE("three-filter grid follows the mel formula") {
    FeatureConfig c;
    c.n_mels = 3;
    c.n_mfcc = 3;
    auto grid = mel_grid_hz(c);
    REQUIRE(grid.size() == 5);
    const double lo = 2595 * std::log10(1 + 50 / 700.0), hi = 2595 * std::log10(1 + 8000 / 700.0);
    for (int i = 0; i < 5; ++i) {
        const double mel = lo + (hi - lo) * i / 4.0;
        CHECK(grid[i] == Approx(700 * (std::pow(10.0, mel / 2595) - 1)).epsilon(1e-12));
    }
    CHECK(grid.front() == Approx(50));
    CHECK(grid.back() == Approx(8000));
    Matrix fb = mel_filterbank(c, 16000);
    CHECK(fb.rows == 3);
    CHECK(fb.cols == 257);
}

TEST_CASE("single filter spanning the band peaks at the mel midpoint") {
    FeatureConfig c;
    c.n_mels = 1;
    c.n_mfcc = 1;
    c.fmin_hz = 0;
    c.fmax_hz = 8000;
    auto grid = mel_grid_hz(c);
    const double center = mel_to_hz(hz_to_mel(8000) / 2);
    CHECK(grid[1] == Approx(center));
    CHECK(triangle_response(grid[0], grid[1], grid[2], grid[1]) == 1.0);
    Matrix fb = mel_filterbank(c, 16000);
    double peak = 0;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < fb.cols; ++k)
        if (fb(0, k) > peak) peak = fb(0, k), arg = k;
    CHECK(peak <= 1.0);
    CHECK(std::abs(arg * 31.25 - center) <= 31.25);
    CHECK(fb(0, 0) == 0.0);
    CHECK(fb(0, 256) < 1e-12);
}

TEST_CASE("filters are unit-peak triangles") {
    CHECK(triangle_response(100, 200, 400, 150) == Approx(0.5));
    CHECK(triangle_response(100, 200, 400, 300) == Approx(0.5));
    CHECK(triangle_response(100, 200, 400, 100) == 0.0);
    CHECK(triangle_response(100, 200, 400, 400) == 0.0);
    Matrix fb = mel_filterbank(FeatureConfig{}, 16000);
    for (double v : fb.data) CHECK((v >= 0.0 && v <= 1.0));
}

TEST_CASE("frame count for one second at the defaults is 98") {
    CHECK(frame_count(16000, 400, 160) == 98);
    CHECK(frame_count(399, 400, 160) == 0);
    CHECK(frame_count(400, 400, 160) == 1);
    auto m = logfbank(sine(440, 0.5, 16000), FeatureConfig{});
    CHECK(m.frames() == 98);
    CHECK(m.dims() == 256);
    CHECK(m.kind == FeatureKind::logfbank);
}

TEST_CASE("silence sits on the log floor") {
    AudioClip z{std::vector<double>(4000, 0.0), 16000};
    auto m = logfbank(z, FeatureConfig{});
    for (double v : m.values.data) CHECK(v == std::log(1e-10));
}

TEST_CASE("1 kHz sine lands in the filter nearest 1 kHz") {
    FeatureConfig cfg;
    AudioClip c = sine(1000, 1.0, 4000);
    auto m = logfbank(c, cfg);
    auto grid = mel_grid_hz(cfg);
    Matrix fb = mel_filterbank(cfg, 16000);
    auto emph = pre_emphasize(c.samples, cfg.preemph);
    auto w = hamming_window(400);
    for (std::size_t t = 0; t < m.frames(); ++t) {
        std::vector<double> frame(400);
        for (std::size_t i = 0; i < 400; ++i) frame[i] = emph[t * 160 + i] * w[i];
        auto p = testing::brute_power_spectrum(frame, 512);
        std::size_t oracle = 0, got = 0;
        double best = -1;
        for (std::size_t j = 0; j < fb.rows; ++j) {
            double e = 0;
            for (std::size_t k = 0; k < p.size(); ++k) e += fb(j, k) * p[k];
            if (e > best) best = e, oracle = j;
            if (m.values(t, j) > m.values(t, got)) got = j;
        }
        CHECK(got == oracle);
        CHECK(std::abs(grid[got + 1] - 1000.0) < 16.0);
    }
}

TEST_CASE("gain shifts log energies by 2 ln g") {
    std::mt19937_64 gen(8);
    AudioClip c{testing::random_vector(3200, gen, -0.3, 0.3), 16000};
    auto base = logfbank(c, FeatureConfig{});
    for (double g : {0.5, 1.9}) {
        AudioClip s = c;
        for (auto& v : s.samples) v *= g;
        auto m = logfbank(s, FeatureConfig{});
        for (std::size_t i = 0; i < m.values.data.size(); ++i)
            if (base.values.data[i] > std::log(1e-10) + 50) CHECK(m.values.data[i] - base.values.data[i] == Approx(2 * std::log(g)).epsilon(1e-9));
    }
}

TEST_CASE("dct matches the cosine sum and inverts") {
    std::mt19937_64 gen(4);
    for (std::size_t n : {8u, 40u, 256u}) {
        auto x = testing::random_vector(n, gen, -5, 5);
        auto c = dct_ortho(x, n);
        auto ref = testing::naive_dct(x, n);
        for (std::size_t k = 0; k < n; ++k) CHECK(std::abs(c[k] - ref[k]) < 1e-9);
        auto back = idct_ortho(c, n);
        for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(back[i] - x[i]) < 1e-9);
    }
    CHECK_THROWS_AS(dct_ortho(std::vector<double>{1, 2}, 3), Error);
}

TEST_CASE("mfcc of a constant row keeps only coefficient 0") {
    std::vector<double> row(256, 2.5);
    auto c = dct_ortho(row, 40);
    CHECK(c[0] == Approx(2.5 * std::sqrt(256.0)).epsilon(1e-12));
    for (std::size_t k = 1; k < 40; ++k) CHECK(std::abs(c[k]) < 1e-12);
}

TEST_CASE("mfcc is the orthonormal dct of each logfbank row") {
    std::mt19937_64 gen(6);
    AudioClip c{testing::random_vector(2400, gen, -0.5, 0.5), 16000};
    FeatureConfig cfg;
    auto fb = logfbank(c, cfg);
    auto mf = mfcc(c, cfg);
    CHECK(mf.kind == FeatureKind::mfcc);
    REQUIRE(mf.frames() == fb.frames());
    REQUIRE(mf.dims() == 40);
    for (std::size_t t = 0; t < fb.frames(); ++t) {
        std::vector<double> row(fb.values.row(t).begin(), fb.values.row(t).end());
        auto ref = testing::naive_dct(row, 40);
        for (std::size_t k = 0; k < 40; ++k) CHECK(std::abs(mf.values(t, k) - ref[k]) < 1e-9);
    }
    cfg.n_mels = 64;
    cfg.n_mfcc = 64;
    auto full = mfcc(c, cfg);
    auto rows = logfbank(c, cfg);
    for (std::size_t t = 0; t < full.frames(); ++t) {
        std::vector<double> coeffs(full.values.row(t).begin(), full.values.row(t).end());
        auto back = idct_ortho(coeffs, 64);
        for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(back[i] - rows.values(t, i)) < 1e-9);
    }
}

TEST_CASE("feature config validation") {
    FeatureConfig c;
    CHECK_NOTHROW(validate(c, 16000));
    CHECK_THROWS_AS(validate(c, 8000), Error);
    c.n_fft = 256;
    CHECK_THROWS_AS(validate(c, 16000), Error);
    c = FeatureConfig{};
    c.n_mfcc = 300;
    CHECK_THROWS_AS(validate(c, 16000), Error);
    c = FeatureConfig{};
    c.window = "hann";
    CHECK_THROWS_AS(validate(c, 16000), Error);
    AudioClip tiny{std::vector<double>(300, 0.1), 16000};
    CHECK_THROWS_AS(mfcc(tiny, FeatureConfig{}), Error);
    CHECK(parse_feature_kind("logfbank") == FeatureKind::logfbank);
    CHECK_THROWS_AS(parse_feature_kind("plp"), Error);
}

TEST_CASE("feature file round trip") {
    testing::TempDir dir("features");
    std::mt19937_64 gen(1);
    AudioClip c{testing::random_vector(1600, gen), 16000};
    auto m = mfcc(c, FeatureConfig{});
    save_features(dir / "m.eskf", m);
    auto back = load_features(dir / "m.eskf");
    CHECK(back.kind == FeatureKind::mfcc);
    REQUIRE(back.frames() == m.frames());
    REQUIRE(back.dims() == m.dims());
    for (std::size_t i = 0; i < m.values.data.size(); ++i) CHECK(back.values.data[i] == double(float(m.values.data[i])));
    std::string bytes = testing::slurp(dir / "m.eskf");
    CHECK(bytes.substr(0, 4) == "ESKF");
    CHECK(bytes.size() == 4 + 4 + 4 + 1 + m.values.data.size() * 4);
    bytes[0] = 'X';
    testing::write_text(dir / "bad.eskf", bytes);
    CHECK_THROWS_AS(load_features(dir / "bad.eskf"), FormatError);
    testing::write_text(dir / "short.eskf", testing::slurp(dir / "m.eskf").substr(0, 40));
    CHECK_THROWS_AS(load_features(dir / "short.eskf"), FormatError);
}
