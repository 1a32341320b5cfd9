#include "esk/vad.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "esk/error.hpp"

namespace esk {

std::size_t FrameDecisions::voiced_count() const {
    return static_cast<std::size_t>(std::count(flags.begin(), flags.end(), true));
}

void validate(const VadConfig& cfg) {
    if (cfg.mode < 0 || cfg.mode > 3) throw Error("vad mode must be in 0..3, got " + std::to_string(cfg.mode));
    if (cfg.frame_ms != 10 && cfg.frame_ms != 20 && cfg.frame_ms != 30)
        throw Error("vad frame length must be 10, 20 or 30 ms, got " + std::to_string(cfg.frame_ms));
    if (cfg.hangover_frames < 0) throw Error("vad hangover must be nonnegative");
}

FrameDecisions classify_frames(const AudioClip& clip, const VadConfig& cfg) {
    validate(cfg);
    const int sr = clip.sample_rate;
    if (sr != 8000 && sr != 16000 && sr != 32000 && sr != 48000)
        throw Error("vad: unsupported sample rate " + std::to_string(sr));
    FrameDecisions out;
    out.frame_len_samples = static_cast<std::size_t>(sr) * cfg.frame_ms / 1000;
    const std::size_t n = clip.samples.size() / out.frame_len_samples;
    if (n == 0) throw Error("vad: clip shorter than one frame");

    std::vector<double> rms(n), zcr(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double* x = clip.samples.data() + k * out.frame_len_samples;
        double energy = 0.0;
        std::size_t crossings = 0;
        for (std::size_t i = 0; i < out.frame_len_samples; ++i) {
            energy += x[i] * x[i];
            if (i > 0 && ((x[i] >= 0) != (x[i - 1] >= 0))) ++crossings;
        }
        rms[k] = std::sqrt(energy / out.frame_len_samples);
        zcr[k] = double(crossings) / double(out.frame_len_samples - 1);
    }

    // Nearest-rank order statistic keeps the floor exactly proportional to gain.
    std::vector<double> sorted = rms;
    const std::size_t rank = (n - 1) / 10;
    std::nth_element(sorted.begin(), sorted.begin() + rank, sorted.end());
    const double floor = std::max(sorted[rank], kVadNoiseFloorMin);
    const double threshold = cfg.energy_ratio[cfg.mode] * floor;

    out.flags.resize(n);
    for (std::size_t k = 0; k < n; ++k) out.flags[k] = rms[k] > threshold && zcr[k] < cfg.max_zcr;
    return out;
}

std::vector<std::size_t> kept_frames(const std::vector<bool>& flags, int hangover_frames) {
    std::vector<std::size_t> kept;
    int hang = 0;
    for (std::size_t k = 0; k < flags.size(); ++k) {
        if (flags[k]) {
            kept.push_back(k);
            hang = hangover_frames;
        } else if (hang > 0) {
            kept.push_back(k);
            --hang;
        }
    }
    return kept;
}

AudioClip filter_voiced(const AudioClip& clip, const FrameDecisions& decisions, int hangover_frames) {
    if (hangover_frames < 0) throw Error("vad hangover must be nonnegative");
    const std::size_t len = decisions.frame_len_samples;
    if (len == 0 || clip.samples.size() / len != decisions.flags.size())
        throw Error("vad: decisions cover " + std::to_string(decisions.flags.size()) +
                    " frames but the clip holds " + std::to_string(len ? clip.samples.size() / len : 0));
    if (decisions.voiced_count() == 0) return clip;

    AudioClip out;
    out.sample_rate = clip.sample_rate;
    const auto kept = kept_frames(decisions.flags, hangover_frames);
    out.samples.reserve(kept.size() * len);
    for (std::size_t k : kept) {
        auto first = clip.samples.begin() + static_cast<std::ptrdiff_t>(k * len);
        out.samples.insert(out.samples.end(), first, first + static_cast<std::ptrdiff_t>(len));
    }
    return out;
}

AudioClip apply_vad(const AudioClip& clip, const VadConfig& cfg) {
    return filter_voiced(clip, classify_frames(clip, cfg), cfg.hangover_frames);
}

}  // namespace esk
