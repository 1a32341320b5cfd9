#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "esk/dataset_io.hpp"

namespace esk {

// Energy + zero-crossing voice activity detector.
//
// A frame is voiced when its RMS exceeds energy_ratio[mode] times the clip's
// noise floor (10th percentile of frame RMS, floored at 1e-5) and its
// zero-crossing rate is below max_zcr. Higher modes reject more.
struct VadConfig {
    int mode = 2;
    int frame_ms = 30;
    int hangover_frames = 2;
    std::array<double, 4> energy_ratio = {1.5, 2.0, 3.0, 4.5};
    // Fraction of adjacent sample pairs that change sign (1.0 at Nyquist).
    double max_zcr = 0.35;
};

struct FrameDecisions {
    std::vector<bool> flags;
    std::size_t frame_len_samples = 0;

    std::size_t voiced_count() const;
};

inline constexpr double kVadNoiseFloorMin = 1e-5;

void validate(const VadConfig& cfg);

FrameDecisions classify_frames(const AudioClip& clip, const VadConfig& cfg);

// Keeps voiced frames plus up to hangover_frames unvoiced frames after each
// voiced run; the trailing partial frame is dropped. Returns the clip
// unchanged when nothing is voiced.
AudioClip filter_voiced(const AudioClip& clip, const FrameDecisions& decisions, int hangover_frames);

// Indices of frames filter_voiced keeps.
std::vector<std::size_t> kept_frames(const std::vector<bool>& flags, int hangover_frames);

// classify_frames followed by filter_voiced.
AudioClip apply_vad(const AudioClip& clip, const VadConfig& cfg);

}  // namespace esk
