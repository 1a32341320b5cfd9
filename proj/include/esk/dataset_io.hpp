#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace esk {

// Mono PCM signal. Samples are nominally in [-1, 1].
struct AudioClip {
    std::vector<double> samples;
    int sample_rate = 0;

    double duration_s() const { return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0; }
    bool operator==(const AudioClip&) const = default;
};

enum class Split { train, devel, test };

const char* split_name(Split s);
Split parse_split(const std::string& token);

struct ManifestEntry {
    std::string id;
    std::string path;  // as written in the file
    int label = 0;
    Split split = Split::train;
};

struct Manifest {
    std::vector<ManifestEntry> entries;
    // Directory relative paths are resolved against (the manifest's parent).
    std::filesystem::path base_dir;

    std::filesystem::path audio_path(const ManifestEntry& e) const;
    std::vector<ManifestEntry> split(Split s) const;
    // max label + 1, or 0 when empty.
    int num_classes() const;
    // Throws unless every label lies in [0, k) and every class occurs.
    void check_classes(int k) const;
};

AudioClip read_wav(const std::filesystem::path& path);
// 16-bit PCM mono; samples are clamped to the representable range.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);

Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct SynthSpec {
    int n_per_class = 10;
    int n_classes = 3;
    double duration_s = 1.0;
    int sample_rate = 16000;
    std::uint64_t seed = 0;
    // Class k has fundamental base_hz + step_hz * k.
    double base_hz = 200.0;
    double step_hz = 200.0;
    // Per-class split percentages; the test split takes the remainder.
    int train_pct = 60;
    int devel_pct = 20;
    // Prefix for utterance ids and file names.
    std::string prefix = "c";
};

double synth_class_hz(const SynthSpec& spec, int k);

// Writes one WAV per utterance plus manifest.csv into out_dir and returns the manifest.
Manifest synth_dataset(const SynthSpec& spec, const std::filesystem::path& out_dir);

// The clip synth_dataset writes for (class, index), before 16-bit quantization.
AudioClip synth_clip(const SynthSpec& spec, int k, int index);

}  // namespace esk
