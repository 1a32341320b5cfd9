#include "esk/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "esk/binary_io.hpp"
#include "esk/error.hpp"
#include "esk/rng.hpp"
#include "esk/text.hpp"

namespace esk {

namespace fs = std::filesystem;

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::devel: return "devel";
        case Split::test: return "test";
    }
    return "?";
}

Split parse_split(const std::string& token) {
    if (token == "train") return Split::train;
    if (token == "devel") return Split::devel;
    if (token == "test") return Split::test;
    throw Error("unknown split '" + token + "' (expected train, devel or test)");
}

fs::path Manifest::audio_path(const ManifestEntry& e) const {
    fs::path p(e.path);
    return p.is_absolute() ? p : base_dir / p;
}

std::vector<ManifestEntry> Manifest::split(Split s) const {
    std::vector<ManifestEntry> out;
    std::copy_if(entries.begin(), entries.end(), std::back_inserter(out),
                 [s](const ManifestEntry& e) { return e.split == s; });
    return out;
}

int Manifest::num_classes() const {
    int k = 0;
    for (const auto& e : entries) k = std::max(k, e.label + 1);
    return k;
}

void Manifest::check_classes(int k) const {
    std::vector<bool> seen(k, false);
    for (const auto& e : entries) {
        if (e.label < 0 || e.label >= k)
            throw Error("label " + std::to_string(e.label) + " of '" + e.id + "' outside [0, " +
                        std::to_string(k) + ")");
        seen[e.label] = true;
    }
    for (int c = 0; c < k; ++c)
        if (!seen[c]) throw Error("class " + std::to_string(c) + " has no utterances");
}

// --- WAV -------------------------------------------------------------------

AudioClip read_wav(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    const auto file_size = fs::file_size(path);

    binio::expect_magic(f, "RIFF");
    binio::get<std::uint32_t>(f);
    binio::expect_magic(f, "WAVE");

    bool have_fmt = false;
    int sample_rate = 0;
    while (true) {
        char id[4];
        if (!f.read(id, 4)) throw FormatError("'" + path.string() + "': no data chunk");
        const auto size = binio::get<std::uint32_t>(f);
        const std::string chunk(id, 4);
        if (chunk == "fmt ") {
            if (size < 16) throw FormatError("fmt chunk too short");
            const auto format = binio::get<std::uint16_t>(f);
            const auto channels = binio::get<std::uint16_t>(f);
            sample_rate = static_cast<int>(binio::get<std::uint32_t>(f));
            binio::get<std::uint32_t>(f);  // byte rate
            binio::get<std::uint16_t>(f);  // block align
            const auto bits = binio::get<std::uint16_t>(f);
            if (format != 1) throw FormatError("format code " + std::to_string(format) + " is not PCM (1)");
            if (channels != 1) throw FormatError("channels = " + std::to_string(channels) + ", only mono supported");
            if (bits != 16) throw FormatError("bits per sample = " + std::to_string(bits) + ", only 16 supported");
            if (sample_rate <= 0) throw FormatError("sample rate must be positive");
            f.seekg(size - 16 + (size & 1), std::ios::cur);
            have_fmt = true;
        } else if (chunk == "data") {
            if (!have_fmt) throw FormatError("data chunk before fmt chunk");
            const auto pos = static_cast<std::uint64_t>(f.tellg());
            if (pos + size > file_size)
                throw FormatError("truncated data chunk: header declares " + std::to_string(size) + " bytes, " +
                                  std::to_string(file_size - pos) + " present");
            if (size % 2) throw FormatError("data chunk size is not a whole number of samples");
            AudioClip clip;
            clip.sample_rate = sample_rate;
            clip.samples.resize(size / 2);
            for (auto& s : clip.samples) s = binio::get<std::int16_t>(f) / 32768.0;
            if (clip.samples.empty()) throw FormatError("data chunk holds no samples");
            return clip;
        } else {
            f.seekg(size + (size & 1), std::ios::cur);
        }
        if (!f) throw FormatError("'" + path.string() + "': no data chunk");
    }
}

void write_wav(const fs::path& path, const AudioClip& clip) {
    if (clip.sample_rate <= 0) throw Error("sample rate must be positive");
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
    binio::put_magic(f, "RIFF");
    binio::put<std::uint32_t>(f, 36 + data_bytes);
    binio::put_magic(f, "WAVE");
    binio::put_magic(f, "fmt ");
    binio::put<std::uint32_t>(f, 16);
    binio::put<std::uint16_t>(f, 1);
    binio::put<std::uint16_t>(f, 1);
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(clip.sample_rate));
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(clip.sample_rate) * 2);
    binio::put<std::uint16_t>(f, 2);
    binio::put<std::uint16_t>(f, 16);
    binio::put_magic(f, "data");
    binio::put<std::uint32_t>(f, data_bytes);
    for (double s : clip.samples) {
        const double q = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
        binio::put<std::int16_t>(f, static_cast<std::int16_t>(q));
    }
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

// --- manifest ---------------------------------------------------------------

Manifest load_manifest(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open manifest '" + path.string() + "'");
    Manifest m;
    m.base_dir = path.parent_path();
    std::string line;
    if (!std::getline(f, line) || trim(line) != "id,path,label,split")
        throw FormatError("manifest header must be 'id,path,label,split'");
    std::set<std::string> ids;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_csv(trim(line));
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (fields.size() != 4) throw FormatError(where + ": expected 4 fields");
        ManifestEntry e;
        e.id = fields[0];
        e.path = fields[1];
        const auto label = parse_uint(fields[2]);
        if (!label) throw FormatError(where + ": label '" + fields[2] + "' is not a nonnegative integer");
        e.label = static_cast<int>(*label);
        e.split = parse_split(fields[3]);
        if (!ids.insert(e.id).second) throw Error(where + ": duplicate id '" + e.id + "'");
        m.entries.push_back(std::move(e));
    }
    return m;
}

void save_manifest(const fs::path& path, const Manifest& manifest) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write manifest '" + path.string() + "'");
    f << "id,path,label,split\n";
    for (const auto& e : manifest.entries) f << e.id << ',' << e.path << ',' << e.label << ',' << split_name(e.split) << '\n';
}

// --- synthetic corpus -------------------------------------------------------

double synth_class_hz(const SynthSpec& spec, int k) { return spec.base_hz + spec.step_hz * k; }

AudioClip synth_clip(const SynthSpec& spec, int k, int index) {
    Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(k), static_cast<std::uint64_t>(index)));
    constexpr double two_pi = 2.0 * std::numbers::pi;
    const double f0 = synth_class_hz(spec, k);
    const double phase = rng.uniform(0.0, two_pi);
    const double am_phase = rng.uniform(0.0, two_pi);
    const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * spec.sample_rate));
    AudioClip clip;
    clip.sample_rate = spec.sample_rate;
    clip.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double t = double(i) / spec.sample_rate;
        const double envelope = 0.5 * (1.0 + 0.5 * std::sin(two_pi * 4.0 * t + am_phase));
        clip.samples[i] = envelope * std::sin(two_pi * f0 * t + phase) + 0.01 * rng.uniform(-1.0, 1.0);
    }
    return clip;
}

Manifest synth_dataset(const SynthSpec& spec, const fs::path& out_dir) {
    if (spec.n_per_class <= 0 || spec.n_classes <= 0) throw Error("synth: counts must be positive");
    if (!(spec.duration_s > 0)) throw Error("synth: duration must be positive");
    if (spec.sample_rate <= 0) throw Error("synth: sample rate must be positive");
    if (spec.train_pct < 0 || spec.devel_pct < 0 || spec.train_pct + spec.devel_pct > 100)
        throw Error("synth: split percentages must be nonnegative and sum to at most 100");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec || !fs::is_directory(out_dir)) throw Error("synth: cannot create '" + out_dir.string() + "'");

    Manifest m;
    m.base_dir = out_dir;
    const int n_train = spec.n_per_class * spec.train_pct / 100;
    const int n_devel = spec.n_per_class * spec.devel_pct / 100;
    for (int k = 0; k < spec.n_classes; ++k) {
        for (int i = 0; i < spec.n_per_class; ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "%s%d_%03d", spec.prefix.c_str(), k, i);
            ManifestEntry e;
            e.id = name;
            e.path = e.id + ".wav";
            e.label = k;
            e.split = i < n_train ? Split::train : i < n_train + n_devel ? Split::devel : Split::test;
            write_wav(out_dir / e.path, synth_clip(spec, k, i));
            m.entries.push_back(std::move(e));
        }
    }
    save_manifest(out_dir / "manifest.csv", m);
    return m;
}

}  // namespace esk
