#include "esk/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "esk/error.hpp"
#include "esk/text.hpp"

namespace esk {

namespace fs = std::filesystem;

KeyValues parse_key_values(std::istream& in, const std::string& source) {
    KeyValues kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto body = trim(line);
        if (body.empty()) continue;
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) throw FormatError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        const std::string key(trim(body.substr(0, eq)));
        if (key.empty()) throw FormatError(source + ":" + std::to_string(lineno) + ": empty key");
        kv[key] = std::string(trim(body.substr(eq + 1)));
    }
    return kv;
}

KeyValues load_key_values(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open config '" + path.string() + "'");
    return parse_key_values(f, path.string());
}

SystemSpec parse_system(const std::string& token) {
    SystemSpec s;
    s.name = token;
    auto parts = split_csv(token, '+');
    s.kind = parse_feature_kind(parts.at(0));
    for (std::size_t i = 1; i < parts.size(); ++i) {
        if (parts[i] == "pr") s.pretrained = true;
        else if (parts[i] == "ls") s.label_smoothing = true;
        else if (parts[i] == "te") s.text = true;
        else throw Error("unknown system flag '" + parts[i] + "' in '" + token + "' (expected pr, ls or te)");
    }
    return s;
}

namespace {

class Reader {
public:
    Reader(const KeyValues& kv, fs::path base) : kv_(kv), base_(std::move(base)) {}

    template <typename F>
    void with(const std::string& key, F&& f) {
        seen_.insert(key);
        auto it = kv_.find(key);
        if (it == kv_.end()) return;
        try {
            f(it->second);
        } catch (const Error& e) {
            throw Error("config key '" + key + "': " + e.what());
        }
    }

    void real(const std::string& key, double& out) {
        with(key, [&](const std::string& v) {
            auto d = parse_double(v);
            if (!d) throw Error("'" + v + "' is not a number");
            out = *d;
        });
    }
    void integer(const std::string& key, int& out) {
        with(key, [&](const std::string& v) {
            auto u = parse_uint(v);
            if (!u || *u > 1u << 30) throw Error("'" + v + "' is not a nonnegative integer");
            out = static_cast<int>(*u);
        });
    }
    void boolean(const std::string& key, bool& out) {
        with(key, [&](const std::string& v) {
            if (v == "true" || v == "1" || v == "yes") out = true;
            else if (v == "false" || v == "0" || v == "no") out = false;
            else throw Error("'" + v + "' is not a boolean");
        });
    }
    void path(const std::string& key, fs::path& out) {
        with(key, [&](const std::string& v) {
            out = v.empty() ? fs::path() : fs::path(v).is_absolute() || base_.empty() ? fs::path(v) : base_ / v;
        });
    }
    void train(const std::string& prefix, TrainConfig& t) {
        real(prefix + ".lr", t.lr);
        real(prefix + ".weight_decay", t.weight_decay);
        real(prefix + ".momentum", t.momentum);
        integer(prefix + ".max_epochs", t.max_epochs);
        integer(prefix + ".patience", t.early_stop_patience);
        integer(prefix + ".batch_size", t.batch_size);
    }

    void finish() const {
        for (const auto& [k, v] : kv_)
            if (!seen_.count(k)) throw Error("unknown config key '" + k + "'");
    }

private:
    const KeyValues& kv_;
    fs::path base_;
    std::set<std::string> seen_;
};

void put_train(KeyValues& kv, const std::string& prefix, const TrainConfig& t) {
    kv[prefix + ".lr"] = format_double(t.lr);
    kv[prefix + ".weight_decay"] = format_double(t.weight_decay);
    kv[prefix + ".momentum"] = format_double(t.momentum);
    kv[prefix + ".max_epochs"] = std::to_string(t.max_epochs);
    kv[prefix + ".patience"] = std::to_string(t.early_stop_patience);
    kv[prefix + ".batch_size"] = std::to_string(t.batch_size);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_key_values(const KeyValues& kv, const fs::path& base_dir) {
    ExperimentConfig c;
    Reader r(kv, base_dir);
    r.path("manifest", c.manifest);
    r.path("pretrain_manifest", c.pretrain_manifest);
    r.path("text_embeddings", c.text_embeddings);
    r.path("out_dir", c.out_dir);
    r.with("text_dim", [&](const std::string& v) {
        auto u = parse_uint(v);
        if (!u || *u == 0) throw Error("'" + v + "' is not a positive integer");
        c.text_dim = *u;
    });
    r.with("systems", [&](const std::string& v) {
        c.systems.clear();
        for (const auto& tok : split_csv(v))
            if (!tok.empty()) c.systems.push_back(parse_system(tok));
        if (c.systems.empty()) throw Error("no systems listed");
    });
    r.with("fusion", [&](const std::string& v) {
        if (v == "none" || v.empty()) c.fusion.reset();
        else c.fusion = parse_fusion_mode(v);
    });
    r.with("eval_split", [&](const std::string& v) { c.eval_split = parse_split(v); });
    r.boolean("vad", c.use_vad);
    r.integer("vad.mode", c.vad.mode);
    r.integer("vad.frame_ms", c.vad.frame_ms);
    r.integer("vad.hangover", c.vad.hangover_frames);
    r.real("features.win", c.features.win_len_s);
    r.real("features.step", c.features.step_s);
    r.integer("features.n_mels", c.features.n_mels);
    r.real("features.fmin", c.features.fmin_hz);
    r.real("features.fmax", c.features.fmax_hz);
    r.real("features.preemph", c.features.preemph);
    r.integer("features.n_fft", c.features.n_fft);
    r.integer("features.n_mfcc", c.features.n_mfcc);
    r.with("net.preset", [&](const std::string& v) {
        if (v != "resnet18" && v != "resnet9" && v != "test") throw Error("unknown preset '" + v + "'");
        c.net_preset = v;
    });
    r.integer("net.embed_dim", c.embed_dim);
    r.real("net.label_smoothing", c.label_smoothing);
    r.train("pretrain", c.pretrain);
    r.train("finetune", c.finetune);
    r.real("svm.C", c.svm.C);
    r.boolean("svm.standardize", c.svm.standardize);
    r.with("seed", [&](const std::string& v) {
        auto u = parse_uint(v);
        if (!u) throw Error("'" + v + "' is not a nonnegative integer");
        c.seed = *u;
    });
    r.finish();

    validate(c.vad);
    if (c.embed_dim < 2) throw Error("net.embed_dim must be at least 2");
    if (!(c.label_smoothing >= 0 && c.label_smoothing < 1)) throw Error("net.label_smoothing must be in [0, 1)");
    if (c.fusion && c.systems.size() < 2) throw Error("fusion needs at least two systems");
    std::set<std::string> names;
    for (const auto& s : c.systems)
        if (!names.insert(s.name).second) throw Error("system '" + s.name + "' listed twice");
    if (c.fusion == FusionMode::mean)
        for (const auto& s : c.systems)
            if (s.text != c.systems[0].text) throw Error("mean fusion needs systems of equal embedding width");
    return c;
}

KeyValues ExperimentConfig::to_key_values() const {
    KeyValues kv;
    kv["manifest"] = manifest.string();
    kv["pretrain_manifest"] = pretrain_manifest.string();
    kv["text_embeddings"] = text_embeddings.string();
    kv["text_dim"] = std::to_string(text_dim);
    std::string sys;
    for (const auto& s : systems) sys += (sys.empty() ? "" : ",") + s.name;
    kv["systems"] = sys;
    kv["fusion"] = fusion ? fusion_mode_name(*fusion) : "none";
    kv["eval_split"] = split_name(eval_split);
    kv["vad"] = use_vad ? "true" : "false";
    kv["vad.mode"] = std::to_string(vad.mode);
    kv["vad.frame_ms"] = std::to_string(vad.frame_ms);
    kv["vad.hangover"] = std::to_string(vad.hangover_frames);
    kv["features.win"] = format_double(features.win_len_s);
    kv["features.step"] = format_double(features.step_s);
    kv["features.n_mels"] = std::to_string(features.n_mels);
    kv["features.fmin"] = format_double(features.fmin_hz);
    kv["features.fmax"] = format_double(features.fmax_hz);
    kv["features.preemph"] = format_double(features.preemph);
    kv["features.n_fft"] = std::to_string(features.n_fft);
    kv["features.n_mfcc"] = std::to_string(features.n_mfcc);
    kv["net.preset"] = net_preset;
    kv["net.embed_dim"] = std::to_string(embed_dim);
    kv["net.label_smoothing"] = format_double(label_smoothing);
    put_train(kv, "pretrain", pretrain);
    put_train(kv, "finetune", finetune);
    kv["svm.C"] = format_double(svm.C);
    kv["svm.standardize"] = svm.standardize ? "true" : "false";
    kv["seed"] = std::to_string(seed);
    return kv;
}

std::string ExperimentConfig::canonical_text() const {
    std::string out;
    for (const auto& [k, v] : to_key_values()) out += k + " = " + v + "\n";
    return out;
}

std::string ExperimentConfig::hash() const { return hex64(fnv1a64(canonical_text())); }

ExperimentConfig load_experiment_config(const fs::path& path) {
    auto kv = load_key_values(path);
    if (const char* env = std::getenv("ESK_SEED"); env && *env) kv["seed"] = env;
    return ExperimentConfig::from_key_values(kv, path.parent_path());
}

NetConfig make_net_config(const ExperimentConfig& cfg, int n_classes, int input_dim) {
    NetConfig n = cfg.net_preset == "resnet18" ? NetConfig::resnet18(cfg.embed_dim, n_classes)
                  : cfg.net_preset == "resnet9" ? NetConfig::resnet9(cfg.embed_dim, n_classes)
                                                : NetConfig::test_preset(cfg.embed_dim, n_classes);
    n.input_dim = input_dim;
    return n;
}

int feature_dim(const FeatureConfig& cfg, FeatureKind kind) {
    return kind == FeatureKind::mfcc ? cfg.n_mfcc : cfg.n_mels;
}

std::uint64_t fnv1a64(std::string_view data, std::uint64_t h) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::uint64_t file_digest(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (f.read(buf, sizeof buf) || f.gcount() > 0) h = fnv1a64(std::string_view(buf, f.gcount()), h);
    return h;
}

}  // namespace esk
