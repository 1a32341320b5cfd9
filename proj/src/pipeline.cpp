#include "esk/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "esk/error.hpp"
#include "esk/rng.hpp"
#include "esk/text.hpp"
#include "esk/vad.hpp"

namespace esk {

namespace fs = std::filesystem;

FeatureMatrix clip_features(const AudioClip& clip, const ExperimentConfig& cfg, FeatureKind kind) {
    if (!cfg.use_vad) return extract_features(clip, cfg.features, kind);
    return extract_features(apply_vad(clip, cfg.vad), cfg.features, kind);
}

std::vector<Utterance> compute_features(const Manifest& manifest, const ExperimentConfig& cfg, FeatureKind kind) {
    std::vector<Utterance> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        AudioClip clip = read_wav(manifest.audio_path(e));
        try {
            out.push_back({e.id, e.split, {clip_features(clip, cfg, kind), e.label}});
        } catch (const Error& err) {
            throw Error("utterance '" + e.id + "': " + err.what());
        }
    }
    return out;
}

std::vector<LabeledFeatures> select_split(const std::vector<Utterance>& utterances, Split s) {
    std::vector<LabeledFeatures> out;
    for (const auto& u : utterances)
        if (u.split == s) out.push_back(u.data);
    return out;
}

TrainResult pretrain_network(const ExperimentConfig& cfg, const std::vector<Utterance>& data, FeatureKind kind, int n_classes) {
    NetConfig net = make_net_config(cfg, n_classes, feature_dim(cfg.features, kind));
    net.seed = mix_seed(cfg.seed, 0x701, static_cast<std::uint64_t>(kind));
    TrainConfig tc = cfg.pretrain;
    tc.seed = mix_seed(cfg.seed, 0x702, static_cast<std::uint64_t>(kind));
    return train(init_model(net), select_split(data, Split::train), select_split(data, Split::devel), tc);
}

TrainResult finetune_network(const ExperimentConfig& cfg, const SystemSpec& system, const NetModel* pretrained,
                             const std::vector<Utterance>& data, int n_classes) {
    const std::uint64_t tag = fnv1a64(system.name);
    NetModel start;
    if (pretrained) {
        start = swap_head(*pretrained, n_classes, mix_seed(cfg.seed, 0x703, tag));
    } else {
        NetConfig net = make_net_config(cfg, n_classes, feature_dim(cfg.features, system.kind));
        net.seed = mix_seed(cfg.seed, 0x704, tag);
        start = init_model(net);
    }
    start.config.label_smoothing = system.label_smoothing ? cfg.label_smoothing : 0.0;
    TrainConfig tc = cfg.finetune;
    tc.seed = mix_seed(cfg.seed, 0x705, tag);
    return train(start, select_split(data, Split::train), select_split(data, Split::devel), tc);
}

std::vector<EmbeddingVector> embed_utterances(const NetModel& model, const std::vector<Utterance>& data) {
    std::vector<EmbeddingVector> out;
    out.reserve(data.size());
    for (const auto& u : data) out.push_back(extract_embedding(model, u.data.features, u.id));
    return out;
}

LabeledMatrix gather(const std::vector<EmbeddingVector>& vectors, const Manifest& manifest, Split s) {
    std::map<std::string, const ManifestEntry*> index;
    for (const auto& e : manifest.entries) index[e.id] = &e;
    LabeledMatrix out;
    std::vector<const EmbeddingVector*> rows;
    for (const auto& v : vectors) {
        auto it = index.find(v.utterance_id);
        if (it == index.end()) throw Error("embedding for unknown utterance '" + v.utterance_id + "'");
        if (it->second->split != s) continue;
        rows.push_back(&v);
        out.ids.push_back(v.utterance_id);
        out.y.push_back(it->second->label);
    }
    const std::size_t dim = rows.empty() ? 0 : rows.front()->values.size();
    out.X = Matrix(rows.size(), dim);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i]->values.size() != dim) throw Error("embeddings of mixed width");
        std::copy(rows[i]->values.begin(), rows[i]->values.end(), out.X.row(i).begin());
    }
    return out;
}

std::vector<Prediction> svm_predict_all(const SvmModel& model, const LabeledMatrix& data) {
    std::vector<Prediction> out;
    for (std::size_t i = 0; i < data.ids.size(); ++i) out.push_back({data.ids[i], svm_predict(model, data.X.row(i)).label});
    return out;
}

EvalReport evaluate_predictions(const std::vector<Prediction>& predictions, const Manifest& manifest, int n_classes) {
    std::map<std::string, int> truth;
    for (const auto& e : manifest.entries) truth[e.id] = e.label;
    std::vector<int> t, p;
    for (const auto& pr : predictions) {
        auto it = truth.find(pr.id);
        if (it == truth.end()) throw Error("prediction for unknown utterance '" + pr.id + "'");
        t.push_back(it->second);
        p.push_back(pr.label);
    }
    return evaluate(t, p, n_classes);
}

namespace {

std::string file_tag(const std::string& system) {
    std::string s = system;
    std::replace(s.begin(), s.end(), '+', '_');
    return s;
}

// Runs a stage unless its stamp records the same key, every output exists and
// no input is newer than the stamp.
class StageRunner {
public:
    StageRunner(fs::path out, std::string key, std::string config_hash, std::ostream* log, PipelineResult& result)
        : out_(std::move(out)), key_(std::move(key)), hash_(std::move(config_hash)), log_(log), result_(result) {}

    fs::path stamp(const std::string& stage) const { return out_ / "stamps" / (stage + ".stamp"); }

    void run(const std::string& stage, const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
             const std::function<void()>& body) {
        if (fresh(stage, inputs, outputs)) {
            if (log_) *log_ << "[" << stage << "] up to date\n";
            result_.skipped_stages.push_back(stage);
            return;
        }
        if (log_) *log_ << "[" << stage << "] running\n";
        std::error_code ec;
        fs::remove(stamp(stage), ec);
        try {
            for (const auto& o : outputs) fs::create_directories(o.parent_path());
            body();
        } catch (const std::exception& e) {
            throw Error("stage " + stage + " failed: " + e.what());
        }
        fs::create_directories(stamp(stage).parent_path());
        std::ofstream f(stamp(stage), std::ios::trunc);
        f << "config_hash " << hash_ << "\nkey " << key_ << '\n';
        for (const auto& o : outputs) f << "output " << fs::relative(o, out_).generic_string() << '\n';
        if (!f) throw Error("cannot write stamp for stage " + stage);
        f.close();
        result_.executed_stages.push_back(stage);
    }

private:
    bool fresh(const std::string& stage, const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs) const {
        const fs::path s = stamp(stage);
        std::error_code ec;
        if (!fs::exists(s, ec)) return false;
        std::ifstream f(s);
        std::string line, recorded;
        while (std::getline(f, line))
            if (line.rfind("key ", 0) == 0) recorded = line.substr(4);
        if (recorded != key_) return false;
        for (const auto& o : outputs)
            if (!fs::exists(o, ec)) return false;
        const auto t = fs::last_write_time(s);
        for (const auto& i : inputs) {
            auto ti = fs::last_write_time(i, ec);
            if (ec || ti > t) return false;
        }
        return true;
    }

    fs::path out_;
    std::string key_;
    std::string hash_;
    std::ostream* log_;
    PipelineResult& result_;
};

std::vector<std::string> report_lines(const ExperimentConfig& cfg, const std::string& hash, const std::string& system) {
    std::vector<std::string> lines = {"config_hash," + hash, "system," + system,
                                      std::string("split,") + split_name(cfg.eval_split)};
    for (const auto& [k, v] : cfg.to_key_values()) lines.push_back("config," + k + " = " + v);
    return lines;
}

struct FeatureStore {
    fs::path dir;
    const Manifest* manifest = nullptr;

    fs::path file(std::size_t i) const { return dir / (std::to_string(i) + ".eskf"); }

    void write(const std::vector<Utterance>& data) const {
        for (std::size_t i = 0; i < data.size(); ++i) save_features(file(i), data[i].data.features);
    }
    std::vector<Utterance> read() const {
        std::vector<Utterance> out;
        for (std::size_t i = 0; i < manifest->entries.size(); ++i) {
            const auto& e = manifest->entries[i];
            out.push_back({e.id, e.split, {load_features(file(i)), e.label}});
        }
        return out;
    }
};

}  // namespace

PipelineResult run_pipeline(const ExperimentConfig& cfg, const fs::path& out_dir, std::ostream* log) {
    PipelineResult result;
    result.config_hash = cfg.hash();

    if (cfg.manifest.empty()) throw Error("config: manifest is required");
    const bool need_pretrain = std::any_of(cfg.systems.begin(), cfg.systems.end(), [](auto& s) { return s.pretrained; });
    const bool need_text = std::any_of(cfg.systems.begin(), cfg.systems.end(), [](auto& s) { return s.text; });
    if (need_pretrain && cfg.pretrain_manifest.empty()) throw Error("config: pretrain_manifest is required by a pr system");
    if (need_text && cfg.text_embeddings.empty()) throw Error("config: text_embeddings is required by a te system");

    const Manifest target = load_manifest(cfg.manifest);
    const int K = target.num_classes();
    target.check_classes(K);
    if (K < 2) throw Error("manifest '" + cfg.manifest.string() + "' needs at least two classes");
    if (target.split(cfg.eval_split).empty()) throw Error(std::string("manifest has no ") + split_name(cfg.eval_split) + " entries");
    Manifest emotion;
    int K_emotion = 0;
    if (need_pretrain) {
        emotion = load_manifest(cfg.pretrain_manifest);
        K_emotion = emotion.num_classes();
        emotion.check_classes(K_emotion);
    }

    std::string digest_text = cfg.canonical_text();
    digest_text += hex64(file_digest(cfg.manifest));
    if (need_pretrain) digest_text += hex64(file_digest(cfg.pretrain_manifest));
    if (need_text) {
        if (!fs::exists(cfg.text_embeddings)) throw Error("config: text_embeddings '" + cfg.text_embeddings.string() + "' not found");
        digest_text += hex64(file_digest(cfg.text_embeddings));
    }
    const std::string key = hex64(fnv1a64(digest_text));

    fs::create_directories(out_dir);
    StageRunner runner(out_dir, key, result.config_hash, log, result);

    auto audio_inputs = [](const Manifest& m, const fs::path& manifest_path) {
        std::vector<fs::path> in = {manifest_path};
        for (const auto& e : m.entries) in.push_back(m.audio_path(e));
        return in;
    };
    auto store_outputs = [](const FeatureStore& s) {
        std::vector<fs::path> out;
        for (std::size_t i = 0; i < s.manifest->entries.size(); ++i) out.push_back(s.file(i));
        return out;
    };

    // features
    std::map<FeatureKind, FeatureStore> target_store, emotion_store;
    for (const auto& sys : cfg.systems) {
        const FeatureKind kind = sys.kind;
        const std::string kname = feature_kind_name(kind);
        if (!target_store.count(kind)) {
            FeatureStore st{out_dir / "features" / kname / "target", &target};
            target_store[kind] = st;
            runner.run("features." + kname + ".target", audio_inputs(target, cfg.manifest), store_outputs(st),
                       [&] { st.write(compute_features(target, cfg, kind)); });
        }
        if (sys.pretrained && !emotion_store.count(kind)) {
            FeatureStore st{out_dir / "features" / kname / "pretrain", &emotion};
            emotion_store[kind] = st;
            runner.run("features." + kname + ".pretrain", audio_inputs(emotion, cfg.pretrain_manifest), store_outputs(st),
                       [&] { st.write(compute_features(emotion, cfg, kind)); });
        }
    }

    // pretrain
    std::map<FeatureKind, fs::path> pretrained_model;
    for (const auto& [kind, st] : emotion_store) {
        const std::string kname = feature_kind_name(kind);
        const fs::path model_path = out_dir / "models" / ("pretrain_" + kname + ".eskm");
        pretrained_model[kind] = model_path;
        const FeatureStore store = st;
        runner.run("pretrain." + kname, {runner.stamp("features." + kname + ".pretrain")}, {model_path}, [&] {
            auto r = pretrain_network(cfg, store.read(), kind, K_emotion);
            save_model(model_path, r.model);
        });
    }

    // per-system fine-tune, embed, svm
    const std::string eval_name = split_name(cfg.eval_split);
    std::map<std::string, fs::path> embed_files;
    std::vector<std::string> svm_stamps;
    for (const auto& sys : cfg.systems) {
        const std::string tag = file_tag(sys.name);
        const std::string kname = feature_kind_name(sys.kind);
        const fs::path model_path = out_dir / "models" / (tag + ".eskm");
        std::vector<fs::path> ft_inputs = {runner.stamp("features." + kname + ".target")};
        if (sys.pretrained) ft_inputs.push_back(runner.stamp("pretrain." + kname));
        const FeatureStore store = target_store.at(sys.kind);
        runner.run("finetune." + tag, ft_inputs, {model_path}, [&] {
            std::optional<NetModel> pre;
            if (sys.pretrained) pre = load_model(pretrained_model.at(sys.kind));
            auto r = finetune_network(cfg, sys, pre ? &*pre : nullptr, store.read(), K);
            save_model(model_path, r.model);
        });

        const fs::path emb_path = out_dir / "embeddings" / (tag + ".csv");
        embed_files[sys.name] = emb_path;
        std::vector<fs::path> emb_inputs = {runner.stamp("finetune." + tag)};
        if (sys.text) emb_inputs.push_back(cfg.text_embeddings);
        runner.run("embed." + tag, emb_inputs, {emb_path}, [&] {
            auto vectors = embed_utterances(load_model(model_path), store.read());
            if (sys.text) vectors = fuse_with_text(vectors, load_text_embeddings(cfg.text_embeddings, cfg.text_dim));
            save_embeddings_csv(emb_path, vectors);
        });

        const fs::path svm_path = out_dir / "svm" / (tag + ".esks");
        const fs::path devel_pred = out_dir / "predictions" / (tag + ".devel.csv");
        const fs::path eval_pred = out_dir / "predictions" / (tag + "." + eval_name + ".csv");
        const fs::path report_path = out_dir / "reports" / (tag + ".csv");
        svm_stamps.push_back("svm." + tag);
        runner.run("svm." + tag, {runner.stamp("embed." + tag)}, {svm_path, devel_pred, eval_pred, report_path}, [&] {
            auto vectors = load_embeddings_csv(emb_path, sys.text ? EmbeddingSource::fused : EmbeddingSource::acoustic);
            auto tr = gather(vectors, target, Split::train);
            SvmConfig sc = cfg.svm;
            sc.seed = mix_seed(cfg.seed, 0x706, fnv1a64(sys.name));
            save_svm(svm_path, svm_train(tr.X, tr.y, sc));
            const SvmModel svm = load_svm(svm_path);
            save_predictions(devel_pred, svm_predict_all(svm, gather(vectors, target, Split::devel)));
            auto preds = svm_predict_all(svm, gather(vectors, target, cfg.eval_split));
            save_predictions(eval_pred, preds);
            write_report(report_path, evaluate_predictions(preds, target, K), report_lines(cfg, result.config_hash, sys.name));
        });
    }

    // fusion
    fs::path final_pred = out_dir / "predictions" / (file_tag(cfg.systems.front().name) + "." + eval_name + ".csv");
    std::string final_name = cfg.systems.front().name;
    std::vector<fs::path> report_inputs = {runner.stamp(svm_stamps.front())};
    if (cfg.fusion) {
        final_name = std::string("fused-") + fusion_mode_name(*cfg.fusion);
        final_pred = out_dir / "predictions" / ("fused." + eval_name + ".csv");
        const fs::path fused_report = out_dir / "reports" / "fused.csv";
        std::vector<fs::path> inputs;
        for (const auto& s : svm_stamps) inputs.push_back(runner.stamp(s));
        report_inputs = {runner.stamp("fuse")};
        runner.run("fuse", inputs, {final_pred, fused_report}, [&] {
            std::vector<Prediction> fused;
            if (*cfg.fusion == FusionMode::vote) {
                std::vector<double> devel_uar;
                std::vector<std::vector<Prediction>> members;
                for (const auto& sys : cfg.systems) {
                    const std::string tag = file_tag(sys.name);
                    devel_uar.push_back(
                        evaluate_predictions(load_predictions(out_dir / "predictions" / (tag + ".devel.csv")), target, K).uar);
                    members.push_back(load_predictions(out_dir / "predictions" / (tag + "." + eval_name + ".csv")));
                }
                std::vector<std::vector<Prediction>> ordered;
                for (std::size_t i : order_by_score(devel_uar)) ordered.push_back(members[i]);
                fused = late_fuse_vote(ordered);
            } else {
                std::vector<std::vector<EmbeddingVector>> systems;
                for (const auto& sys : cfg.systems)
                    systems.push_back(load_embeddings_csv(embed_files.at(sys.name),
                                                          sys.text ? EmbeddingSource::fused : EmbeddingSource::acoustic));
                auto vectors = early_fuse(systems, *cfg.fusion);
                auto tr = gather(vectors, target, Split::train);
                SvmConfig sc = cfg.svm;
                sc.seed = mix_seed(cfg.seed, 0x707);
                const fs::path svm_path = out_dir / "svm" / "fused.esks";
                save_svm(svm_path, svm_train(tr.X, tr.y, sc));
                fused = svm_predict_all(load_svm(svm_path), gather(vectors, target, cfg.eval_split));
            }
            save_predictions(final_pred, fused);
            write_report(fused_report, evaluate_predictions(fused, target, K), report_lines(cfg, result.config_hash, final_name));
        });
    }

    result.report_path = out_dir / "report.csv";
    runner.run("report", report_inputs, {result.report_path}, [&] {
        auto lines = report_lines(cfg, result.config_hash, final_name);
        for (const auto& sys : cfg.systems) {
            const std::string tag = file_tag(sys.name);
            auto d = evaluate_predictions(load_predictions(out_dir / "predictions" / (tag + ".devel.csv")), target, K);
            auto e = evaluate_predictions(load_predictions(out_dir / "predictions" / (tag + "." + eval_name + ".csv")), target, K);
            lines.push_back("member," + sys.name + ",devel_uar=" + format_double(d.uar) + "," + eval_name +
                            "_uar=" + format_double(e.uar));
        }
        write_report(result.report_path, evaluate_predictions(load_predictions(final_pred), target, K), lines);
    });

    result.report = evaluate_predictions(load_predictions(final_pred), target, K);
    for (const auto& sys : cfg.systems) {
        const std::string tag = file_tag(sys.name);
        result.systems.push_back(
            {sys.name, evaluate_predictions(load_predictions(out_dir / "predictions" / (tag + ".devel.csv")), target, K),
             evaluate_predictions(load_predictions(out_dir / "predictions" / (tag + "." + eval_name + ".csv")), target, K)});
    }
    return result;
}

ExperimentConfig config_from_report(const fs::path& report) {
    std::ifstream f(report);
    if (!f) throw Error("cannot open report '" + report.string() + "'");
    std::stringstream text;
    std::string line;
    bool any = false;
    while (std::getline(f, line))
        if (line.rfind("config,", 0) == 0) {
            text << line.substr(7) << '\n';
            any = true;
        }
    if (!any) throw FormatError("report '" + report.string() + "' records no config");
    return ExperimentConfig::from_key_values(parse_key_values(text, report.string()));
}

}  // namespace esk
