#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "esk/config.hpp"
#include "esk/dataset_io.hpp"
#include "esk/embeddings.hpp"
#include "esk/error.hpp"
#include "esk/features.hpp"
#include "esk/fusion.hpp"
#include "esk/metrics.hpp"
#include "esk/pipeline.hpp"
#include "esk/svm.hpp"
#include "esk/tinynet.hpp"
#include "esk/vad.hpp"

namespace fs = std::filesystem;
using namespace esk;

namespace {

ExperimentConfig config_or_default(const std::string& path) {
    if (path.empty()) {
        KeyValues kv;
        if (const char* env = std::getenv("ESK_SEED"); env && *env) kv["seed"] = env;
        return ExperimentConfig::from_key_values(kv);
    }
    return load_experiment_config(path);
}

// The kind a model was trained on, judged by its input width.
FeatureKind model_kind(const NetModel& model, const ExperimentConfig& cfg, const std::string& requested) {
    if (!requested.empty()) return parse_feature_kind(requested);
    const int d = model.config.input_dim;
    const bool m = d == feature_dim(cfg.features, FeatureKind::mfcc);
    const bool f = d == feature_dim(cfg.features, FeatureKind::logfbank);
    if (m != f) return m ? FeatureKind::mfcc : FeatureKind::logfbank;
    throw Error("cannot tell the feature kind of the model; pass --kind");
}

bool is_binary_embedding(const fs::path& p) { return p.extension() == ".eske"; }

std::vector<EmbeddingVector> read_embeddings(const fs::path& p) {
    if (is_binary_embedding(p)) return load_embeddings_bin(p);
    return load_embeddings_csv(p, EmbeddingSource::acoustic);
}

void print_history(const TrainHistory& h) {
    for (std::size_t e = 0; e < h.epochs.size(); ++e)
        std::cout << "epoch " << e + 1 << " loss " << h.epochs[e].train_loss << " devel_uar " << h.epochs[e].devel_uar
                  << '\n';
    std::cout << "best_epoch " << h.best_epoch << " stopped_epoch " << h.stopped_epoch << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"escalation detection toolkit"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "write a synthetic pitch-ladder dataset");
    SynthSpec spec;
    std::string synth_out;
    synth->add_option("--out", synth_out, "output directory")->required();
    synth->add_option("--classes", spec.n_classes)->capture_default_str();
    synth->add_option("--per-class", spec.n_per_class)->capture_default_str();
    synth->add_option("--duration", spec.duration_s, "seconds")->capture_default_str();
    synth->add_option("--sample-rate", spec.sample_rate)->capture_default_str();
    synth->add_option("--seed", spec.seed)->capture_default_str();
    synth->add_option("--base-hz", spec.base_hz)->capture_default_str();
    synth->add_option("--step-hz", spec.step_hz)->capture_default_str();
    synth->add_option("--train-pct", spec.train_pct)->capture_default_str();
    synth->add_option("--devel-pct", spec.devel_pct)->capture_default_str();
    synth->add_option("--prefix", spec.prefix)->capture_default_str();

    // vad
    auto* vad = app.add_subcommand("vad", "drop unvoiced frames from a wav");
    std::string vad_in, vad_out;
    VadConfig vcfg;
    vad->add_option("--in", vad_in)->required();
    vad->add_option("--out", vad_out)->required();
    vad->add_option("--mode", vcfg.mode)->capture_default_str();
    vad->add_option("--frame-ms", vcfg.frame_ms)->capture_default_str();
    vad->add_option("--hangover", vcfg.hangover_frames)->capture_default_str();

    // features
    auto* feat = app.add_subcommand("features", "extract mfcc or logfbank features");
    std::string feat_in, feat_out, feat_kind = "mfcc", feat_config;
    bool feat_vad = false;
    feat->add_option("--in", feat_in)->required();
    feat->add_option("--out", feat_out)->required();
    feat->add_option("--kind", feat_kind)->capture_default_str();
    feat->add_option("--config", feat_config, "key = value file with features.* settings");
    feat->add_flag("--vad", feat_vad, "apply voice activity detection first");

    // pretrain / finetune
    std::string pre_config, pre_manifest, pre_out, pre_kind = "mfcc";
    auto* pre = app.add_subcommand("pretrain", "train the network on the pretraining manifest");
    pre->add_option("--config", pre_config);
    pre->add_option("--manifest", pre_manifest, "defaults to pretrain_manifest from the config");
    pre->add_option("--kind", pre_kind)->capture_default_str();
    pre->add_option("--out", pre_out)->required();

    std::string ft_config, ft_manifest, ft_out, ft_init, ft_kind;
    bool ft_ls = false;
    auto* ft = app.add_subcommand("finetune", "train on the target manifest, optionally from a pretrained model");
    ft->add_option("--init", ft_init, "pretrained model; omitted means random initialization");
    ft->add_option("--config", ft_config);
    ft->add_option("--manifest", ft_manifest, "defaults to manifest from the config");
    ft->add_option("--kind", ft_kind);
    ft->add_flag("--label-smoothing", ft_ls, "use net.label_smoothing from the config");
    ft->add_option("--out", ft_out)->required();

    // embed
    std::string emb_model, emb_manifest, emb_out, emb_config, emb_kind, emb_text;
    auto* emb = app.add_subcommand("embed", "pooled embeddings for every utterance of a manifest");
    emb->add_option("--model", emb_model)->required();
    emb->add_option("--manifest", emb_manifest)->required();
    emb->add_option("--out", emb_out, ".csv or .eske")->required();
    emb->add_option("--config", emb_config);
    emb->add_option("--kind", emb_kind);
    emb->add_option("--text", emb_text, "textual embeddings to append");

    // svm-train / svm-predict
    std::string st_emb, st_manifest, st_out;
    SvmConfig scfg;
    auto* st = app.add_subcommand("svm-train", "fit a one-vs-rest linear SVM on train-split embeddings");
    st->add_option("--embeddings", st_emb)->required();
    st->add_option("--manifest", st_manifest)->required();
    st->add_option("--C", scfg.C)->capture_default_str();
    st->add_flag("--standardize", scfg.standardize);
    st->add_option("--seed", scfg.seed)->capture_default_str();
    st->add_option("--out", st_out)->required();

    std::string sp_model, sp_emb, sp_manifest, sp_out, sp_split = "devel";
    auto* sp = app.add_subcommand("svm-predict", "predict one split with a trained SVM");
    sp->add_option("--model", sp_model)->required();
    sp->add_option("--embeddings", sp_emb)->required();
    sp->add_option("--manifest", sp_manifest)->required();
    sp->add_option("--split", sp_split)->capture_default_str();
    sp->add_option("--out", sp_out)->required();

    // eval
    std::string ev_truth, ev_pred, ev_report;
    int ev_classes = 0;
    auto* ev = app.add_subcommand("eval", "score predictions against a manifest");
    ev->add_option("--truth", ev_truth)->required();
    ev->add_option("--pred", ev_pred)->required();
    ev->add_option("--classes", ev_classes)->required();
    ev->add_option("--report", ev_report);

    // fuse
    std::string fu_mode, fu_out;
    std::vector<std::string> fu_pred, fu_emb;
    auto* fu = app.add_subcommand("fuse", "vote over predictions or fuse embeddings");
    fu->add_option("--mode", fu_mode, "vote, mean or concat")->required();
    fu->add_option("--pred", fu_pred, "prediction files, best system first (vote)");
    fu->add_option("--emb", fu_emb, "embedding files (mean, concat)");
    fu->add_option("--out", fu_out)->required();

    // run
    std::string run_config, run_out;
    bool run_quiet = false;
    auto* run = app.add_subcommand("run", "the full pipeline from a config file");
    run->add_option("--config", run_config)->required();
    run->add_option("--out", run_out, "defaults to out_dir from the config");
    run->add_flag("--quiet", run_quiet);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*synth) {
            auto m = synth_dataset(spec, synth_out);
            std::cout << "wrote " << m.entries.size() << " clips to " << synth_out << '\n';
        } else if (*vad) {
            validate(vcfg);
            AudioClip clip = read_wav(vad_in);
            auto d = classify_frames(clip, vcfg);
            AudioClip kept = filter_voiced(clip, d, vcfg.hangover_frames);
            write_wav(vad_out, kept);
            std::cout << "voiced frames " << d.voiced_count() << " of " << d.flags.size() << ", kept "
                      << kept.samples.size() << " samples\n";
        } else if (*feat) {
            ExperimentConfig cfg = config_or_default(feat_config);
            cfg.use_vad = feat_vad;
            auto m = clip_features(read_wav(feat_in), cfg, parse_feature_kind(feat_kind));
            save_features(feat_out, m);
            std::cout << m.frames() << " x " << m.dims() << '\n';
        } else if (*pre) {
            ExperimentConfig cfg = config_or_default(pre_config);
            const fs::path mpath = pre_manifest.empty() ? cfg.pretrain_manifest : fs::path(pre_manifest);
            if (mpath.empty()) throw Error("no pretraining manifest given");
            Manifest m = load_manifest(mpath);
            m.check_classes(m.num_classes());
            const FeatureKind kind = parse_feature_kind(pre_kind);
            auto r = pretrain_network(cfg, compute_features(m, cfg, kind), kind, m.num_classes());
            print_history(r.history);
            save_model(pre_out, r.model);
        } else if (*ft) {
            ExperimentConfig cfg = config_or_default(ft_config);
            const fs::path mpath = ft_manifest.empty() ? cfg.manifest : fs::path(ft_manifest);
            if (mpath.empty()) throw Error("no manifest given");
            Manifest m = load_manifest(mpath);
            m.check_classes(m.num_classes());
            std::optional<NetModel> init;
            if (!ft_init.empty()) init = load_model(ft_init);
            SystemSpec sys;
            sys.kind = init ? model_kind(*init, cfg, ft_kind) : parse_feature_kind(ft_kind.empty() ? "mfcc" : ft_kind);
            sys.name = std::string(feature_kind_name(sys.kind)) + (init ? "+pr" : "") + (ft_ls ? "+ls" : "");
            sys.pretrained = init.has_value();
            sys.label_smoothing = ft_ls;
            auto r = finetune_network(cfg, sys, init ? &*init : nullptr, compute_features(m, cfg, sys.kind), m.num_classes());
            print_history(r.history);
            save_model(ft_out, r.model);
        } else if (*emb) {
            ExperimentConfig cfg = config_or_default(emb_config);
            NetModel model = load_model(emb_model);
            Manifest m = load_manifest(emb_manifest);
            auto vectors = embed_utterances(model, compute_features(m, cfg, model_kind(model, cfg, emb_kind)));
            if (!emb_text.empty()) vectors = fuse_with_text(vectors, load_text_embeddings(emb_text, cfg.text_dim));
            if (is_binary_embedding(emb_out)) save_embeddings_bin(emb_out, vectors);
            else save_embeddings_csv(emb_out, vectors);
            std::cout << vectors.size() << " embeddings of width " << (vectors.empty() ? 0 : vectors[0].values.size())
                      << '\n';
        } else if (*st) {
            Manifest m = load_manifest(st_manifest);
            auto data = gather(read_embeddings(st_emb), m, Split::train);
            SvmTrainInfo info;
            auto model = svm_train(data.X, data.y, scfg, &info);
            save_svm(st_out, model);
            for (std::size_t k = 0; k < info.problems.size(); ++k)
                std::cout << "class " << k << " epochs " << info.problems[k].epochs
                          << (info.problems[k].converged ? " converged" : " not converged") << '\n';
        } else if (*sp) {
            Manifest m = load_manifest(sp_manifest);
            auto preds = svm_predict_all(load_svm(sp_model), gather(read_embeddings(sp_emb), m, parse_split(sp_split)));
            save_predictions(sp_out, preds);
            std::cout << preds.size() << " predictions\n";
        } else if (*ev) {
            Manifest m = load_manifest(ev_truth);
            auto r = evaluate_predictions(load_predictions(ev_pred), m, ev_classes);
            if (!ev_report.empty()) write_report(ev_report, r);
            std::cout << "uar " << r.uar << "\nprecision " << r.macro_precision << "\nf1 " << r.macro_f1 << '\n';
        } else if (*fu) {
            const FusionMode mode = parse_fusion_mode(fu_mode);
            if (mode == FusionMode::vote) {
                if (fu_pred.size() < 2) throw Error("vote needs at least two --pred files");
                std::vector<std::vector<Prediction>> members;
                for (const auto& p : fu_pred) members.push_back(load_predictions(p));
                save_predictions(fu_out, late_fuse_vote(members));
            } else {
                if (fu_emb.size() < 2) throw Error(std::string(fusion_mode_name(mode)) + " needs at least two --emb files");
                std::vector<std::vector<EmbeddingVector>> systems;
                for (const auto& p : fu_emb) systems.push_back(read_embeddings(p));
                auto fused = early_fuse(systems, mode);
                if (is_binary_embedding(fu_out)) save_embeddings_bin(fu_out, fused);
                else save_embeddings_csv(fu_out, fused);
            }
        } else if (*run) {
            ExperimentConfig cfg = load_experiment_config(run_config);
            fs::path out = !run_out.empty() ? fs::path(run_out)
                           : !cfg.out_dir.empty() ? cfg.out_dir
                                                  : fs::path(run_config).parent_path() / "esk_run";
            auto r = run_pipeline(cfg, out, run_quiet ? nullptr : &std::cout);
            for (const auto& s : r.systems)
                std::cout << s.name << " devel_uar " << s.devel.uar << " " << split_name(cfg.eval_split) << "_uar "
                          << s.eval.uar << '\n';
            std::cout << "uar " << r.report.uar << "\nconfig_hash " << r.config_hash << "\nreport "
                      << r.report_path.string() << '\n';
        }
    } catch (const std::exception& e) {
        std::cerr << "esk: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
