#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "esk/config.hpp"
#include "esk/dataset_io.hpp"
#include "esk/embeddings.hpp"
#include "esk/features.hpp"
#include "esk/fusion.hpp"
#include "esk/metrics.hpp"
#include "esk/svm.hpp"
#include "esk/tinynet.hpp"

namespace esk {

struct Utterance {
    std::string id;
    Split split = Split::train;
    LabeledFeatures data;
};

// VAD (when enabled) followed by feature extraction.
FeatureMatrix clip_features(const AudioClip& clip, const ExperimentConfig& cfg, FeatureKind kind);
std::vector<Utterance> compute_features(const Manifest& manifest, const ExperimentConfig& cfg, FeatureKind kind);
std::vector<LabeledFeatures> select_split(const std::vector<Utterance>& utterances, Split s);

// Emotion-style pretraining on every train/devel utterance of a manifest.
TrainResult pretrain_network(const ExperimentConfig& cfg, const std::vector<Utterance>& data, FeatureKind kind, int n_classes);
// Fine-tunes from `pretrained` when given, otherwise trains from a fresh network.
TrainResult finetune_network(const ExperimentConfig& cfg, const SystemSpec& system, const NetModel* pretrained,
                             const std::vector<Utterance>& data, int n_classes);

std::vector<EmbeddingVector> embed_utterances(const NetModel& model, const std::vector<Utterance>& data);

// Design matrix and labels of the vectors whose ids fall in split s.
struct LabeledMatrix {
    std::vector<std::string> ids;
    Matrix X;
    std::vector<int> y;
};
LabeledMatrix gather(const std::vector<EmbeddingVector>& vectors, const Manifest& manifest, Split s);

std::vector<Prediction> svm_predict_all(const SvmModel& model, const LabeledMatrix& data);
EvalReport evaluate_predictions(const std::vector<Prediction>& predictions, const Manifest& manifest, int n_classes);

struct SystemOutcome {
    std::string name;
    EvalReport devel;
    EvalReport eval;
};

struct PipelineResult {
    std::string config_hash;
    EvalReport report;  // the fused system when fusion is configured, otherwise the first system
    std::vector<SystemOutcome> systems;
    std::vector<std::string> executed_stages;
    std::vector<std::string> skipped_stages;
    std::filesystem::path report_path;
};

PipelineResult run_pipeline(const ExperimentConfig& cfg, const std::filesystem::path& out_dir, std::ostream* log = nullptr);

// Recovers the configuration recorded in a report written by run_pipeline.
ExperimentConfig config_from_report(const std::filesystem::path& report);

}  // namespace esk
