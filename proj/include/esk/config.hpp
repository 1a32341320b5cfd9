#pragma once

#include <cstdint>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "esk/dataset_io.hpp"
#include "esk/features.hpp"
#include "esk/fusion.hpp"
#include "esk/svm.hpp"
#include "esk/tinynet.hpp"
#include "esk/vad.hpp"

namespace esk {

// Flat "key = value" text; '#' starts a comment.
using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in, const std::string& source = "<config>");
KeyValues load_key_values(const std::filesystem::path& path);

// One trained system, e.g. "mfcc+pr+ls": feature kind plus flags
// pr (start from the pretrained body), ls (label smoothing), te (fuse textual embeddings).
struct SystemSpec {
    std::string name;
    FeatureKind kind = FeatureKind::mfcc;
    bool pretrained = false;
    bool label_smoothing = false;
    bool text = false;
};

SystemSpec parse_system(const std::string& token);

struct ExperimentConfig {
    std::filesystem::path manifest;           // target task
    std::filesystem::path pretrain_manifest;  // needed by "pr" systems
    std::filesystem::path text_embeddings;    // needed by "te" systems
    std::filesystem::path out_dir;            // where run writes; not part of the hash
    std::size_t text_dim = kTextEmbeddingDim;
    std::vector<SystemSpec> systems = {parse_system("mfcc+pr")};
    std::optional<FusionMode> fusion;
    Split eval_split = Split::devel;

    bool use_vad = true;
    VadConfig vad;
    FeatureConfig features;

    std::string net_preset = "resnet18";
    int embed_dim = 512;
    double label_smoothing = 0.1;
    TrainConfig pretrain = TrainConfig::pretrain();
    TrainConfig finetune = TrainConfig::finetune();
    SvmConfig svm;

    std::uint64_t seed = 0;

    // Unknown keys are rejected. Relative paths resolve against base_dir.
    static ExperimentConfig from_key_values(const KeyValues& kv, const std::filesystem::path& base_dir = {});
    // Every setting in canonical form; the output location is not part of it.
    KeyValues to_key_values() const;
    std::string canonical_text() const;
    std::string hash() const;
};

// Reads the file and applies the ESK_SEED environment override.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

// Architecture for a task with n_classes outputs and input_dim feature columns.
NetConfig make_net_config(const ExperimentConfig& cfg, int n_classes, int input_dim);

// Feature width the network sees for a given kind.
int feature_dim(const FeatureConfig& cfg, FeatureKind kind);

std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);
// Hash of a file's bytes.
std::uint64_t file_digest(const std::filesystem::path& path);

}  // namespace esk
