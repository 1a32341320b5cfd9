#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esk/features.hpp"

namespace esk {

// Residual convolutional network over a feature matrix viewed as a
// one-channel time x coefficient image, pooled to a fixed-length embedding.
//
// Stage s: 3x3 stride-2 conv -> norm -> relu, then blocks_per_stage[s]
// residual blocks (conv -> norm -> relu -> conv -> norm, + identity, relu).
// Convolutions pad by replicating the edge row/column.
struct NetConfig {
    std::vector<int> blocks_per_stage = {2, 2, 2, 2};
    std::vector<int> stage_channels = {64, 128, 256, 512};
    int embed_dim = 512;
    int n_classes = 7;
    // Feature columns expected at the input; 0 accepts any width.
    int input_dim = 0;
    double label_smoothing = 0.0;
    std::uint64_t seed = 0;

    static NetConfig resnet18(int embed_dim = 512, int n_classes = 7);
    static NetConfig resnet9(int embed_dim = 512, int n_classes = 7);
    // Two stages, one block each, channels {embed_dim/2, embed_dim}.
    static NetConfig test_preset(int embed_dim = 16, int n_classes = 3);

    std::size_t stages() const { return blocks_per_stage.size(); }
    bool operator==(const NetConfig&) const = default;
};

// Stage widths {16, 32, 64, 128, ...} rescaled so the last equals embed_dim.
std::vector<int> scaled_channels(std::size_t stages, int embed_dim);

void validate(const NetConfig& cfg);

struct Tensor {
    std::string name;
    std::vector<int> shape;
    std::vector<double> values;
    // Trainable parameters get gradients; buffers hold normalization running statistics.
    bool trainable = true;
    // Weight decay applies to conv kernels and the head matrix only.
    bool decay = false;

    bool operator==(const Tensor&) const = default;
};

struct NetModel {
    NetConfig config;
    std::vector<Tensor> params;

    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
    bool operator==(const NetModel&) const = default;
};

// Kaiming-uniform kernels and head, unit norm scales, zero shifts and bias.
NetModel init_model(const NetConfig& cfg);

// Rounds every value to the nearest float32, the precision model files store.
void round_to_storage(NetModel& model);

// Channel-major activation map.
struct FeatureMap {
    int channels = 0, height = 0, width = 0;
    std::vector<double> values;

    double at(int c, int h, int w) const { return values[(std::size_t(c) * height + h) * width + w]; }
};

struct ForwardResult {
    std::vector<double> embedding;
    std::vector<double> logits;
    FeatureMap final_map;  // input to global average pooling
};

// Inference mode: normalization uses running statistics.
ForwardResult forward(const NetModel& model, const FeatureMatrix& features);

std::vector<double> softmax(std::span<const double> logits);

// class_weight * sum_k -q_k log p_k with q = (1 - eps) onehot + eps / K.
double loss(std::span<const double> logits, int target, std::span<const double> class_weights, double eps);

struct Example {
    const FeatureMatrix* features = nullptr;
    int label = 0;
};

struct NormStats {
    std::vector<double> mean;
    std::vector<double> var_unbiased;
};

struct GradResult {
    double loss = 0.0;                       // mean over the batch
    std::vector<std::vector<double>> grads;  // parallel to model.params; empty for buffers
    std::vector<NormStats> norm_stats;       // batch statistics, one per normalization layer
};

// Training mode (batch statistics); exact gradient of the mean batch loss.
GradResult grad(const NetModel& model, std::span<const Example> batch, std::span<const double> class_weights,
                double eps);

struct TrainConfig {
    double lr = 0.001;
    double weight_decay = 1e-4;
    double momentum = 0.8;
    int max_epochs = 50;
    int early_stop_patience = 5;
    int batch_size = 16;
    // Empty means inverse-frequency weights from the training labels.
    std::vector<double> class_weights;
    std::uint64_t seed = 0;
    double norm_momentum = 0.9;

    static TrainConfig pretrain();
    static TrainConfig finetune();
};

// g' = g + wd * p (decay tensors only); v = momentum * v + g'; p -= lr * v.
void sgd_step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads,
              std::vector<std::vector<double>>& velocity, const TrainConfig& cfg);

// running = m * running + (1 - m) * batch, for every normalization layer.
void update_running_stats(NetModel& model, const std::vector<NormStats>& stats, double momentum);

struct EpochRecord {
    double train_loss = 0.0;
    double devel_uar = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    int best_epoch = 0;  // 1-based
    int stopped_epoch = 0;
};

// Patience-based stopping on a metric that must strictly improve.
class EarlyStopping {
public:
    explicit EarlyStopping(int patience);
    // Records the metric for the next epoch; true when training should stop.
    bool update(double metric);
    int best_epoch() const { return best_epoch_; }
    int epoch() const { return epoch_; }
    bool improved() const { return since_best_ == 0; }

private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    int since_best_ = 0;
    double best_ = 0.0;
};

// Devel metric override; receives the model after each epoch and the 1-based epoch.
using DevelMetric = std::function<double(const NetModel&, int)>;

struct TrainResult {
    NetModel model;  // parameters of the best devel epoch
    TrainHistory history;
};

struct LabeledFeatures {
    FeatureMatrix features;
    int label = 0;
};

TrainResult train(const NetModel& init, std::span<const LabeledFeatures> train_set,
                  std::span<const LabeledFeatures> devel_set, const TrainConfig& cfg,
                  const DevelMetric& devel_metric = {});

// Predicted class of every example by argmax of the head.
std::vector<int> predict(const NetModel& model, std::span<const LabeledFeatures> set);

// Copies the body and attaches a fresh head with new_n_classes outputs.
NetModel swap_head(const NetModel& model, int new_n_classes, std::optional<std::uint64_t> seed = std::nullopt);

// w_k = N / (K n_k).
std::vector<double> class_weights_from_counts(std::span<const std::size_t> counts);

// ESKM: magic, u16 version, config, tensor table of float32 values.
inline constexpr std::uint16_t kModelFormatVersion = 1;
void save_model(const std::filesystem::path& path, const NetModel& model);
NetModel load_model(const std::filesystem::path& path);
// Also requires the stored architecture to match `expected`.
NetModel load_model(const std::filesystem::path& path, const NetConfig& expected);

}  // namespace esk
