#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "esk/embeddings.hpp"

namespace esk {

enum class FusionMode { concat, mean, vote };

const char* fusion_mode_name(FusionMode m);
FusionMode parse_fusion_mode(const std::string& s);

// Early fusion over systems listed in member order. Every system must cover
// the same utterance ids; output follows the first system's order.
std::vector<EmbeddingVector> early_fuse(const std::vector<std::vector<EmbeddingVector>>& systems, FusionMode mode);

// Strict-majority label, otherwise the first member's label.
int late_fuse_vote(std::span<const int> member_predictions);

struct Prediction {
    std::string id;
    int label = 0;
    bool operator==(const Prediction&) const = default;
};

// Votes per utterance; every member must predict the same ids. Output follows the first member.
std::vector<Prediction> late_fuse_vote(const std::vector<std::vector<Prediction>>& members);

// Member indices sorted by descending score; equal scores keep declared order.
std::vector<std::size_t> order_by_score(std::span<const double> scores);

// CSV "id,label".
std::vector<Prediction> load_predictions(const std::filesystem::path& path);
void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions);

}  // namespace esk
