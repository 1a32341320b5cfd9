#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "esk/features.hpp"
#include "esk/tinynet.hpp"

namespace esk {

enum class EmbeddingSource : unsigned char { acoustic = 0, textual = 1, fused = 2 };

struct EmbeddingVector {
    std::string utterance_id;
    std::vector<double> values;
    EmbeddingSource source = EmbeddingSource::acoustic;

    bool operator==(const EmbeddingVector&) const = default;
};

// Sentence-encoder width of the textual vectors.
inline constexpr std::size_t kTextEmbeddingDim = 768;

// Pooled body output of the network; the classifier head is not used.
EmbeddingVector extract_embedding(const NetModel& model, const FeatureMatrix& features, std::string utterance_id = {});

// CSV: header "id,<dim>", then "utterance_id,v0,v1,...". expected_dim 0 accepts the declared width.
std::vector<EmbeddingVector> load_embeddings_csv(const std::filesystem::path& path, EmbeddingSource source,
                                                 std::size_t expected_dim = 0);
void save_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingVector>& vectors);

std::map<std::string, EmbeddingVector> load_text_embeddings(const std::filesystem::path& path,
                                                            std::size_t expected_dim = kTextEmbeddingDim);

// Bulk binary dump: magic "ESKE", u32 N, u32 D, u8 source, then N x (string id, D float64).
void save_embeddings_bin(const std::filesystem::path& path, const std::vector<EmbeddingVector>& vectors);
std::vector<EmbeddingVector> load_embeddings_bin(const std::filesystem::path& path);

// Acoustic values followed by textual values.
EmbeddingVector fuse_concat(const EmbeddingVector& acoustic, const EmbeddingVector& textual);

// fuse_concat for every acoustic vector; a missing textual id is an error.
std::vector<EmbeddingVector> fuse_with_text(const std::vector<EmbeddingVector>& acoustic,
                                            const std::map<std::string, EmbeddingVector>& textual);

}  // namespace esk
