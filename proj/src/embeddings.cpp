#include "esk/embeddings.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "esk/binary_io.hpp"
#include "esk/error.hpp"
#include "esk/text.hpp"

namespace esk {

EmbeddingVector extract_embedding(const NetModel& model, const FeatureMatrix& features, std::string utterance_id) {
    EmbeddingVector e;
    e.utterance_id = std::move(utterance_id);
    e.values = forward(model, features).embedding;
    e.source = EmbeddingSource::acoustic;
    return e;
}

std::vector<EmbeddingVector> load_embeddings_csv(const std::filesystem::path& path, EmbeddingSource source,
                                                 std::size_t expected_dim) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open embeddings '" + path.string() + "'");
    std::string line;
    if (!std::getline(f, line)) throw FormatError(path.string() + ": empty file");
    const auto header = split_csv(trim(line));
    if (header.size() != 2 || header[0] != "id") throw FormatError(path.string() + ": header must be 'id,<dim>'");
    const auto declared = parse_uint(header[1]);
    if (!declared || *declared == 0) throw FormatError(path.string() + ": header dimension '" + header[1] + "' invalid");
    const std::size_t dim = *declared;
    if (expected_dim != 0 && dim != expected_dim)
        throw Error(path.string() + ": declared dimension " + std::to_string(dim) + ", expected " +
                    std::to_string(expected_dim));

    std::vector<EmbeddingVector> out;
    std::set<std::string> ids;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        auto fields = split_csv(trim(line));
        if (fields.size() - 1 != dim)
            throw Error(where + ": dimension mismatch, " + std::to_string(fields.size() - 1) + " values for dimension " +
                        std::to_string(dim));
        EmbeddingVector e;
        e.utterance_id = fields[0];
        e.source = source;
        e.values.reserve(dim);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            const auto v = parse_double(fields[i]);
            if (!v || !std::isfinite(*v)) throw FormatError(where + ": non-numeric value '" + fields[i] + "'");
            e.values.push_back(*v);
        }
        if (!ids.insert(e.utterance_id).second) throw Error(where + ": duplicate id '" + e.utterance_id + "'");
        out.push_back(std::move(e));
    }
    return out;
}

void save_embeddings_csv(const std::filesystem::path& path, const std::vector<EmbeddingVector>& vectors) {
    if (vectors.empty()) throw Error("no embeddings to save");
    const std::size_t dim = vectors.front().values.size();
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f << "id," << dim << '\n';
    for (const auto& e : vectors) {
        if (e.values.size() != dim) throw Error("embedding '" + e.utterance_id + "' has inconsistent dimension");
        f << e.utterance_id;
        for (double v : e.values) f << ',' << format_double(v);
        f << '\n';
    }
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

std::map<std::string, EmbeddingVector> load_text_embeddings(const std::filesystem::path& path, std::size_t expected_dim) {
    std::map<std::string, EmbeddingVector> out;
    for (auto& e : load_embeddings_csv(path, EmbeddingSource::textual, expected_dim)) {
        auto id = e.utterance_id;
        out.emplace(std::move(id), std::move(e));
    }
    return out;
}

void save_embeddings_bin(const std::filesystem::path& path, const std::vector<EmbeddingVector>& vectors) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    const std::size_t dim = vectors.empty() ? 0 : vectors.front().values.size();
    binio::put_magic(f, "ESKE");
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(vectors.size()));
    binio::put<std::uint32_t>(f, static_cast<std::uint32_t>(dim));
    binio::put<std::uint8_t>(f, static_cast<std::uint8_t>(vectors.empty() ? EmbeddingSource::acoustic : vectors.front().source));
    for (const auto& e : vectors) {
        if (e.values.size() != dim) throw Error("embedding '" + e.utterance_id + "' has inconsistent dimension");
        binio::put_string(f, e.utterance_id);
        for (double v : e.values) binio::put<double>(f, v);
    }
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

std::vector<EmbeddingVector> load_embeddings_bin(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open '" + path.string() + "'");
    binio::expect_magic(f, "ESKE");
    const auto n = binio::get<std::uint32_t>(f);
    const auto dim = binio::get<std::uint32_t>(f);
    const auto source = binio::get<std::uint8_t>(f);
    if (source > 2) throw FormatError("unknown embedding source code " + std::to_string(source));
    std::vector<EmbeddingVector> out(n);
    for (auto& e : out) {
        e.utterance_id = binio::get_string(f, 4096);
        e.source = static_cast<EmbeddingSource>(source);
        e.values.resize(dim);
        for (auto& v : e.values) v = binio::get<double>(f);
    }
    return out;
}

EmbeddingVector fuse_concat(const EmbeddingVector& acoustic, const EmbeddingVector& textual) {
    if (acoustic.utterance_id != textual.utterance_id)
        throw Error("cannot fuse '" + acoustic.utterance_id + "' with '" + textual.utterance_id + "'");
    EmbeddingVector out;
    out.utterance_id = acoustic.utterance_id;
    out.source = EmbeddingSource::fused;
    out.values = acoustic.values;
    out.values.insert(out.values.end(), textual.values.begin(), textual.values.end());
    return out;
}

std::vector<EmbeddingVector> fuse_with_text(const std::vector<EmbeddingVector>& acoustic,
                                            const std::map<std::string, EmbeddingVector>& textual) {
    std::vector<EmbeddingVector> out;
    out.reserve(acoustic.size());
    for (const auto& a : acoustic) {
        auto it = textual.find(a.utterance_id);
        if (it == textual.end()) throw Error("no textual embedding for utterance '" + a.utterance_id + "'");
        out.push_back(fuse_concat(a, it->second));
    }
    return out;
}

}  // namespace esk
