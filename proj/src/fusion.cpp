#include "esk/fusion.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "esk/error.hpp"
#include "esk/text.hpp"

namespace esk {

const char* fusion_mode_name(FusionMode m) {
    switch (m) {
        case FusionMode::concat: return "concat";
        case FusionMode::mean: return "mean";
        case FusionMode::vote: return "vote";
    }
    return "?";
}

FusionMode parse_fusion_mode(const std::string& s) {
    if (s == "concat") return FusionMode::concat;
    if (s == "mean") return FusionMode::mean;
    if (s == "vote") return FusionMode::vote;
    throw Error("unknown fusion mode '" + s + "' (expected concat, mean or vote)");
}

std::vector<EmbeddingVector> early_fuse(const std::vector<std::vector<EmbeddingVector>>& systems, FusionMode mode) {
    if (mode == FusionMode::vote) throw Error("early_fuse: vote is a late-fusion mode");
    if (systems.size() < 2) throw Error("fusion needs at least two members");
    std::vector<std::map<std::string, const EmbeddingVector*>> index(systems.size());
    for (std::size_t s = 0; s < systems.size(); ++s) {
        for (const auto& e : systems[s])
            if (!index[s].emplace(e.utterance_id, &e).second)
                throw Error("fusion member " + std::to_string(s) + " lists '" + e.utterance_id + "' twice");
        if (index[s].size() != index[0].size())
            throw Error("fusion members cover different utterances (" + std::to_string(index[0].size()) + " vs " +
                        std::to_string(index[s].size()) + ")");
    }
    std::vector<EmbeddingVector> out;
    out.reserve(systems[0].size());
    for (const auto& first : systems[0]) {
        EmbeddingVector fused;
        fused.utterance_id = first.utterance_id;
        fused.source = EmbeddingSource::fused;
        for (std::size_t s = 0; s < systems.size(); ++s) {
            auto it = index[s].find(first.utterance_id);
            if (it == index[s].end())
                throw Error("fusion member " + std::to_string(s) + " has no embedding for '" + first.utterance_id + "'");
            const auto& v = it->second->values;
            if (mode == FusionMode::concat) {
                fused.values.insert(fused.values.end(), v.begin(), v.end());
            } else {
                if (s == 0) fused.values.assign(v.size(), 0.0);
                if (v.size() != fused.values.size())
                    throw Error("mean fusion needs equal dimensions; member " + std::to_string(s) + " has " +
                                std::to_string(v.size()) + ", member 0 has " + std::to_string(fused.values.size()));
                // Accumulate offsets from the first member so identical members average exactly.
                const auto& base = first.values;
                for (std::size_t j = 0; j < v.size(); ++j) fused.values[j] += v[j] - base[j];
            }
        }
        if (mode == FusionMode::mean)
            for (std::size_t j = 0; j < fused.values.size(); ++j)
                fused.values[j] = first.values[j] + fused.values[j] / double(systems.size());
        out.push_back(std::move(fused));
    }
    return out;
}

int late_fuse_vote(std::span<const int> preds) {
    if (preds.empty()) throw Error("late_fuse_vote: no member predictions");
    for (int p : preds) {
        const auto votes = std::count(preds.begin(), preds.end(), p);
        if (2 * votes > static_cast<std::ptrdiff_t>(preds.size())) return p;
    }
    return preds.front();
}

std::vector<Prediction> late_fuse_vote(const std::vector<std::vector<Prediction>>& members) {
    if (members.size() < 2) throw Error("fusion needs at least two members");
    std::vector<std::map<std::string, int>> index(members.size());
    for (std::size_t s = 0; s < members.size(); ++s) {
        for (const auto& p : members[s])
            if (!index[s].emplace(p.id, p.label).second)
                throw Error("prediction list " + std::to_string(s) + " repeats id '" + p.id + "'");
        if (index[s].size() != index[0].size()) throw Error("prediction lists cover different utterances");
    }
    std::vector<Prediction> out;
    std::vector<int> votes(members.size());
    for (const auto& p : members[0]) {
        for (std::size_t s = 0; s < members.size(); ++s) {
            auto it = index[s].find(p.id);
            if (it == index[s].end()) throw Error("prediction list " + std::to_string(s) + " lacks '" + p.id + "'");
            votes[s] = it->second;
        }
        out.push_back({p.id, late_fuse_vote(votes)});
    }
    return out;
}

std::vector<std::size_t> order_by_score(std::span<const double> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<Prediction> load_predictions(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw Error("cannot open predictions '" + path.string() + "'");
    std::string line;
    if (!std::getline(f, line) || trim(line) != "id,label") throw FormatError(path.string() + ": header must be 'id,label'");
    std::vector<Prediction> out;
    std::set<std::string> ids;
    int lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto fields = split_csv(trim(line));
        const auto label = fields.size() == 2 ? parse_uint(fields[1]) : std::nullopt;
        if (!label) throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected 'id,label'");
        if (!ids.insert(fields[0]).second)
            throw Error(path.string() + ":" + std::to_string(lineno) + ": duplicate id '" + fields[0] + "'");
        out.push_back({fields[0], static_cast<int>(*label)});
    }
    return out;
}

void save_predictions(const std::filesystem::path& path, const std::vector<Prediction>& predictions) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write '" + path.string() + "'");
    f << "id,label\n";
    for (const auto& p : predictions) f << p.id << ',' << p.label << '\n';
    if (!f) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace esk
