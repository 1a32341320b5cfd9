#include <doctest.h>

#include <algorithm>
#include <random>

#include "esk/error.hpp"
#include "esk/fusion.hpp"
#include "support.hpp"

using namespace esk;

namespace {

std::vector<EmbeddingVector> system_of(const std::vector<std::string>& ids, std::size_t dim, std::mt19937_64& gen) {
    std::vector<EmbeddingVector> out;
    for (const auto& id : ids) out.push_back({id, testing::random_vector(dim, gen, -1.0, 1.0), EmbeddingSource::acoustic});
    return out;
}

}  // namespace

TEST_CASE("vote examples") {
    CHECK(late_fuse_vote(std::vector<int>{0, 0, 1}) == 0);
    CHECK(late_fuse_vote(std::vector<int>{1, 0, 0}) == 0);
    CHECK(late_fuse_vote(std::vector<int>{0, 1, 2}) == 0);
    CHECK(late_fuse_vote(std::vector<int>{2, 1, 0}) == 2);
    CHECK(late_fuse_vote(std::vector<int>{1, 1, 1}) == 1);
    CHECK(late_fuse_vote(std::vector<int>{2, 1}) == 2);
    CHECK(late_fuse_vote(std::vector<int>{1, 2, 2, 1}) == 1);
    CHECK(late_fuse_vote(std::vector<int>{1, 2, 2, 2}) == 2);
    CHECK_THROWS_AS(late_fuse_vote(std::vector<int>{}), Error);
}

TEST_CASE("vote is order independent under a strict majority") {
    std::mt19937_64 gen(4);
    std::uniform_int_distribution<int> lab(0, 2);
    for (int rep = 0; rep < 500; ++rep) {
        std::vector<int> v(2 + rep % 5);
        for (auto& x : v) x = lab(gen);
        int majority = -1;
        for (int k = 0; k < 3; ++k)
            if (2 * std::count(v.begin(), v.end(), k) > long(v.size())) majority = k;
        const int fused = late_fuse_vote(v);
        if (majority >= 0) {
            CHECK(fused == majority);
            std::shuffle(v.begin(), v.end(), gen);
            CHECK(late_fuse_vote(v) == majority);
        } else {
            CHECK(fused == v[0]);
        }
    }
}

TEST_CASE("vote over prediction lists") {
    const std::vector<Prediction> a{{"u1", 0}, {"u2", 1}, {"u3", 2}};
    const std::vector<Prediction> b{{"u3", 2}, {"u1", 1}, {"u2", 1}};
    const std::vector<Prediction> c{{"u2", 0}, {"u1", 1}, {"u3", 1}};
    const auto fused = late_fuse_vote({a, b, c});
    CHECK(fused == std::vector<Prediction>{{"u1", 1}, {"u2", 1}, {"u3", 2}});
    CHECK(late_fuse_vote({a, a, a}) == a);
    CHECK_THROWS_AS(late_fuse_vote({a}), Error);
    CHECK_THROWS_AS(late_fuse_vote({a, std::vector<Prediction>{{"u1", 0}, {"u2", 1}}}), Error);
    CHECK_THROWS_AS(late_fuse_vote({a, std::vector<Prediction>{{"u1", 0}, {"u2", 1}, {"u9", 1}}}), Error);
    CHECK_THROWS_AS(late_fuse_vote({a, std::vector<Prediction>{{"u1", 0}, {"u1", 1}, {"u3", 1}}}), Error);
}

TEST_CASE("member order by score") {
    CHECK(order_by_score(std::vector<double>{0.5, 0.8, 0.6}) == std::vector<std::size_t>{1, 2, 0});
    CHECK(order_by_score(std::vector<double>{0.7, 0.7, 0.9}) == std::vector<std::size_t>{2, 0, 1});
    CHECK(order_by_score(std::vector<double>{}).empty());
}

TEST_CASE("mean fusion") {
    std::mt19937_64 gen(1);
    const std::vector<std::string> ids{"a", "b", "c"};
    const auto s = system_of(ids, 5, gen);
    const auto same = early_fuse({s, s, s}, FusionMode::mean);
    REQUIRE(same.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(same[i].values == s[i].values);
        CHECK(same[i].utterance_id == ids[i]);
        CHECK(same[i].source == EmbeddingSource::fused);
    }
    const std::vector<EmbeddingVector> x{{"u", {1.0, 3.0}, EmbeddingSource::acoustic}};
    const std::vector<EmbeddingVector> y{{"u", {3.0, 1.0}, EmbeddingSource::acoustic}};
    CHECK(early_fuse({x, y}, FusionMode::mean)[0].values == std::vector<double>{2.0, 2.0});
    CHECK_THROWS_AS(early_fuse({s, system_of(ids, 4, gen)}, FusionMode::mean), Error);
}

TEST_CASE("concat fusion") {
    std::mt19937_64 gen(2);
    const std::vector<std::string> ids{"a", "b"};
    const auto a = system_of(ids, 512, gen), b = system_of(ids, 512, gen), c = system_of(ids, 512, gen);
    CHECK(early_fuse({a, b, c}, FusionMode::concat)[0].values.size() == 1536);
    const auto t = system_of(ids, 768, gen);
    const auto at = early_fuse({a, t}, FusionMode::concat);
    CHECK(at[1].values.size() == 1280);
    CHECK(std::equal(a[1].values.begin(), a[1].values.end(), at[1].values.begin()));
    CHECK(std::equal(t[1].values.begin(), t[1].values.end(), at[1].values.begin() + 512));

    // Members may list utterances in different orders; output follows the first.
    auto shuffled = b;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto f = early_fuse({a, shuffled}, FusionMode::concat);
    CHECK(f[0].utterance_id == "a");
    CHECK(std::equal(b[0].values.begin(), b[0].values.end(), f[0].values.begin() + 512));

    CHECK_THROWS_AS(early_fuse({a}, FusionMode::concat), Error);
    CHECK_THROWS_AS(early_fuse({a, b}, FusionMode::vote), Error);
    CHECK_THROWS_AS(early_fuse({a, system_of({"a", "z"}, 512, gen)}, FusionMode::concat), Error);
    CHECK_THROWS_AS(early_fuse({a, system_of({"a"}, 512, gen)}, FusionMode::concat), Error);
}

TEST_CASE("fusion mode names") {
    for (auto m : {FusionMode::concat, FusionMode::mean, FusionMode::vote}) CHECK(parse_fusion_mode(fusion_mode_name(m)) == m);
    CHECK_THROWS_AS(parse_fusion_mode("median"), Error);
}

TEST_CASE("prediction files round trip") {
    testing::TempDir dir("fusion");
    const std::vector<Prediction> p{{"clip_01", 2}, {"clip_00", 0}, {"x", 1}};
    save_predictions(dir / "p.csv", p);
    CHECK(testing::slurp(dir / "p.csv") == "id,label\nclip_01,2\nclip_00,0\nx,1\n");
    CHECK(load_predictions(dir / "p.csv") == p);
    testing::write_text(dir / "bad.csv", "utt,label\na,1\n");
    CHECK_THROWS_AS(load_predictions(dir / "bad.csv"), FormatError);
    testing::write_text(dir / "bad2.csv", "id,label\na,one\n");
    CHECK_THROWS_AS(load_predictions(dir / "bad2.csv"), FormatError);
    testing::write_text(dir / "dup.csv", "id,label\na,1\na,2\n");
    CHECK_THROWS_AS(load_predictions(dir / "dup.csv"), Error);
    CHECK_THROWS_AS(load_predictions(dir / "none.csv"), Error);
}
