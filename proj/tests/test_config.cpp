#include <doctest.h>

#include <cstdlib>
#include <sstream>

#include "esk/config.hpp"
#include "esk/error.hpp"
#include "support.hpp"

using namespace esk;

namespace {

KeyValues parse(const std::string& text) {
    std::istringstream in(text);
    return parse_key_values(in, "t.cfg");
}

}  // namespace

TEST_CASE("key value parsing") {
    const auto kv = parse("# comment\n  a = 1  \nb=two words # trailing\n\nc =\n");
    CHECK(kv.size() == 3);
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two words");
    CHECK(kv.at("c") == "");
    try {
        parse("a = 1\nno equals here\n");
        FAIL("expected an error");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("t.cfg:2") != std::string::npos);
    }
    CHECK_THROWS_AS(parse(" = 3\n"), FormatError);
    CHECK_THROWS_AS(load_key_values("/nonexistent/x.cfg"), Error);
}

TEST_CASE("system tokens") {
    const auto s = parse_system("mfcc+pr+ls");
    CHECK(s.name == "mfcc+pr+ls");
    CHECK(s.kind == FeatureKind::mfcc);
    CHECK(s.pretrained);
    CHECK(s.label_smoothing);
    CHECK_FALSE(s.text);
    const auto t = parse_system("logfbank+te");
    CHECK(t.kind == FeatureKind::logfbank);
    CHECK_FALSE(t.pretrained);
    CHECK(t.text);
    CHECK_THROWS_AS(parse_system("mfcc+xx"), Error);
    CHECK_THROWS_AS(parse_system("chroma"), Error);
}

TEST_CASE("default experiment settings") {
    const auto c = ExperimentConfig::from_key_values({});
    CHECK(c.systems.size() == 1);
    CHECK(c.systems[0].name == "mfcc+pr");
    CHECK_FALSE(c.fusion.has_value());
    CHECK(c.embed_dim == 512);
    CHECK(c.net_preset == "resnet18");
    CHECK(c.text_dim == 768);
    CHECK(c.pretrain.momentum == 0.8);
    CHECK(c.finetune.max_epochs == 300);
    CHECK(c.svm.C == 1.0);
    CHECK(c.use_vad);
    CHECK(c.eval_split == Split::devel);
}

TEST_CASE("experiment config fields") {
    const auto c = ExperimentConfig::from_key_values(
        {{"manifest", "data/m.csv"},
         {"pretrain_manifest", "/abs/p.csv"},
         {"systems", "mfcc+pr, logfbank+pr+ls"},
         {"fusion", "vote"},
         {"eval_split", "test"},
         {"vad", "false"},
         {"features.n_mels", "40"},
         {"net.preset", "test"},
         {"net.embed_dim", "16"},
         {"pretrain.lr", "0.01"},
         {"finetune.batch_size", "8"},
         {"svm.C", "0.5"},
         {"svm.standardize", "true"},
         {"seed", "42"}},
        "/base");
    CHECK(c.manifest == std::filesystem::path("/base/data/m.csv"));
    CHECK(c.pretrain_manifest == std::filesystem::path("/abs/p.csv"));
    CHECK(c.systems.size() == 2);
    CHECK(c.systems[1].kind == FeatureKind::logfbank);
    CHECK(c.fusion == FusionMode::vote);
    CHECK(c.eval_split == Split::test);
    CHECK_FALSE(c.use_vad);
    CHECK(c.features.n_mels == 40);
    CHECK(c.pretrain.lr == 0.01);
    CHECK(c.finetune.batch_size == 8);
    CHECK(c.svm.standardize);
    CHECK(c.seed == 42);
    CHECK(feature_dim(c.features, FeatureKind::logfbank) == 40);
    CHECK(feature_dim(c.features, FeatureKind::mfcc) == 40);
    const auto n = make_net_config(c, 3, 40);
    CHECK(n.stage_channels == std::vector<int>{8, 16});
    CHECK(n.input_dim == 40);
    CHECK(n.n_classes == 3);
}

TEST_CASE("invalid configurations") {
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"learning_rate", "1"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"seed", "-1"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"svm.C", "abc"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"vad", "maybe"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"fusion", "vote"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"systems", "mfcc,mfcc"}, {"fusion", "vote"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"systems", "mfcc,mfcc+te"}, {"fusion", "mean"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"net.preset", "resnet50"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"net.label_smoothing", "1.0"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"vad.mode", "9"}}), Error);
    CHECK_THROWS_AS(ExperimentConfig::from_key_values({{"eval_split", "holdout"}}), Error);
    CHECK_NOTHROW(ExperimentConfig::from_key_values({{"systems", "mfcc,logfbank"}, {"fusion", "mean"}}));
}

TEST_CASE("canonical form and hash") {
    const KeyValues kv{{"systems", "mfcc+pr,logfbank"}, {"fusion", "concat"}, {"seed", "7"}, {"svm.C", "2"}};
    const auto a = ExperimentConfig::from_key_values(kv, "/x");
    const auto b = ExperimentConfig::from_key_values(a.to_key_values());
    CHECK(a.canonical_text() == b.canonical_text());
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);

    auto c = a;
    c.out_dir = "/somewhere/else";
    CHECK(c.hash() == a.hash());
    c.seed = 8;
    CHECK(c.hash() != a.hash());
    c = a;
    c.finetune.lr = 0.002;
    CHECK(c.hash() != a.hash());

    const std::string text = a.canonical_text();
    CHECK(text.find("seed = 7\n") != std::string::npos);
    CHECK(text.find("out_dir") == std::string::npos);
}

TEST_CASE("fnv-1a reference values") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
    CHECK(fnv1a64("foobar") == 0x85944171f73967e8ULL);
    CHECK(hex64(0xabcULL) == "0000000000000abc");
    testing::TempDir dir("cfg");
    testing::write_text(dir / "f", "foobar");
    CHECK(file_digest(dir / "f") == fnv1a64("foobar"));
}

TEST_CASE("config files and the seed override") {
    testing::TempDir dir("cfg");
    testing::write_text(dir / "e.cfg", "manifest = m.csv\nseed = 5\n");
    unsetenv("ESK_SEED");
    const auto plain = load_experiment_config(dir / "e.cfg");
    CHECK(plain.seed == 5);
    CHECK(plain.manifest == dir / "m.csv");
    setenv("ESK_SEED", "123", 1);
    const auto over = load_experiment_config(dir / "e.cfg");
    unsetenv("ESK_SEED");
    CHECK(over.seed == 123);
    CHECK(over.hash() != plain.hash());
}
