#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "bandtok/config.hpp"

using namespace bandtok;
using nlohmann::json;

TEST(Config, DefaultsAreTheReferenceSetup) {
    const RunConfig c;
    EXPECT_EQ(c.frontend.sample_rate_hz, 44100);
    EXPECT_EQ(c.frontend.n_fft, 2048);
    EXPECT_EQ(c.frontend.hop, 512);
    EXPECT_EQ(c.frontend.n_mels, 128);
    EXPECT_EQ(c.codebook.book.size, 8192u);
    EXPECT_EQ(c.codebook.book.decay, 0.99);
    EXPECT_EQ(c.loss.rec, 5.0);
    EXPECT_EQ(c.loss.perc, 1.0);
    EXPECT_EQ(c.loss.adv, 1.0);
    EXPECT_EQ(c.loss.fm, 5.0);
    EXPECT_EQ(c.loss.commit, 2.5);
    EXPECT_EQ(c.rope.mode, RopeMode::two_d);
    EXPECT_EQ(c.critic.scales.size(), 3u);
}

TEST(Config, SerializeParseRoundTrip) {
    RunConfig c;
    c.seed = 77;
    c.frontend.n_mels = 64;
    c.codebook.book.size = 32;
    c.rope.mode = RopeMode::one_d;
    c.sampler.top_k.reset();
    c.lm_train.adam.lr = 3e-3;
    c.codec.layers = {{8, 3, 4}};
    const RunConfig back = run_config_from_json(json::parse(serialize_run_config(c)));
    EXPECT_TRUE(back == c);
    EXPECT_FALSE(back.sampler.top_k.has_value());
    EXPECT_EQ(back.codec.layers.size(), 1u);
    EXPECT_TRUE(run_config_from_json(json::object()) == RunConfig{});
}

TEST(Config, PartialOverridesKeepDefaults) {
    const RunConfig c = run_config_from_json(json{{"lm", {{"d_model", 16}}}, {"sampler", {{"top_k", 5}}}});
    EXPECT_EQ(c.lm.d_model, 16u);
    EXPECT_EQ(c.lm.n_layers, 2u);
    EXPECT_EQ(*c.sampler.top_k, 5u);
}

TEST(Config, RejectsUnknownKeysAndWrongTypes) {
    EXPECT_THROW(run_config_from_json(json{{"bogus", 1}}), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"lm", {{"dmodel", 16}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"lm", {{"d_model", "big"}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"lm", {{"d_model", -4}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"rope", {{"mode", "3d"}}}}), ConfigError);
    EXPECT_THROW(run_config_from_json(json{{"frontend", {{"n_mels", 60}}}}), ConfigError);
    try {
        run_config_from_json(json{{"codebook", {{"sise", 4}}}});
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("codebook.sise"), std::string::npos);
    }
}

TEST(Config, LoadFromFile) {
    const auto path = std::filesystem::temp_directory_path() / "bandtok_test_config.json";
    {
        std::ofstream(path) << R"({"seed": 5, "lm": {"n_heads": 4}})";
    }
    const RunConfig c = load_run_config(path);
    EXPECT_EQ(c.seed, 5u);
    EXPECT_EQ(c.lm_config(16, 4).rope.head_dim, 8u);
    {
        std::ofstream(path) << "{not json";
    }
    EXPECT_THROW(load_run_config(path), ConfigError);
    std::filesystem::remove(path);
}

TEST(Config, DerivedModelConfigs) {
    RunConfig c;
    const MicroLmConfig m = c.lm_config(64, 16);
    EXPECT_EQ(m.vocab.total(), 66u);
    EXPECT_EQ(m.rope.d_time, 4u);
    c.rope.mode = RopeMode::one_d;
    EXPECT_EQ(c.lm_config(64, 16).rope.d_token, 16u);
    c.codebook.book.use_ema = false;
    EXPECT_TRUE(c.tokenizer_train_config().codebook_loss);
}
