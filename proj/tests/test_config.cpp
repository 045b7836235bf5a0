#include <gtest/gtest.h>

#include <string>

#include "orthofactor/config.hpp"

using namespace orthofactor;

namespace {

int error_line(const std::string& text, std::string* key = nullptr) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        if (key) *key = e.key();
        return e.line();
    }
    return -1;
}

}  // namespace

TEST(Config, MinimalFitUsesDefaults) {
    const RunConfig c = parse_config_text(R"({"command": "fit", "data_path": "y.csv"})");
    EXPECT_EQ(c.command, Command::fit);
    EXPECT_EQ(c.model, ModelKind::spsl_orthonormal);
    EXPECT_EQ(c.K, 8);
    EXPECT_FALSE(c.adaptive_K);
    EXPECT_EQ(c.sweeps, 3000);
    EXPECT_EQ(c.burn_in, 500);
    EXPECT_EQ(c.thin, 1);
    EXPECT_EQ(c.chains, 1);
    EXPECT_DOUBLE_EQ(c.prior.lambda0, 20.0);
    EXPECT_DOUBLE_EQ(c.prior.lambda1, 0.001);
    EXPECT_FALSE(c.alpha.has_value());
    EXPECT_DOUBLE_EQ(c.resolved_prior(1956).alpha, 1.0 / 1956.0);
    EXPECT_TRUE(c.ladder);
    EXPECT_EQ(c.schedule.lambda0_sequence, (std::vector<double>{12.0, 15.0, 20.0, 30.0, 40.0}));
    EXPECT_EQ(c.em.expansion, Expansion::scale);
}

TEST(Config, UnknownKeyNamesKeyAndLine) {
    std::string key;
    EXPECT_EQ(error_line("{\n  \"command\": \"fit\",\n  \"data_path\": \"y.csv\",\n  \"lamda0\": 20\n}", &key), 4);
    EXPECT_EQ(key, "lamda0");
}

TEST(Config, BadValueNamesKeyAndLine) {
    std::string key;
    EXPECT_EQ(error_line("{\n\"command\": \"simulate\",\n\"sweeps\": 100,\n\"burn_in\": 100\n}", &key), 4);
    EXPECT_EQ(key, "burn_in");
    EXPECT_EQ(error_line("{\"command\": \"simulate\",\n\"lambda1\": -1}", &key), 2);
    EXPECT_EQ(key, "lambda1");
    EXPECT_EQ(error_line("{\"command\": \"simulate\",\n\n\"model\": \"pca\"}", &key), 3);
    EXPECT_EQ(key, "model");
    EXPECT_EQ(error_line("{\"command\": \"simulate\", \"lambda0\": 0.5, \"lambda1\": 1.0}", &key), 1);
    EXPECT_EQ(key, "lambda1");
}

TEST(Config, MalformedJsonReportsLine) {
    try {
        parse_config_text("{\n\"command\": \"fit\",\n\"sweeps\": ,\n}");
        FAIL() << "expected a validation error";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config_text("[1, 2]"), ValidationError);
}

TEST(Config, FitNeedsDataPath) {
    std::string key;
    error_line(R"({"command": "fit"})", &key);
    EXPECT_EQ(key, "data_path");
    EXPECT_THROW(parse_config_text("{}"), ConfigError);
}

TEST(Config, AdaptiveKOnlyForSpikeAndSlabModels) {
    const RunConfig c =
        parse_config_text(R"({"command": "fit", "data_path": "y", "K": "adaptive", "K_init": 4, "model": "spsl_orthonormal"})");
    EXPECT_TRUE(c.adaptive_K);
    EXPECT_EQ(c.K, 4);
    std::string key;
    error_line(R"({"command": "fit", "data_path": "y", "K": "adaptive", "model": "gd_normal"})", &key);
    EXPECT_EQ(key, "K");
    error_line(R"({"command": "fit", "data_path": "y", "K": 5, "K_init": 4})", &key);
    EXPECT_EQ(key, "K_init");
}

TEST(Config, CommandLineOverridesWin) {
    ConfigOverrides ov;
    ov.command = Command::simulate;
    ov.seed = 99;
    ov.output_dir = "elsewhere";
    const RunConfig c = parse_config_text(R"({"seed": 3, "output_dir": "here"})", ov);
    EXPECT_EQ(c.command, Command::simulate);
    EXPECT_EQ(c.seed, 99u);
    EXPECT_EQ(c.synthetic.seed, 99u);
    EXPECT_EQ(c.output_dir, "elsewhere");
    ov.command = Command::fit;
    EXPECT_THROW(parse_config_text(R"({"command": "simulate"})", ov), ConfigError);
}

TEST(Config, TracedEntriesAreOneBased) {
    const RunConfig c = parse_config_text(R"({"command": "fit", "data_path": "y", "traced_entries": [[1, 1], [10, 3]]})");
    ASSERT_EQ(c.traced_entries.size(), 2u);
    EXPECT_EQ(c.traced_entries[1], (TracedEntry{9, 2}));
    EXPECT_EQ(c.traced_entries[1].name(), "beta_10_3");
    EXPECT_THROW(parse_config_text(R"({"command": "fit", "data_path": "y", "traced_entries": [[0, 1]]})"), ConfigError);
}

TEST(Config, SyntheticLayoutChecked) {
    std::string key;
    error_line(R"({"command": "simulate", "G": 100, "block_len": 50, "stride": 30})", &key);
    EXPECT_EQ(key, "block_len");
    const RunConfig c = parse_config_text(R"({"command": "simulate", "G": 489, "n": 25, "block_len": 125, "stride": 91})");
    EXPECT_EQ(c.synthetic.G, 489);
    EXPECT_EQ(c.synthetic.stride, 91);
}

TEST(Config, ResolvedConfigRoundTrips) {
    const RunConfig c = parse_config_text(R"({"command": "fit", "data_path": "y.csv", "model": "gd_orthonormal",
        "lambda0": 30, "alpha": 0.25, "K": 6, "sweeps": 400, "burn_in": 100, "thin": 2, "chains": 3, "seed": 17,
        "ladder_lambda0_sequence": [20, 40], "em_expansion": "cholesky", "traced_entries": [[2, 1]],
        "latitude_steps": 3, "random_scan": true})");
    const std::string dumped = resolved_config_json(c, 100).dump(2);
    const RunConfig d = parse_config_text(dumped);
    EXPECT_EQ(resolved_config_json(d, 100).dump(2), dumped);
    EXPECT_EQ(d.model, ModelKind::gd_orthonormal);
    EXPECT_EQ(d.chains, 3);
    EXPECT_EQ(d.em.expansion, Expansion::cholesky);
    EXPECT_DOUBLE_EQ(*d.alpha, 0.25);

    const RunConfig e = parse_config_text(R"({"command": "simulate"})");
    EXPECT_EQ(resolved_config_json(e)["alpha"], "1/G");
    EXPECT_FALSE(parse_config_text(resolved_config_json(e).dump()).alpha.has_value());
}
