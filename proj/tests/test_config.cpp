#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "flowsdf/config.hpp"
#include "flowsdf/errors.hpp"

using namespace flowsdf;

namespace fs = std::filesystem;

namespace {

std::string write_cfg(const std::string& name, const std::string& content) {
    const fs::path p = fs::temp_directory_path() / name;
    std::ofstream out(p);
    out << content;
    return p.string();
}

}  // namespace

TEST_CASE("defaults mirror the documented values") {
    const RunConfig cfg;
    CHECK(cfg.get_double("train.lr") == doctest::Approx(1e-4));
    CHECK(cfg.get_int("train.batch") == 16);
    CHECK(cfg.get_double("train.ema") == doctest::Approx(0.9999));
    CHECK(cfg.get_int("sampler.nfe") == 4);
    CHECK(cfg.get_int("sampler.noise_steps") == 1);
    CHECK(cfg.get("sampler.solver") == "euler");
    CHECK(cfg.get_double("sdf.delta") == doctest::Approx(5.0));
    CHECK_FALSE(cfg.was_set("train.lr"));
}

TEST_CASE("file parsing: comments, whitespace, overrides") {
    const std::string path = write_cfg("flowsdf_cfg1.cfg",
                                       "# a comment\n"
                                       "train.lr = 5e-4   # trailing comment\n"
                                       "\n"
                                       "  sampler.nfe=8\n");
    RunConfig cfg;
    cfg.load_file(path);
    CHECK(cfg.get_double("train.lr") == doctest::Approx(5e-4));
    CHECK(cfg.get_int("sampler.nfe") == 8);
    CHECK(cfg.was_set("train.lr"));

    cfg.set_kv("train.lr=2e-4");  // later assignment wins
    CHECK(cfg.get_double("train.lr") == doctest::Approx(2e-4));
}

TEST_CASE("unknown keys and invalid values are rejected") {
    RunConfig cfg;
    CHECK_THROWS_AS(cfg.set("totally.bogus", "1"), ConfigError);
    CHECK_THROWS_AS(cfg.set("train.batch", "many"), ConfigError);
    CHECK_THROWS_AS(cfg.set("sampler.use_ema", "maybe"), ConfigError);
    CHECK_THROWS_AS(cfg.set_kv("no-equals-sign"), ConfigError);

    const std::string path = write_cfg("flowsdf_cfg2.cfg", "mystery.key = 3\n");
    CHECK_THROWS_AS(cfg.load_file(path), ConfigError);
    CHECK_THROWS_AS(cfg.load_file("/nonexistent/path.cfg"), IoError);
}

TEST_CASE("serialized form reparses to the same state") {
    RunConfig cfg;
    cfg.set("train.epochs", "7");
    cfg.set("ablate.k_values", "1,4,16");
    const std::string text = cfg.serialized();

    const std::string path = write_cfg("flowsdf_cfg3.cfg", text);
    RunConfig back;
    back.load_file(path);
    CHECK(back.serialized() == text);
    const auto ks = back.get_int_list("ablate.k_values");
    REQUIRE(ks.size() == 3);
    CHECK(ks[0] == 1);
    CHECK(ks[1] == 4);
    CHECK(ks[2] == 16);
}

TEST_CASE("typed views validate their groups") {
    RunConfig cfg;
    CHECK_NOTHROW(cfg.train_config());
    CHECK_NOTHROW(cfg.sampler_config());
    CHECK_NOTHROW(cfg.model_descriptor());
    CHECK_NOTHROW(cfg.synthetic_config().validate());

    cfg.set("train.target", "both");
    CHECK_THROWS_AS(cfg.train_config(), ConfigError);
    cfg.set("train.target", "binary");
    CHECK(cfg.train_config().target == TrainConfig::Target::Binary);

    cfg.set("sampler.solver", "rk4");
    cfg.set("sampler.nfe", "6");
    CHECK_THROWS_AS(cfg.sampler_config(), std::invalid_argument);
    cfg.set("sampler.nfe", "8");
    CHECK(cfg.sampler_config().solver == Solver::Rk4);

    cfg.set("model.c1", "6");  // not a multiple of groups=4
    CHECK_THROWS_AS(cfg.model_descriptor(), std::invalid_argument);
}
