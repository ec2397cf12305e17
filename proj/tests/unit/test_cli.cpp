#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "mvrisk/cli/commands.hpp"
#include "mvrisk/cli/config.hpp"

using namespace mvrisk;
using namespace mvrisk::cli;
namespace fs = std::filesystem;

namespace {

const fs::path kSmoke = fs::path(MVRISK_SOURCE_DIR) / "configs" / "smoke.json";

int run(std::vector<std::string> args) {
    args.insert(args.begin(), "mvrisk");
    std::vector<char*> argv;
    for (auto& a : args) argv.push_back(a.data());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path fresh_dir(const std::string& name) {
    auto d = fs::temp_directory_path() / name;
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("config round trip and validation") {
    auto cfg = load_config(kSmoke);
    CHECK(cfg.seed == 7);
    CHECK(cfg.model.encoders.height == 32);
    CHECK(cfg.synthetic.resolution == 32);
    CHECK(cfg.stage1.seed == 7);
    auto again = parse_config(to_json(cfg));
    CHECK(to_json(again) == to_json(cfg));
    CHECK(to_json(RunConfig{}) == to_json(parse_config(nlohmann::json::object())));

    auto j = to_json(cfg);
    j["fusion"]["latnet_dim"] = 4;
    try {
        parse_config(j);
        FAIL("unknown key accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("fusion.latnet_dim") != std::string::npos);
    }
    j = to_json(cfg);
    j["trainer"]["stage1"]["lr"] = "fast";
    try {
        parse_config(j);
        FAIL("wrong type accepted");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("trainer.stage1.lr") != std::string::npos);
    }
    j = to_json(cfg);
    j["encoders"]["height"] = 40;
    CHECK_THROWS_AS(parse_config(j), ConfigError);
}

TEST_CASE("output root environment variable") {
    RunConfig cfg;
    cfg.output_dir = "runs/x";
    ::setenv(kOutputRootEnv, "/tmp/root", 1);
    CHECK(cfg.resolved_output_dir() == fs::path("/tmp/root/runs/x"));
    cfg.output_dir = "/abs/y";
    CHECK(cfg.resolved_output_dir() == fs::path("/abs/y"));
    ::unsetenv(kOutputRootEnv);
    cfg.output_dir = "runs/x";
    CHECK(cfg.resolved_output_dir() == fs::path("runs/x"));
}

TEST_CASE("exit codes") {
    const auto dir = fresh_dir("mvrisk_cli_codes");
    fs::create_directories(dir);
    std::ofstream(dir / "bad.json") << R"({"seed": 1, "cohort": {"synthetic": {"n_patient": 3}}})";
    CHECK(run({"-c", (dir / "bad.json").string(), "generate"}) == kExitConfig);
    std::ofstream(dir / "broken.json") << "{ not json";
    CHECK(run({"-c", (dir / "broken.json").string(), "generate"}) == kExitConfig);
    CHECK(run({"-c", kSmoke.string(), "frobnicate"}) == kExitConfig);
    CHECK(run({"-c", kSmoke.string(), "-o", (dir / "out").string(), "train", "--stage", "2"}) == kExitMissing);
    CHECK(run({"-c", kSmoke.string(), "-o", (dir / "out").string(), "eval", "--checkpoint",
               (dir / "nothing.ckpt").string()}) == kExitMissing);
    CHECK(run({"-c", kSmoke.string(), "-o", (dir / "out").string(), "describe-cohort"}) == kExitMissing);
    fs::remove_all(dir);
}

TEST_CASE("smoke pipeline") {
    const auto dir = fresh_dir("mvrisk_cli_smoke");
    const auto out = dir.string();
    REQUIRE(run({"-c", kSmoke.string(), "-o", out, "generate"}) == kExitOk);
    {
        std::ifstream is(dir / "cohort" / "manifest.jsonl");
        std::size_t lines = 0;
        for (std::string l; std::getline(is, l);) ++lines;
        CHECK(lines == 80);
    }
    CHECK(fs::exists(dir / "resolved_config.json"));
    const auto manifest_bytes = slurp(dir / "cohort" / "manifest.jsonl");

    REQUIRE(run({"-c", kSmoke.string(), "-o", out, "train", "--stage", "1"}) == kExitOk);
    const auto s1 = (dir / "stage1" / "best.ckpt").string();
    CHECK(fs::exists(dir / "stage1" / "last.ckpt"));
    {
        std::ifstream is(dir / "stage1" / "history.csv");
        std::string header;
        std::getline(is, header);
        CHECK(header == "epoch,split,metric,value");
        std::size_t rows = 0;
        for (std::string l; std::getline(is, l);) ++rows;
        CHECK(rows == 2 * 3);  // train loss plus two validation metrics per epoch
    }
    REQUIRE(run({"-c", kSmoke.string(), "-o", out, "train", "--stage", "2", "--from-stage1", s1}) == kExitOk);
    const auto s2 = (dir / "stage2" / "best.ckpt").string();
    // a stage-2 checkpoint is not a stage-1 checkpoint
    CHECK(run({"-c", kSmoke.string(), "-o", out, "train", "--stage", "2", "--from-stage1", s2}) == kExitIncompatible);

    SUBCASE("baseline routing") {
        CHECK(run({"-c", kSmoke.string(), "-o", out, "eval", "--checkpoint", s1, "--subgroups"}) == kExitOk);
        CHECK(run({"-c", kSmoke.string(), "-o", out, "eval", "--checkpoint", s2, "--baseline", "hybrid_max"}) == kExitOk);
        CHECK(run({"-c", kSmoke.string(), "-o", out, "eval", "--checkpoint", s2}) == kExitOk);
        CHECK(fs::exists(dir / "eval" / "hybrid_max_test_internal" / "report.json"));
        CHECK(fs::exists(dir / "eval" / "bilateral_test_internal" / "report.csv"));
        CHECK(slurp(dir / "eval" / "hybrid_max_test_internal" / "scores.csv") !=
              slurp(dir / "eval" / "bilateral_test_internal" / "scores.csv"));
        CHECK(run({"-c", kSmoke.string(), "-o", out, "eval", "--checkpoint", s1, "--baseline", "bilateral"}) ==
              kExitIncompatible);
        CHECK(run({"-c", kSmoke.string(), "-o", out, "eval", "--checkpoint", s1, "--baseline", "local_only"}) ==
              kExitIncompatible);
        CHECK(run({"-c", kSmoke.string(), "-o", out, "eval", "--checkpoint", s1, "--baseline", "nope"}) == kExitConfig);
    }
    SUBCASE("checkpoint must match the configured model") {
        auto j = to_json(load_config(kSmoke));
        j["heads"]["breast"]["hidden"] = 8;
        std::ofstream(dir / "other.json") << j.dump();
        CHECK(run({"-c", (dir / "other.json").string(), "-o", out, "eval", "--checkpoint", s1}) == kExitIncompatible);
    }
    SUBCASE("reruns are byte-identical") {
        const auto s1_bytes = slurp(s1);
        const auto s2_bytes = slurp(s2);
        REQUIRE(run({"-c", kSmoke.string(), "-o", out, "eval", "--checkpoint", s2, "--subgroups"}) == kExitOk);
        const auto report = slurp(dir / "eval" / "bilateral_test_internal" / "report.json");
        REQUIRE(run({"-c", kSmoke.string(), "-o", out, "generate"}) == kExitOk);
        CHECK(slurp(dir / "cohort" / "manifest.jsonl") == manifest_bytes);
        REQUIRE(run({"-c", kSmoke.string(), "-o", out, "train", "--stage", "1"}) == kExitOk);
        REQUIRE(run({"-c", kSmoke.string(), "-o", out, "train", "--stage", "2", "--from-stage1", s1}) == kExitOk);
        CHECK(slurp(s1) == s1_bytes);
        CHECK(slurp(s2) == s2_bytes);
        REQUIRE(run({"-c", kSmoke.string(), "-o", out, "eval", "--checkpoint", s2, "--subgroups"}) == kExitOk);
        CHECK(slurp(dir / "eval" / "bilateral_test_internal" / "report.json") == report);
    }
    SUBCASE("seed override changes the cohort") {
        const auto other = (dir / "seeded").string();
        REQUIRE(run({"-c", kSmoke.string(), "-o", other, "--seed", "8", "generate"}) == kExitOk);
        CHECK(slurp(dir / "seeded" / "cohort" / "manifest.jsonl") != manifest_bytes);
        CHECK(load_config(dir / "seeded" / "resolved_config.json").seed == 8);
    }
    SUBCASE("describe and gradcheck") {
        CHECK(run({"-c", kSmoke.string(), "-o", out, "describe-cohort"}) == kExitOk);
        CHECK(fs::exists(dir / "cohort_description_test_internal.csv"));
        CHECK(run({"-c", kSmoke.string(), "-o", out, "gradcheck", "--params", "30"}) == kExitOk);
        auto g = nlohmann::json::parse(slurp(dir / "gradcheck.json"));
        CHECK(g["passed"] == true);
        CHECK(g["entries"].size() == 30);
    }
    SUBCASE("ablate") {
        CHECK(run({"-c", kSmoke.string(), "-o", out, "ablate"}) == kExitOk);
        std::ifstream is(dir / "ablation" / "ablation.csv");
        std::size_t lines = 0;
        for (std::string l; std::getline(is, l);) ++lines;
        CHECK(lines == 1 + 2 + 1 + 2);
    }
    fs::remove_all(dir);
}

TEST_CASE("desk config loads and plans the full ablation grid") {
    auto cfg = load_config(fs::path(MVRISK_SOURCE_DIR) / "configs" / "desk.json");
    CHECK(cfg.model.encoders.height == 128);
    CHECK(cfg.ablation_resolutions == std::vector<std::size_t>{64, 96, 128});
    CHECK(cfg.ablation_seeds.size() * cfg.ablation_resolutions.size() * 2 == 12);
}
