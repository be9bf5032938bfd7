#include "mvflow/runner.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace mvflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("mvflow_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path write_config(const fs::path& dir, const json& j) {
    const fs::path p = dir / "config.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

json small_zero_config() {
    return json::parse(R"({
        "family": {"name": "custom", "key": "zero"},
        "n_steps": 40,
        "grid": {"lo": [-1.0], "hi": [1.0], "points": [9]},
        "replicas": 4,
        "output_every": 5
    })");
}

int run_command(const std::string& cmd, const fs::path& config, const fs::path& out, int threads = 1) {
    run::RunOptions o;
    o.command = cmd;
    o.config_path = config.string();
    o.out = out.string();
    o.threads = threads;
    std::ostringstream log;
    return run::run(o, log);
}

std::string expect_config_error(const json& j) {
    try {
        parse_config(j);
    } catch (const ConfigError& e) {
        return e.what();
    }
    ADD_FAILURE() << "no ConfigError for " << j.dump();
    return {};
}

}  // namespace

TEST(Config, DefaultsAreValid) {
    const auto c = parse_config(json::object());
    EXPECT_EQ(c.family.name, "centered");
    EXPECT_EQ(c.n_steps, 1000);
    EXPECT_EQ(c.spatial_grid().size(), 101u);
}

TEST(Config, ErrorsCarryFieldPaths) {
    EXPECT_NE(expect_config_error(json::parse(R"({"n_steps": 0})")).find("n_steps"), std::string::npos);
    EXPECT_NE(expect_config_error(json::parse(R"({"grid": {"lo": [0.0], "hi": [0.0], "points": [5]}})")).find("grid.hi[0]"),
              std::string::npos);
    EXPECT_NE(expect_config_error(json::parse(R"({"m_ladder": [2.0, 2.0]})")).find("m_ladder[1]"), std::string::npos);
    EXPECT_NE(expect_config_error(json::parse(R"({"family": {"name": "centered", "colour": 1}})")).find("family.colour"),
              std::string::npos);
    EXPECT_NE(expect_config_error(json::parse(R"({"replicas": "many"})")).find("replicas"), std::string::npos);
    EXPECT_NE(expect_config_error(json::parse(R"({"converge": {"levels": 2}})")).find("converge.levels"), std::string::npos);
    EXPECT_NE(expect_config_error(json::parse(R"({"family": {"name": "custom", "key": "nope"}})")).find("family.key"),
              std::string::npos);
}

TEST(Config, RoundTripsThroughJson) {
    const auto c = parse_config(small_zero_config());
    const auto again = parse_config(to_json(c));
    EXPECT_EQ(to_json(again).dump(), to_json(c).dump());
}

TEST(Config, FamilyDimensionMustMatchGrid) {
    auto j = small_zero_config();
    j["grid"] = json::parse(R"({"lo": [0.0, 0.0], "hi": [1.0, 1.0], "points": [3, 3]})");
    j["family"] = json::parse(R"({"name": "custom", "key": "geometric"})");
    EXPECT_THROW(build_family(parse_config(j)), ConfigError);
}

TEST(Sha256, KnownDigests) {
    EXPECT_EQ(run::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(run::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Table, RejectsRaggedRows) {
    run::Table t({"a", "b"});
    t.row(1, 2.5);
    EXPECT_EQ(t.str(), "a\tb\n1\t2.5\n");
    EXPECT_THROW(t.row(1), std::logic_error);
}

TEST(Run, SimulateOnZeroCoefficientsIsConstant) {
    const auto dir = scratch("simulate_zero");
    const auto cfg = write_config(dir, small_zero_config());
    ASSERT_EQ(run_command("simulate", cfg, dir / "out"), run::kExitOk);
    std::ifstream in(dir / "out" / "timeseries.tsv");
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line.rfind("point\tx0\tknot\tt\tphi0\tJ00\tV00", 0), 0u);
    while (std::getline(in, line)) {
        std::istringstream s(line);
        std::string point, x0, knot, t, phi, j, v;
        s >> point >> x0 >> knot >> t >> phi >> j >> v;
        EXPECT_EQ(phi, x0);
        EXPECT_EQ(j, "1");
        EXPECT_EQ(v, "1");
    }
    const auto manifest = json::parse(slurp(dir / "out" / "manifest.json"));
    EXPECT_EQ(manifest["status"], "ok");
    for (const auto& [k, v] : manifest["error_counts"].items()) EXPECT_EQ(v.get<long>(), 0) << k;
}

TEST(Run, ManifestDigestsMatchFiles) {
    const auto dir = scratch("manifest");
    const auto cfg = write_config(dir, small_zero_config());
    ASSERT_EQ(run_command("domain", cfg, dir / "out"), run::kExitOk);
    const auto manifest = json::parse(slurp(dir / "out" / "manifest.json"));
    ASSERT_GE(manifest["files"].size(), 8u);
    for (const auto& f : manifest["files"]) {
        const std::string content = slurp(dir / "out" / f["name"].get<std::string>());
        EXPECT_EQ(f["sha256"].get<std::string>(), run::sha256_hex(content));
        EXPECT_EQ(f["bytes"].get<std::size_t>(), content.size());
    }
    EXPECT_EQ(manifest["command"], "domain");
    EXPECT_EQ(manifest["config"]["grid"]["points"][0], 9);
}

TEST(Run, OutputsAreThreadIndependent) {
    const auto dir = scratch("threads");
    auto j = small_zero_config();
    j["family"] = json::parse(R"({"name": "custom", "key": "mf_sine"})");
    const auto cfg = write_config(dir, j);
    for (const char* cmd : {"simulate", "invert", "converge"}) {
        ASSERT_EQ(run_command(cmd, cfg, dir / "a", 1), run::kExitOk);
        ASSERT_EQ(run_command(cmd, cfg, dir / "b", 3), run::kExitOk);
        for (const auto& entry : fs::directory_iterator(dir / "a")) {
            if (entry.path().filename() == "manifest.json") continue;
            EXPECT_EQ(slurp(entry.path()), slurp(dir / "b" / entry.path().filename())) << cmd << " " << entry.path();
        }
    }
}

TEST(Run, ValidationErrorsExitOne) {
    const auto dir = scratch("validation");
    auto j = small_zero_config();
    j["n_steps"] = -3;
    EXPECT_EQ(run_command("simulate", write_config(dir, j), dir / "out"), run::kExitValidation);
    EXPECT_EQ(run_command("no-such-command", write_config(dir, small_zero_config()), dir / "out"), run::kExitValidation);
    EXPECT_EQ(run_command("oracle-check", write_config(dir, small_zero_config()), dir / "out2"), run::kExitValidation);
    const auto manifest = json::parse(slurp(dir / "out2" / "manifest.json"));
    EXPECT_EQ(manifest["status"], "validation_error");
    EXPECT_NE(manifest["message"].get<std::string>().find("family.name"), std::string::npos);
}

TEST(Run, NumericalFailureExitsTwoWithManifest) {
    const auto dir = scratch("numerical");
    auto j = small_zero_config();
    j["family"] = json::parse(R"({"name": "moment_linear", "A": [[1e200]], "C": [[0.0]]})");
    j["n_steps"] = 10;
    ASSERT_EQ(run_command("simulate", write_config(dir, j), dir / "out"), run::kExitNumerical);
    const auto manifest = json::parse(slurp(dir / "out" / "manifest.json"));
    EXPECT_EQ(manifest["status"], "numerical_failure");
}

TEST(Cli, ExitCodesThroughTheBinary) {
    const auto dir = scratch("binary");
    const auto cfg = write_config(dir, small_zero_config());
    const std::string bin = MVFLOW_CLI_PATH;
    const auto status = [](const std::string& cmd) {
        const int raw = std::system((cmd + " 2>/dev/null").c_str());
        return WEXITSTATUS(raw);
    };
    EXPECT_EQ(status(bin + " w2-check --config " + cfg.string() + " --out " + (dir / "ok").string() + " --seed 5 --threads 2"), 0);
    EXPECT_EQ(json::parse(slurp(dir / "ok" / "manifest.json"))["seed"], 5);
    EXPECT_EQ(status(bin + " simulate --config " + (dir / "missing.json").string()), 1);
    EXPECT_EQ(status(bin + " simulate --threads 0 --config " + cfg.string()), 1);
    EXPECT_EQ(status(bin), 1);
}
