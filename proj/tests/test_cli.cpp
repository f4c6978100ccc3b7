#include "poisonopf/experiment.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <sys/wait.h>

namespace poisonopf {
namespace {

namespace fs = std::filesystem;
using testing::data_path;

struct CliRun {
    int code = -1;
    std::string output;
};

CliRun run(const std::string& args) {
    const std::string cmd = std::string(POISONOPF_CLI) + " " + args + " 2>&1";
    CliRun r;
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return r;
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.output.append(buf, n);
    const int status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("poisonopf_test_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Small 3-bus experiment so every command finishes in well under a second.
std::string tiny_config(const fs::path& dir, const std::string& extra = "") {
    const std::string path = (dir / "config.json").string();
    std::string text = R"({"case_path": ")" + data_path("cases/case3.m") + R"(", "samples": 12, "seed": 5,
      "proxies": {"penalty": {"epochs": 40, "hidden_width": 8},
                  "dc3": {"epochs": 40, "hidden_width": 8},
                  "loop-lc": {"epochs": 40, "hidden_width": 8}},
      "attack": {"surrogate_epochs": 40})" + extra + "}";
    write_file(path, text);
    return path;
}

TEST(Cli, CaseInfo) {
    const CliRun ok = run("case-info " + data_path("cases/case3.m"));
    EXPECT_EQ(ok.code, 0) << ok.output;
    EXPECT_NE(ok.output.find("oracle cost: 1.4\n"), std::string::npos) << ok.output;
    EXPECT_NE(ok.output.find("buses:       3"), std::string::npos);

    const CliRun big = run("case-info " + data_path("cases/case57.m"));
    EXPECT_EQ(big.code, 0);
    EXPECT_NE(big.output.find("buses:       57"), std::string::npos);
    EXPECT_NE(big.output.find("lines:       80"), std::string::npos);
    EXPECT_NE(big.output.find("generators:  7"), std::string::npos);

    const auto dir = fresh_dir("info");
    write_file((dir / "bad.m").string(), "mpc.baseMVA = 100;\nmpc.bus = [\n 1 3 0 0 0 0 1 1 0 230 1 1.1 0.9;\n 2 x;\n];\n");
    const CliRun bad = run("case-info " + (dir / "bad.m").string());
    EXPECT_EQ(bad.code, 2);
    EXPECT_NE(bad.output.find("line 4"), std::string::npos) << bad.output;
    EXPECT_EQ(run("case-info /nonexistent/case.m").code, 3);
    EXPECT_EQ(run("no-such-command").code, 2);
    fs::remove_all(dir);
}

TEST(Cli, ConfigErrorsAndMissingArtifacts) {
    const auto dir = fresh_dir("errors");
    const std::string cfg = tiny_config(dir);
    const std::string out = " --quiet --out " + (dir / "out").string();
    EXPECT_EQ(run("train --config " + cfg + out).code, 3);
    EXPECT_EQ(run("eval --config " + cfg + out).code, 3);
    EXPECT_EQ(run("pipeline --config " + cfg + " --bound 1.5" + out).code, 2);
    EXPECT_EQ(run("pipeline --method fancy --config " + cfg + out).code, 2);
    EXPECT_EQ(run("gen-data --samples 4" + out).code, 2);  // no case configured
    write_file((dir / "typo.json").string(), R"({"sampels": 4})");
    EXPECT_EQ(run("gen-data --config " + (dir / "typo.json").string() + out).code, 2);
    // a penalty weight that overflows the loss is a numerical failure
    const std::string huge = tiny_config(dir, R"(, "methods": ["penalty"])");
    ExperimentConfig c = load_config(huge);
    c.proxy(proxy::ProxyKind::penalty).penalty_weight = 1e308;
    write_file((dir / "overflow.json").string(), nlohmann::json(c).dump());
    const CliRun num = run("pipeline --config " + (dir / "overflow.json").string() + out);
    EXPECT_EQ(num.code, 4) << num.output;
    EXPECT_NE(num.output.find("stage train-clean-penalty"), std::string::npos) << num.output;
    fs::remove_all(dir);
}

TEST(Cli, StepwiseCommandsAndZeroBoundPoison) {
    const auto dir = fresh_dir("steps");
    const std::string cfg = tiny_config(dir);
    const std::string out = " --quiet --out " + (dir / "out").string();
    ASSERT_EQ(run("gen-data --config " + cfg + out).code, 0);
    ASSERT_TRUE(fs::exists(dir / "out/dataset_train.jsonl"));
    ASSERT_TRUE(fs::exists(dir / "out/gen-data.manifest.json"));

    const CliRun p = run("poison --bound 0 --config " + cfg + out);
    ASSERT_EQ(p.code, 0) << p.output;
    EXPECT_EQ(read_file((dir / "out/dataset_poisoned.jsonl").string()), read_file((dir / "out/dataset_train.jsonl").string()));
    EXPECT_TRUE(fs::exists(dir / "out/dataset_poisoned.jsonl.provenance.json"));

    ASSERT_EQ(run("train --method dc3 --config " + cfg + out).code, 0);
    EXPECT_TRUE(fs::exists(dir / "out/models/dc3.bin"));
    const CliRun e = run("eval --method dc3 --config " + cfg + out);
    ASSERT_EQ(e.code, 0) << e.output;
    const auto report = experiment::parse_report_csv(read_file((dir / "out/eval.csv").string()));
    ASSERT_EQ(report.rows.size(), 1u);
    EXPECT_EQ(report.rows[0].method, "dc3");
    fs::remove_all(dir);
}

TEST(Cli, PipelineIsByteReproducible) {
    const auto dir = fresh_dir("pipeline");
    const std::string cfg = tiny_config(dir);
    const std::string a = (dir / "a").string(), b = (dir / "b").string();
    const CliRun ra = run("pipeline --no-timing --threads 1 --quiet --config " + cfg + " --out " + a);
    ASSERT_EQ(ra.code, 0) << ra.output;
    ASSERT_EQ(run("pipeline --no-timing --threads 1 --quiet --config " + cfg + " --out " + b).code, 0);
    const auto report = experiment::parse_report_csv(read_file(a + "/report.csv"));
    EXPECT_EQ(report.rows.size(), 6u);
    for (const char* f : {"report.csv", "report_aux.csv", "dataset_poisoned.jsonl", "models/dc3_poisoned.bin"})
        EXPECT_EQ(read_file(a + "/" + f), read_file(b + "/" + f)) << f;
    // manifests differ only in the output directory they name
    auto manifest = [](const std::string& d) {
        auto m = nlohmann::json::parse(read_file(d + "/pipeline.manifest.json"));
        std::vector<std::string> hashes;
        for (const auto& [k, v] : m["output_hashes"].items()) hashes.push_back(v.get<std::string>());
        m["config"].erase("output_dir");
        return std::make_tuple(m["config"], m["inputs"], hashes);
    };
    EXPECT_EQ(manifest(a), manifest(b));
    fs::remove_all(dir);
}

TEST(Cli, SweepPlateausBeyondSaturation) {
    const auto dir = fresh_dir("sweep");
    const std::string cfg = tiny_config(dir, R"(, "sweep_fractions": [0, 1, 2])");
    const CliRun r = run("sweep --quiet --no-timing --config " + cfg + " --out " + (dir / "out").string());
    ASSERT_EQ(r.code, 0) << r.output;
    const std::string csv = read_file((dir / "out/sweep.csv").string());
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) rows.push_back(experiment::split_csv_line(line));
    ASSERT_EQ(rows.size(), 9u);
    for (std::size_t m = 0; m < 3; ++m) {
        const auto& at = rows[3 + m];
        const auto& beyond = rows[6 + m];
        EXPECT_EQ(at[1], beyond[1]);
        EXPECT_EQ(std::vector<std::string>(at.begin() + 2, at.end()), std::vector<std::string>(beyond.begin() + 2, beyond.end()));
    }
    EXPECT_TRUE(fs::exists(dir / "out/sweep.svg"));
    fs::remove_all(dir);
}

}  // namespace
}  // namespace poisonopf
