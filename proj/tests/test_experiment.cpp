#include "poisonopf/experiment.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <filesystem>

namespace poisonopf {
namespace {

using experiment::Dataset;
using testing::case3;
using testing::data_path;
using testing::load_case;

std::filesystem::path scratch_dir(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / ("poisonopf_test_experiment_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

ExperimentConfig tiny_config(const std::string& case_name = "case3") {
    ExperimentConfig c;
    c.case_path = data_path("cases/" + case_name + ".m");
    c.samples = 16;
    c.seed = 3;
    for (auto k : proxy::kAllKinds) {
        c.proxy(k).epochs = 60;
        c.proxy(k).hidden_width = 8;
        c.proxy(k).learning_rate = 3e-3;
    }
    c.attack.surrogate_epochs = 60;
    c.timing = false;
    return c;
}

TEST(Dataset, UnitRangeGivesNominalLoads) {
    const opf::DispatchModel model(load_case("case14"));
    const Dataset ds = experiment::generate_dataset(model, 5, {1.0, 1.0}, 4);
    ASSERT_EQ(ds.size(), 5);
    for (const auto& s : ds.samples) EXPECT_TRUE(bitwise_equal(s.loads, model.network().nominal_loads()));
    EXPECT_NEAR(ds.samples[0].label_cost, 7642.593734910153, 1e-5 * 7642.593734910153);
}

TEST(Dataset, LabelsAreOracleFeasibleAndDeterministic) {
    const opf::DispatchModel model(load_case("case14"));
    const Dataset a = experiment::generate_dataset(model, 20, {0.8, 1.2}, 9);
    const Dataset b = experiment::generate_dataset(model, 20, {0.8, 1.2}, 9, 3);
    EXPECT_TRUE(experiment::bitwise_equal(a, b));
    const Vector nominal = model.network().nominal_loads();
    for (const auto& s : a.samples) {
        EXPECT_EQ(opf::project_dispatch(model, s.loads, s.label_generation).distance, 0.0);
        EXPECT_NEAR(s.label_cost, model.network().total_cost(s.label_generation), 1e-9 * s.label_cost);
        EXPECT_TRUE(bitwise_equal(s.label_reduced, model.reduced_from_generation(s.label_generation)));
        for (Eigen::Index k = 0; k < nominal.size(); ++k) {
            EXPECT_GE(s.loads[k], 0.8 * nominal[k]);
            EXPECT_LE(s.loads[k], 1.2 * nominal[k]);
        }
    }
    const Dataset c = experiment::generate_dataset(model, 20, {0.8, 1.2}, 10);
    EXPECT_FALSE(bitwise_equal(a.samples[0].loads, c.samples[0].loads));
}

TEST(Dataset, RejectionCapAborts) {
    // 3-bus capacity is 160 MW against a 100 MW nominal load
    const opf::DispatchModel model(case3());
    EXPECT_THROW(experiment::generate_dataset(model, 3, {1.7, 2.0}, 1), ValidationError);
    // a range straddling capacity succeeds by rejecting the infeasible draws
    const Dataset ds = experiment::generate_dataset(model, 10, {1.0, 2.0}, 1);
    for (const auto& s : ds.samples) EXPECT_LE(s.loads.sum(), 1.6);
}

TEST(Dataset, FileRoundTripIsBitwise) {
    const opf::DispatchModel model(load_case("case14"));
    const Dataset ds = experiment::generate_dataset(model, 6, {0.8, 1.2}, 2);
    const std::string text = experiment::serialize_dataset(ds);
    const Dataset back = experiment::parse_dataset(text, model);
    EXPECT_TRUE(experiment::bitwise_equal(ds, back));
    EXPECT_EQ(experiment::serialize_dataset(back), text);
    EXPECT_EQ(text.substr(0, text.find('\n')).find("\"count\":6") != std::string::npos, true);

    const opf::DispatchModel other(case3());
    EXPECT_THROW(experiment::parse_dataset(text, other), ValidationError);
    const std::string truncated = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
    EXPECT_THROW(experiment::parse_dataset(truncated, model), ParseError);
    std::string broken = text;
    broken.insert(text.find('\n') + 1, "{oops\n");
    try {
        experiment::parse_dataset(broken, model);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2);
    }
    EXPECT_THROW(experiment::load_dataset("/nonexistent/data.jsonl", model), IoError);
}

TEST(Metrics, WorkedExamples) {
    const grid::Network net = case3();
    const opf::DispatchModel model(net);
    const Dataset ds = experiment::generate_dataset(model, 1, {1.0, 1.0}, 1);
    ASSERT_NEAR(ds.samples[0].label_cost, 1.4, 1e-6);

    const std::vector<Vector> labels{ds.samples[0].label_generation};
    EXPECT_EQ(experiment::optimality_gap(net, labels, ds), 0.0);
    EXPECT_EQ(experiment::feasibility_gap(model, labels, ds).mean_pu, 0.0);

    // 0.6 pu at 1/MWh-unit + 0.47 pu at 2 = 1.54 against 1.4
    Dataset exact = ds;
    exact.samples[0].label_cost = 1.4;
    const std::vector<Vector> costly{(Vector(2) << 0.6, 0.47).finished()};
    EXPECT_NEAR(experiment::optimality_gap(net, costly, exact), 0.1, 1e-12);

    const std::vector<Vector> off{(Vector(2) << 0.8, 0.4).finished()};
    const auto gap = experiment::feasibility_gap(model, off, ds);
    EXPECT_NEAR(gap.mean_pu, 0.2, 1e-7);
    EXPECT_NEAR(gap.mean_mw, 20.0, 1e-5);
    EXPECT_EQ(gap.mean_mw, gap.mean_pu * 100.0);

    Dataset zero = ds;
    zero.samples[0].label_cost = 0.0;
    EXPECT_THROW(experiment::optimality_gap(net, labels, zero), ValidationError);
    EXPECT_THROW(experiment::optimality_gap(net, {}, ds), DimensionError);
}

TEST(Report, CsvRoundTrip) {
    experiment::Report r;
    for (const char* m : {"penalty", "dc3", "loop-lc"})
        for (const char* c : {"clean", "poisoned"}) r.rows.push_back({m, c, 0.1 / 3, 1e-300, 12345.678, 0.0, 1.0 / 7});
    const std::string text = experiment::report_csv(r);
    EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
    EXPECT_EQ(text.substr(0, text.find('\n')), "method,condition,opt_gap,feas_gap_pu,feas_gap_mw,infer_s,train_s");
    const auto back = experiment::parse_report_csv(text);
    EXPECT_EQ(back.rows, r.rows);
    EXPECT_THROW(experiment::parse_report_csv("nope\n"), ParseError);
    EXPECT_THROW(experiment::parse_report_csv(std::string(experiment::kReportHeader) + "\na,b,1,2\n"), ParseError);
}

TEST(Report, EmptySweepIsRejected) {
    experiment::SweepResult s;
    EXPECT_THROW(experiment::sweep_csv(s), ValidationError);
    EXPECT_THROW(experiment::sweep_svg(s), ValidationError);
}

TEST(Report, SvgHasOnePanelPerMethodAndMetric) {
    experiment::SweepResult s;
    s.deltas = {0.0, 0.5, 1.0};
    s.saturation_threshold = 0.5;
    s.methods = {"penalty", "dc3", "loop-lc"};
    s.opt_gap = s.feas_gap_pu = s.feas_gap_mw = {{0.1, 0.2, 0.2}, {0.1, 0.3, 0.3}, {0.0, 0.0, 0.0}};
    s.baseline_opt_gap = s.baseline_feas_gap_pu = {0.1, 0.1, 0.0};
    const std::string svg = experiment::sweep_svg(s);
    std::size_t panels = 0;
    for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++panels;
    EXPECT_EQ(panels, 6u);
    EXPECT_EQ(svg.find("href"), std::string::npos);  // no external assets
    EXPECT_NE(svg.find("stroke=\"red\""), std::string::npos);
    const std::string csv = experiment::sweep_csv(s);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
}

TEST(Config, JsonRoundTripAndOverrides) {
    ExperimentConfig c = tiny_config();
    c.angle_limit_deg = 30.0;
    c.methods = {proxy::ProxyKind::dc3};
    const nlohmann::json j = c;
    const auto back = j.get<ExperimentConfig>();
    EXPECT_EQ(nlohmann::json(back), j);
    EXPECT_EQ(config_hash(back), config_hash(c));

    ExperimentConfig m;
    merge_config(m, {{"proxies", {{"dc3", {{"epochs", 7}}}}}, {"attack", {{"bound", 0.5}}}});
    EXPECT_EQ(m.proxy(proxy::ProxyKind::dc3).epochs, 7);
    EXPECT_EQ(m.proxy(proxy::ProxyKind::dc3).correction_steps, 10);
    EXPECT_EQ(m.proxy(proxy::ProxyKind::penalty).epochs, proxy::ProxyConfig{}.epochs);
    EXPECT_EQ(m.attack.bound, 0.5);
    EXPECT_THROW(merge_config(m, {{"sampels", 3}}), ValidationError);
    EXPECT_THROW(merge_config(m, {{"samples", "many"}}), ValidationError);
    EXPECT_THROW((nlohmann::json{{"seed", 5}, {"test_seed", 5}}.get<ExperimentConfig>()), ValidationError);
    EXPECT_THROW((nlohmann::json{{"sweep_deltas", {0.2, 0.1}}}.get<ExperimentConfig>()), ValidationError);
    EXPECT_EQ(ExperimentConfig{}.effective_test_samples(), 50);
}

TEST(Config, NetworkLoadingAndAngleLimits) {
    ExperimentConfig c;
    EXPECT_THROW(c.network(), ValidationError);
    c.case_path = data_path("cases/case3.json");
    EXPECT_EQ(c.network().bus_count(), 3u);
    c.case_path = data_path("cases/case3.m");
    c.angle_limit_deg = 10.0;
    const auto net = c.network();
    EXPECT_NEAR(net.buses[1].angle_max, 10.0 * std::numbers::pi / 180.0, 1e-15);
    c.case_path = "/nonexistent/case.m";
    EXPECT_THROW(c.network(), IoError);
    EXPECT_THROW(resolve_case_format("grid.raw", "auto"), ValidationError);
    EXPECT_EQ(resolve_case_format("grid.raw", "native"), "native");
}

TEST(Pipeline, ThreeBusSmokeRun) {
    const auto dir = scratch_dir("pipeline");
    const ExperimentConfig c = tiny_config();
    const auto res = experiment::run_pipeline(c, dir.string());
    ASSERT_EQ(res.report.rows.size(), 6u);
    ASSERT_EQ(res.report.aux.size(), 6u);
    EXPECT_EQ(res.test.size(), 4);
    for (const auto& row : res.report.rows) {
        EXPECT_TRUE(std::isfinite(row.opt_gap));
        EXPECT_GE(row.feas_gap_pu, 0.0);
        EXPECT_EQ(row.infer_s, 0.0);
        EXPECT_EQ(row.train_s, 0.0);
    }
    EXPECT_LE(res.report.row("loop-lc", "clean").feas_gap_pu, 1e-9);
    EXPECT_LE(res.report.row("loop-lc", "poisoned").feas_gap_pu, 1e-9);
    for (const auto& a : res.report.aux)
        if (a.method == "loop-lc") EXPECT_LE(a.max_feas_gap_pu, 1e-9);
    // held-out discipline
    for (const auto& t : res.test.samples)
        for (const auto& s : res.train.samples) EXPECT_FALSE(bitwise_equal(t.loads, s.loads));
    // labels survive poisoning
    for (Eigen::Index j = 0; j < res.train.size(); ++j) {
        const auto k = static_cast<std::size_t>(j);
        EXPECT_TRUE(bitwise_equal(res.train.samples[k].label_generation, res.poisoned.samples[k].label_generation));
    }
    EXPECT_LE(res.diagnostics.max_relative_perturbation, c.attack.bound * (1 + 1e-12));

    for (const char* f : {"report.csv", "report_aux.csv", "dataset_train.jsonl", "dataset_test.jsonl",
                          "dataset_poisoned.jsonl", "dataset_poisoned.jsonl.provenance.json", "surrogate.bin",
                          "models/penalty_clean.bin", "models/loop-lc_poisoned.bin.json"})
        EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
    EXPECT_EQ(experiment::parse_report_csv(read_file((dir / "report.csv").string())).rows, res.report.rows);

    const opf::DispatchModel model(c.network());
    const auto reloaded = experiment::load_dataset((dir / "dataset_poisoned.jsonl").string(), model);
    EXPECT_TRUE(experiment::bitwise_equal(reloaded, res.poisoned));
    std::filesystem::remove_all(dir);
}

TEST(Pipeline, IdenticalConfigsGiveIdenticalReports) {
    const ExperimentConfig c = tiny_config();
    const auto a = experiment::run_pipeline(c);
    const auto b = experiment::run_pipeline(c);
    EXPECT_EQ(experiment::report_csv(a.report), experiment::report_csv(b.report));
    EXPECT_EQ(experiment::aux_csv(a.report), experiment::aux_csv(b.report));
}

TEST(Pipeline, StageFailuresNameTheStage) {
    ExperimentConfig c = tiny_config();
    c.scaling_range = {1.7, 2.0};
    try {
        experiment::run_pipeline(c);
        FAIL() << "expected StageError";
    } catch (const experiment::StageError& e) {
        EXPECT_EQ(e.stage(), "gen-data");
        EXPECT_THROW(std::rethrow_exception(e.cause()), ValidationError);
    }
}

TEST(Sweep, ZeroDeltaMatchesBaselineAndSaturationPlateaus) {
    ExperimentConfig c = tiny_config();
    c.sweep_fractions = {0.0, 0.5, 1.0, 2.0};
    const auto s = experiment::sweep_perturbation(c);
    ASSERT_EQ(s.deltas.size(), 4u);
    EXPECT_EQ(s.deltas[0], 0.0);
    EXPECT_EQ(s.deltas[2], s.saturation_threshold);
    for (std::size_t m = 0; m < s.methods.size(); ++m) {
        EXPECT_EQ(s.opt_gap[m][0], s.baseline_opt_gap[m]) << s.methods[m];
        EXPECT_EQ(s.feas_gap_pu[m][0], s.baseline_feas_gap_pu[m]) << s.methods[m];
        EXPECT_EQ(s.opt_gap[m][2], s.opt_gap[m][3]) << s.methods[m];
        EXPECT_EQ(s.feas_gap_pu[m][2], s.feas_gap_pu[m][3]) << s.methods[m];
    }

    c.attack.iterations = 2;
    EXPECT_THROW(experiment::sweep_perturbation(c), ValidationError);
}

}  // namespace
}  // namespace poisonopf
