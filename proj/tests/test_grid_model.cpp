#include "poisonopf/grid_model.hpp"
#include "poisonopf/matpower.hpp"
#include "poisonopf/native_case.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace poisonopf {
namespace {

using testing::case3;
using testing::load_case;
using testing::read_text;
using testing::reference_flows;

TEST(Matpower, ThreeBusUnitConversion) {
    const grid::Network net = case3();
    ASSERT_EQ(net.bus_count(), 3u);
    ASSERT_EQ(net.line_count(), 3u);
    ASSERT_EQ(net.generator_count(), 2u);
    EXPECT_EQ(net.slack_bus, 0u);
    EXPECT_DOUBLE_EQ(net.buses[2].nominal_load, 1.0);
    EXPECT_DOUBLE_EQ(net.generators[0].p_max, 0.6);
    EXPECT_DOUBLE_EQ(net.generators[0].cost_linear, 1.0);
    EXPECT_DOUBLE_EQ(net.generators[1].cost_linear, 2.0);
    ASSERT_TRUE(net.lines[0].flow_limit.has_value());
    EXPECT_DOUBLE_EQ(*net.lines[0].flow_limit, 1.0);
}

TEST(Matpower, Ieee57Counts) {
    const grid::Network net = load_case("case57");
    EXPECT_EQ(net.bus_count(), 57u);
    EXPECT_EQ(net.line_count(), 80u);
    EXPECT_EQ(net.generator_count(), 7u);
    EXPECT_NEAR(net.nominal_loads().sum(), 12.508, 1e-12);
}

TEST(Matpower, Ieee14Counts) {
    const grid::Network net = load_case("case14");
    EXPECT_EQ(net.bus_count(), 14u);
    EXPECT_EQ(net.line_count(), 20u);
    EXPECT_EQ(net.generator_count(), 5u);
}

TEST(Matpower, MissingBranchMatrix) {
    std::string text = read_text(testing::data_path("cases/case3.m"));
    const auto pos = text.find("mpc.branch");
    text.replace(pos, std::string("mpc.branch").size(), "mpc.other");
    try {
        grid::parse_matpower_case(text);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("missing matrix"), std::string::npos);
    }
}

TEST(Matpower, SyntaxErrorReportsLine) {
    const std::string text = "mpc.baseMVA = 100;\nmpc.bus = [1 3 0;\n2 1 x];\n";
    try {
        grid::parse_matpower_case(text);
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 3);
    }
    EXPECT_THROW(grid::parse_matpower_case("mpc.baseMVA 100;\n"), ParseError);
}

TEST(Matpower, RejectsBadReactanceAndSlackCount) {
    const std::string base = read_text(testing::data_path("cases/case3.m"));
    std::string zero_x = base;
    zero_x.replace(zero_x.find("1\t2\t0\t0.1"), 9, "1\t2\t0\t0.0");
    EXPECT_THROW(grid::parse_matpower_case(zero_x), ValidationError);

    std::string no_slack = base;
    no_slack.replace(no_slack.find("1\t3\t0\t0"), 7, "1\t2\t0\t0");
    EXPECT_THROW(grid::parse_matpower_case(no_slack), ValidationError);

    std::string two_slack = base;
    two_slack.replace(two_slack.find("2\t2\t0\t0"), 7, "2\t3\t0\t0");
    EXPECT_THROW(grid::parse_matpower_case(two_slack), ValidationError);
}

TEST(Matpower, DropsOutOfServiceElements) {
    std::string text = read_text(testing::data_path("cases/case3.m"));
    // take branch 2-3 out of service
    text.replace(text.find("2\t3\t0\t0.1\t0\t100\t100\t100\t0\t0\t1"), 31, "2\t3\t0\t0.1\t0\t100\t100\t100\t0\t0\t0");
    const grid::Network net = grid::parse_matpower_case(text);
    EXPECT_EQ(net.line_count(), 2u);
}

TEST(NativeCase, MinimalTwoBus) {
    const std::string doc = R"({"base_mva": 100,
        "buses": [{"id": 1, "load_mw": 0, "slack": true}, {"id": 2, "load_mw": 50}],
        "lines": [{"from": 1, "to": 2, "x_pu": 0.2}],
        "generators": [{"bus": 1, "pmin_mw": 0, "pmax_mw": 100, "cost": [0, 10, 0]}]})";
    const grid::Network net = grid::parse_native_case(doc);
    EXPECT_EQ(net.bus_count(), 2u);
    EXPECT_DOUBLE_EQ(net.buses[1].nominal_load, 0.5);
    EXPECT_FALSE(net.lines[0].flow_limit.has_value());
    EXPECT_DOUBLE_EQ(net.generators[0].cost_linear, 1000.0);
}

TEST(NativeCase, ZeroReactanceIsRejected) {
    const std::string doc = R"({"base_mva": 100,
        "buses": [{"id": 1, "load_mw": 0, "slack": true}, {"id": 2, "load_mw": 50}],
        "lines": [{"from": 1, "to": 2, "x_pu": 0}],
        "generators": [{"bus": 1, "pmin_mw": 0, "pmax_mw": 100, "cost": [0, 10, 0]}]})";
    EXPECT_THROW(grid::parse_native_case(doc), ValidationError);
}

TEST(NativeCase, SchemaErrorsCarryFieldPath) {
    const std::string doc = R"({"base_mva": 100,
        "buses": [{"id": 1, "load_mw": 0, "slack": true}, {"id": 2, "load_mw": "lots"}],
        "lines": [], "generators": []})";
    try {
        grid::parse_native_case(doc);
        FAIL() << "expected a schema error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("$.buses[1].load_mw"), std::string::npos) << e.what();
    }
}

TEST(NativeCase, MatchesEquivalentMatpowerCase) {
    const grid::Network a = case3();
    const grid::Network b = grid::parse_native_case(read_text(testing::data_path("cases/case3.json")));
    EXPECT_TRUE(grid::approx_equal(a, b, 0.0));
    EXPECT_EQ(grid::network_fingerprint(a), grid::network_fingerprint(b));
}

TEST(NativeCase, RoundTripEmbeddedCases) {
    for (const char* name : {"case3", "case14", "case57"}) {
        const grid::Network net = load_case(name);
        const grid::Network back = grid::parse_native_case(grid::serialize_native_case(net));
        EXPECT_TRUE(grid::approx_equal(net, back)) << name;
    }
}

TEST(NativeCase, RoundTripWithAngleLimits) {
    grid::Network net = case3();
    net.buses[1].angle_min = -30.0 * std::numbers::pi / 180.0;
    net.buses[1].angle_max = 30.0 * std::numbers::pi / 180.0;
    net.lines[2].flow_limit.reset();
    const grid::Network back = grid::parse_native_case(grid::serialize_native_case(net));
    EXPECT_TRUE(grid::approx_equal(net, back));
    EXPECT_FALSE(back.lines[2].flow_limit.has_value());
}

TEST(Susceptance, TriangleFlows) {
    const grid::Network net = case3();
    const auto factors = grid::susceptance_and_ptdf(net);
    const Vector p = (Vector(3) << 0.6, 0.4, -1.0).finished();
    const Vector f = grid::dc_flows(factors, p);
    EXPECT_NEAR(f[0], 1.0 / 15.0, 1e-12);
    EXPECT_NEAR(f[1], 8.0 / 15.0, 1e-12);
    EXPECT_NEAR(f[2], 7.0 / 15.0, 1e-12);
    EXPECT_NEAR(f[0], 0.0667, 1e-4);
    EXPECT_NEAR(f[1], 0.5333, 1e-4);
    EXPECT_NEAR(f[2], 0.4667, 1e-4);
    EXPECT_LE((f - reference_flows(net, p)).cwiseAbs().maxCoeff(), 1e-12);

    EXPECT_TRUE(grid::dc_flows(factors, Vector::Zero(3)).isZero(0.0));
    EXPECT_TRUE(factors.ptdf.col(0).isZero(0.0));
}

TEST(Susceptance, SingleLine) {
    grid::Network net;
    net.buses = {grid::Bus{1}, grid::Bus{2}};
    net.lines = {grid::Line{0, 1, 0.2, {}}};
    net.slack_bus = 0;
    const auto factors = grid::susceptance_and_ptdf(net);
    const Vector p = (Vector(2) << 1.0, -1.0).finished();
    EXPECT_NEAR(grid::dc_flows(factors, p)[0], 1.0, 1e-14);
    const Vector theta = factors.angles(p);
    EXPECT_NEAR(theta[1] - theta[0], -0.2, 1e-14);
}

TEST(Susceptance, DimensionMismatch) {
    const auto factors = grid::susceptance_and_ptdf(case3());
    EXPECT_THROW(grid::dc_flows(factors, Vector::Zero(2)), DimensionError);
}

TEST(Susceptance, DisconnectedNetworkIsRejected) {
    grid::Network net = case3();
    net.buses.push_back(grid::Bus{4});
    EXPECT_THROW(grid::validate(net), ValidationError);
}

TEST(Susceptance, PtdfMatchesAngleSolveOnRandomBalancedInjections) {
    Rng rng(11);
    for (const char* name : {"case3", "case14", "case57"}) {
        const grid::Network net = load_case(name);
        const auto factors = grid::susceptance_and_ptdf(net);
        const auto n = static_cast<Eigen::Index>(net.bus_count());
        for (int trial = 0; trial < 100; ++trial) {
            Vector p = random_vector(rng, n, -1.0, 1.0);
            p.array() -= p.mean();
            const Vector ptdf_path = grid::dc_flows(factors, p);
            EXPECT_LE((ptdf_path - reference_flows(net, p)).cwiseAbs().maxCoeff(), 1e-10) << name;
        }
    }
}

TEST(Susceptance, FlowsDependOnAngleDifferencesOnly) {
    const grid::Network net = load_case("case14");
    const auto factors = grid::susceptance_and_ptdf(net);
    Rng rng(5);
    Vector p = random_vector(rng, 14, -1.0, 1.0);
    p.array() -= p.mean();
    const Vector theta = factors.angles(p);
    const Vector shifted = theta.array() + 0.37;
    EXPECT_LE((grid::flows_from_angles(net, theta) - grid::flows_from_angles(net, shifted)).cwiseAbs().maxCoeff(), 1e-12);
}

}  // namespace
}  // namespace poisonopf
