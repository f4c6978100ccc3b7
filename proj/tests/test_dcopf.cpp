#include "poisonopf/dcopf.hpp"
#include "poisonopf/dispatch.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace poisonopf {
namespace {

using testing::case3;
using testing::load_case;

TEST(DcOpf, ThreeBusAssemblyShape) {
    const grid::Network net = case3();
    const auto p = opf::assemble_dcopf(net, net.nominal_loads());
    EXPECT_EQ(p.size(), 4);
    EXPECT_EQ(p.A_eq.rows(), 3);
    EXPECT_EQ(p.A_in.rows(), 10);
    EXPECT_EQ(p.variable_names[0], "pg0");
    EXPECT_EQ(p.variable_names[2], "va2");
}

TEST(DcOpf, ThreeBusOptimum) {
    const grid::Network net = case3();
    const auto d = opf::solve_dcopf(net, net.nominal_loads());
    EXPECT_NEAR(d.generation[0], 0.6, 1e-7);
    EXPECT_NEAR(d.generation[1], 0.4, 1e-7);
    EXPECT_NEAR(d.cost, 1.4, 1e-7);
    EXPECT_NEAR(d.angles[0], 0.0, 0.0);
    EXPECT_NEAR(d.flows[1], 8.0 / 15.0, 1e-7);
}

TEST(DcOpf, ThreeBusMatchesEnumeration) {
    const grid::Network net = case3();
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Vector loads = net.nominal_loads() * uniform(rng, 0.5, 1.5);
        const auto p = opf::assemble_dcopf(net, loads);
        const auto exact = qp::brute_force_qp(p);
        ASSERT_TRUE(exact.optimal());
        EXPECT_NEAR(opf::solve_dcopf(net, loads).cost, exact.objective, 1e-7);
    }
}

TEST(DcOpf, Ieee14Objective) {
    const grid::Network net = load_case("case14");
    const auto d = opf::solve_dcopf(net, net.nominal_loads());
    EXPECT_NEAR(d.cost, 7642.593734910153, 1e-5 * 7642.593734910153);
    EXPECT_NEAR(d.generation.sum(), net.nominal_loads().sum(), 1e-8);
}

TEST(DcOpf, Ieee57Objective) {
    const grid::Network net = load_case("case57");
    const auto d = opf::solve_dcopf(net, net.nominal_loads());
    EXPECT_NEAR(d.cost, 41006.73530366288, 1e-5 * 41006.73530366288);
    const Vector expected = (Vector(7) << 1.3946, 0.8193, 0.4328, 0.8193, 4.8687, 0.8193, 3.3540).finished();
    EXPECT_LE((d.generation - expected).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(DcOpf, InfeasibleLoad) {
    const grid::Network net = case3();
    const Vector loads = (Vector(3) << 0.0, 0.0, 2.0).finished();
    EXPECT_THROW(opf::solve_dcopf(net, loads), opf::InfeasibleError);
    EXPECT_THROW(opf::solve_dcopf(net, Vector::Zero(2)), DimensionError);
}

TEST(DcOpf, OptimumSatisfiesAllConstraints) {
    for (const char* name : {"case3", "case14", "case57"}) {
        const grid::Network net = load_case(name);
        const opf::DispatchModel model(net);
        const Vector loads = net.nominal_loads();
        const auto d = opf::solve_dcopf(net, loads);
        EXPECT_LE(model.violation(d.generation, loads).maxCoeff(), 1e-7) << name;
        EXPECT_LE(model.violation_of(d).maxCoeff(), 1e-7) << name;
        EXPECT_NEAR(model.balance_residual(d.generation, loads), 0.0, 1e-8) << name;
    }
}

TEST(DispatchModel, RowsAgreeWithFlowsFromAngles) {
    grid::Network net = load_case("case14");
    for (auto& b : net.buses) {
        b.angle_min = -0.3;
        b.angle_max = 0.3;
    }
    net.buses[net.slack_bus].angle_min = -0.3;
    const opf::DispatchModel model(net);
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const Vector loads = net.nominal_loads() * uniform(rng, 0.8, 1.2);
        Vector g = random_vector(rng, model.generator_count(), 0.0, 1.0);
        g *= loads.sum() / g.sum();
        const auto d = model.dispatch_from_generation(g, loads);
        EXPECT_LE((model.violation(g, loads) - model.violation_of(d)).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(DispatchModel, ReducedCoordinatesRoundTrip) {
    const grid::Network net = load_case("case57");
    const opf::DispatchModel model(net);
    const Vector loads = net.nominal_loads();
    const Vector g = opf::solve_dcopf(net, loads).generation;
    const Vector u = model.reduced_from_generation(g);
    EXPECT_EQ(u.size(), 6);
    EXPECT_LE((model.generation_from_reduced(u, loads) - g).cwiseAbs().maxCoeff(), 1e-12);
    const auto poly = opf::reduced_polytope(model, loads);
    EXPECT_TRUE(poly.contains(u, 1e-7));
}

TEST(Polytope, ThreeBusInterval) {
    const grid::Network net = case3();
    const auto poly = opf::reduced_polytope(net, net.nominal_loads());
    ASSERT_EQ(poly.dimension(), 1);
    double lo = -1e9, hi = 1e9;
    for (Eigen::Index r = 0; r < poly.A.rows(); ++r) {
        const double a = poly.A(r, 0);
        if (a > 1e-12) hi = std::min(hi, poly.b[r] / a);
        if (a < -1e-12) lo = std::max(lo, poly.b[r] / a);
    }
    EXPECT_NEAR(lo, 0.4, 1e-12);
    EXPECT_NEAR(hi, 1.0, 1e-12);

    const auto ball = opf::chebyshev_center(poly);
    EXPECT_NEAR(ball.center[0], 0.7, 1e-7);
    EXPECT_NEAR(ball.radius, 0.3, 1e-7);
}

TEST(Polytope, EmptyInterior) {
    const grid::Network net = case3();
    const Vector loads = (Vector(3) << 0.0, 0.0, 1.6).finished();  // g1 = 0.6, g2 = 1.0
    const auto ball = opf::chebyshev_ball(opf::reduced_polytope(net, loads));
    EXPECT_LE(ball.radius, 1e-7);
    const Vector too_much = (Vector(3) << 0.0, 0.0, 2.0).finished();
    EXPECT_LE(opf::chebyshev_ball(opf::reduced_polytope(net, too_much)).radius, 0.0);
    EXPECT_THROW(opf::chebyshev_center(opf::reduced_polytope(net, too_much)), ValidationError);
}

TEST(Polytope, SingleGeneratorIsRejected) {
    grid::Network net = case3();
    net.generators.pop_back();
    EXPECT_THROW(opf::reduced_polytope(net, net.nominal_loads()), ValidationError);
}

TEST(Polytope, CenterIsInsideForEmbeddedCases) {
    for (const char* name : {"case14", "case57"}) {
        const grid::Network net = load_case(name);
        const auto poly = opf::reduced_polytope(net, net.nominal_loads());
        const auto ball = opf::chebyshev_center(poly);
        EXPECT_GT(ball.radius, 0.0);
        const Vector slack = poly.b - poly.A * ball.center;
        for (Eigen::Index r = 0; r < poly.A.rows(); ++r)
            EXPECT_GE(slack[r] + 1e-7, ball.radius * poly.A.row(r).norm()) << name;
    }
}

TEST(Projection, ThreeBus) {
    const grid::Network net = case3();
    const Vector loads = net.nominal_loads();
    const auto p = opf::project_dispatch(net, loads, (Vector(2) << 0.8, 0.4).finished());
    EXPECT_NEAR(p.generation[0], 0.6, 1e-7);
    EXPECT_NEAR(p.generation[1], 0.4, 1e-7);
    EXPECT_NEAR(p.distance, 0.2, 1e-7);
}

TEST(Projection, FeasiblePointHasZeroDistance) {
    const grid::Network net = case3();
    const Vector loads = net.nominal_loads();
    const Vector g = (Vector(2) << 0.3, 0.7).finished();
    const auto p = opf::project_dispatch(net, loads, g);
    EXPECT_EQ(p.distance, 0.0);
    EXPECT_TRUE(bitwise_equal(p.generation, g));
}

TEST(Projection, ResultIsFeasibleAndClosestAmongSamples) {
    const grid::Network net = load_case("case14");
    const opf::DispatchModel model(net);
    const Vector loads = net.nominal_loads();
    Rng rng(99);
    for (int trial = 0; trial < 10; ++trial) {
        const Vector g_hat = random_vector(rng, model.generator_count(), -1.0, 3.0);
        const auto p = opf::project_dispatch(model, loads, g_hat);
        EXPECT_LE(model.violation(p.generation, loads).maxCoeff(), 1e-7);
        EXPECT_NEAR(model.balance_residual(p.generation, loads), 0.0, 1e-7);
        // any feasible point on the segment to the OPF optimum is no closer
        const Vector star = opf::solve_dcopf(net, loads).generation;
        for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
            const Vector q = t * star + (1.0 - t) * p.generation;
            EXPECT_GE((q - g_hat).norm() + 1e-7, p.distance);
        }
    }
}

}  // namespace
}  // namespace poisonopf
