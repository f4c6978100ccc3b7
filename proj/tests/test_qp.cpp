#include "poisonopf/qp.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace poisonopf {
namespace {

using qp::QuadraticProgram;
using qp::Status;

QuadraticProgram one_dimensional() {
    // min x^2  s.t.  x >= 1
    QuadraticProgram p = qp::empty_program(1);
    p.Q(0, 0) = 2.0;
    p.A_in = Matrix::Constant(1, 1, -1.0);
    p.b_in = Vector::Constant(1, -1.0);
    return p;
}

TEST(Qp, OneDimensionalBound) {
    const auto s = qp::solve_qp(one_dimensional());
    ASSERT_EQ(s.status, Status::optimal);
    EXPECT_NEAR(s.x[0], 1.0, 1e-8);
    EXPECT_NEAR(s.objective, 1.0, 1e-8);
    EXPECT_NEAR(s.duals_in[0], 2.0, 1e-6);
    EXPECT_LE(s.kkt_residual, 1e-8);
}

TEST(Qp, EqualityOnly) {
    // min x^2 + y^2  s.t.  x + y = 2
    QuadraticProgram p = qp::empty_program(2);
    p.Q = 2.0 * Matrix::Identity(2, 2);
    p.A_eq = Matrix::Ones(1, 2);
    p.b_eq = Vector::Constant(1, 2.0);
    const auto s = qp::solve_qp(p);
    ASSERT_EQ(s.status, Status::optimal);
    EXPECT_NEAR(s.x[0], 1.0, 1e-8);
    EXPECT_NEAR(s.x[1], 1.0, 1e-8);
    EXPECT_NEAR(s.duals_eq[0], -2.0, 1e-6);
}

TEST(Qp, LinearProgram) {
    // min -x - y  s.t.  x + 2y <= 4, 3x + y <= 6, x, y >= 0  ->  (1.6, 1.2)
    QuadraticProgram p = qp::empty_program(2);
    p.c << -1.0, -1.0;
    p.A_in.resize(4, 2);
    p.A_in << 1, 2, 3, 1, -1, 0, 0, -1;
    p.b_in.resize(4);
    p.b_in << 4, 6, 0, 0;
    const auto s = qp::solve_qp(p);
    ASSERT_EQ(s.status, Status::optimal);
    EXPECT_NEAR(s.x[0], 1.6, 1e-7);
    EXPECT_NEAR(s.x[1], 1.2, 1e-7);
    EXPECT_NEAR(s.objective, -2.8, 1e-7);
}

TEST(Qp, DetectsInfeasibility) {
    QuadraticProgram p = one_dimensional();
    p.A_in.conservativeResize(2, 1);
    p.b_in.conservativeResize(2);
    p.A_in(1, 0) = 1.0;  // x <= 0
    p.b_in[1] = 0.0;
    EXPECT_EQ(qp::solve_qp(p).status, Status::infeasible);
    EXPECT_EQ(qp::brute_force_qp(p).status, Status::infeasible);
}

TEST(Qp, DetectsUnboundedLp) {
    QuadraticProgram p = qp::empty_program(1);
    p.c[0] = -1.0;
    p.A_in = Matrix::Constant(1, 1, -1.0);
    p.b_in = Vector::Zero(1);
    EXPECT_EQ(qp::solve_qp(p).status, Status::unbounded);
}

TEST(Qp, RejectsMalformedInput) {
    QuadraticProgram p = one_dimensional();
    p.b_in = Vector::Zero(2);
    EXPECT_THROW(qp::solve_qp(p), DimensionError);
    EXPECT_THROW(qp::solve_qp(one_dimensional(), 0.0), ValidationError);
}

TEST(Qp, DumpNamesVariables) {
    QuadraticProgram p = one_dimensional();
    p.variable_names = {"pg0"};
    const std::string text = qp::dump(p);
    EXPECT_NE(text.find("pg0"), std::string::npos);
    EXPECT_NE(text.find("inequalities 1"), std::string::npos);
}

// Random convex QPs with a known interior point so they are feasible; the
// bounding box keeps them bounded.
QuadraticProgram random_program(Rng& rng) {
    const auto n = static_cast<Eigen::Index>(2 + rng() % 3);
    const auto me = static_cast<Eigen::Index>(rng() % 2);
    const auto extra = static_cast<Eigen::Index>(1 + rng() % 4);
    const Matrix half = random_matrix(rng, n, n, -1.0, 1.0);
    QuadraticProgram p = qp::empty_program(n);
    const bool lp = rng() % 5 == 0;
    p.Q = lp ? Matrix::Zero(n, n) : Matrix(half * half.transpose() + 0.01 * Matrix::Identity(n, n));
    p.c = random_vector(rng, n, -2.0, 2.0);
    const Vector interior = random_vector(rng, n, -0.5, 0.5);
    if (me > 0) {
        p.A_eq = random_matrix(rng, me, n, -1.0, 1.0);
        p.b_eq = p.A_eq * interior;
    }
    const Eigen::Index mi = 2 * n + extra;
    p.A_in = Matrix::Zero(mi, n);
    p.b_in = Vector::Zero(mi);
    for (Eigen::Index j = 0; j < n; ++j) {
        p.A_in(2 * j, j) = 1.0;
        p.A_in(2 * j + 1, j) = -1.0;
        p.b_in[2 * j] = 2.0;
        p.b_in[2 * j + 1] = 2.0;
    }
    for (Eigen::Index r = 2 * n; r < mi; ++r) {
        p.A_in.row(r) = random_vector(rng, n, -1.0, 1.0).transpose();
        p.b_in[r] = p.A_in.row(r).dot(interior) + uniform(rng, 0.0, 0.5);
    }
    return p;
}

TEST(Qp, AgreesWithActiveSetEnumeration) {
    Rng rng(2024);
    int compared = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const QuadraticProgram p = random_program(rng);
        const auto exact = qp::brute_force_qp(p);
        const auto ipm = qp::solve_qp(p);
        ASSERT_EQ(exact.status, Status::optimal) << "trial " << trial;
        ASSERT_EQ(ipm.status, Status::optimal) << "trial " << trial << "\n" << qp::dump(p);
        EXPECT_NEAR(ipm.objective, exact.objective, 1e-6 * (1.0 + std::abs(exact.objective))) << "trial " << trial;
        const auto kkt = qp::kkt_residuals(p, ipm.x, ipm.duals_eq, ipm.duals_in);
        EXPECT_LE(kkt.max(), 1e-6) << "trial " << trial;
        EXPECT_NEAR(qp::dual_objective(p, ipm.x, ipm.duals_eq, ipm.duals_in), ipm.objective,
                    1e-6 * (1.0 + std::abs(ipm.objective)));
        ++compared;
    }
    EXPECT_EQ(compared, 200);
}

TEST(Qp, EnumerationLimits) {
    QuadraticProgram p = qp::empty_program(9);
    EXPECT_THROW(qp::brute_force_qp(p), ValidationError);
}

}  // namespace
}  // namespace poisonopf
