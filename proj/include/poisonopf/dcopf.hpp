#pragma once

// DC optimal power flow on top of the QP engine: the exact oracle, the
// reduced feasible polytope with its Chebyshev center, and the Euclidean
// projection used to measure infeasibility.

#include "poisonopf/common.hpp"
#include "poisonopf/dispatch.hpp"
#include "poisonopf/grid_model.hpp"
#include "poisonopf/qp.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace poisonopf::opf {

/// The oracle found no dispatch satisfying the constraints.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

inline constexpr double kOracleTolerance = 1e-8;

/// Variables [P_G; theta without slack]; balance rows C*P_G - B*theta = d;
/// inequalities ordered generator min, generator max, flow max, flow min,
/// angle max, angle min.
inline qp::QuadraticProgram assemble_dcopf(const grid::Network& net, const Vector& loads) {
    const auto ng = static_cast<Eigen::Index>(net.generator_count());
    const auto nb = static_cast<Eigen::Index>(net.bus_count());
    require_size(loads.size(), nb, "loads");
    if ((loads.array() < 0.0).any()) throw ValidationError("loads must be nonnegative");
    const Eigen::Index nt = nb - 1;
    const Eigen::Index n = ng + nt;

    std::vector<Eigen::Index> column_of_bus(static_cast<std::size_t>(nb), -1);
    {
        Eigen::Index c = ng;
        for (Eigen::Index k = 0; k < nb; ++k)
            if (k != static_cast<Eigen::Index>(net.slack_bus)) column_of_bus[static_cast<std::size_t>(k)] = c++;
    }

    qp::QuadraticProgram p = qp::empty_program(n);
    p.variable_names.reserve(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < ng; ++i) {
        const auto& g = net.generators[static_cast<std::size_t>(i)];
        p.Q(i, i) = 2.0 * g.cost_quadratic;
        p.c[i] = g.cost_linear;
        p.variable_names.push_back("pg" + std::to_string(i));
    }
    for (Eigen::Index k = 0; k < nb; ++k)
        if (k != static_cast<Eigen::Index>(net.slack_bus))
            p.variable_names.push_back("va" + std::to_string(net.buses[static_cast<std::size_t>(k)].id));

    const Matrix b = grid::susceptance_matrix(net);
    p.A_eq = Matrix::Zero(nb, n);
    p.b_eq = loads;
    for (Eigen::Index i = 0; i < ng; ++i) p.A_eq(static_cast<Eigen::Index>(net.generators[static_cast<std::size_t>(i)].bus), i) = 1.0;
    for (Eigen::Index k = 0; k < nb; ++k) {
        const Eigen::Index col = column_of_bus[static_cast<std::size_t>(k)];
        if (col >= 0) p.A_eq.col(col) = -b.col(k);
    }

    std::vector<std::pair<Vector, double>> rows;
    for (Eigen::Index i = 0; i < ng; ++i) {
        Vector a = Vector::Zero(n);
        a[i] = -1.0;
        rows.emplace_back(a, -net.generators[static_cast<std::size_t>(i)].p_min);
    }
    for (Eigen::Index i = 0; i < ng; ++i) {
        Vector a = Vector::Zero(n);
        a[i] = 1.0;
        rows.emplace_back(a, net.generators[static_cast<std::size_t>(i)].p_max);
    }
    for (const double sign : {1.0, -1.0}) {
        for (const auto& l : net.lines) {
            if (!l.flow_limit) continue;
            Vector a = Vector::Zero(n);
            const Eigen::Index f = column_of_bus[l.from_bus];
            const Eigen::Index t = column_of_bus[l.to_bus];
            if (f >= 0) a[f] += sign / l.reactance;
            if (t >= 0) a[t] -= sign / l.reactance;
            rows.emplace_back(a, *l.flow_limit);
        }
    }
    for (Eigen::Index k = 0; k < nb; ++k) {
        const Eigen::Index col = column_of_bus[static_cast<std::size_t>(k)];
        const auto& bus = net.buses[static_cast<std::size_t>(k)];
        if (col >= 0 && std::isfinite(bus.angle_max)) {
            Vector a = Vector::Zero(n);
            a[col] = 1.0;
            rows.emplace_back(a, bus.angle_max);
        }
    }
    for (Eigen::Index k = 0; k < nb; ++k) {
        const Eigen::Index col = column_of_bus[static_cast<std::size_t>(k)];
        const auto& bus = net.buses[static_cast<std::size_t>(k)];
        if (col >= 0 && std::isfinite(bus.angle_min)) {
            Vector a = Vector::Zero(n);
            a[col] = -1.0;
            rows.emplace_back(a, -bus.angle_min);
        }
    }
    p.A_in = Matrix::Zero(static_cast<Eigen::Index>(rows.size()), n);
    p.b_in = Vector::Zero(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        p.A_in.row(static_cast<Eigen::Index>(r)) = rows[r].first.transpose();
        p.b_in[static_cast<Eigen::Index>(r)] = rows[r].second;
    }
    return p;
}

/// Optimal dispatch for the given loads. Throws InfeasibleError when no
/// dispatch exists and NumericalError when the solver stops short.
inline DispatchSolution solve_dcopf(const grid::Network& net, const Vector& loads, double tol = kOracleTolerance) {
    const qp::QuadraticProgram p = assemble_dcopf(net, loads);
    const qp::QpSolution s = qp::solve_qp(p, tol);
    if (s.status == qp::Status::infeasible) throw InfeasibleError("DC-OPF is infeasible for the given loads");
    if (!s.optimal()) throw NumericalError(std::string("DC-OPF solver stopped with status ") + qp::to_string(s.status));

    const auto ng = static_cast<Eigen::Index>(net.generator_count());
    DispatchSolution d;
    d.generation = s.x.head(ng);
    d.angles = Vector::Zero(static_cast<Eigen::Index>(net.bus_count()));
    Eigen::Index c = ng;
    for (std::size_t k = 0; k < net.bus_count(); ++k)
        if (k != net.slack_bus) d.angles[static_cast<Eigen::Index>(k)] = s.x[c++];
    d.flows = grid::flows_from_angles(net, d.angles);
    d.cost = net.total_cost(d.generation);
    return d;
}

/// {u : A u <= b} in reduced generation coordinates.
struct Polytope {
    Matrix A;
    Vector b;

    Eigen::Index dimension() const { return A.cols(); }
    bool contains(const Vector& u, double tol = 0.0) const { return ((A * u - b).array() <= tol).all(); }
};

inline Polytope reduced_polytope(const DispatchModel& model, const Vector& loads) {
    if (model.generator_count() < 2) throw ValidationError("reduced polytope needs at least two generators");
    return {model.reduced_rows(), model.reduced_rhs(loads)};
}

inline Polytope reduced_polytope(const grid::Network& net, const Vector& loads) {
    if (net.generator_count() < 2) throw ValidationError("reduced polytope needs at least two generators");
    return reduced_polytope(DispatchModel(net), loads);
}

struct ChebyshevBall {
    Vector center;
    double radius = 0.0;
};

/// Largest inscribed ball, from the LP  max r  s.t.  A_i c + |A_i| r <= b_i.
/// A nonpositive radius means the polytope has empty interior.
inline ChebyshevBall chebyshev_ball(const Polytope& p, double tol = kOracleTolerance) {
    const Eigen::Index d = p.dimension();
    const Eigen::Index m = p.A.rows();
    qp::QuadraticProgram lp = qp::empty_program(d + 1);
    lp.c[d] = -1.0;
    lp.A_in = Matrix::Zero(m, d + 1);
    lp.A_in.leftCols(d) = p.A;
    lp.A_in.col(d) = p.A.rowwise().norm();
    lp.b_in = p.b;
    const qp::QpSolution s = qp::solve_qp(lp, tol);
    if (s.status == qp::Status::infeasible) return {Vector::Zero(d), -std::numeric_limits<double>::infinity()};
    if (s.status == qp::Status::unbounded) throw ValidationError("polytope is unbounded");
    if (!s.optimal()) throw NumericalError(std::string("Chebyshev LP stopped with status ") + qp::to_string(s.status));
    return {s.x.head(d), s.x[d]};
}

/// Chebyshev center of a polytope with nonempty interior.
inline ChebyshevBall chebyshev_center(const Polytope& p, double tol = kOracleTolerance) {
    ChebyshevBall ball = chebyshev_ball(p, tol);
    if (!(ball.radius > 0.0)) throw ValidationError("polytope has empty interior (Chebyshev radius <= 0)");
    return ball;
}

struct Projection {
    Vector generation;
    double distance = 0.0;
};

inline constexpr double kFeasibilityTolerance = 1e-9;

/// Nearest feasible generation (Euclidean, pu). Feasible input within
/// kFeasibilityTolerance is returned unchanged with distance exactly 0.
inline Projection project_dispatch(const DispatchModel& model, const Vector& loads, const Vector& g_hat) {
    require_size(g_hat.size(), model.generator_count(), "generation");
    const Vector rhs = model.rhs(loads);
    const Vector excess = model.rows() * g_hat - rhs;
    const bool feasible = std::abs(model.balance_residual(g_hat, loads)) <= kFeasibilityTolerance &&
                          (excess.size() == 0 || excess.maxCoeff() <= kFeasibilityTolerance);
    if (feasible) return {g_hat, 0.0};

    const Eigen::Index ng = model.generator_count();
    qp::QuadraticProgram p = qp::empty_program(ng);
    p.Q = Matrix::Identity(ng, ng);
    p.c = -g_hat;
    p.A_eq = Matrix::Ones(1, ng);
    p.b_eq = Vector::Constant(1, loads.sum());
    p.A_in = model.rows();
    p.b_in = rhs;
    const qp::QpSolution s = qp::solve_qp(p, kOracleTolerance);
    if (s.status == qp::Status::infeasible) throw InfeasibleError("feasible set is empty for the given loads");
    if (!s.optimal()) throw NumericalError(std::string("projection stopped with status ") + qp::to_string(s.status));
    return {s.x, (s.x - g_hat).norm()};
}

inline Projection project_dispatch(const grid::Network& net, const Vector& loads, const Vector& g_hat) {
    return project_dispatch(DispatchModel(net), loads, g_hat);
}

}  // namespace poisonopf::opf
