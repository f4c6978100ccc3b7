#pragma once

// Dense convex quadratic programming:
//
//   minimize    1/2 x'Qx + c'x
//   subject to  A_eq x  = b_eq
//               A_in x <= b_in
//
// solve_qp is a Mehrotra predictor-corrector primal-dual interior point
// method on the augmented KKT system. brute_force_qp enumerates active sets
// and exists as an independent oracle for small instances.

#include "poisonopf/common.hpp"

#include <cmath>
#include <cstdint>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace poisonopf::qp {

enum class Status { optimal, infeasible, unbounded, max_iter };

inline const char* to_string(Status s) {
    switch (s) {
        case Status::optimal: return "optimal";
        case Status::infeasible: return "infeasible";
        case Status::unbounded: return "unbounded";
        case Status::max_iter: return "max_iter";
    }
    return "unknown";
}

struct QuadraticProgram {
    Matrix Q;
    Vector c;
    Matrix A_eq;
    Vector b_eq;
    Matrix A_in;
    Vector b_in;
    std::vector<std::string> variable_names;

    Eigen::Index size() const { return c.size(); }

    /// Throws DimensionError / ValidationError on malformed programs.
    void check() const {
        const Eigen::Index n = c.size();
        if (Q.rows() != n || Q.cols() != n) throw DimensionError("Q must be n x n with n = len(c)");
        if (A_eq.cols() != n || A_eq.rows() != b_eq.size()) throw DimensionError("A_eq/b_eq dimensions inconsistent");
        if (A_in.cols() != n || A_in.rows() != b_in.size()) throw DimensionError("A_in/b_in dimensions inconsistent");
        if (!variable_names.empty() && static_cast<Eigen::Index>(variable_names.size()) != n)
            throw DimensionError("variable_names length must match the variable count");
        const double scale = std::max(1.0, Q.cwiseAbs().maxCoeff());
        if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) throw ValidationError("Q is not symmetric");
    }

    double objective(const Vector& x) const { return 0.5 * x.dot(Q * x) + c.dot(x); }
};

/// Program with n variables and no constraints.
inline QuadraticProgram empty_program(Eigen::Index n) {
    QuadraticProgram qp;
    qp.Q = Matrix::Zero(n, n);
    qp.c = Vector::Zero(n);
    qp.A_eq = Matrix::Zero(0, n);
    qp.b_eq = Vector::Zero(0);
    qp.A_in = Matrix::Zero(0, n);
    qp.b_in = Vector::Zero(0);
    return qp;
}

struct QpSolution {
    Vector x;
    Vector duals_eq;
    Vector duals_in;   // >= 0
    double objective = std::numeric_limits<double>::quiet_NaN();
    double kkt_residual = std::numeric_limits<double>::infinity();
    Status status = Status::max_iter;
    int iterations = 0;

    bool optimal() const { return status == Status::optimal; }
};

struct KktResiduals {
    double stationarity = 0.0;
    double primal = 0.0;
    double complementarity = 0.0;
    double max() const { return std::max({stationarity, primal, complementarity}); }
};

/// Infinity-norm KKT residuals of (x, y, z) measured on the original program.
inline KktResiduals kkt_residuals(const QuadraticProgram& qp, const Vector& x, const Vector& y, const Vector& z) {
    KktResiduals r;
    Vector grad = qp.Q * x + qp.c;
    if (qp.A_eq.rows() > 0) grad += qp.A_eq.transpose() * y;
    if (qp.A_in.rows() > 0) grad += qp.A_in.transpose() * z;
    r.stationarity = grad.size() > 0 ? grad.cwiseAbs().maxCoeff() : 0.0;
    if (qp.A_eq.rows() > 0) r.primal = (qp.A_eq * x - qp.b_eq).cwiseAbs().maxCoeff();
    if (qp.A_in.rows() > 0) {
        const Vector slack = qp.b_in - qp.A_in * x;
        r.primal = std::max(r.primal, std::max(0.0, -slack.minCoeff()));
        r.complementarity = slack.cwiseProduct(z).cwiseAbs().maxCoeff();
        r.complementarity = std::max(r.complementarity, std::max(0.0, -z.minCoeff()));
    }
    return r;
}

/// Lagrange dual objective for (y, z); a lower bound on the optimum when the
/// dual point is feasible (stationary in x, z >= 0).
inline double dual_objective(const QuadraticProgram& qp, const Vector& x, const Vector& y, const Vector& z) {
    // For x stationary, L(x, y, z) = -1/2 x'Qx - b_eq'y - b_in'z.
    double d = -0.5 * x.dot(qp.Q * x);
    if (y.size() > 0) d -= qp.b_eq.dot(y);
    if (z.size() > 0) d -= qp.b_in.dot(z);
    return d;
}

struct SolverOptions {
    double tol = 1e-8;
    int max_iter = 200;
    double regularization = 1e-10;
};

namespace detail {

inline double max_step(const Vector& v, const Vector& dv) {
    double alpha = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) alpha = std::min(alpha, -v[i] / dv[i]);
    return alpha;
}

// Core interior point iteration. Reports the status it reached; the public
// entry point adds infeasibility classification.
inline QpSolution interior_point(const QuadraticProgram& qp, const SolverOptions& opt) {
    const Eigen::Index n = qp.size();
    const Eigen::Index me = qp.A_eq.rows();
    const Eigen::Index mi = qp.A_in.rows();
    const Matrix& A = qp.A_eq;
    const Matrix& G = qp.A_in;

    Vector x = Vector::Zero(n);
    Vector y = Vector::Zero(me);
    Vector s = Vector::Ones(mi);
    Vector z = Vector::Ones(mi);
    if (mi > 0) s = (qp.b_in - G * x).cwiseMax(1.0);

    QpSolution out;
    Matrix K(n + me, n + me);
    Vector rhs(n + me);
    Eigen::PartialPivLU<Matrix> lu;

    // Returns (dx, dy); dz, ds follow from the eliminated rows.
    auto solve_newton = [&](const Vector& r_d, const Vector& r_e, const Vector& r_i, const Vector& r_c, Vector& dx,
                            Vector& dy, Vector& dz, Vector& ds) {
        Vector w = Vector::Zero(mi);
        if (mi > 0) w = (-r_c + z.cwiseProduct(r_i)).cwiseQuotient(s);
        rhs.head(n) = -r_d;
        if (mi > 0) rhs.head(n) -= G.transpose() * w;
        rhs.tail(me) = -r_e;
        Vector sol = lu.solve(rhs);
        // one step of iterative refinement
        sol += lu.solve(rhs - K * sol);
        dx = sol.head(n);
        dy = sol.tail(me);
        if (mi > 0) {
            ds = -r_i - G * dx;
            dz = (-r_c + z.cwiseProduct(r_i) + z.cwiseProduct(G * dx)).cwiseQuotient(s);
        }
    };

    double best_primal = std::numeric_limits<double>::infinity();
    int stalled = 0;
    for (int it = 0; it <= opt.max_iter; ++it) {
        out.iterations = it;
        Vector r_d = qp.Q * x + qp.c;
        if (me > 0) r_d += A.transpose() * y;
        if (mi > 0) r_d += G.transpose() * z;
        const Vector r_e = me > 0 ? Vector(A * x - qp.b_eq) : Vector::Zero(0);
        const Vector r_i = mi > 0 ? Vector(G * x + s - qp.b_in) : Vector::Zero(0);
        const double mu = mi > 0 ? s.dot(z) / static_cast<double>(mi) : 0.0;

        const double primal = std::max(me > 0 ? r_e.cwiseAbs().maxCoeff() : 0.0, mi > 0 ? r_i.cwiseAbs().maxCoeff() : 0.0);
        const double dual = n > 0 ? r_d.cwiseAbs().maxCoeff() : 0.0;
        const double comp = mi > 0 ? s.cwiseProduct(z).maxCoeff() : 0.0;

        if (!x.allFinite() || !z.allFinite() || !y.allFinite()) break;
        if (primal <= opt.tol && dual <= opt.tol && comp <= opt.tol) {
            const KktResiduals r = kkt_residuals(qp, x, y, z);
            if (r.max() <= opt.tol) {
                out.status = Status::optimal;
                break;
            }
        }
        if (it == opt.max_iter) break;
        if (x.cwiseAbs().maxCoeff() > 1e14 || (mi > 0 && z.maxCoeff() > 1e16)) break;
        if (primal < 0.5 * best_primal) {
            best_primal = primal;
            stalled = 0;
        } else if (++stalled > 40 && primal > opt.tol) {
            break;
        }

        K.setZero();
        K.topLeftCorner(n, n) = qp.Q;
        if (mi > 0) K.topLeftCorner(n, n) += G.transpose() * z.cwiseQuotient(s).asDiagonal() * G;
        K.topLeftCorner(n, n).diagonal().array() += opt.regularization;
        if (me > 0) {
            K.topRightCorner(n, me) = A.transpose();
            K.bottomLeftCorner(me, n) = A;
            K.bottomRightCorner(me, me).diagonal().array() -= opt.regularization;
        }
        lu.compute(K);

        Vector dx, dy, dz, ds;
        if (mi == 0) {
            solve_newton(r_d, r_e, r_i, Vector::Zero(0), dx, dy, dz, ds);
            x += dx;
            y += dy;
            continue;
        }

        // predictor
        Vector r_c = s.cwiseProduct(z);
        solve_newton(r_d, r_e, r_i, r_c, dx, dy, dz, ds);
        const double alpha_aff = std::min(max_step(s, ds), max_step(z, dz));
        const double mu_aff = (s + alpha_aff * ds).dot(z + alpha_aff * dz) / static_cast<double>(mi);
        const double sigma = std::pow(mu_aff / mu, 3);

        // corrector
        r_c = s.cwiseProduct(z) + ds.cwiseProduct(dz) - Vector::Constant(mi, sigma * mu);
        solve_newton(r_d, r_e, r_i, r_c, dx, dy, dz, ds);
        const double alpha = std::min(1.0, 0.99 * std::min(max_step(s, ds), max_step(z, dz)));
        x += alpha * dx;
        y += alpha * dy;
        z += alpha * dz;
        s += alpha * ds;
    }

    out.x = x;
    out.duals_eq = y;
    out.duals_in = z;
    out.objective = qp.objective(x);
    out.kkt_residual = kkt_residuals(qp, x, y, z).max();
    return out;
}

// Minimum total constraint violation (elastic program). Zero iff feasible.
inline double minimum_violation(const QuadraticProgram& qp, const SolverOptions& opt) {
    const Eigen::Index n = qp.size();
    const Eigen::Index me = qp.A_eq.rows();
    const Eigen::Index mi = qp.A_in.rows();
    const Eigen::Index nv = n + 2 * me + mi;
    QuadraticProgram p = empty_program(nv);
    p.c.segment(n, 2 * me + mi).setOnes();
    p.A_eq = Matrix::Zero(me, nv);
    p.b_eq = qp.b_eq;
    if (me > 0) {
        p.A_eq.leftCols(n) = qp.A_eq;
        p.A_eq.block(0, n, me, me) = Matrix::Identity(me, me);
        p.A_eq.block(0, n + me, me, me) = -Matrix::Identity(me, me);
    }
    // A_in x - t <= b_in, and all elastic variables >= 0
    p.A_in = Matrix::Zero(mi + 2 * me + mi, nv);
    p.b_in = Vector::Zero(mi + 2 * me + mi);
    if (mi > 0) {
        p.A_in.topLeftCorner(mi, n) = qp.A_in;
        p.A_in.block(0, n + 2 * me, mi, mi) = -Matrix::Identity(mi, mi);
        p.b_in.head(mi) = qp.b_in;
    }
    p.A_in.bottomRightCorner(2 * me + mi, 2 * me + mi) = -Matrix::Identity(2 * me + mi, 2 * me + mi);
    SolverOptions o = opt;
    o.regularization = std::max(opt.regularization, 1e-9);
    const QpSolution s = interior_point(p, o);
    if (!s.x.allFinite()) return std::numeric_limits<double>::infinity();
    return s.objective;
}

}  // namespace detail

/// Solves a convex QP. Status is reported, never thrown; malformed input throws.
inline QpSolution solve_qp(const QuadraticProgram& qp, double tol = 1e-8, int max_iter = 200) {
    if (!(tol > 0.0)) throw ValidationError("solver tolerance must be positive");
    qp.check();
    SolverOptions opt;
    opt.tol = tol;
    opt.max_iter = max_iter;
    QpSolution sol = detail::interior_point(qp, opt);
    if (sol.status == Status::optimal) return sol;

    const double scale = 1.0 + (qp.b_eq.size() ? qp.b_eq.cwiseAbs().maxCoeff() : 0.0) +
                         (qp.b_in.size() ? qp.b_in.cwiseAbs().maxCoeff() : 0.0);
    const double violation = detail::minimum_violation(qp, opt);
    if (violation > 1e-6 * scale) {
        sol.status = Status::infeasible;
    } else if (!sol.x.allFinite() || sol.x.cwiseAbs().maxCoeff() > 1e12) {
        sol.status = Status::unbounded;
    } else {
        sol.status = Status::max_iter;
    }
    return sol;
}

struct EnumerationLimits {
    Eigen::Index max_inequalities = 12;
    Eigen::Index max_variables = 8;
};

/// Exact optimum by enumerating every active set. Convex programs only; any
/// primal- and dual-feasible KKT point is optimal, the cheapest one is kept.
inline QpSolution brute_force_qp(const QuadraticProgram& qp, EnumerationLimits limits = {}) {
    qp.check();
    const Eigen::Index n = qp.size();
    const Eigen::Index me = qp.A_eq.rows();
    const Eigen::Index mi = qp.A_in.rows();
    if (mi > limits.max_inequalities || n > limits.max_variables)
        throw ValidationError("instance exceeds enumeration limits");

    constexpr double feas_tol = 1e-9;
    QpSolution best;
    best.status = Status::infeasible;
    best.objective = std::numeric_limits<double>::infinity();

    const std::uint32_t subsets = 1u << static_cast<unsigned>(mi);
    std::vector<Eigen::Index> active;
    for (std::uint32_t mask = 0; mask < subsets; ++mask) {
        active.clear();
        for (Eigen::Index i = 0; i < mi; ++i)
            if (mask & (1u << static_cast<unsigned>(i))) active.push_back(i);
        const auto ma = static_cast<Eigen::Index>(active.size());
        // more active rows than variables are linearly dependent
        if (me + ma > n) continue;
        const Eigen::Index dim = n + me + ma;
        Matrix K = Matrix::Zero(dim, dim);
        Vector rhs(dim);
        K.topLeftCorner(n, n) = qp.Q;
        rhs.head(n) = -qp.c;
        if (me > 0) {
            K.block(0, n, n, me) = qp.A_eq.transpose();
            K.block(n, 0, me, n) = qp.A_eq;
            rhs.segment(n, me) = qp.b_eq;
        }
        for (Eigen::Index j = 0; j < ma; ++j) {
            K.block(0, n + me + j, n, 1) = qp.A_in.row(active[static_cast<std::size_t>(j)]).transpose();
            K.block(n + me + j, 0, 1, n) = qp.A_in.row(active[static_cast<std::size_t>(j)]);
            rhs[n + me + j] = qp.b_in[active[static_cast<std::size_t>(j)]];
        }
        Eigen::FullPivLU<Matrix> lu(K);
        if (!lu.isInvertible()) continue;
        const Vector sol = lu.solve(rhs);
        const Vector x = sol.head(n);
        if (mi > 0 && ((qp.A_in * x - qp.b_in).array() > feas_tol * (1.0 + qp.b_in.cwiseAbs().array())).any()) continue;
        Vector z = Vector::Zero(mi);
        bool dual_ok = true;
        for (Eigen::Index j = 0; j < ma; ++j) {
            const double zj = sol[n + me + j];
            if (zj < -feas_tol) dual_ok = false;
            z[active[static_cast<std::size_t>(j)]] = std::max(0.0, zj);
        }
        if (!dual_ok) continue;
        const double obj = qp.objective(x);
        if (obj < best.objective - 1e-12) {
            best.x = x;
            best.duals_eq = sol.segment(n, me);
            best.duals_in = z;
            best.objective = obj;
            best.status = Status::optimal;
        }
    }
    if (best.optimal()) best.kkt_residual = kkt_residuals(qp, best.x, best.duals_eq, best.duals_in).max();
    return best;
}

/// Human-readable dump for debugging.
inline std::string dump(const QuadraticProgram& qp) {
    std::ostringstream os;
    os << std::setprecision(17);
    const Eigen::Index n = qp.size();
    auto name = [&](Eigen::Index j) {
        return qp.variable_names.empty() ? "x" + std::to_string(j) : qp.variable_names[static_cast<std::size_t>(j)];
    };
    os << "variables " << n << "\n";
    for (Eigen::Index j = 0; j < n; ++j) os << "  " << name(j) << "\n";
    os << "objective\n";
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j)
            if (qp.Q(i, j) != 0.0) os << "  q " << name(i) << " " << name(j) << " " << qp.Q(i, j) << "\n";
    for (Eigen::Index j = 0; j < n; ++j)
        if (qp.c[j] != 0.0) os << "  c " << name(j) << " " << qp.c[j] << "\n";
    auto rows = [&](const char* tag, const Matrix& a, const Vector& b, const char* op) {
        os << tag << " " << a.rows() << "\n";
        for (Eigen::Index r = 0; r < a.rows(); ++r) {
            os << " ";
            for (Eigen::Index j = 0; j < n; ++j)
                if (a(r, j) != 0.0) os << " " << a(r, j) << "*" << name(j);
            os << " " << op << " " << b[r] << "\n";
        }
    };
    rows("equalities", qp.A_eq, qp.b_eq, "=");
    rows("inequalities", qp.A_in, qp.b_in, "<=");
    return os.str();
}

}  // namespace poisonopf::qp
