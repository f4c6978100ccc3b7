#pragma once

// Power network description (per-unit) and the linear DC sensitivities.

#include "poisonopf/common.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <vector>

namespace poisonopf::grid {

inline constexpr double kUnlimited = std::numeric_limits<double>::infinity();

struct Bus {
    int id = 0;                         // external bus number
    double nominal_load = 0.0;          // pu
    double angle_min = -kUnlimited;     // rad
    double angle_max = kUnlimited;      // rad

    bool has_angle_limits() const { return std::isfinite(angle_min) || std::isfinite(angle_max); }
    bool operator==(const Bus&) const = default;
};

struct Line {
    std::size_t from_bus = 0;
    std::size_t to_bus = 0;
    double reactance = 0.0;                 // pu
    std::optional<double> flow_limit;       // pu, empty = unlimited

    bool operator==(const Line&) const = default;
};

struct Generator {
    std::size_t bus = 0;
    double p_min = 0.0;   // pu
    double p_max = 0.0;   // pu
    // Cost in $/h as a polynomial of the per-unit output.
    double cost_quadratic = 0.0;
    double cost_linear = 0.0;
    double cost_constant = 0.0;

    double cost(double p) const { return (cost_quadratic * p + cost_linear) * p + cost_constant; }
    double marginal_cost(double p) const { return 2.0 * cost_quadratic * p + cost_linear; }
    bool operator==(const Generator&) const = default;
};

struct Network {
    double base_power = 100.0;  // MVA
    std::vector<Bus> buses;
    std::vector<Line> lines;
    std::vector<Generator> generators;
    std::size_t slack_bus = 0;

    std::size_t bus_count() const { return buses.size(); }
    std::size_t line_count() const { return lines.size(); }
    std::size_t generator_count() const { return generators.size(); }

    Vector nominal_loads() const {
        Vector d(static_cast<Eigen::Index>(buses.size()));
        for (std::size_t k = 0; k < buses.size(); ++k) d[static_cast<Eigen::Index>(k)] = buses[k].nominal_load;
        return d;
    }

    double total_cost(const Vector& generation) const {
        require_size(generation.size(), static_cast<Eigen::Index>(generators.size()), "generation");
        double c = 0.0;
        for (std::size_t i = 0; i < generators.size(); ++i) c += generators[i].cost(generation[static_cast<Eigen::Index>(i)]);
        return c;
    }

    bool operator==(const Network&) const = default;
};

inline bool is_connected(const Network& net) {
    const std::size_t n = net.bus_count();
    if (n == 0) return false;
    std::vector<std::vector<std::size_t>> adjacent(n);
    for (const auto& l : net.lines) {
        adjacent[l.from_bus].push_back(l.to_bus);
        adjacent[l.to_bus].push_back(l.from_bus);
    }
    std::vector<char> seen(n, 0);
    std::queue<std::size_t> frontier;
    frontier.push(0);
    seen[0] = 1;
    std::size_t reached = 1;
    while (!frontier.empty()) {
        const std::size_t k = frontier.front();
        frontier.pop();
        for (std::size_t j : adjacent[k]) {
            if (!seen[j]) {
                seen[j] = 1;
                ++reached;
                frontier.push(j);
            }
        }
    }
    return reached == n;
}

/// Throws ValidationError describing the first violated invariant.
inline void validate(const Network& net) {
    if (!(net.base_power > 0.0)) throw ValidationError("base power must be positive");
    if (net.buses.empty()) throw ValidationError("network has no buses");
    if (net.slack_bus >= net.bus_count()) throw ValidationError("slack bus index out of range");
    for (std::size_t k = 0; k < net.buses.size(); ++k) {
        const Bus& b = net.buses[k];
        const std::string where = "bus " + std::to_string(b.id);
        if (!std::isfinite(b.nominal_load) || b.nominal_load < 0.0)
            throw ValidationError(where + ": nominal load must be finite and nonnegative");
        if (std::isnan(b.angle_min) || std::isnan(b.angle_max) || !(b.angle_min < b.angle_max))
            throw ValidationError(where + ": angle_min must be below angle_max");
    }
    for (std::size_t i = 0; i < net.lines.size(); ++i) {
        const Line& l = net.lines[i];
        const std::string where = "line " + std::to_string(i);
        if (l.from_bus >= net.bus_count() || l.to_bus >= net.bus_count())
            throw ValidationError(where + ": endpoint references a missing bus");
        if (l.from_bus == l.to_bus) throw ValidationError(where + ": from_bus equals to_bus");
        if (!(l.reactance > 0.0) || !std::isfinite(l.reactance))
            throw ValidationError(where + ": reactance must be strictly positive");
        if (l.flow_limit && !(*l.flow_limit > 0.0))
            throw ValidationError(where + ": flow limit must be strictly positive");
    }
    for (std::size_t i = 0; i < net.generators.size(); ++i) {
        const Generator& g = net.generators[i];
        const std::string where = "generator " + std::to_string(i);
        if (g.bus >= net.bus_count()) throw ValidationError(where + ": bus out of range");
        if (!std::isfinite(g.p_min) || !std::isfinite(g.p_max) || g.p_min > g.p_max)
            throw ValidationError(where + ": requires finite p_min <= p_max");
        if (g.cost_quadratic < 0.0) throw ValidationError(where + ": quadratic cost must be nonnegative");
    }
    if (!is_connected(net)) throw ValidationError("line graph is not connected");
}

/// Index of the generator whose output absorbs the balance in reduced
/// coordinates: lowest-indexed generator at the slack bus, else generator 0.
inline std::size_t dependent_generator(const Network& net) {
    for (std::size_t i = 0; i < net.generators.size(); ++i)
        if (net.generators[i].bus == net.slack_bus) return i;
    return 0;
}

/// Bus-by-generator incidence (bus_count x generator_count).
inline Matrix generator_incidence(const Network& net) {
    Matrix c = Matrix::Zero(static_cast<Eigen::Index>(net.bus_count()), static_cast<Eigen::Index>(net.generator_count()));
    for (std::size_t i = 0; i < net.generators.size(); ++i)
        c(static_cast<Eigen::Index>(net.generators[i].bus), static_cast<Eigen::Index>(i)) = 1.0;
    return c;
}

/// Full nodal susceptance matrix B with B*theta = net injections.
inline Matrix susceptance_matrix(const Network& net) {
    const auto n = static_cast<Eigen::Index>(net.bus_count());
    Matrix b = Matrix::Zero(n, n);
    for (const auto& l : net.lines) {
        const double y = 1.0 / l.reactance;
        const auto f = static_cast<Eigen::Index>(l.from_bus);
        const auto t = static_cast<Eigen::Index>(l.to_bus);
        b(f, f) += y;
        b(t, t) += y;
        b(f, t) -= y;
        b(t, f) -= y;
    }
    return b;
}

struct SusceptanceFactors {
    std::vector<std::size_t> non_slack;    // bus index of each reduced row
    Matrix reduced_susceptance;            // B without the slack row/column
    Eigen::LLT<Matrix> factorization;      // of reduced_susceptance
    Matrix ptdf;                           // line_count x bus_count, slack column zero
    Matrix angle_sensitivity;              // bus_count x bus_count, inverse reduced B padded by zeros
    std::size_t slack_bus = 0;

    /// Bus angles (slack = 0) for a balanced injection vector.
    Vector angles(const Vector& injections) const {
        require_size(injections.size(), static_cast<Eigen::Index>(non_slack.size() + 1), "injections");
        Vector rhs(static_cast<Eigen::Index>(non_slack.size()));
        for (std::size_t r = 0; r < non_slack.size(); ++r) rhs[static_cast<Eigen::Index>(r)] = injections[static_cast<Eigen::Index>(non_slack[r])];
        const Vector reduced = factorization.solve(rhs);
        Vector theta = Vector::Zero(injections.size());
        for (std::size_t r = 0; r < non_slack.size(); ++r) theta[static_cast<Eigen::Index>(non_slack[r])] = reduced[static_cast<Eigen::Index>(r)];
        return theta;
    }
};

/// Flows from angles, line by line: (theta_from - theta_to) / x.
inline Vector flows_from_angles(const Network& net, const Vector& theta) {
    require_size(theta.size(), static_cast<Eigen::Index>(net.bus_count()), "angles");
    Vector f(static_cast<Eigen::Index>(net.line_count()));
    for (std::size_t i = 0; i < net.lines.size(); ++i) {
        const Line& l = net.lines[i];
        f[static_cast<Eigen::Index>(i)] =
            (theta[static_cast<Eigen::Index>(l.from_bus)] - theta[static_cast<Eigen::Index>(l.to_bus)]) / l.reactance;
    }
    return f;
}

inline SusceptanceFactors susceptance_and_ptdf(const Network& net) {
    const std::size_t n = net.bus_count();
    if (n < 2) throw ValidationError("at least two buses are required");
    SusceptanceFactors out;
    out.slack_bus = net.slack_bus;
    for (std::size_t k = 0; k < n; ++k)
        if (k != net.slack_bus) out.non_slack.push_back(k);

    const Matrix full = susceptance_matrix(net);
    const auto m = static_cast<Eigen::Index>(n - 1);
    out.reduced_susceptance.resize(m, m);
    for (Eigen::Index r = 0; r < m; ++r)
        for (Eigen::Index c = 0; c < m; ++c)
            out.reduced_susceptance(r, c) =
                full(static_cast<Eigen::Index>(out.non_slack[static_cast<std::size_t>(r)]),
                     static_cast<Eigen::Index>(out.non_slack[static_cast<std::size_t>(c)]));
    out.factorization.compute(out.reduced_susceptance);
    if (out.factorization.info() != Eigen::Success)
        throw NumericalError("reduced susceptance matrix is singular (disconnected network?)");

    // ptdf(l, k) = (X(from,k) - X(to,k)) / x_l with X = inverse reduced B padded by zeros.
    const Matrix inverse = out.factorization.solve(Matrix::Identity(m, m));
    Matrix padded = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
    for (Eigen::Index r = 0; r < m; ++r)
        for (Eigen::Index c = 0; c < m; ++c)
            padded(static_cast<Eigen::Index>(out.non_slack[static_cast<std::size_t>(r)]),
                   static_cast<Eigen::Index>(out.non_slack[static_cast<std::size_t>(c)])) = inverse(r, c);
    out.angle_sensitivity = padded;
    out.ptdf.resize(static_cast<Eigen::Index>(net.line_count()), static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < net.lines.size(); ++i) {
        const Line& l = net.lines[i];
        out.ptdf.row(static_cast<Eigen::Index>(i)) =
            (padded.row(static_cast<Eigen::Index>(l.from_bus)) - padded.row(static_cast<Eigen::Index>(l.to_bus))) / l.reactance;
    }
    return out;
}

/// Line flows for a bus injection vector. Any imbalance is absorbed at the slack bus.
inline Vector dc_flows(const SusceptanceFactors& factors, const Vector& injections) {
    require_size(injections.size(), factors.ptdf.cols(), "injections");
    return factors.ptdf * injections;
}

}  // namespace poisonopf::grid
