#pragma once

// Linear structure of a DC dispatch for fixed network topology.
//
// Every inequality of the DC-OPF (generator bounds, line limits, bus angle
// limits) is affine in the generation vector g once loads d are fixed:
//
//     rows * g <= limit + load_shift * d
//
// In reduced coordinates u (all generators except the dependent one, whose
// output closes the power balance) g = selection * u + e_dep * sum(d), so the
// same rows give the polytope {u : (rows * selection) u <= b(d)}.

#include "poisonopf/common.hpp"
#include "poisonopf/grid_model.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace poisonopf::opf {

struct DispatchSolution {
    Vector generation;  // pu, one entry per generator
    Vector angles;      // rad, slack bus = 0
    Vector flows;       // pu, one entry per line, from -> to
    double cost = 0.0;
};

enum class ConstraintKind { generator_min, generator_max, flow_max, flow_min, angle_max, angle_min };

struct ConstraintTag {
    ConstraintKind kind;
    std::size_t element;  // generator, line or bus index
};

class DispatchModel {
public:
    explicit DispatchModel(grid::Network net) : net_(std::move(net)) {
        grid::validate(net_);
        if (net_.generators.empty()) throw ValidationError("network has no generators");
        const grid::Bus& slack = net_.buses[net_.slack_bus];
        if (slack.angle_min > 0.0 || slack.angle_max < 0.0)
            throw ValidationError("slack bus angle limits must contain zero");

        factors_ = grid::susceptance_and_ptdf(net_);
        incidence_ = grid::generator_incidence(net_);
        dependent_ = grid::dependent_generator(net_);
        build_rows();
        build_reduction();
    }

    const grid::Network& network() const { return net_; }
    const grid::SusceptanceFactors& factors() const { return factors_; }
    const Matrix& generator_incidence() const { return incidence_; }
    std::size_t dependent_generator() const { return dependent_; }

    Eigen::Index bus_count() const { return static_cast<Eigen::Index>(net_.bus_count()); }
    Eigen::Index generator_count() const { return static_cast<Eigen::Index>(net_.generator_count()); }
    Eigen::Index reduced_size() const { return generator_count() - 1; }
    Eigen::Index constraint_count() const { return rows_.rows(); }

    const Matrix& rows() const { return rows_; }
    const std::vector<ConstraintTag>& tags() const { return tags_; }

    /// Right-hand side of rows * g <= rhs for the given loads.
    Vector rhs(const Vector& loads) const {
        require_size(loads.size(), bus_count(), "loads");
        return limit_ + load_shift_ * loads;
    }

    /// max(0, rows * g - rhs): inequality residuals for generation g.
    Vector violation(const Vector& generation, const Vector& loads) const {
        require_size(generation.size(), generator_count(), "generation");
        return (rows_ * generation - rhs(loads)).cwiseMax(0.0);
    }

    double balance_residual(const Vector& generation, const Vector& loads) const {
        return generation.sum() - loads.sum();
    }

    // --- reduced coordinates -------------------------------------------------

    /// n_g x (n_g - 1) map from u to generation (dependent row is -1).
    const Matrix& selection() const { return selection_; }

    /// Rows of the reduced polytope A u <= b(loads).
    const Matrix& reduced_rows() const { return reduced_rows_; }

    Vector reduced_rhs(const Vector& loads) const {
        return rhs(loads) - rows_.col(static_cast<Eigen::Index>(dependent_)) * loads.sum();
    }

    Vector generation_from_reduced(const Vector& u, const Vector& loads) const {
        require_size(u.size(), reduced_size(), "reduced vector");
        require_size(loads.size(), bus_count(), "loads");
        Vector g = selection_ * u;
        g[static_cast<Eigen::Index>(dependent_)] += loads.sum();
        return g;
    }

    Vector reduced_from_generation(const Vector& g) const {
        require_size(g.size(), generator_count(), "generation");
        Vector u(reduced_size());
        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < g.size(); ++i)
            if (i != static_cast<Eigen::Index>(dependent_)) u[r++] = g[i];
        return u;
    }

    /// Angles and flows implied by generation g; an imbalance is absorbed at the slack bus.
    DispatchSolution dispatch_from_generation(const Vector& generation, const Vector& loads) const {
        require_size(generation.size(), generator_count(), "generation");
        require_size(loads.size(), bus_count(), "loads");
        DispatchSolution d;
        d.generation = generation;
        const Vector injections = incidence_ * generation - loads;
        d.angles = factors_.angles(injections);
        d.flows = grid::flows_from_angles(net_, d.angles);
        d.cost = net_.total_cost(generation);
        return d;
    }

    /// Residuals of the same constraints read off a dispatch's own fields.
    Vector violation_of(const DispatchSolution& d) const {
        require_size(d.generation.size(), generator_count(), "generation");
        require_size(d.flows.size(), static_cast<Eigen::Index>(net_.line_count()), "flows");
        require_size(d.angles.size(), bus_count(), "angles");
        Vector v(constraint_count());
        for (Eigen::Index r = 0; r < v.size(); ++r) {
            const ConstraintTag& t = tags_[static_cast<std::size_t>(r)];
            const auto e = static_cast<Eigen::Index>(t.element);
            double excess = 0.0;
            switch (t.kind) {
                case ConstraintKind::generator_min: excess = net_.generators[t.element].p_min - d.generation[e]; break;
                case ConstraintKind::generator_max: excess = d.generation[e] - net_.generators[t.element].p_max; break;
                case ConstraintKind::flow_max: excess = d.flows[e] - *net_.lines[t.element].flow_limit; break;
                case ConstraintKind::flow_min: excess = -d.flows[e] - *net_.lines[t.element].flow_limit; break;
                case ConstraintKind::angle_max: excess = d.angles[e] - net_.buses[t.element].angle_max; break;
                case ConstraintKind::angle_min: excess = net_.buses[t.element].angle_min - d.angles[e]; break;
            }
            v[r] = std::max(0.0, excess);
        }
        return v;
    }

private:
    void build_rows() {
        const Eigen::Index ng = generator_count();
        const Eigen::Index nb = bus_count();
        std::vector<Eigen::Index> limited_lines, max_buses, min_buses;
        for (std::size_t i = 0; i < net_.lines.size(); ++i)
            if (net_.lines[i].flow_limit) limited_lines.push_back(static_cast<Eigen::Index>(i));
        for (std::size_t k = 0; k < net_.buses.size(); ++k) {
            if (k == net_.slack_bus) continue;
            if (std::isfinite(net_.buses[k].angle_max)) max_buses.push_back(static_cast<Eigen::Index>(k));
            if (std::isfinite(net_.buses[k].angle_min)) min_buses.push_back(static_cast<Eigen::Index>(k));
        }
        const auto nl = static_cast<Eigen::Index>(limited_lines.size());
        const Eigen::Index m = 2 * ng + 2 * nl + static_cast<Eigen::Index>(max_buses.size() + min_buses.size());
        rows_ = Matrix::Zero(m, ng);
        limit_ = Vector::Zero(m);
        load_shift_ = Matrix::Zero(m, nb);
        tags_.clear();
        tags_.reserve(static_cast<std::size_t>(m));

        Eigen::Index r = 0;
        for (Eigen::Index i = 0; i < ng; ++i, ++r) {
            rows_(r, i) = -1.0;
            limit_[r] = -net_.generators[static_cast<std::size_t>(i)].p_min;
            tags_.push_back({ConstraintKind::generator_min, static_cast<std::size_t>(i)});
        }
        for (Eigen::Index i = 0; i < ng; ++i, ++r) {
            rows_(r, i) = 1.0;
            limit_[r] = net_.generators[static_cast<std::size_t>(i)].p_max;
            tags_.push_back({ConstraintKind::generator_max, static_cast<std::size_t>(i)});
        }
        // flow = ptdf * (C g - d)
        for (const int sign : {1, -1}) {
            for (Eigen::Index l : limited_lines) {
                rows_.row(r) = sign * factors_.ptdf.row(l) * incidence_;
                load_shift_.row(r) = sign * factors_.ptdf.row(l);
                limit_[r] = *net_.lines[static_cast<std::size_t>(l)].flow_limit;
                tags_.push_back({sign > 0 ? ConstraintKind::flow_max : ConstraintKind::flow_min, static_cast<std::size_t>(l)});
                ++r;
            }
        }
        // theta = X * (C g - d)
        const Matrix& x = factors_.angle_sensitivity;
        for (Eigen::Index k : max_buses) {
            rows_.row(r) = x.row(k) * incidence_;
            load_shift_.row(r) = x.row(k);
            limit_[r] = net_.buses[static_cast<std::size_t>(k)].angle_max;
            tags_.push_back({ConstraintKind::angle_max, static_cast<std::size_t>(k)});
            ++r;
        }
        for (Eigen::Index k : min_buses) {
            rows_.row(r) = -x.row(k) * incidence_;
            load_shift_.row(r) = -x.row(k);
            limit_[r] = -net_.buses[static_cast<std::size_t>(k)].angle_min;
            tags_.push_back({ConstraintKind::angle_min, static_cast<std::size_t>(k)});
            ++r;
        }
    }

    void build_reduction() {
        const Eigen::Index ng = generator_count();
        selection_ = Matrix::Zero(ng, ng - 1);
        Eigen::Index c = 0;
        for (Eigen::Index i = 0; i < ng; ++i) {
            if (i == static_cast<Eigen::Index>(dependent_)) continue;
            selection_(i, c) = 1.0;
            selection_(static_cast<Eigen::Index>(dependent_), c) = -1.0;
            ++c;
        }
        reduced_rows_ = rows_ * selection_;
    }

    grid::Network net_;
    grid::SusceptanceFactors factors_;
    Matrix incidence_;
    std::size_t dependent_ = 0;
    Matrix rows_;
    Vector limit_;
    Matrix load_shift_;
    std::vector<ConstraintTag> tags_;
    Matrix selection_;
    Matrix reduced_rows_;
};

}  // namespace poisonopf::opf
