#pragma once

// Learned dispatch proxies.
//
//   penalty   network -> g, trained with squared constraint violations in the loss
//   dc3       network -> u (reduced), completed to g, then a fixed number of
//             gradient steps on the squared violation; trained through the
//             unrolled steps
//   loop_lc   tanh network -> z in the open unit box, gauge-mapped into the
//             reduced polytope around its Chebyshev center; every output is
//             feasible by construction
//
// Reduced coordinates and constraint rows come from opf::DispatchModel.

#include "poisonopf/common.hpp"
#include "poisonopf/dcopf.hpp"
#include "poisonopf/dispatch.hpp"
#include "poisonopf/native_case.hpp"
#include "poisonopf/neural.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

namespace poisonopf::proxy {

enum class ProxyKind { penalty, dc3, loop_lc };

inline const char* to_string(ProxyKind k) {
    switch (k) {
        case ProxyKind::penalty: return "penalty";
        case ProxyKind::dc3: return "dc3";
        case ProxyKind::loop_lc: return "loop-lc";
    }
    return "?";
}

inline ProxyKind kind_from_string(const std::string& s) {
    if (s == "penalty") return ProxyKind::penalty;
    if (s == "dc3") return ProxyKind::dc3;
    if (s == "loop-lc" || s == "loop_lc" || s == "looplc") return ProxyKind::loop_lc;
    throw ValidationError("unknown proxy kind '" + s + "'");
}

inline constexpr ProxyKind kAllKinds[] = {ProxyKind::penalty, ProxyKind::dc3, ProxyKind::loop_lc};

struct ProxyConfig {
    double penalty_weight = 10.0;
    int correction_steps = 10;
    double correction_rate = 0.01;
    bool unroll_correction = true;
    bool correct_at_inference = true;
    int epochs = 2000;
    int batch_size = 0;  // 0: full batch
    double learning_rate = 1e-3;
    std::uint64_t seed = 1;
    int hidden_layers = 2;
    int hidden_width = 0;  // 0: max(32, 2 * inputs)
    // loop_lc: drop samples whose polytope has no interior instead of aborting
    bool skip_empty_polytopes = false;

    void check() const {
        if (!(penalty_weight >= 0.0)) throw ValidationError("penalty_weight must be >= 0");
        if (correction_steps < 0) throw ValidationError("correction_steps must be >= 0");
        if (!(correction_rate > 0.0)) throw ValidationError("correction_rate must be > 0");
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
        if (batch_size < 0) throw ValidationError("batch_size must be >= 0");
        if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
        if (hidden_layers < 0) throw ValidationError("hidden_layers must be >= 0");
        if (hidden_width < 0) throw ValidationError("hidden_width must be >= 0");
    }

    bool operator==(const ProxyConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ProxyConfig& c) {
    j = {{"penalty_weight", c.penalty_weight},   {"correction_steps", c.correction_steps},
         {"correction_rate", c.correction_rate}, {"unroll_correction", c.unroll_correction},
         {"correct_at_inference", c.correct_at_inference},
         {"epochs", c.epochs},                   {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},     {"seed", c.seed},
         {"hidden_layers", c.hidden_layers},     {"hidden_width", c.hidden_width},
         {"skip_empty_polytopes", c.skip_empty_polytopes}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline void from_json(const nlohmann::json& j, ProxyConfig& c) {
    if (!j.is_object()) throw ValidationError("proxy config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        if (k == "penalty_weight") c.penalty_weight = v.get<double>();
        else if (k == "correction_steps") c.correction_steps = v.get<int>();
        else if (k == "correction_rate") c.correction_rate = v.get<double>();
        else if (k == "unroll_correction") c.unroll_correction = v.get<bool>();
        else if (k == "correct_at_inference") c.correct_at_inference = v.get<bool>();
        else if (k == "epochs") c.epochs = v.get<int>();
        else if (k == "batch_size") c.batch_size = v.get<int>();
        else if (k == "learning_rate") c.learning_rate = v.get<double>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else if (k == "hidden_layers") c.hidden_layers = v.get<int>();
        else if (k == "hidden_width") c.hidden_width = v.get<int>();
        else if (k == "skip_empty_polytopes") c.skip_empty_polytopes = v.get<bool>();
        else throw ValidationError("unknown proxy config key '" + k + "'");
    }
    c.check();
}

struct ProxyModel {
    ProxyKind kind = ProxyKind::penalty;
    nn::MlpModel core;
    ProxyConfig config;
    std::string network_fingerprint;
};

struct TrainReport {
    std::vector<double> loss_trace;  // mean loss per epoch
    double final_loss = 0.0;
    double seconds = 0.0;
    std::size_t skipped_samples = 0;
};

// --- completion and violation --------------------------------------------------

/// Dispatch from reduced coordinates: the dependent generator closes the
/// balance, angles come from the susceptance solve.
inline opf::DispatchSolution complete_dispatch(const opf::DispatchModel& model, const Vector& loads, const Vector& u) {
    return model.dispatch_from_generation(model.generation_from_reduced(u, loads), loads);
}

inline opf::DispatchSolution complete_dispatch(const grid::Network& net, const Vector& loads, const Vector& u) {
    return complete_dispatch(opf::DispatchModel(net), loads, u);
}

/// max(0, excess) per inequality, read from the dispatch's own flows and angles.
inline Vector violation_vector(const opf::DispatchModel& model, const opf::DispatchSolution& d) {
    return model.violation_of(d);
}

inline Vector violation_vector(const grid::Network& net, const Vector& /*loads*/, const opf::DispatchSolution& d) {
    return opf::DispatchModel(net).violation_of(d);
}

// --- DC3 correction ----------------------------------------------------------------

/// Iterates of the correction; iterates[0] is the input.
struct CorrectionTape {
    std::vector<Vector> iterates;
    const Vector& result() const { return iterates.back(); }
};

/// u <- u - rate * grad ||max(0, A u - b)||^2, exactly `steps` times.
inline CorrectionTape dc3_correct(const Matrix& A, const Vector& b, const Vector& u, int steps, double rate) {
    if (steps < 0) throw ValidationError("correction steps must be >= 0");
    require_size(u.size(), A.cols(), "reduced vector");
    require_size(b.size(), A.rows(), "polytope rhs");
    CorrectionTape tape;
    tape.iterates.reserve(static_cast<std::size_t>(steps) + 1);
    tape.iterates.push_back(u);
    for (int t = 0; t < steps; ++t) {
        const Vector& cur = tape.iterates.back();
        const Vector v = (A * cur - b).cwiseMax(0.0);
        tape.iterates.push_back(cur - 2.0 * rate * (A.transpose() * v));
    }
    return tape;
}

inline Vector dc3_correct(const opf::DispatchModel& model, const Vector& loads, const Vector& u, int steps, double rate) {
    return dc3_correct(model.reduced_rows(), model.reduced_rhs(loads), u, steps, rate).result();
}

/// Pulls a gradient at the last iterate back to the first. Each step has
/// Jacobian I - 2 rate A_act^T A_act over the rows active at that iterate.
inline Vector dc3_backward(const Matrix& A, const Vector& b, const CorrectionTape& tape, double rate, Vector grad) {
    for (std::size_t t = tape.iterates.size() - 1; t-- > 0;) {
        const Vector excess = A * tape.iterates[t] - b;
        Vector a_grad = A * grad;
        for (Eigen::Index i = 0; i < excess.size(); ++i)
            if (!(excess[i] > 0.0)) a_grad[i] = 0.0;
        grad -= 2.0 * rate * (A.transpose() * a_grad);
    }
    return grad;
}

// --- gauge map ------------------------------------------------------------------

struct GaugeTrace {
    Vector u;
    double norm = 0.0;   // ||z||_inf
    double gauge = 0.0;  // phi(z)
    Eigen::Index norm_index = -1;
    Eigen::Index gauge_index = -1;
};

/// Distances b - A c of the center to each face; all must be positive.
inline Vector face_distances(const opf::Polytope& p, const Vector& center) {
    require_size(center.size(), p.dimension(), "center");
    const Vector rho = p.b - p.A * center;
    if (rho.size() > 0 && !(rho.minCoeff() > 0.0)) throw ValidationError("gauge map center is not strictly interior");
    return rho;
}

/// u = c + (||z||_inf / phi(z)) z with phi(z) = max_i A_i z / rho_i. Ties in
/// either maximum go to the lowest index.
inline GaugeTrace gauge_map_traced(const opf::Polytope& p, const Vector& center, const Vector& rho, const Vector& z) {
    require_size(z.size(), p.dimension(), "gauge input");
    GaugeTrace t;
    t.u = center;
    if (z.size() == 0) return t;
    t.norm = z.cwiseAbs().maxCoeff(&t.norm_index);
    if (t.norm > 1.0 + 1e-12) throw ValidationError("gauge map input lies outside the unit box");
    if (t.norm == 0.0) return t;
    const Vector ratio = (p.A * z).cwiseQuotient(rho);
    t.gauge = ratio.maxCoeff(&t.gauge_index);
    if (!(t.gauge > 0.0)) throw ValidationError("polytope is unbounded along the gauge direction");
    t.u = center + (t.norm / t.gauge) * z;
    return t;
}

inline Vector gauge_map(const opf::Polytope& p, const Vector& center, const Vector& z) {
    return gauge_map_traced(p, center, face_distances(p, center), z).u;
}

/// dL/dz from dL/du through u = c + s(z) z, s = ||z||_inf / phi(z).
inline Vector gauge_backward(const opf::Polytope& p, const Vector& rho, const Vector& z, const GaugeTrace& t,
                             const Vector& grad_u) {
    if (t.norm == 0.0) return Vector::Zero(z.size());
    const double s = t.norm / t.gauge;
    const double zg = z.dot(grad_u);
    Vector grad = s * grad_u;
    grad[t.norm_index] += (z[t.norm_index] > 0.0 ? 1.0 : -1.0) / t.gauge * zg;
    grad -= (t.norm / (rho[t.gauge_index] * t.gauge * t.gauge) * zg) * p.A.row(t.gauge_index).transpose();
    return grad;
}

// --- training problem ---------------------------------------------------------------

/// Per-sample data a loss evaluation needs, prepared once per training set.
struct Problem {
    ProxyKind kind = ProxyKind::penalty;
    Matrix loads;         // bus_count x N
    Matrix inputs;        // network inputs, loads or their standardized form
    Matrix labels;        // generator_count x N
    Matrix rhs;           // penalty: rows rhs; dc3/loop_lc: reduced rhs
    Vector total_load;    // N
    Matrix centers;       // loop_lc only, reduced_size x N
    Matrix face_distance; // loop_lc only, rows x N
    std::vector<std::size_t> source_index;  // original sample index of each column
    std::size_t skipped = 0;

    Eigen::Index size() const { return loads.cols(); }
};

inline constexpr double kMinimumChebyshevRadius = 1e-9;

inline Problem prepare_problem(const opf::DispatchModel& model, ProxyKind kind, const Matrix& loads,
                               const Matrix& labels, bool skip_empty = false, int threads = 1) {
    if (loads.cols() == 0) throw ValidationError("training set is empty");
    if (loads.rows() != model.bus_count()) throw DimensionError("load rows do not match the network bus count");
    if (labels.rows() != model.generator_count() || labels.cols() != loads.cols())
        throw DimensionError("label matrix shape does not match the loads");
    if (kind != ProxyKind::penalty && model.generator_count() < 2)
        throw ValidationError("reduced-coordinate proxies need at least two generators");

    const auto n = static_cast<std::size_t>(loads.cols());
    std::vector<char> keep(n, 1);
    Matrix centers, distances;
    if (kind == ProxyKind::loop_lc) {
        centers = Matrix::Zero(model.reduced_size(), loads.cols());
        distances = Matrix::Zero(model.constraint_count(), loads.cols());
        parallel_for(n, threads, [&](std::size_t i) {
            const auto col = static_cast<Eigen::Index>(i);
            const opf::Polytope poly = opf::reduced_polytope(model, loads.col(col));
            const opf::ChebyshevBall ball = opf::chebyshev_ball(poly);
            if (!(ball.radius > kMinimumChebyshevRadius)) {
                keep[i] = 0;
                return;
            }
            centers.col(col) = ball.center;
            distances.col(col) = poly.b - poly.A * ball.center;
        });
        if (!skip_empty) {
            for (std::size_t i = 0; i < n; ++i)
                if (!keep[i]) throw ValidationError("sample " + std::to_string(i) + ": feasible polytope has empty interior");
        }
    }

    Problem p;
    p.kind = kind;
    std::vector<Eigen::Index> cols;
    for (std::size_t i = 0; i < n; ++i) {
        if (keep[i]) {
            cols.push_back(static_cast<Eigen::Index>(i));
            p.source_index.push_back(i);
        } else {
            ++p.skipped;
        }
    }
    if (cols.empty()) throw ValidationError("no usable training samples remain");
    const auto m = static_cast<Eigen::Index>(cols.size());
    p.loads.resize(loads.rows(), m);
    p.labels.resize(labels.rows(), m);
    p.total_load.resize(m);
    const Eigen::Index rows = model.constraint_count();
    p.rhs.resize(rows, m);
    if (kind == ProxyKind::loop_lc) {
        p.centers.resize(model.reduced_size(), m);
        p.face_distance.resize(rows, m);
    }
    for (Eigen::Index j = 0; j < m; ++j) {
        const Eigen::Index src = cols[static_cast<std::size_t>(j)];
        p.loads.col(j) = loads.col(src);
        p.labels.col(j) = labels.col(src);
        p.total_load[j] = loads.col(src).sum();
        p.rhs.col(j) = kind == ProxyKind::penalty ? model.rhs(loads.col(src)) : model.reduced_rhs(loads.col(src));
        if (kind == ProxyKind::loop_lc) {
            p.centers.col(j) = centers.col(src);
            p.face_distance.col(j) = distances.col(src);
        }
    }
    p.inputs = p.loads;
    return p;
}

struct SampleOutcome {
    Vector generation;
    double loss = 0.0;
    Vector output_grad;  // dL/d(network output)
};

/// Loss of one sample given the network output, and its gradient.
inline SampleOutcome sample_loss(const opf::DispatchModel& model, const ProxyConfig& cfg, const Problem& p,
                                 Eigen::Index j, const Vector& out, bool want_grad = true) {
    const double ng = static_cast<double>(model.generator_count());
    const double lambda = cfg.penalty_weight;
    const auto label = p.labels.col(j);
    SampleOutcome s;
    switch (p.kind) {
        case ProxyKind::penalty: {
            s.generation = out;
            const Vector r = out - label;
            const Vector v = (model.rows() * out - p.rhs.col(j)).cwiseMax(0.0);
            const double bal = out.sum() - p.total_load[j];
            s.loss = r.squaredNorm() / ng + lambda * (v.squaredNorm() + bal * bal);
            if (want_grad)
                s.output_grad = (2.0 / ng) * r + lambda * (2.0 * (model.rows().transpose() * v) + Vector::Constant(out.size(), 2.0 * bal));
            break;
        }
        case ProxyKind::dc3: {
            const Matrix& A = model.reduced_rows();
            const auto b = p.rhs.col(j);
            const CorrectionTape tape = dc3_correct(A, b, out, cfg.correction_steps, cfg.correction_rate);
            const Vector& u = tape.result();
            s.generation = model.generation_from_reduced(u, p.loads.col(j));
            const Vector r = s.generation - label;
            const Vector v = (A * u - b).cwiseMax(0.0);
            s.loss = r.squaredNorm() / ng + lambda * v.squaredNorm();
            if (want_grad) {
                Vector g = (2.0 / ng) * (model.selection().transpose() * r) + 2.0 * lambda * (A.transpose() * v);
                if (cfg.unroll_correction) g = dc3_backward(A, b, tape, cfg.correction_rate, std::move(g));
                s.output_grad = std::move(g);
            }
            break;
        }
        case ProxyKind::loop_lc: {
            const opf::Polytope poly{model.reduced_rows(), p.rhs.col(j)};
            const Vector rho = p.face_distance.col(j);
            const GaugeTrace t = gauge_map_traced(poly, p.centers.col(j), rho, out);
            s.generation = model.generation_from_reduced(t.u, p.loads.col(j));
            const Vector r = s.generation - label;
            s.loss = r.squaredNorm() / ng;
            if (want_grad) s.output_grad = gauge_backward(poly, rho, out, t, (2.0 / ng) * (model.selection().transpose() * r));
            break;
        }
    }
    return s;
}

struct LossAndGradient {
    double loss = 0.0;  // mean over the batch
    nn::Gradients grads;
};

/// Mean loss over the given columns of the problem and its parameter gradient.
inline LossAndGradient loss_and_gradient(const opf::DispatchModel& model, const ProxyConfig& cfg, const Problem& p,
                                         const nn::MlpModel& core, const std::vector<Eigen::Index>& batch,
                                         int threads = 1) {
    const auto n = static_cast<Eigen::Index>(batch.size());
    Matrix x(p.inputs.rows(), n);
    for (Eigen::Index k = 0; k < n; ++k) x.col(k) = p.inputs.col(batch[static_cast<std::size_t>(k)]);
    const nn::Cache cache = nn::forward_batch(core, x);
    Matrix dout(core.output_size(), n);
    std::vector<double> losses(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t k) {
        const auto col = static_cast<Eigen::Index>(k);
        SampleOutcome s = sample_loss(model, cfg, p, batch[k], cache.output().col(col));
        losses[k] = s.loss;
        dout.col(col) = s.output_grad / static_cast<double>(n);
    });
    LossAndGradient out;
    for (double l : losses) out.loss += l;
    out.loss /= static_cast<double>(n);
    out.grads = nn::backward(core, cache, dout).params;
    return out;
}

/// Central differences of the mean batch loss over every core parameter,
/// against loss_and_gradient. near_kink flags instances where a relu, an
/// active-set boundary, or a gauge argmax tie lies within `margin`; those are
/// nonsmooth points where differencing is not meaningful.
inline nn::GradientReport composed_gradient_check(const opf::DispatchModel& model, const ProxyConfig& cfg,
                                                  const Problem& p, const nn::MlpModel& core,
                                                  const std::vector<Eigen::Index>& batch, double tol = 1e-4,
                                                  double h = 1e-6, double margin = 1e-4) {
    nn::GradientReport r;
    Matrix x(p.inputs.rows(), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t k = 0; k < batch.size(); ++k) x.col(static_cast<Eigen::Index>(k)) = p.inputs.col(batch[k]);
    const nn::Cache cache = nn::forward_batch(core, x);
    for (std::size_t l = 0; l + 1 < core.layer_count(); ++l)
        if (core.hidden_activation == nn::Activation::relu && cache.pre_activations[l].cwiseAbs().minCoeff() < margin)
            r.near_kink = true;
    for (std::size_t k = 0; k < batch.size(); ++k) {
        const Eigen::Index j = batch[k];
        const Vector out = cache.output().col(static_cast<Eigen::Index>(k));
        auto close_to_zero = [&](const Vector& v) { return v.size() > 0 && v.cwiseAbs().minCoeff() < margin; };
        switch (p.kind) {
            case ProxyKind::penalty:
                if (close_to_zero(model.rows() * out - p.rhs.col(j))) r.near_kink = true;
                break;
            case ProxyKind::dc3: {
                const auto tape = dc3_correct(model.reduced_rows(), p.rhs.col(j), out, cfg.correction_steps, cfg.correction_rate);
                for (const Vector& u : tape.iterates)
                    if (close_to_zero(model.reduced_rows() * u - p.rhs.col(j))) r.near_kink = true;
                break;
            }
            case ProxyKind::loop_lc: {
                const Vector ratio = (model.reduced_rows() * out).cwiseQuotient(p.face_distance.col(j));
                const Vector mag = out.cwiseAbs();
                auto tied = [&](const Vector& v) {
                    if (v.size() < 2) return false;
                    Eigen::Index top;
                    const double best = v.maxCoeff(&top);
                    for (Eigen::Index i = 0; i < v.size(); ++i)
                        if (i != top && best - v[i] < margin) return true;
                    return false;
                };
                if (tied(ratio) || tied(mag) || mag.maxCoeff() < margin) r.near_kink = true;
                break;
            }
        }
    }

    const LossAndGradient lg = loss_and_gradient(model, cfg, p, core, batch);
    auto loss = [&](const nn::MlpModel& m) { return loss_and_gradient(model, cfg, p, m, batch).loss; };
    nn::MlpModel probe = core;
    auto visit = [&](double& w, double analytic) {
        const double w0 = w;
        w = w0 + h;
        const double up = loss(probe);
        w = w0 - h;
        const double down = loss(probe);
        w = w0;
        r.worst_relative_error = std::max(r.worst_relative_error, nn::relative_error(analytic, (up - down) / (2.0 * h)));
        ++r.checked;
    };
    for (std::size_t l = 0; l < core.layer_count(); ++l) {
        for (Eigen::Index k = 0; k < core.weights[l].size(); ++k) visit(probe.weights[l].data()[k], lg.grads.weights[l].data()[k]);
        for (Eigen::Index k = 0; k < core.biases[l].size(); ++k) visit(probe.biases[l][k], lg.grads.biases[l][k]);
    }
    r.passed = r.worst_relative_error <= tol;
    return r;
}

inline nn::MlpModel make_core(const opf::DispatchModel& model, ProxyKind kind, const ProxyConfig& cfg) {
    const int inputs = static_cast<int>(model.bus_count());
    const int outputs = static_cast<int>(kind == ProxyKind::penalty ? model.generator_count() : model.reduced_size());
    std::vector<int> sizes{inputs};
    const int width = cfg.hidden_width > 0 ? cfg.hidden_width : std::max(32, 2 * inputs);
    for (int i = 0; i < cfg.hidden_layers; ++i) sizes.push_back(width);
    sizes.push_back(outputs);
    return nn::init_mlp(sizes, nn::Activation::relu,
                        kind == ProxyKind::loop_lc ? nn::Activation::tanh : nn::Activation::identity, cfg.seed);
}

struct Trained {
    ProxyModel model;
    TrainReport report;
};

/// Adam on the proxy loss with standardized inputs; the scaling is folded into
/// the first layer afterwards, so the returned core takes per-unit loads.
/// Mini-batches are drawn by a seeded shuffle.
inline Trained train(const opf::DispatchModel& model, ProxyKind kind, const Matrix& loads, const Matrix& labels,
                     const ProxyConfig& cfg, int threads = 1) {
    cfg.check();
    const auto start = std::chrono::steady_clock::now();
    Problem p = prepare_problem(model, kind, loads, labels, cfg.skip_empty_polytopes, threads);
    const nn::InputScaling scaling = nn::InputScaling::fit(p.loads);
    p.inputs = scaling.apply(p.loads);

    Trained out;
    out.model.kind = kind;
    out.model.config = cfg;
    out.model.network_fingerprint = grid::network_fingerprint(model.network());
    out.model.core = make_core(model, kind, cfg);
    out.report.skipped_samples = p.skipped;

    nn::OptState opt = nn::make_adam(out.model.core, cfg.learning_rate);
    const auto n = static_cast<std::size_t>(p.size());
    const std::size_t batch = cfg.batch_size > 0 ? std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), n) : n;
    std::vector<Eigen::Index> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<Eigen::Index>(i);
    Rng shuffle_rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);

    out.report.loss_trace.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (batch < n) {
            for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[static_cast<std::size_t>(shuffle_rng() % (i + 1))]);
        }
        double total = 0.0;
        for (std::size_t first = 0; first < n; first += batch) {
            const std::vector<Eigen::Index> cols(order.begin() + static_cast<std::ptrdiff_t>(first),
                                                 order.begin() + static_cast<std::ptrdiff_t>(std::min(n, first + batch)));
            const LossAndGradient lg = loss_and_gradient(model, cfg, p, out.model.core, cols, threads);
            if (!std::isfinite(lg.loss) || !std::isfinite(lg.grads.max_abs()))
                throw NumericalError(std::string(to_string(kind)) + " training diverged at epoch " + std::to_string(epoch));
            total += lg.loss * static_cast<double>(cols.size());
            nn::adam_step(out.model.core, opt, lg.grads);
        }
        out.report.loss_trace.push_back(total / static_cast<double>(n));
    }

    std::vector<Eigen::Index> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<Eigen::Index>(i);
    out.report.final_loss = loss_and_gradient(model, cfg, p, out.model.core, all, threads).loss;
    nn::fold_input_scaling(out.model.core, scaling);
    out.report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return out;
}

inline Trained train_penalty(const opf::DispatchModel& m, const Matrix& loads, const Matrix& labels, const ProxyConfig& cfg) {
    return train(m, ProxyKind::penalty, loads, labels, cfg);
}
inline Trained train_dc3(const opf::DispatchModel& m, const Matrix& loads, const Matrix& labels, const ProxyConfig& cfg) {
    return train(m, ProxyKind::dc3, loads, labels, cfg);
}
inline Trained train_looplc(const opf::DispatchModel& m, const Matrix& loads, const Matrix& labels, const ProxyConfig& cfg) {
    return train(m, ProxyKind::loop_lc, loads, labels, cfg);
}

// --- inference ---------------------------------------------------------------------

inline void check_compatible(const ProxyModel& pm, const opf::DispatchModel& model) {
    if (pm.core.input_size() != model.bus_count())
        throw DimensionError("proxy expects " + std::to_string(pm.core.input_size()) + " loads, network has " +
                             std::to_string(model.bus_count()) + " buses");
}

/// Generation predicted for one load vector.
inline Vector predict_generation(const ProxyModel& pm, const opf::DispatchModel& model, const Vector& loads) {
    check_compatible(pm, model);
    require_size(loads.size(), model.bus_count(), "loads");
    const Vector out = nn::forward(pm.core, loads).output;
    switch (pm.kind) {
        case ProxyKind::penalty: return out;
        case ProxyKind::dc3: {
            const int steps = pm.config.correct_at_inference ? pm.config.correction_steps : 0;
            return model.generation_from_reduced(dc3_correct(model, loads, out, steps, pm.config.correction_rate), loads);
        }
        case ProxyKind::loop_lc: {
            const opf::Polytope poly = opf::reduced_polytope(model, loads);
            const opf::ChebyshevBall ball = opf::chebyshev_center(poly);
            return model.generation_from_reduced(gauge_map(poly, ball.center, out), loads);
        }
    }
    return out;
}

inline opf::DispatchSolution predict(const ProxyModel& pm, const opf::DispatchModel& model, const Vector& loads) {
    return model.dispatch_from_generation(predict_generation(pm, model, loads), loads);
}

inline opf::DispatchSolution predict(const ProxyModel& pm, const grid::Network& net, const Vector& loads) {
    return predict(pm, opf::DispatchModel(net), loads);
}

// --- persistence ---------------------------------------------------------------------
//
// <path> holds the network in the binary model format; <path>.json holds the
// kind, the proxy config and the fingerprint of the training network.

inline nlohmann::json proxy_sidecar(const ProxyModel& pm) {
    return {{"kind", to_string(pm.kind)}, {"config", pm.config}, {"network_fingerprint", pm.network_fingerprint}};
}

inline void save_proxy(const ProxyModel& pm, const std::string& path) {
    nn::save_model(pm.core, path);
    std::ofstream f(path + ".json", std::ios::trunc);
    if (!f) throw IoError("cannot write " + path + ".json");
    f << proxy_sidecar(pm).dump(2) << "\n";
}

/// Loads a proxy and refuses it when it was trained on a different network.
inline ProxyModel load_proxy(const std::string& path, const grid::Network& net) {
    std::ifstream f(path + ".json");
    if (!f) throw IoError("cannot read " + path + ".json");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(f);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ".json: " + e.what());
    }
    ProxyModel pm;
    try {
        pm.kind = kind_from_string(j.at("kind").get<std::string>());
        pm.config = j.at("config").get<ProxyConfig>();
        pm.network_fingerprint = j.at("network_fingerprint").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ".json: " + e.what());
    }
    const std::string expected = grid::network_fingerprint(net);
    if (pm.network_fingerprint != expected)
        throw ValidationError("proxy was trained on network " + pm.network_fingerprint + ", not " + expected);
    pm.core = nn::load_model(path);
    return pm;
}

}  // namespace poisonopf::proxy
