#pragma once

// Training-set poisoning. A surrogate regression network stands in for the
// victim; each training input moves along the sign (or direction) of the
// surrogate's input gradient of its MSE and is clipped to a relative band
// [x - L|x|, x + L|x|] around the clean value. Labels are never touched.

#include "poisonopf/common.hpp"
#include "poisonopf/neural.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace poisonopf::attack {

enum class Mode { sign_gradient, raw_gradient };

inline const char* to_string(Mode m) { return m == Mode::sign_gradient ? "sign-gradient" : "raw-gradient"; }

inline Mode mode_from_string(const std::string& s) {
    if (s == "sign-gradient" || s == "sign") return Mode::sign_gradient;
    if (s == "raw-gradient" || s == "raw") return Mode::raw_gradient;
    throw ValidationError("unknown attack mode '" + s + "'");
}

struct AttackConfig {
    double bound = 0.75;  // L
    // delta, pu; 0 leaves the data unchanged. Unset picks the saturating step
    // L * max|x| of the data being poisoned.
    std::optional<double> step;
    int iterations = 1;
    Mode mode = Mode::sign_gradient;
    std::uint64_t surrogate_seed = 7;
    int surrogate_epochs = 1500;
    double surrogate_learning_rate = 3e-3;

    void check() const {
        if (!(bound >= 0.0 && bound < 1.0)) throw ValidationError("attack bound must satisfy 0 <= L < 1");
        if (step && (!(*step >= 0.0) || !std::isfinite(*step))) throw ValidationError("attack step must be finite and >= 0");
        if (iterations < 1) throw ValidationError("attack iterations must be >= 1");
        if (surrogate_epochs < 1) throw ValidationError("surrogate_epochs must be >= 1");
        if (!(surrogate_learning_rate > 0.0)) throw ValidationError("surrogate_learning_rate must be > 0");
    }

    bool operator==(const AttackConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const AttackConfig& c) {
    j = {{"bound", c.bound},
         {"step", c.step ? nlohmann::json(*c.step) : nlohmann::json(nullptr)},
         {"iterations", c.iterations},
         {"mode", to_string(c.mode)},
         {"surrogate_seed", c.surrogate_seed},
         {"surrogate_epochs", c.surrogate_epochs},
         {"surrogate_learning_rate", c.surrogate_learning_rate}};
}

inline void from_json(const nlohmann::json& j, AttackConfig& c) {
    if (!j.is_object()) throw ValidationError("attack config must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        const auto& v = it.value();
        if (k == "bound") c.bound = v.get<double>();
        else if (k == "step") c.step = v.is_null() ? std::nullopt : std::optional(v.get<double>());
        else if (k == "iterations") c.iterations = v.get<int>();
        else if (k == "mode") c.mode = mode_from_string(v.get<std::string>());
        else if (k == "surrogate_seed") c.surrogate_seed = v.get<std::uint64_t>();
        else if (k == "surrogate_epochs") c.surrogate_epochs = v.get<int>();
        else if (k == "surrogate_learning_rate") c.surrogate_learning_rate = v.get<double>();
        else throw ValidationError("unknown attack config key '" + k + "'");
    }
    c.check();
}

/// Elementwise clip of x_new into [x - L|x|, x + L|x|].
inline Vector clip_bound(const Vector& x_new, const Vector& x_orig, double bound) {
    require_size(x_new.size(), x_orig.size(), "clip input");
    Vector out(x_new.size());
    for (Eigen::Index i = 0; i < x_new.size(); ++i) {
        const double width = bound * std::abs(x_orig[i]);
        out[i] = std::min(std::max(x_new[i], x_orig[i] - width), x_orig[i] + width);
    }
    return out;
}

/// Mean over samples of ||f(x) - y||^2 / n_out.
inline double surrogate_loss(const nn::MlpModel& m, const Matrix& inputs, const Matrix& labels) {
    const Matrix r = nn::predict_batch(m, inputs) - labels;
    return r.squaredNorm() / static_cast<double>(r.rows() * r.cols());
}

struct SurrogateReport {
    std::vector<double> loss_trace;
    double seconds = 0.0;
};

/// Plain full-batch MSE regression loads -> generation with the default
/// architecture; inputs are standardized during training and the scaling is
/// folded into the first layer.
inline nn::MlpModel train_surrogate(const Matrix& loads, const Matrix& labels, const AttackConfig& cfg,
                                    SurrogateReport* report = nullptr) {
    cfg.check();
    if (loads.cols() == 0) throw ValidationError("surrogate training set is empty");
    if (labels.cols() != loads.cols()) throw DimensionError("loads and labels differ in sample count");
    const auto start = std::chrono::steady_clock::now();
    const int in = static_cast<int>(loads.rows());
    const int out = static_cast<int>(labels.rows());
    nn::MlpModel m = nn::init_mlp(nn::default_architecture(in, out), nn::Activation::relu, nn::Activation::identity,
                                  cfg.surrogate_seed);
    const nn::InputScaling scaling = nn::InputScaling::fit(loads);
    const Matrix x = scaling.apply(loads);
    nn::OptState opt = nn::make_adam(m, cfg.surrogate_learning_rate);
    const double norm = static_cast<double>(labels.rows() * labels.cols());
    SurrogateReport local;
    for (int e = 0; e < cfg.surrogate_epochs; ++e) {
        const nn::Cache c = nn::forward_batch(m, x);
        const Matrix r = c.output() - labels;
        const double loss = r.squaredNorm() / norm;
        if (!std::isfinite(loss)) throw NumericalError("surrogate training diverged at epoch " + std::to_string(e));
        local.loss_trace.push_back(loss);
        nn::adam_step(m, opt, nn::backward(m, c, (2.0 / norm) * r).params);
    }
    nn::fold_input_scaling(m, scaling);
    local.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (report) *report = std::move(local);
    return m;
}

inline std::string surrogate_fingerprint(const nn::MlpModel& m) { return fingerprint(nn::serialize_model(m)); }

struct PoisonDiagnostics {
    double clean_loss = 0.0;
    double poisoned_loss = 0.0;
    double saturated_fraction = 0.0;        // of coordinates with nonzero clean value
    double max_relative_perturbation = 0.0;
    double step = 0.0;                      // pu, as applied
};

struct PoisonResult {
    Matrix loads;
    PoisonDiagnostics diagnostics;
};

/// Gradient of ||f(x) - y||^2 / n_out with respect to x.
inline Vector input_gradient(const nn::MlpModel& m, const Vector& x, const Vector& y) {
    const nn::Forward f = nn::forward(m, x);
    const Vector g = (2.0 / static_cast<double>(y.size())) * (f.output - y);
    return nn::backward(m, f.cache, g).input_grad.col(0);
}

/// Poisons every column of `loads`; `labels` only guide the gradient.
inline PoisonResult poison_inputs(const Matrix& loads, const Matrix& labels, const nn::MlpModel& surrogate,
                                  const AttackConfig& cfg, int threads = 1) {
    cfg.check();
    if (surrogate.input_size() != loads.rows()) throw DimensionError("surrogate input width differs from the load dimension");
    if (surrogate.output_size() != labels.rows() || labels.cols() != loads.cols())
        throw DimensionError("label matrix shape does not match the surrogate / loads");

    PoisonResult out;
    out.loads = loads;
    if (cfg.bound == 0.0) {
        const double loss = surrogate_loss(surrogate, loads, labels);
        out.diagnostics.clean_loss = loss;
        out.diagnostics.poisoned_loss = loss;
        return out;
    }
    const double step = cfg.step ? *cfg.step : cfg.bound * loads.cwiseAbs().maxCoeff();
    const auto n = static_cast<std::size_t>(loads.cols());
    parallel_for(n, threads, [&](std::size_t s) {
        const auto j = static_cast<Eigen::Index>(s);
        const Vector orig = loads.col(j);
        const Vector y = labels.col(j);
        Vector x = orig;
        for (int it = 0; it < cfg.iterations; ++it) {
            const Vector g = input_gradient(surrogate, x, y);
            if (!g.allFinite()) throw NumericalError("sample " + std::to_string(s) + ": non-finite input gradient");
            Vector direction;
            if (cfg.mode == Mode::sign_gradient) {
                direction = g.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
            } else {
                const double norm = g.norm();
                direction = norm > 0.0 ? Vector(g / norm) : Vector::Zero(g.size());
            }
            x = clip_bound(x + step * direction, orig, cfg.bound);
        }
        out.loads.col(j) = x;
    });

    PoisonDiagnostics& d = out.diagnostics;
    d.step = step;
    d.clean_loss = surrogate_loss(surrogate, loads, labels);
    d.poisoned_loss = surrogate_loss(surrogate, out.loads, labels);
    std::size_t nonzero = 0, saturated = 0;
    for (Eigen::Index j = 0; j < loads.cols(); ++j) {
        for (Eigen::Index i = 0; i < loads.rows(); ++i) {
            const double x0 = loads(i, j);
            if (x0 == 0.0) continue;
            ++nonzero;
            const double moved = std::abs(out.loads(i, j) - x0);
            d.max_relative_perturbation = std::max(d.max_relative_perturbation, moved / std::abs(x0));
            const double width = cfg.bound * std::abs(x0);
            if (out.loads(i, j) == x0 + width || out.loads(i, j) == x0 - width) ++saturated;
        }
    }
    d.saturated_fraction = nonzero ? static_cast<double>(saturated) / static_cast<double>(nonzero) : 0.0;
    return out;
}

/// Smallest sign-mode step at which every perturbable coordinate reaches its
/// band edge in one iteration: L * max |x|. Any larger step gives the same
/// poisoned data bit for bit.
inline double saturation_threshold(const Matrix& loads, const AttackConfig& cfg) {
    if (cfg.mode != Mode::sign_gradient || cfg.iterations != 1)
        throw ValidationError("saturation threshold is defined for single-step sign-gradient attacks");
    return loads.size() ? cfg.bound * loads.cwiseAbs().maxCoeff() : 0.0;
}

}  // namespace poisonopf::attack
