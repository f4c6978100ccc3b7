#pragma once

// Dense feed-forward network with hand-written reverse mode.
//
// Batches are column-major: one sample per column. Gradients returned by
// backward are sums over the batch columns, so callers fold any 1/N into
// the output gradient they pass in.

#include "poisonopf/common.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

namespace poisonopf::nn {

enum class Activation : std::uint8_t { identity = 0, relu = 1, tanh = 2 };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::tanh: return "tanh";
    }
    return "?";
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::identity;
    if (s == "relu") return Activation::relu;
    if (s == "tanh") return Activation::tanh;
    throw ValidationError("unknown activation '" + s + "'");
}

struct MlpModel {
    std::vector<int> layer_sizes;
    std::vector<Matrix> weights;  // weights[l] is sizes[l+1] x sizes[l]
    std::vector<Vector> biases;
    Activation hidden_activation = Activation::relu;
    Activation output_activation = Activation::identity;
    std::uint64_t seed = 0;

    std::size_t layer_count() const { return weights.size(); }
    int input_size() const { return layer_sizes.front(); }
    int output_size() const { return layer_sizes.back(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
        return n;
    }

    Activation activation_of(std::size_t layer) const {
        return layer + 1 == weights.size() ? output_activation : hidden_activation;
    }

    bool operator==(const MlpModel& o) const {
        if (layer_sizes != o.layer_sizes || hidden_activation != o.hidden_activation ||
            output_activation != o.output_activation || seed != o.seed || weights.size() != o.weights.size())
            return false;
        for (std::size_t l = 0; l < weights.size(); ++l)
            if (!bitwise_equal(weights[l], o.weights[l]) || !bitwise_equal(biases[l], o.biases[l])) return false;
        return true;
    }
};

/// Same shapes as the model's parameters.
struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;

    static Gradients zeros_like(const MlpModel& m) {
        Gradients g;
        for (std::size_t l = 0; l < m.layer_count(); ++l) {
            g.weights.push_back(Matrix::Zero(m.weights[l].rows(), m.weights[l].cols()));
            g.biases.push_back(Vector::Zero(m.biases[l].size()));
        }
        return g;
    }

    Gradients& operator+=(const Gradients& o) {
        for (std::size_t l = 0; l < weights.size(); ++l) {
            weights[l] += o.weights[l];
            biases[l] += o.biases[l];
        }
        return *this;
    }

    double max_abs() const {
        double m = 0.0;
        for (std::size_t l = 0; l < weights.size(); ++l) {
            if (weights[l].size()) m = std::max(m, weights[l].cwiseAbs().maxCoeff());
            if (biases[l].size()) m = std::max(m, biases[l].cwiseAbs().maxCoeff());
        }
        return m;
    }
};

inline void check_architecture(const std::vector<int>& sizes) {
    if (sizes.size() < 2) throw ValidationError("an MLP needs at least an input and an output layer");
    for (int w : sizes)
        if (w < 1) throw ValidationError("layer widths must be at least 1");
}

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
inline MlpModel init_mlp(const std::vector<int>& sizes, Activation hidden, Activation output, std::uint64_t seed) {
    check_architecture(sizes);
    MlpModel m;
    m.layer_sizes = sizes;
    m.hidden_activation = hidden;
    m.output_activation = output;
    m.seed = seed;
    Rng rng(seed);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const double s = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
        m.weights.push_back(random_matrix(rng, sizes[l + 1], sizes[l], -s, s));
        m.biases.push_back(random_vector(rng, sizes[l + 1], -s, s));
    }
    return m;
}

/// Hidden widths max(32, 2 * inputs), relu hidden layers.
inline std::vector<int> default_architecture(int inputs, int outputs, int hidden_layers = 2) {
    std::vector<int> sizes{inputs};
    for (int i = 0; i < hidden_layers; ++i) sizes.push_back(std::max(32, 2 * inputs));
    sizes.push_back(outputs);
    return sizes;
}

struct Cache {
    std::vector<Matrix> activations;      // activations[0] is the input batch
    std::vector<Matrix> pre_activations;  // one per layer

    const Matrix& output() const { return activations.back(); }
};

namespace detail {

inline void activate(Activation a, const Matrix& z, Matrix& out) {
    switch (a) {
        case Activation::identity: out = z; break;
        case Activation::relu: out = z.cwiseMax(0.0); break;
        case Activation::tanh: out = z.array().tanh().matrix(); break;
    }
}

// In place: grad *= act'(z), given the activation output y.
inline void activation_backward(Activation a, const Matrix& z, const Matrix& y, Matrix& grad) {
    switch (a) {
        case Activation::identity: break;
        case Activation::relu: grad.array() *= (z.array() > 0.0).cast<double>(); break;
        case Activation::tanh: grad.array() *= 1.0 - y.array().square(); break;
    }
}

}  // namespace detail

inline Cache forward_batch(const MlpModel& m, const Matrix& inputs) {
    if (inputs.rows() != m.input_size())
        throw DimensionError("input has " + std::to_string(inputs.rows()) + " rows, model expects " +
                             std::to_string(m.input_size()));
    Cache c;
    c.activations.reserve(m.layer_count() + 1);
    c.pre_activations.reserve(m.layer_count());
    c.activations.push_back(inputs);
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        Matrix z = m.weights[l] * c.activations.back();
        z.colwise() += m.biases[l];
        Matrix a;
        detail::activate(m.activation_of(l), z, a);
        c.pre_activations.push_back(std::move(z));
        c.activations.push_back(std::move(a));
    }
    return c;
}

inline Matrix predict_batch(const MlpModel& m, const Matrix& inputs) { return forward_batch(m, inputs).output(); }

struct Forward {
    Vector output;
    Cache cache;
};

inline Forward forward(const MlpModel& m, const Vector& input) {
    Cache c = forward_batch(m, input);
    Vector out = c.output().col(0);
    return {std::move(out), std::move(c)};
}

struct Backward {
    Gradients params;
    Matrix input_grad;  // same shape as the input batch
};

/// Gradients of sum(output .* output_grad) over the batch.
inline Backward backward(const MlpModel& m, const Cache& c, const Matrix& output_grad) {
    const std::size_t L = m.layer_count();
    if (c.activations.size() != L + 1 || c.pre_activations.size() != L)
        throw DimensionError("cache does not match the model depth");
    for (std::size_t l = 0; l < L; ++l)
        if (c.pre_activations[l].rows() != m.weights[l].rows() || c.activations[l].rows() != m.weights[l].cols())
            throw DimensionError("stale cache: layer " + std::to_string(l) + " shape differs from the model");
    if (output_grad.rows() != m.output_size() || output_grad.cols() != c.output().cols())
        throw DimensionError("output gradient shape does not match the forward batch");

    Backward b;
    b.params.weights.resize(L);
    b.params.biases.resize(L);
    Matrix delta = output_grad;
    for (std::size_t l = L; l-- > 0;) {
        detail::activation_backward(m.activation_of(l), c.pre_activations[l], c.activations[l + 1], delta);
        b.params.weights[l] = delta * c.activations[l].transpose();
        b.params.biases[l] = delta.rowwise().sum();
        delta = m.weights[l].transpose() * delta;
    }
    b.input_grad = std::move(delta);
    return b;
}

// --- input scaling -----------------------------------------------------------

/// Per-feature affine standardization x -> (x - mean) / scale, fitted on a batch.
struct InputScaling {
    Vector mean;
    Vector scale;

    /// Constant features keep scale 1.
    static InputScaling fit(const Matrix& inputs) {
        InputScaling s;
        const double n = static_cast<double>(inputs.cols());
        s.mean = inputs.rowwise().sum() / n;
        s.scale = ((inputs.colwise() - s.mean).array().square().rowwise().sum() / n).sqrt().matrix();
        for (Eigen::Index i = 0; i < s.scale.size(); ++i)
            if (!(s.scale[i] > 1e-12 * std::max(1.0, std::abs(s.mean[i])))) s.scale[i] = 1.0;
        return s;
    }

    Matrix apply(const Matrix& inputs) const {
        return (inputs.colwise() - mean).array().colwise() / scale.array();
    }
};

/// Rewrites the first layer so the model takes unscaled inputs:
/// W' = W diag(1/scale), b' = b - W' mean.
inline void fold_input_scaling(MlpModel& m, const InputScaling& s) {
    require_size(s.mean.size(), m.input_size(), "scaling");
    m.weights[0] = m.weights[0] * s.scale.cwiseInverse().asDiagonal();
    m.biases[0] -= m.weights[0] * s.mean;
}

// --- optimizer -------------------------------------------------------------

struct OptState {
    Gradients first;
    Gradients second;
    std::int64_t step = 0;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

inline OptState make_adam(const MlpModel& m, double learning_rate = 1e-3) {
    if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be positive");
    OptState s;
    s.first = Gradients::zeros_like(m);
    s.second = Gradients::zeros_like(m);
    s.learning_rate = learning_rate;
    return s;
}

inline void adam_step(MlpModel& m, OptState& s, const Gradients& g) {
    if (g.weights.size() != m.layer_count() || s.first.weights.size() != m.layer_count())
        throw DimensionError("gradient depth does not match the model");
    ++s.step;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.step));
    auto update = [&](auto& param, auto& mom1, auto& mom2, const auto& grad) {
        if (grad.rows() != param.rows() || grad.cols() != param.cols()) throw DimensionError("gradient shape mismatch");
        mom1 = s.beta1 * mom1 + (1.0 - s.beta1) * grad;
        mom2 = s.beta2 * mom2 + (1.0 - s.beta2) * grad.cwiseProduct(grad);
        param.array() -= s.learning_rate * (mom1.array() / c1) / ((mom2.array() / c2).sqrt() + s.epsilon);
    };
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        update(m.weights[l], s.first.weights[l], s.second.weights[l], g.weights[l]);
        update(m.biases[l], s.first.biases[l], s.second.biases[l], g.biases[l]);
    }
}

// --- verification ------------------------------------------------------------

inline constexpr double kGradientFloor = 1e-3;

/// |a - b| / max(|a|, |b|, floor): relative for gradients of size >= floor,
/// absolute (scaled by 1/floor) below it.
inline double relative_error(double a, double b, double floor = kGradientFloor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradientReport {
    bool passed = false;
    bool near_kink = false;  // a relu pre-activation was too close to zero to difference across
    double worst_relative_error = 0.0;
    std::size_t checked = 0;
};

/// Central differences of the scalar  output . weighting  with respect to every
/// parameter and input coordinate, compared with backward().
inline GradientReport finite_diff_check(const MlpModel& m, const Vector& input, const Vector& weighting,
                                        double tol = 1e-5, double h = 1e-6) {
    require_size(weighting.size(), m.output_size(), "output weighting");
    GradientReport r;
    const Cache c = forward_batch(m, input);
    if (m.hidden_activation == Activation::relu) {
        for (std::size_t l = 0; l + 1 < m.layer_count(); ++l)
            if (c.pre_activations[l].cwiseAbs().minCoeff() < 1e3 * h) r.near_kink = true;
    }
    if (m.output_activation == Activation::relu && c.pre_activations.back().cwiseAbs().minCoeff() < 1e3 * h)
        r.near_kink = true;

    const Backward b = backward(m, c, weighting);
    auto loss = [&](const MlpModel& mm, const Vector& x) { return forward_batch(mm, x).output().col(0).dot(weighting); };
    auto consider = [&](double analytic, double numeric) {
        r.worst_relative_error = std::max(r.worst_relative_error, relative_error(analytic, numeric));
        ++r.checked;
    };

    MlpModel probe = m;
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        for (Eigen::Index k = 0; k < m.weights[l].size(); ++k) {
            double& w = probe.weights[l].data()[k];
            const double w0 = w;
            w = w0 + h;
            const double up = loss(probe, input);
            w = w0 - h;
            const double down = loss(probe, input);
            w = w0;
            consider(b.params.weights[l].data()[k], (up - down) / (2.0 * h));
        }
        for (Eigen::Index k = 0; k < m.biases[l].size(); ++k) {
            double& w = probe.biases[l][k];
            const double w0 = w;
            w = w0 + h;
            const double up = loss(probe, input);
            w = w0 - h;
            const double down = loss(probe, input);
            w = w0;
            consider(b.params.biases[l][k], (up - down) / (2.0 * h));
        }
    }
    Vector x = input;
    for (Eigen::Index k = 0; k < x.size(); ++k) {
        const double x0 = x[k];
        x[k] = x0 + h;
        const double up = loss(m, x);
        x[k] = x0 - h;
        const double down = loss(m, x);
        x[k] = x0;
        consider(b.input_grad(k, 0), (up - down) / (2.0 * h));
    }
    r.passed = r.worst_relative_error <= tol;
    return r;
}

// --- persistence ---------------------------------------------------------------
//
// Little-endian binary: "PMLP", u32 version, u32 layer count n, n x u32 widths,
// u8 hidden activation, u8 output activation, u64 seed, then per layer the
// weights (column-major doubles) followed by the biases.

inline constexpr std::uint32_t kModelFormatVersion = 1;

namespace detail {

template <class T>
void put(std::string& out, const T& v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <class T>
T take(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw ParseError("model file is truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace detail

inline std::string serialize_model(const MlpModel& m) {
    std::string out = "PMLP";
    detail::put(out, kModelFormatVersion);
    detail::put(out, static_cast<std::uint32_t>(m.layer_sizes.size()));
    for (int w : m.layer_sizes) detail::put(out, static_cast<std::uint32_t>(w));
    detail::put(out, static_cast<std::uint8_t>(m.hidden_activation));
    detail::put(out, static_cast<std::uint8_t>(m.output_activation));
    detail::put(out, m.seed);
    for (std::size_t l = 0; l < m.layer_count(); ++l) {
        out.append(reinterpret_cast<const char*>(m.weights[l].data()), sizeof(double) * static_cast<std::size_t>(m.weights[l].size()));
        out.append(reinterpret_cast<const char*>(m.biases[l].data()), sizeof(double) * static_cast<std::size_t>(m.biases[l].size()));
    }
    return out;
}

inline MlpModel deserialize_model(const std::string& in) {
    if (in.size() < 4 || in.compare(0, 4, "PMLP") != 0) throw ParseError("not a model file (bad magic)");
    std::size_t pos = 4;
    const auto version = detail::take<std::uint32_t>(in, pos);
    if (version != kModelFormatVersion) throw ParseError("unsupported model format version " + std::to_string(version));
    const auto n = detail::take<std::uint32_t>(in, pos);
    if (n > 1024) throw ParseError("implausible layer count");
    std::vector<int> sizes;
    for (std::uint32_t i = 0; i < n; ++i) sizes.push_back(static_cast<int>(detail::take<std::uint32_t>(in, pos)));
    check_architecture(sizes);
    const auto hidden = detail::take<std::uint8_t>(in, pos);
    const auto output = detail::take<std::uint8_t>(in, pos);
    if (hidden > 2 || output > 2) throw ParseError("unknown activation code");
    MlpModel m;
    m.layer_sizes = sizes;
    m.hidden_activation = static_cast<Activation>(hidden);
    m.output_activation = static_cast<Activation>(output);
    m.seed = detail::take<std::uint64_t>(in, pos);
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        Matrix w(sizes[l + 1], sizes[l]);
        Vector b(sizes[l + 1]);
        const std::size_t wb = sizeof(double) * static_cast<std::size_t>(w.size());
        const std::size_t bb = sizeof(double) * static_cast<std::size_t>(b.size());
        if (pos + wb + bb > in.size()) throw ParseError("model file is truncated");
        std::memcpy(w.data(), in.data() + pos, wb);
        pos += wb;
        std::memcpy(b.data(), in.data() + pos, bb);
        pos += bb;
        if (!w.allFinite() || !b.allFinite()) throw ParseError("model parameters are not finite");
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
    }
    if (pos != in.size()) throw ParseError("trailing bytes after model parameters");
    return m;
}

inline void save_model(const MlpModel& m, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + path);
    const std::string bytes = serialize_model(m);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

inline MlpModel load_model(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot read " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_model(bytes);
}

}  // namespace poisonopf::nn
