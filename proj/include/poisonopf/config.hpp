#pragma once

// Experiment configuration document and the network loader it points at.
// Every field has a default; a config file only lists what it changes, and
// command-line flags override the file.

#include "poisonopf/attack.hpp"
#include "poisonopf/common.hpp"
#include "poisonopf/grid_model.hpp"
#include "poisonopf/matpower.hpp"
#include "poisonopf/native_case.hpp"
#include "poisonopf/proxies.hpp"

#include <json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace poisonopf {

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline void write_file(const std::string& path, std::string_view bytes) {
    const auto parent = std::filesystem::path(path).parent_path();
    std::error_code ec;
    if (!parent.empty()) std::filesystem::create_directories(parent, ec);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path);
}

/// "matpower" for .m files, "native" for .json; explicit formats pass through.
inline std::string resolve_case_format(const std::string& path, const std::string& format) {
    if (format == "matpower" || format == "native") return format;
    if (format != "auto") throw ValidationError("unknown case format '" + format + "' (matpower|native|auto)");
    const auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".m") return "matpower";
    if (ext == ".json") return "native";
    throw ValidationError("cannot infer case format of '" + path + "'; pass --format");
}

inline grid::Network load_network(const std::string& path, const std::string& format = "auto") {
    const std::string fmt = resolve_case_format(path, format);
    const std::string text = read_file(path);
    grid::Network net = fmt == "matpower" ? grid::parse_matpower_case(text) : grid::parse_native_case(text);
    grid::validate(net);
    return net;
}

/// Symmetric angle limits on every bus, replacing whatever the case carried.
inline void apply_angle_limit(grid::Network& net, double degrees) {
    if (!(degrees > 0.0)) throw ValidationError("angle_limit_deg must be > 0");
    const double rad = degrees * std::numbers::pi / 180.0;
    for (auto& b : net.buses) {
        b.angle_min = -rad;
        b.angle_max = rad;
    }
}

struct ExperimentConfig {
    std::string case_path;
    std::string case_format = "auto";
    std::optional<double> angle_limit_deg;

    int samples = 200;
    int test_samples = 0;  // 0: samples / 4
    std::array<double, 2> scaling_range{0.8, 1.2};
    std::uint64_t seed = 1;
    std::optional<std::uint64_t> test_seed;  // default derived from seed

    std::array<proxy::ProxyConfig, 3> proxies{};  // indexed by ProxyKind
    attack::AttackConfig attack;
    std::vector<proxy::ProxyKind> methods{proxy::kAllKinds[0], proxy::kAllKinds[1], proxy::kAllKinds[2]};

    // Sweep grid: explicit deltas in pu, or fractions of the saturation threshold.
    std::vector<double> sweep_deltas;
    std::vector<double> sweep_fractions{0.0, 0.125, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0};

    std::string output_dir = "out";
    int threads = 1;
    bool timing = true;

    proxy::ProxyConfig& proxy(proxy::ProxyKind k) { return proxies[static_cast<std::size_t>(k)]; }
    const proxy::ProxyConfig& proxy(proxy::ProxyKind k) const { return proxies[static_cast<std::size_t>(k)]; }

    int effective_test_samples() const { return test_samples > 0 ? test_samples : std::max(1, samples / 4); }

    std::uint64_t effective_test_seed() const {
        if (test_seed) return *test_seed;
        return seed ^ 0x5bd1e9955bd1e995ULL;
    }

    void check() const {
        if (samples < 1) throw ValidationError("samples must be >= 1");
        if (test_samples < 0) throw ValidationError("test_samples must be >= 0");
        if (!(scaling_range[0] > 0.0 && scaling_range[0] <= scaling_range[1]))
            throw ValidationError("scaling_range must satisfy 0 < lo <= hi");
        if (effective_test_seed() == seed) throw ValidationError("test_seed must differ from seed");
        if (threads < 1) throw ValidationError("threads must be >= 1");
        if (methods.empty()) throw ValidationError("methods must not be empty");
        for (const auto& p : proxies) p.check();
        attack.check();
        for (std::size_t i = 0; i < sweep_deltas.size(); ++i) {
            if (!(sweep_deltas[i] >= 0.0)) throw ValidationError("sweep deltas must be >= 0");
            if (i > 0 && !(sweep_deltas[i] > sweep_deltas[i - 1])) throw ValidationError("sweep deltas must be strictly increasing");
        }
        for (std::size_t i = 0; i < sweep_fractions.size(); ++i) {
            if (!(sweep_fractions[i] >= 0.0)) throw ValidationError("sweep fractions must be >= 0");
            if (i > 0 && !(sweep_fractions[i] > sweep_fractions[i - 1]))
                throw ValidationError("sweep fractions must be strictly increasing");
        }
    }

    /// Network named by case_path with the configured angle limit applied.
    grid::Network network() const {
        if (case_path.empty()) throw ValidationError("no case file configured (case_path / --case)");
        grid::Network net = load_network(case_path, case_format);
        if (angle_limit_deg) apply_angle_limit(net, *angle_limit_deg);
        return net;
    }
};

inline void to_json(nlohmann::json& j, const ExperimentConfig& c) {
    nlohmann::json proxies = nlohmann::json::object();
    for (auto k : proxy::kAllKinds) proxies[proxy::to_string(k)] = c.proxy(k);
    nlohmann::json methods = nlohmann::json::array();
    for (auto k : c.methods) methods.push_back(proxy::to_string(k));
    j = {{"case_path", c.case_path},
         {"case_format", c.case_format},
         {"angle_limit_deg", c.angle_limit_deg ? nlohmann::json(*c.angle_limit_deg) : nlohmann::json(nullptr)},
         {"samples", c.samples},
         {"test_samples", c.test_samples},
         {"scaling_range", c.scaling_range},
         {"seed", c.seed},
         {"test_seed", c.test_seed ? nlohmann::json(*c.test_seed) : nlohmann::json(nullptr)},
         {"proxies", proxies},
         {"attack", c.attack},
         {"methods", methods},
         {"sweep_deltas", c.sweep_deltas},
         {"sweep_fractions", c.sweep_fractions},
         {"output_dir", c.output_dir},
         {"threads", c.threads},
         {"timing", c.timing}};
}

/// Merges `j` into `c`: keys present override, absent keys keep their value.
inline void merge_config(ExperimentConfig& c, const nlohmann::json& j) {
    if (!j.is_object()) throw ValidationError("experiment config must be an object");
    try {
        for (auto it = j.begin(); it != j.end(); ++it) {
            const std::string& k = it.key();
            const auto& v = it.value();
            if (k == "case_path") c.case_path = v.get<std::string>();
            else if (k == "case_format") c.case_format = v.get<std::string>();
            else if (k == "angle_limit_deg") c.angle_limit_deg = v.is_null() ? std::nullopt : std::optional(v.get<double>());
            else if (k == "samples") c.samples = v.get<int>();
            else if (k == "test_samples") c.test_samples = v.get<int>();
            else if (k == "scaling_range") c.scaling_range = v.get<std::array<double, 2>>();
            else if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "test_seed") c.test_seed = v.is_null() ? std::nullopt : std::optional(v.get<std::uint64_t>());
            else if (k == "proxies") {
                if (!v.is_object()) throw ValidationError("proxies must be an object keyed by method");
                for (auto p = v.begin(); p != v.end(); ++p) {
                    auto& target = c.proxy(proxy::kind_from_string(p.key()));
                    // start from the current values so partial entries only override
                    nlohmann::json merged = target;
                    merged.update(p.value());
                    target = merged.get<proxy::ProxyConfig>();
                }
            } else if (k == "attack") {
                nlohmann::json merged = c.attack;
                merged.update(v);
                c.attack = merged.get<attack::AttackConfig>();
            } else if (k == "methods") {
                c.methods.clear();
                for (const auto& m : v) c.methods.push_back(proxy::kind_from_string(m.get<std::string>()));
            } else if (k == "sweep_deltas") c.sweep_deltas = v.get<std::vector<double>>();
            else if (k == "sweep_fractions") c.sweep_fractions = v.get<std::vector<double>>();
            else if (k == "output_dir") c.output_dir = v.get<std::string>();
            else if (k == "threads") c.threads = v.get<int>();
            else if (k == "timing") c.timing = v.get<bool>();
            else throw ValidationError("unknown config key '" + k + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
    c = ExperimentConfig{};
    merge_config(c, j);
    c.check();
}

/// Reads a config file; relative case paths resolve against the file's directory.
inline ExperimentConfig load_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError(path + ": " + e.what());
    }
    ExperimentConfig c;
    merge_config(c, j);
    if (!c.case_path.empty() && std::filesystem::path(c.case_path).is_relative()) {
        const auto base = std::filesystem::path(path).parent_path();
        if (!base.empty()) c.case_path = (base / c.case_path).lexically_normal().string();
    }
    return c;
}

inline std::string config_hash(const ExperimentConfig& c) { return fingerprint(nlohmann::json(c).dump()); }

}  // namespace poisonopf
