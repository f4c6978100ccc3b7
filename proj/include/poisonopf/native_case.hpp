#pragma once

// Native JSON case format:
//   { "base_mva": 100,
//     "buses": [ {"id": 1, "load_mw": 0, "angle_min_deg": -30, "angle_max_deg": 30, "slack": true}, ... ],
//     "lines": [ {"from": 1, "to": 2, "x_pu": 0.1, "limit_mw": 100}, ... ],
//     "generators": [ {"bus": 1, "pmin_mw": 0, "pmax_mw": 60, "cost": [c2, c1, c0]}, ... ] }
// Angle limits, limit_mw and slack are optional. Cost coefficients are in
// MW units, as in MATPOWER gencost rows.

#include "poisonopf/common.hpp"
#include "poisonopf/grid_model.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <unordered_map>

namespace poisonopf::grid {

namespace native_detail {

using nlohmann::json;

[[noreturn]] inline void schema_error(const std::string& path, const std::string& what) {
    throw ParseError(path + ": " + what);
}

inline const json& field(const json& obj, const char* key, const std::string& path) {
    if (!obj.is_object()) schema_error(path, "expected object");
    const auto it = obj.find(key);
    if (it == obj.end()) schema_error(path + "." + key, "missing required field");
    return *it;
}

inline double number(const json& v, const std::string& path) {
    if (!v.is_number()) schema_error(path, "expected number");
    return v.get<double>();
}

inline double number_field(const json& obj, const char* key, const std::string& path) {
    return number(field(obj, key, path), path + "." + key);
}

inline int integer_field(const json& obj, const char* key, const std::string& path) {
    const json& v = field(obj, key, path);
    if (!v.is_number_integer()) schema_error(path + "." + key, "expected integer");
    return v.get<int>();
}

inline const json& array_field(const json& obj, const char* key, const std::string& path) {
    const json& v = field(obj, key, path);
    if (!v.is_array()) schema_error(path + "." + key, "expected array");
    return v;
}

constexpr double kDegPerRad = 180.0 / std::numbers::pi;

}  // namespace native_detail

inline Network parse_native_case(std::string_view text) {
    using namespace native_detail;
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("invalid JSON: ") + e.what());
    }

    Network net;
    net.base_power = number_field(doc, "base_mva", "$");
    if (!(net.base_power > 0.0)) schema_error("$.base_mva", "must be positive");
    const double base = net.base_power;

    std::unordered_map<int, std::size_t> index_of;
    std::size_t slack_count = 0;
    const json& buses = array_field(doc, "buses", "$");
    for (std::size_t i = 0; i < buses.size(); ++i) {
        const std::string path = "$.buses[" + std::to_string(i) + "]";
        const json& b = buses[i];
        Bus bus;
        bus.id = integer_field(b, "id", path);
        bus.nominal_load = number_field(b, "load_mw", path) / base;
        if (b.contains("angle_min_deg")) bus.angle_min = number_field(b, "angle_min_deg", path) / kDegPerRad;
        if (b.contains("angle_max_deg")) bus.angle_max = number_field(b, "angle_max_deg", path) / kDegPerRad;
        if (b.contains("slack")) {
            if (!b["slack"].is_boolean()) schema_error(path + ".slack", "expected boolean");
            if (b["slack"].get<bool>()) {
                net.slack_bus = net.buses.size();
                ++slack_count;
            }
        }
        if (!index_of.emplace(bus.id, net.buses.size()).second) schema_error(path + ".id", "duplicate bus id");
        net.buses.push_back(bus);
    }
    if (slack_count != 1) throw ValidationError("exactly one bus must be marked slack, found " + std::to_string(slack_count));

    auto bus_ref = [&](const json& obj, const char* key, const std::string& path) {
        const int id = integer_field(obj, key, path);
        const auto it = index_of.find(id);
        if (it == index_of.end()) schema_error(path + "." + key, "unknown bus id " + std::to_string(id));
        return it->second;
    };

    const json& lines = array_field(doc, "lines", "$");
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string path = "$.lines[" + std::to_string(i) + "]";
        const json& l = lines[i];
        Line line;
        line.from_bus = bus_ref(l, "from", path);
        line.to_bus = bus_ref(l, "to", path);
        line.reactance = number_field(l, "x_pu", path);
        if (l.contains("limit_mw")) line.flow_limit = number_field(l, "limit_mw", path) / base;
        net.lines.push_back(line);
    }

    const json& gens = array_field(doc, "generators", "$");
    for (std::size_t i = 0; i < gens.size(); ++i) {
        const std::string path = "$.generators[" + std::to_string(i) + "]";
        const json& g = gens[i];
        Generator gen;
        gen.bus = bus_ref(g, "bus", path);
        gen.p_min = number_field(g, "pmin_mw", path) / base;
        gen.p_max = number_field(g, "pmax_mw", path) / base;
        const json& cost = array_field(g, "cost", path);
        if (cost.size() != 3) schema_error(path + ".cost", "expected [c2, c1, c0]");
        gen.cost_quadratic = number(cost[0], path + ".cost[0]") * base * base;
        gen.cost_linear = number(cost[1], path + ".cost[1]") * base;
        gen.cost_constant = number(cost[2], path + ".cost[2]");
        net.generators.push_back(gen);
    }

    validate(net);
    return net;
}

inline nlohmann::json to_native_json(const Network& net) {
    using nlohmann::json;
    using native_detail::kDegPerRad;
    const double base = net.base_power;
    json doc;
    doc["base_mva"] = base;
    json buses = json::array();
    for (std::size_t k = 0; k < net.buses.size(); ++k) {
        const Bus& b = net.buses[k];
        json jb{{"id", b.id}, {"load_mw", b.nominal_load * base}};
        if (std::isfinite(b.angle_min)) jb["angle_min_deg"] = b.angle_min * kDegPerRad;
        if (std::isfinite(b.angle_max)) jb["angle_max_deg"] = b.angle_max * kDegPerRad;
        if (k == net.slack_bus) jb["slack"] = true;
        buses.push_back(std::move(jb));
    }
    doc["buses"] = std::move(buses);
    json lines = json::array();
    for (const Line& l : net.lines) {
        json jl{{"from", net.buses[l.from_bus].id}, {"to", net.buses[l.to_bus].id}, {"x_pu", l.reactance}};
        if (l.flow_limit) jl["limit_mw"] = *l.flow_limit * base;
        lines.push_back(std::move(jl));
    }
    doc["lines"] = std::move(lines);
    json gens = json::array();
    for (const Generator& g : net.generators) {
        gens.push_back(json{{"bus", net.buses[g.bus].id},
                            {"pmin_mw", g.p_min * base},
                            {"pmax_mw", g.p_max * base},
                            {"cost", {g.cost_quadratic / (base * base), g.cost_linear / base, g.cost_constant}}});
    }
    doc["generators"] = std::move(gens);
    return doc;
}

inline std::string serialize_native_case(const Network& net) { return to_native_json(net).dump(2) + "\n"; }

/// Stable identifier of a network's content.
inline std::string network_fingerprint(const Network& net) { return fingerprint(to_native_json(net).dump()); }

/// Field-wise comparison with a relative tolerance, for round trips through
/// MW-denominated text where unit conversion may move the last bit.
inline bool approx_equal(const Network& a, const Network& b, double rel = 1e-14) {
    auto close = [rel](double x, double y) {
        if (x == y) return true;
        return std::abs(x - y) <= rel * std::max(std::abs(x), std::abs(y));
    };
    if (!close(a.base_power, b.base_power) || a.slack_bus != b.slack_bus || a.buses.size() != b.buses.size() ||
        a.lines.size() != b.lines.size() || a.generators.size() != b.generators.size())
        return false;
    for (std::size_t k = 0; k < a.buses.size(); ++k) {
        const Bus &x = a.buses[k], &y = b.buses[k];
        if (x.id != y.id || !close(x.nominal_load, y.nominal_load) || !close(x.angle_min, y.angle_min) ||
            !close(x.angle_max, y.angle_max))
            return false;
    }
    for (std::size_t i = 0; i < a.lines.size(); ++i) {
        const Line &x = a.lines[i], &y = b.lines[i];
        if (x.from_bus != y.from_bus || x.to_bus != y.to_bus || !close(x.reactance, y.reactance) ||
            x.flow_limit.has_value() != y.flow_limit.has_value() || (x.flow_limit && !close(*x.flow_limit, *y.flow_limit)))
            return false;
    }
    for (std::size_t i = 0; i < a.generators.size(); ++i) {
        const Generator &x = a.generators[i], &y = b.generators[i];
        if (x.bus != y.bus || !close(x.p_min, y.p_min) || !close(x.p_max, y.p_max) ||
            !close(x.cost_quadratic, y.cost_quadratic) || !close(x.cost_linear, y.cost_linear) ||
            !close(x.cost_constant, y.cost_constant))
            return false;
    }
    return true;
}

}  // namespace poisonopf::grid
