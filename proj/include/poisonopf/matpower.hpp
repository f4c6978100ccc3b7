#pragma once

// Reader for the subset of the MATPOWER case language that carries DC data:
//   function mpc = name            (ignored)
//   mpc.field = <number>;          mpc.field = '<text>';
//   mpc.field = [ r11 r12 ...; r21 ... ];
// '%' starts a comment. Anything else is a ParseError.

#include "poisonopf/common.hpp"
#include "poisonopf/grid_model.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <map>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace poisonopf::grid {

namespace matpower_detail {

using Rows = std::vector<std::vector<double>>;

struct Assignment {
    Rows rows;
    int line = 0;
};

class Scanner {
public:
    explicit Scanner(std::string_view text) : text_(text) {}

    std::map<std::string, Assignment> parse() {
        std::map<std::string, Assignment> out;
        for (;;) {
            skip_blank(true);
            if (eof()) break;
            const int start_line = line_;
            std::string name = identifier();
            if (name == "function") {
                skip_comment();
                continue;
            }
            skip_blank(false);
            if (!consume('=')) fail("expected '=' after '" + name + "'");
            skip_blank(false);
            Assignment a;
            a.line = start_line;
            if (peek() == '[') {
                a.rows = matrix();
            } else if (peek() == '\'' || peek() == '"') {
                string_literal();
            } else {
                a.rows = {{number()}};
            }
            skip_blank(false);
            consume(';');
            skip_blank(false);
            if (!eof() && peek() != '\n') fail("unexpected text after assignment to '" + name + "'");
            out[name] = std::move(a);
        }
        return out;
    }

private:
    bool eof() const { return pos_ >= text_.size(); }
    char peek() const { return eof() ? '\0' : text_[pos_]; }

    bool consume(char c) {
        if (peek() != c) return false;
        ++pos_;
        return true;
    }

    [[noreturn]] void fail(const std::string& what) const { throw ParseError(what, line_); }

    void skip_comment() {
        while (!eof() && peek() != '\n') ++pos_;
    }

    // Skips spaces, tabs, comments, and newlines when allowed.
    void skip_blank(bool newlines) {
        while (!eof()) {
            const char c = peek();
            if (c == '%') {
                skip_comment();
            } else if (c == '\n' && newlines) {
                ++line_;
                ++pos_;
            } else if (c == ' ' || c == '\t' || c == '\r') {
                ++pos_;
            } else if (c == '.' && text_.substr(pos_, 3) == "...") {
                // line continuation
                skip_comment();
                if (!eof()) {
                    ++line_;
                    ++pos_;
                }
            } else {
                break;
            }
        }
    }

    std::string identifier() {
        const std::size_t start = pos_;
        while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '.')) ++pos_;
        if (pos_ == start) fail(std::string("syntax error near '") + peek() + "'");
        if (!std::isalpha(static_cast<unsigned char>(text_[start]))) fail("identifier must start with a letter");
        return std::string(text_.substr(start, pos_ - start));
    }

    void string_literal() {
        const char quote = peek();
        ++pos_;
        while (!eof() && peek() != quote) {
            if (peek() == '\n') fail("unterminated string");
            ++pos_;
        }
        if (!consume(quote)) fail("unterminated string");
    }

    double number() {
        const std::size_t start = pos_;
        if (peek() == '+' || peek() == '-') ++pos_;
        while (!eof()) {
            const char c = peek();
            if (std::isdigit(static_cast<unsigned char>(c)) || c == '.' || c == 'e' || c == 'E' ||
                ((c == '+' || c == '-') && (text_[pos_ - 1] == 'e' || text_[pos_ - 1] == 'E'))) {
                ++pos_;
            } else {
                break;
            }
        }
        std::string_view token = text_.substr(start, pos_ - start);
        if (!token.empty() && token.front() == '+') token.remove_prefix(1);
        if (token == "Inf" || token == "inf") return kUnlimited;
        double value = 0.0;
        const auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
        if (token.empty() || ec != std::errc() || ptr != token.data() + token.size()) {
            // Inf / -Inf spelled out
            if (text_.substr(start, 3) == "Inf") { pos_ = start + 3; return kUnlimited; }
            if (text_.substr(start, 4) == "-Inf") { pos_ = start + 4; return -kUnlimited; }
            fail("invalid number '" + std::string(text_.substr(start, std::max<std::size_t>(pos_ - start, 1))) + "'");
        }
        return value;
    }

    Rows matrix() {
        consume('[');
        Rows rows;
        std::vector<double> row;
        auto end_row = [&] {
            if (!row.empty()) rows.push_back(std::move(row));
            row.clear();
        };
        for (;;) {
            skip_blank(false);
            if (eof()) fail("unterminated matrix");
            const char c = peek();
            if (c == ']') {
                ++pos_;
                end_row();
                break;
            }
            if (c == ';') {
                ++pos_;
                end_row();
            } else if (c == '\n') {
                ++pos_;
                ++line_;
                end_row();
            } else if (c == ',') {
                ++pos_;
            } else {
                row.push_back(number());
            }
        }
        for (const auto& r : rows)
            if (r.size() != rows.front().size()) fail("matrix rows have different lengths");
        return rows;
    }

    std::string_view text_;
    std::size_t pos_ = 0;
    int line_ = 1;
};

inline const Assignment& required(const std::map<std::string, Assignment>& fields, const std::string& name,
                                  std::size_t min_columns) {
    const auto it = fields.find(name);
    if (it == fields.end()) throw ParseError("missing matrix '" + name + "'");
    for (const auto& row : it->second.rows)
        if (row.size() < min_columns)
            throw ParseError("matrix '" + name + "' needs at least " + std::to_string(min_columns) + " columns",
                             it->second.line);
    return it->second;
}

}  // namespace matpower_detail

/// Parses MATPOWER case text into a validated per-unit Network.
inline Network parse_matpower_case(std::string_view text) {
    using namespace matpower_detail;
    const auto fields = Scanner(text).parse();

    Network net;
    const auto base = fields.find("mpc.baseMVA");
    if (base == fields.end()) throw ParseError("missing matrix 'mpc.baseMVA'");
    if (base->second.rows.size() != 1 || base->second.rows[0].size() != 1)
        throw ParseError("mpc.baseMVA must be a scalar", base->second.line);
    net.base_power = base->second.rows[0][0];
    if (!(net.base_power > 0.0)) throw ValidationError("baseMVA must be positive");
    const double base_mva = net.base_power;

    const auto& bus = required(fields, "mpc.bus", 3);
    const auto& gen = required(fields, "mpc.gen", 10);
    const auto& branch = required(fields, "mpc.branch", 6);
    const auto& gencost = required(fields, "mpc.gencost", 4);

    std::unordered_map<long long, std::size_t> index_of;
    std::size_t slack_count = 0;
    for (std::size_t r = 0; r < bus.rows.size(); ++r) {
        const auto& row = bus.rows[r];
        const auto id = static_cast<long long>(row[0]);
        if (static_cast<double>(id) != row[0]) throw ParseError("bus number must be an integer", bus.line);
        if (!index_of.emplace(id, net.buses.size()).second)
            throw ValidationError("duplicate bus number " + std::to_string(id));
        const int type = static_cast<int>(row[1]);
        if (type == 4) throw ValidationError("isolated bus " + std::to_string(id) + " is not supported");
        if (type == 3) {
            net.slack_bus = net.buses.size();
            ++slack_count;
        }
        Bus b;
        b.id = static_cast<int>(id);
        b.nominal_load = row[2] / base_mva;
        net.buses.push_back(b);
    }
    if (slack_count == 0) throw ValidationError("no slack bus (type 3)");
    if (slack_count > 1) throw ValidationError("more than one slack bus (type 3)");

    auto bus_index = [&](double number, int line) {
        const auto it = index_of.find(static_cast<long long>(number));
        if (it == index_of.end())
            throw ValidationError("reference to unknown bus " + std::to_string(static_cast<long long>(number)) +
                                  " (line " + std::to_string(line) + ")");
        return it->second;
    };

    for (const auto& row : branch.rows) {
        const bool in_service = row.size() <= 10 || row[10] > 0.0;
        if (!in_service) continue;
        Line l;
        l.from_bus = bus_index(row[0], branch.line);
        l.to_bus = bus_index(row[1], branch.line);
        l.reactance = row[3];
        if (!(l.reactance > 0.0))
            throw ValidationError("branch " + std::to_string(static_cast<long long>(row[0])) + "-" +
                                  std::to_string(static_cast<long long>(row[1])) +
                                  ": zero or negative reactance");
        if (row[5] > 0.0) l.flow_limit = row[5] / base_mva;
        net.lines.push_back(l);
    }

    if (gencost.rows.size() < gen.rows.size())
        throw ParseError("mpc.gencost has fewer rows than mpc.gen", gencost.line);
    for (std::size_t r = 0; r < gen.rows.size(); ++r) {
        const auto& row = gen.rows[r];
        if (!(row[7] > 0.0)) continue;
        Generator g;
        g.bus = bus_index(row[0], gen.line);
        g.p_max = row[8] / base_mva;
        g.p_min = row[9] / base_mva;

        const auto& cost = gencost.rows[r];
        if (static_cast<int>(cost[0]) != 2)
            throw ParseError("only polynomial gencost (model 2) is supported", gencost.line);
        const auto n = static_cast<std::size_t>(cost[3]);
        if (n < 1 || n > 3) throw ParseError("gencost polynomial degree above 2 is not supported", gencost.line);
        if (cost.size() < 4 + n) throw ParseError("gencost row is shorter than its coefficient count", gencost.line);
        // coefficients are stored highest degree first
        std::vector<double> c(3, 0.0);
        for (std::size_t j = 0; j < n; ++j) c[3 - n + j] = cost[4 + j];
        g.cost_quadratic = c[0] * base_mva * base_mva;
        g.cost_linear = c[1] * base_mva;
        g.cost_constant = c[2];
        net.generators.push_back(g);
    }

    validate(net);
    return net;
}

}  // namespace poisonopf::grid
