#pragma once

// Run configuration: flat `key = value` lines, '#' starts a comment, nested
// settings use dotted keys. Every key has a default; unknown keys and
// malformed values are rejected. The hash covers every field in canonical
// form, so it changes exactly when some setting does.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "hhc/diagram.hpp"
#include "hhc/errors.hpp"

namespace hhc {

inline constexpr const char* tool_version = "hhc 1.0.0";

struct RunConfig {
    DiagramSettings diagram;
    // Equilibrium sweep (equilibria command)
    double sweep_lo = 0.0;
    double sweep_hi = 160.0;
    double sweep_step = 1.0;
    // Single-cycle solves
    double cycle_tol = 1e-10;
    double settle_time = 300.0;
    int shooting_steps = 8000;
    double gibbs_threshold = 5e-2;
    std::string output_dir = "out";
    std::uint64_t seed = 12345;

    /// Calls v(key, member) for every setting in canonical order.
    template <class V>
    void visit(V&& v) {
        auto& d = diagram;
        v("model.C", d.params.C);
        v("model.g_na", d.params.gNa);
        v("model.g_k", d.params.gK);
        v("model.g_l", d.params.gL);
        v("model.e_na", d.params.ENa);
        v("model.e_k", d.params.EK);
        v("model.e_l", d.params.EL);
        v("equilibria.from", sweep_lo);
        v("equilibria.to", sweep_hi);
        v("equilibria.step", sweep_step);
        v("hopf.tol", d.hopf_tol);
        v("hopf.sweep_step", d.sweep_step);
        v("hopf.seed_offset", d.seed_offset);
        v("hopf.seed_amplitude", d.seed_amplitude);
        v("diagram.current_min", d.I_min);
        v("diagram.current_max", d.I_max);
        v("diagram.start_current", d.start_current);
        v("diagram.settle_time", d.settle_time);
        v("diagram.handoff_current", d.handoff_current);
        v("diagram.max_folds", d.max_folds);
        v("diagram.fold_overrun", d.fold_overrun);
        v("solver.hb.harmonics", d.hb_harmonics);
        v("solver.hb.max_harmonics", d.hb_max_harmonics);
        v("solver.hb.oversample", d.hb_oversample);
        v("solver.hb.tol", d.hb_tol);
        v("solver.hb.drop_tol", d.hb_drop_tol);
        v("solver.collocation.subintervals", d.collocation_subintervals);
        v("solver.collocation.remesh_every", d.remesh_every);
        v("solver.cycle.tol", cycle_tol);
        v("solver.cycle.settle_time", settle_time);
        v("solver.shooting.steps", shooting_steps);
        v("solver.newton.tol", d.step.newton.tol);
        v("solver.newton.max_iterations", d.step.newton.max_iterations);
        v("continuation.step_initial", d.step.initial);
        v("continuation.step_min", d.step.min);
        v("continuation.step_max", d.step.max);
        v("continuation.period_step_initial", d.step.period_initial);
        v("continuation.period_step_max", d.step.period_max);
        v("continuation.switch_slope", d.step.switch_slope);
        v("continuation.min_amplitude", d.step.min_amplitude);
        v("continuation.max_period_change", d.step.max_period_change);
        v("continuation.max_points", d.step.max_points);
        v("floquet.steps", d.floquet.steps);
        v("floquet.flag_distance", d.floquet.thresholds.distance);
        v("gibbs.threshold", gibbs_threshold);
        v("output.dir", output_dir);
        v("random.seed", seed);
    }

    template <class V>
    void visit(V&& v) const {
        const_cast<RunConfig*>(this)->visit([&](const char* key, auto& member) { v(key, std::as_const(member)); });
    }

    /// Throws ParseError naming the first violated constraint.
    void validate() const {
        const auto require = [](bool ok, const char* what) {
            if (!ok) throw Error(ErrorKind::ParseError, what);
        };
        const auto& d = diagram;
        require(d.params.valid(), "model capacitance and conductances must be positive");
        require(d.hopf_tol > 0 && d.hb_tol > 0 && d.hb_drop_tol > 0 && cycle_tol > 0 && d.step.newton.tol > 0,
                "tolerances must be positive");
        require(d.hb_harmonics >= 1 && d.hb_max_harmonics >= d.hb_harmonics, "harmonic counts must be >= 1");
        require(d.hb_oversample >= 2, "solver.hb.oversample must be >= 2");
        require(d.collocation_subintervals >= 4, "solver.collocation.subintervals must be >= 4");
        require(d.remesh_every >= 1, "solver.collocation.remesh_every must be >= 1");
        require(d.I_max > d.I_min, "diagram.current_max must exceed diagram.current_min");
        require(sweep_hi >= sweep_lo && sweep_step > 0 && d.sweep_step > 0, "invalid equilibrium sweep");
        require(d.step.min > 0 && d.step.initial >= d.step.min && d.step.max >= d.step.initial,
                "continuation steps must satisfy 0 < min <= initial <= max");
        require(d.step.period_initial > 0 && d.step.period_max >= d.step.period_initial,
                "continuation period steps must be positive");
        require(d.step.max_points >= 2, "continuation.max_points must be >= 2");
        require(d.floquet.steps >= 100, "floquet.steps must be >= 100");
        require(shooting_steps >= 100, "solver.shooting.steps must be >= 100");
        require(gibbs_threshold > 0, "gibbs.threshold must be positive");
        require(!output_dir.empty(), "output.dir must not be empty");
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
void parse_value(std::string_view text, T& out, const std::string& key) {
    const auto fail = [&]() { throw Error(ErrorKind::ParseError, "bad value '" + std::string(text) + "' for " + key); };
    if constexpr (std::is_same_v<T, std::string>) {
        if (text.size() >= 2 && text.front() == '"' && text.back() == '"') text = text.substr(1, text.size() - 2);
        out = std::string(text);
    } else {
        const auto r = std::from_chars(text.data(), text.data() + text.size(), out);
        if (r.ec != std::errc() || r.ptr != text.data() + text.size()) fail();
    }
}

template <class T>
std::string format_value(const T& v) {
    if constexpr (std::is_same_v<T, std::string>) {
        return v;
    } else if constexpr (std::is_same_v<T, double>) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        return buf;
    } else {
        return std::to_string(v);
    }
}

}  // namespace detail

/// Parses configuration text on top of the defaults.
inline RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::vector<std::string> seen;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": expected key = value");
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string_view value = detail::trim(line.substr(eq + 1));
        if (std::find(seen.begin(), seen.end(), key) != seen.end())
            throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": duplicate key " + key);
        bool known = false;
        cfg.visit([&](const char* k, auto& member) {
            if (key != k) return;
            known = true;
            detail::parse_value(value, member, key);
        });
        if (!known) throw Error(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": unknown key " + key);
        seen.push_back(key);
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

/// Every setting as `key = value`, one per line, in canonical order.
inline std::string canonical_text(const RunConfig& cfg) {
    std::string out;
    cfg.visit([&](const char* key, const auto& member) {
        out += key;
        out += " = ";
        out += detail::format_value(member);
        out += '\n';
    });
    return out;
}

/// 64-bit FNV-1a of the canonical text, as 16 hex digits.
inline std::string config_hash(const RunConfig& cfg) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char c : canonical_text(cfg)) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace hhc
