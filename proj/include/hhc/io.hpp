#pragma once

// Serialization: versioned JSON cycle files, CSV tables with round-trip
// precision, and the artifact set of a diagram run.

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hhc/config.hpp"
#include "hhc/continuation.hpp"
#include "hhc/diagram.hpp"
#include "hhc/errors.hpp"

namespace hhc {

using json = nlohmann::json;

inline constexpr int cycle_schema = 1;

/// 17 significant digits: every double prints to text that parses back to itself.
inline std::string fmt17(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// A single cycle with what is needed to re-check it: the raw discretization,
/// a residual certificate and its Floquet spectrum.
struct CycleRecord {
    std::string method;  // hb | collocation | shooting
    double current = 0.0;
    HHParams params;
    std::string config_hash;
    CycleVariant cycle;
    int oversample = 3;       // hb quadrature
    int steps = 8000;         // shooting RK4 steps per period
    std::string residual_kind;
    double residual = 0.0;
    FloquetSpectrum spectrum;
    std::optional<double> ripple;  // hb only
    double ripple_threshold = 0.0;

    double period() const {
        return std::visit([](const auto& c) { return c.period; }, cycle);
    }
    bool gibbs_warning() const { return ripple && *ripple > ripple_threshold; }
};

/// Recomputes the residual certificate from the stored discretization.
inline double certificate(const CycleRecord& r) {
    const HHField f{r.params, r.current};
    if (const auto* c = std::get_if<FourierCycle>(&r.cycle))
        return hb_residual(*c, c->period, f, build_operators(c->K, r.oversample)).cwiseAbs().maxCoeff();
    if (const auto* c = std::get_if<CollocationCycle>(&r.cycle)) {
        const auto profile = residual_profile(c->poly, c->period, f);
        return *std::max_element(profile.begin(), profile.end());
    }
    const auto& c = std::get<Cycle>(r.cycle);
    return (flow(f, c.anchor_state, c.period, r.steps) - c.anchor_state).cwiseAbs().maxCoeff();
}

namespace detail {

inline const char* method_of(const CycleVariant& c) {
    switch (c.index()) {
        case 0: return "shooting";
        case 1: return "hb";
        default: return "collocation";
    }
}

inline const char* residual_kind_of(const CycleVariant& c) {
    switch (c.index()) {
        case 0: return "periodicity";
        case 1: return "balance";
        default: return "collocation_defect";
    }
}

}  // namespace detail

/// Builds a record, computing the certificate and, if not supplied, the
/// spectrum.
inline CycleRecord make_record(const CycleVariant& cycle, double I, const HHParams& p, const std::string& hash,
                               const std::optional<FloquetSpectrum>& spec = std::nullopt, int oversample = 3,
                               int steps = 8000, double ripple_threshold = 5e-2, const FloquetOptions& fopt = {}) {
    CycleRecord r;
    r.method = detail::method_of(cycle);
    r.current = I;
    r.params = p;
    r.config_hash = hash;
    r.cycle = cycle;
    r.oversample = oversample;
    r.steps = steps;
    r.residual_kind = detail::residual_kind_of(cycle);
    r.residual = certificate(r);
    const HHField f{p, I};
    r.spectrum = spec ? *spec : std::visit([&](const auto& c) { return spectrum(f, c, fopt); }, cycle);
    if (const auto* c = std::get_if<FourierCycle>(&cycle)) {
        r.ripple = ripple_metric(*c, f);
        r.ripple_threshold = ripple_threshold;
    }
    return r;
}

namespace detail {

inline json complex_json(const Multiplier& m) { return json::array({m.real(), m.imag()}); }

template <class Vec>
json vector_json(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json spectrum_json(const FloquetSpectrum& s) {
    json nt = json::array();
    for (const auto& m : s.nontrivial) nt.push_back(complex_json(m));
    return {{"trivial", complex_json(s.trivial)},
            {"nontrivial", nt},
            {"trivial_error", s.trivial_error},
            {"liouville_error", s.liouville_error},
            {"stability", to_string(s.stability)},
            {"flags",
             {{"near_fold", s.flags.near_fold}, {"near_pd", s.flags.near_pd}, {"near_torus", s.flags.near_torus}}}};
}

inline json params_json(const HHParams& p) {
    return {{"C", p.C},     {"g_na", p.gNa}, {"g_k", p.gK}, {"g_l", p.gL},
            {"e_na", p.ENa}, {"e_k", p.EK},   {"e_l", p.EL}};
}

// Rejects missing required keys and any key not listed.
inline void expect_keys(const json& j, const std::set<std::string>& required, const std::set<std::string>& optional,
                        const std::string& where) {
    if (!j.is_object()) throw Error(ErrorKind::ParseError, where + ": expected an object");
    for (const auto& [k, v] : j.items())
        if (!required.count(k) && !optional.count(k))
            throw Error(ErrorKind::ParseError, where + ": unknown field '" + k + "'");
    for (const auto& k : required)
        if (!j.contains(k)) throw Error(ErrorKind::ParseError, where + ": missing field '" + k + "'");
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ParseError, where + "." + key + ": " + e.what());
    }
}

inline Multiplier complex_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number())
        throw Error(ErrorKind::ParseError, where + ": expected [re, im]");
    return {j[0].get<double>(), j[1].get<double>()};
}

inline State state_from(const json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4) throw Error(ErrorKind::ParseError, where + ": expected 4 numbers");
    State x;
    for (int i = 0; i < 4; ++i) {
        if (!j[static_cast<std::size_t>(i)].is_number()) throw Error(ErrorKind::ParseError, where + ": not a number");
        x[i] = j[static_cast<std::size_t>(i)].get<double>();
    }
    return x;
}

inline FloquetSpectrum spectrum_from(const json& j) {
    const std::string w = "floquet";
    expect_keys(j, {"trivial", "nontrivial", "trivial_error", "liouville_error", "stability", "flags"}, {}, w);
    FloquetSpectrum s;
    s.trivial = complex_from(j["trivial"], w + ".trivial");
    if (!j["nontrivial"].is_array()) throw Error(ErrorKind::ParseError, w + ".nontrivial: expected an array");
    for (const auto& m : j["nontrivial"]) s.nontrivial.push_back(complex_from(m, w + ".nontrivial"));
    s.trivial_error = get<double>(j, "trivial_error", w);
    s.liouville_error = get<double>(j, "liouville_error", w);
    const auto st = get<std::string>(j, "stability", w);
    if (st != "stable" && st != "unstable") throw Error(ErrorKind::ParseError, w + ".stability: " + st);
    s.stability = st == "stable" ? Stability::Stable : Stability::Unstable;
    const json& fl = j["flags"];
    expect_keys(fl, {"near_fold", "near_pd", "near_torus"}, {}, w + ".flags");
    s.flags.near_fold = get<bool>(fl, "near_fold", w);
    s.flags.near_pd = get<bool>(fl, "near_pd", w);
    s.flags.near_torus = get<bool>(fl, "near_torus", w);
    return s;
}

inline HHParams params_from(const json& j) {
    expect_keys(j, {"C", "g_na", "g_k", "g_l", "e_na", "e_k", "e_l"}, {}, "model");
    HHParams p;
    p.C = get<double>(j, "C", "model");
    p.gNa = get<double>(j, "g_na", "model");
    p.gK = get<double>(j, "g_k", "model");
    p.gL = get<double>(j, "g_l", "model");
    p.ENa = get<double>(j, "e_na", "model");
    p.EK = get<double>(j, "e_k", "model");
    p.EL = get<double>(j, "e_l", "model");
    return p;
}

}  // namespace detail

inline json to_json(const CycleRecord& r) {
    json j = {{"schema", cycle_schema},
              {"tool", tool_version},
              {"config_hash", r.config_hash},
              {"method", r.method},
              {"current", r.current},
              {"period", r.period()},
              {"model", detail::params_json(r.params)},
              {"residual", {{"kind", r.residual_kind}, {"max", r.residual}}},
              {"floquet", detail::spectrum_json(r.spectrum)}};
    if (const auto* c = std::get_if<FourierCycle>(&r.cycle)) {
        json rows = json::array();
        for (Eigen::Index i = 0; i < c->coeffs.rows(); ++i) rows.push_back(detail::vector_json(c->coeffs.row(i)));
        j["hb"] = {{"harmonics", c->K}, {"oversample", r.oversample}, {"coefficients", rows}};
        j["gibbs"] = {{"ripple", *r.ripple}, {"threshold", r.ripple_threshold}, {"warning", r.gibbs_warning()}};
    } else if (const auto* c = std::get_if<CollocationCycle>(&r.cycle)) {
        json nodes = json::array();
        for (std::size_t i = 0; i + 1 < c->poly.values.size(); ++i) nodes.push_back(detail::vector_json(c->poly.values[i]));
        j["collocation"] = {{"breakpoints", c->poly.mesh.breakpoints}, {"nodes", nodes}};
    } else {
        const auto& sc = std::get<Cycle>(r.cycle);
        j["shooting"] = {{"anchor", detail::vector_json(sc.anchor_state)}, {"steps", r.steps}};
    }
    return j;
}

/// Parses and rebuilds a cycle record; every unknown field is an error.
inline CycleRecord cycle_from_json(const json& j) {
    const std::set<std::string> common{"schema", "tool", "config_hash", "method", "current",
                                       "period", "model", "residual", "floquet"};
    if (!j.is_object() || !j.contains("schema") || !j.contains("method"))
        throw Error(ErrorKind::ParseError, "cycle file: missing schema or method");
    if (j["schema"] != cycle_schema)
        throw Error(ErrorKind::ParseError, "cycle file: unsupported schema " + j["schema"].dump());
    CycleRecord r;
    r.method = detail::get<std::string>(j, "method", "cycle");
    std::set<std::string> required = common;
    if (r.method == "hb") {
        required.insert("hb");
        required.insert("gibbs");
    } else if (r.method == "collocation" || r.method == "shooting") {
        required.insert(r.method);
    } else {
        throw Error(ErrorKind::ParseError, "cycle file: unknown method " + r.method);
    }
    detail::expect_keys(j, required, {}, "cycle");
    detail::get<std::string>(j, "tool", "cycle");
    r.config_hash = detail::get<std::string>(j, "config_hash", "cycle");
    r.current = detail::get<double>(j, "current", "cycle");
    const double T = detail::get<double>(j, "period", "cycle");
    if (!(T > 0.0)) throw Error(ErrorKind::ParseError, "cycle.period must be positive");
    r.params = detail::params_from(j["model"]);
    detail::expect_keys(j["residual"], {"kind", "max"}, {}, "residual");
    r.residual_kind = detail::get<std::string>(j["residual"], "kind", "residual");
    r.residual = detail::get<double>(j["residual"], "max", "residual");
    r.spectrum = detail::spectrum_from(j["floquet"]);
    const HHField f{r.params, r.current};

    if (r.method == "hb") {
        const json& h = j["hb"];
        detail::expect_keys(h, {"harmonics", "oversample", "coefficients"}, {}, "hb");
        FourierCycle c;
        c.K = detail::get<int>(h, "harmonics", "hb");
        r.oversample = detail::get<int>(h, "oversample", "hb");
        if (c.K < 1 || r.oversample < 2) throw Error(ErrorKind::ParseError, "hb: bad harmonics or oversample");
        const json& rows = h["coefficients"];
        if (!rows.is_array() || rows.size() != static_cast<std::size_t>(2 * c.K + 1))
            throw Error(ErrorKind::ParseError, "hb.coefficients: expected 2K+1 rows");
        c.coeffs.resize(2 * c.K + 1, 4);
        for (std::size_t i = 0; i < rows.size(); ++i)
            c.coeffs.row(static_cast<Eigen::Index>(i)) = detail::state_from(rows[i], "hb.coefficients").transpose();
        c.period = T;
        r.cycle = c;
        const json& g = j["gibbs"];
        detail::expect_keys(g, {"ripple", "threshold", "warning"}, {}, "gibbs");
        r.ripple = detail::get<double>(g, "ripple", "gibbs");
        r.ripple_threshold = detail::get<double>(g, "threshold", "gibbs");
        detail::get<bool>(g, "warning", "gibbs");
    } else if (r.method == "collocation") {
        const json& c = j["collocation"];
        detail::expect_keys(c, {"breakpoints", "nodes"}, {}, "collocation");
        Mesh mesh;
        mesh.breakpoints = detail::get<std::vector<double>>(c, "breakpoints", "collocation");
        if (!mesh.valid()) throw Error(ErrorKind::ParseError, "collocation.breakpoints: not a mesh of [0, 1]");
        const json& nodes = c["nodes"];
        if (!nodes.is_array() || nodes.size() != static_cast<std::size_t>(mesh.subintervals()))
            throw Error(ErrorKind::ParseError, "collocation.nodes: expected one node per subinterval");
        std::vector<State> y;
        for (const auto& n : nodes) y.push_back(detail::state_from(n, "collocation.nodes"));
        const CollocationProblem<HHField> problem(f, mesh, y);
        CollocationCycle cc;
        cc.period = T;
        cc.poly = problem.polynomial(problem.pack(y), T, r.current);
        const auto profile = residual_profile(cc.poly, T, f);
        cc.residual_max = *std::max_element(profile.begin(), profile.end());
        r.cycle = cc;
    } else {
        const json& s = j["shooting"];
        detail::expect_keys(s, {"anchor", "steps"}, {}, "shooting");
        Cycle c;
        c.period = T;
        c.anchor_state = detail::state_from(s["anchor"], "shooting.anchor");
        r.steps = detail::get<int>(s, "steps", "shooting");
        if (r.steps < 1) throw Error(ErrorKind::ParseError, "shooting.steps must be positive");
        c.samples = sample_period(f, c.anchor_state, T, 2000, r.steps);
        r.cycle = c;
    }
    return r;
}

inline void write_json_file(const std::filesystem::path& path, const json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw Error(ErrorKind::ParseError, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

inline CycleRecord read_cycle_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ParseError, "cannot open " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::ParseError, path.string() + ": " + e.what());
    }
    return cycle_from_json(j);
}

/// CSV with a versioned comment header and one line of column names.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::string& kind, const std::string& hash,
              const std::vector<std::string>& columns) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path);
        if (!out_) throw Error(ErrorKind::ParseError, "cannot write " + path.string());
        out_ << "# " << kind << " v1\n# tool=" << tool_version << "\n# config_hash=" << hash << '\n';
        row(columns);
    }

    void row(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
        out_ << '\n';
    }

private:
    std::ofstream out_;
};

inline std::string csv_quote(const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
}

namespace detail {

inline bool branch_complete(const Branch& b) {
    return b.termination == Termination::Limit || b.termination == Termination::HopfEndpoint ||
           b.termination == Termination::FoldCount;
}

inline json event_json(const BifurcationEvent& e) {
    json rows = json::array();
    for (const auto& r : e.rows) rows.push_back({{"s", r.s}, {"current", r.I}, {"floquet", spectrum_json(r.spectrum)}});
    return {{"kind", to_string(e.kind)}, {"current", e.I_star},       {"period", e.period},
            {"branch", e.branch},        {"certified", e.certified},  {"certificate", complex_json(e.certificate)},
            {"evidence", e.evidence},    {"rows", rows}};
}

inline json branch_json(const Branch& b, const std::string& hash) {
    json pts = json::array();
    for (const auto& p : b.points)
        pts.push_back({{"current", p.I},
                       {"period", p.period},
                       {"v_min", p.v_min},
                       {"v_max", p.v_max},
                       {"floquet", spectrum_json(p.spectrum)}});
    json modes = json::array();
    for (const auto& m : b.mode_history) modes.push_back({{"index", m.index}, {"mode", to_string(m.mode)}});
    json events = json::array();
    for (const auto& e : b.events) events.push_back(event_json(e));
    return {{"schema", 1},           {"tool", tool_version},
            {"config_hash", hash},   {"id", b.id},
            {"solver", b.solver},    {"termination", to_string(b.termination)},
            {"detail", b.termination_detail}, {"complete", branch_complete(b)},
            {"mode_history", modes}, {"events", events},
            {"points", pts}};
}

}  // namespace detail

/// Writes the diagram artifacts under `dir` and returns the files written,
/// relative to `dir`. The manifest is written last and lists them.
inline std::vector<std::string> write_diagram(const std::filesystem::path& dir, const DiagramRun& run,
                                              const RunConfig& cfg, bool complete = true) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const std::string hash = config_hash(cfg);
    std::vector<std::string> files;

    {
        CsvWriter w(dir / "diagram.csv", "hhc diagram", hash,
                    {"I", "branch_id", "stability", "v_min", "v_max", "period", "region"});
        for (const auto& r : run.diagram.rows)
            w.row({fmt17(r.I), std::to_string(r.branch_id), to_string(r.stability), fmt17(r.v_min), fmt17(r.v_max),
                   fmt17(r.period), std::to_string(r.region)});
        files.push_back("diagram.csv");
    }
    {
        CsvWriter w(dir / "events.csv", "hhc events", hash,
                    {"kind", "I_star", "period", "branch", "certified", "certificate_re", "certificate_im", "evidence"});
        for (const auto& e : run.diagram.events)
            w.row({to_string(e.kind), fmt17(e.I_star), fmt17(e.period), std::to_string(e.branch),
                   e.certified ? "1" : "0", fmt17(e.certificate.real()), fmt17(e.certificate.imag()),
                   csv_quote(e.evidence)});
        files.push_back("events.csv");
    }
    int n_event = 0;
    for (const auto& e : run.diagram.events) {
        ++n_event;
        if (!e.where) continue;
        const std::string name = "events/" + std::string(to_string(e.kind)) + "_" + std::to_string(n_event) + ".json";
        write_json_file(dir / name,
                        to_json(make_record(e.where->cycle, e.where->I, cfg.diagram.params, hash, e.where->spectrum,
                                            cfg.diagram.hb_oversample, cfg.shooting_steps, cfg.gibbs_threshold)));
        files.push_back(name);
    }
    json branches = json::array();
    for (const auto& b : run.branches) {
        const std::string id = std::to_string(b.id);
        write_json_file(dir / ("branches/branch_" + id + ".json"), detail::branch_json(b, hash));
        files.push_back("branches/branch_" + id + ".json");
        for (const bool upper : {false, true}) {
            const std::string label = upper ? "v_max" : "v_min";
            const std::string name = "plot/branch_" + id + (upper ? "_vmax.dat" : "_vmin.dat");
            fs::create_directories(dir / "plot");
            std::ofstream out(dir / name);
            out << "# I " << label << " (branch " << id << ", " << b.solver << ")\n";
            for (const auto& p : b.points) out << fmt17(p.I) << ' ' << fmt17(upper ? p.v_max : p.v_min) << '\n';
            files.push_back(name);
        }
        branches.push_back({{"id", b.id},
                            {"solver", b.solver},
                            {"points", b.points.size()},
                            {"termination", to_string(b.termination)},
                            {"complete", detail::branch_complete(b)}});
    }
    const json manifest = {{"schema", 1},
                           {"tool", tool_version},
                           {"config_hash", hash},
                           {"complete", complete && run.incomplete.empty()},
                           {"files", files},
                           {"branches", branches},
                           {"incomplete", run.incomplete}};
    write_json_file(dir / "manifest.json", manifest);
    return files;
}

}  // namespace hhc
