#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "hhc/config.hpp"
#include "hhc/io.hpp"

using namespace hhc;

namespace {

const Cycle& cycle_at_twenty() {
    static const Cycle c = shoot(HHField{HHParams{}, 20.0}, settle_transient(20.0, 300.0));
    return c;
}

CycleRecord record_for(const std::string& method) {
    const HHParams p;
    const HHField f{p, 20.0};
    const Cycle& c = cycle_at_twenty();
    if (method == "shooting") return make_record(c, 20.0, p, "h");
    const HermiteOrbit<HHField> orbit(f, c.samples);
    if (method == "hb") {
        const auto ops = build_operators(20, 3);
        return make_record(solve_hb(f, fourier_from_orbit<4>(orbit, c.period, ops), ops, 1e-10), 20.0, p, "h");
    }
    return make_record(solve_fixed_count(f, [&](double tau) { return orbit(tau * c.period); }, c.period, 60), 20.0, p,
                       "h");
}

ErrorKind kind_of_failure(const std::string& text) {
    try {
        parse_config(text);
    } catch (const Error& e) {
        return e.kind();
    }
    return ErrorKind::NoConvergence;  // sentinel: parse unexpectedly succeeded
}

}  // namespace

// Configuration

TEST(Config, DefaultsParseFromEmptyText) {
    const RunConfig cfg = parse_config("");
    EXPECT_EQ(cfg.diagram.hb_harmonics, 50);
    EXPECT_EQ(cfg.diagram.collocation_subintervals, 400);
    EXPECT_EQ(cfg.diagram.params.gNa, 120.0);
    EXPECT_EQ(config_hash(cfg), config_hash(RunConfig{}));
}

TEST(Config, ReadsDottedKeysCommentsAndQuotes) {
    const RunConfig cfg = parse_config(
        "# comment line\n"
        "solver.hb.harmonics = 30   # trailing comment\n"
        "model.g_na=110.5\n"
        "output.dir = \"results dir\"\n"
        "\n"
        "random.seed = 42\n");
    EXPECT_EQ(cfg.diagram.hb_harmonics, 30);
    EXPECT_EQ(cfg.diagram.params.gNa, 110.5);
    EXPECT_EQ(cfg.output_dir, "results dir");
    EXPECT_EQ(cfg.seed, 42u);
}

TEST(Config, RejectsMalformedInput) {
    EXPECT_EQ(kind_of_failure("solver.hb.harmonic = 3\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of_failure("solver.hb.harmonics = 3x\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of_failure("solver.hb.harmonics = 3\nsolver.hb.harmonics = 4\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of_failure("just words\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of_failure("model.C = -1\n"), ErrorKind::ParseError);
    EXPECT_EQ(kind_of_failure("solver.hb.oversample = 1\n"), ErrorKind::ParseError);
}

TEST(Config, HashChangesExactlyWhenASettingChanges) {
    const RunConfig base;
    const std::string h0 = config_hash(base);
    EXPECT_EQ(h0.size(), 16u);
    EXPECT_EQ(config_hash(parse_config(canonical_text(base))), h0);
    int touched = 0;
    base.visit([&](const char* key, const auto& value) {
        RunConfig cfg = parse_config("");
        cfg.visit([&](const char* k, auto& member) {
            if (std::string(k) != key) return;
            using T = std::decay_t<decltype(member)>;
            if constexpr (std::is_same_v<T, std::string>) member += "x";
            else if constexpr (std::is_floating_point_v<T>) member = member * (1.0 + 1e-15) + 1e-300;
            else member = member + 1;
        });
        (void)value;
        EXPECT_NE(config_hash(cfg), h0) << key;
        ++touched;
    });
    EXPECT_GT(touched, 40);
}

// Cycle files

TEST(CycleFile, RoundTripPreservesCertificate) {
    for (const std::string method : {"hb", "collocation", "shooting"}) {
        const CycleRecord r = record_for(method);
        const CycleRecord back = cycle_from_json(json::parse(to_json(r).dump()));
        EXPECT_EQ(back.method, method);
        EXPECT_EQ(back.period(), r.period());
        EXPECT_NEAR(certificate(back), r.residual, 1e-12) << method;
        EXPECT_EQ(back.spectrum.nontrivial.size(), 3u);
        EXPECT_EQ(back.spectrum.nontrivial[0], r.spectrum.nontrivial[0]);
    }
}

TEST(CycleFile, HbRecordCarriesGibbsMetric) {
    const CycleRecord r = record_for("hb");
    ASSERT_TRUE(r.ripple.has_value());
    EXPECT_GT(*r.ripple, 0.0);
    const json j = to_json(r);
    EXPECT_EQ(j["gibbs"]["warning"].get<bool>(), r.gibbs_warning());
}

TEST(CycleFile, RejectsUnknownAndMissingFields) {
    const json good = to_json(record_for("shooting"));
    json extra = good;
    extra["comment"] = "x";
    EXPECT_THROW(cycle_from_json(extra), Error);
    json nested = good;
    nested["shooting"]["tol"] = 1.0;
    EXPECT_THROW(cycle_from_json(nested), Error);
    json missing = good;
    missing.erase("period");
    EXPECT_THROW(cycle_from_json(missing), Error);
    json schema = good;
    schema["schema"] = 2;
    EXPECT_THROW(cycle_from_json(schema), Error);
    json method = good;
    method["method"] = "magic";
    EXPECT_THROW(cycle_from_json(method), Error);
}

TEST(CycleFile, TruncatedFileIsParseError) {
    const auto dir = std::filesystem::temp_directory_path() / "hhc_io_test";
    std::filesystem::create_directories(dir);
    const auto path = dir / "cut.json";
    const std::string text = to_json(record_for("shooting")).dump();
    std::ofstream(path) << text.substr(0, text.size() / 2);
    try {
        read_cycle_file(path);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.kind(), ErrorKind::ParseError);
    }
}

// CSV

TEST(Csv, SeventeenDigitsRoundTrip) {
    for (double x : {0.1, 1.0 / 3.0, 9.7796380012345678, -1e-300, 6.02214076e23})
        EXPECT_EQ(std::strtod(fmt17(x).c_str(), nullptr), x);
}

TEST(Csv, HeaderAndQuoting) {
    const auto path = std::filesystem::temp_directory_path() / "hhc_io_test" / "t.csv";
    {
        CsvWriter w(path, "events", "0123456789abcdef", {"kind", "I"});
        w.row({csv_quote("a \"b\", c"), fmt17(7.92197768)});
    }
    std::ifstream in(path);
    std::string l1, l2, l3, l4, l5;
    std::getline(in, l1), std::getline(in, l2), std::getline(in, l3), std::getline(in, l4), std::getline(in, l5);
    EXPECT_EQ(l1, "# events v1");
    EXPECT_EQ(l2, std::string("# tool=") + tool_version);
    EXPECT_EQ(l3, "# config_hash=0123456789abcdef");
    EXPECT_EQ(l4, "kind,I");
    const std::string prefix = "\"a \"\"b\"\", c\",";
    ASSERT_EQ(l5.substr(0, prefix.size()), prefix);
    EXPECT_EQ(std::strtod(l5.c_str() + prefix.size(), nullptr), 7.92197768);
    EXPECT_EQ(l5.size() - prefix.size(), 18u);
}
