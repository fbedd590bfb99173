#include "../oracles.hpp"
#include "support.hpp"

using namespace stindex;

namespace {

TemporalValue day(const char* iso) { return parse_iso(iso); }

std::vector<GoldRecord> demo_gold() { return load_gold(testing_support::data_dir() / "gold.jsonl"); }

/// A run that predicts exactly what the gold says.
std::vector<ExtractionResult> run_from_gold(const std::vector<GoldRecord>& gold) {
    std::map<std::string, ExtractionResult> by_doc;
    for (const auto& g : gold) {
        auto& r = by_doc[g.doc_id];
        r.doc_id = g.doc_id;
        std::size_t at = g.chunk_index * 1000, seq = 0;
        auto add = [&](std::string dim, EntityValue v, std::string surface) {
            ExtractedEntity e;
            e.doc_id = g.doc_id;
            e.chunk_index = g.chunk_index;
            e.entity_id = g.doc_id + ":" + std::to_string(g.chunk_index) + ":" + std::to_string(seq++);
            e.dimension = std::move(dim);
            e.surface = std::move(surface);
            e.doc_span = {at, at + 5};
            at += 10;
            e.value = std::move(v);
            r.kept.push_back(std::move(e));
        };
        for (const auto& t : g.temporal) add("temporal", parse_iso(t.value), t.text.value_or(t.value));
        for (const auto& s : g.spatial) {
            GeoValue v;
            v.name = v.resolved_name = s.name;
            v.coords = s.coords;
            v.resolution_level = s.coords ? ResolutionLevel::exact : ResolutionLevel::unresolved;
            add("spatial", v, s.name);
        }
        for (const auto& [dim, values] : g.other)
            for (const auto& v : values) add(dim, CategoryValue{v}, v);
    }
    std::vector<ExtractionResult> out;
    for (auto& [_, r] : by_doc) out.push_back(std::move(r));
    return out;
}

void expect_matches_expected(const EvalReport& got, const json& want) {
    for (const auto& [dim, w] : want.at("dimensions").items()) {
        SCOPED_TRACE(dim);
        const auto& d = got.dimensions.at(dim);
        EXPECT_EQ(d.counts.tp, w.at("tp").get<std::size_t>());
        EXPECT_EQ(d.counts.fp, w.at("fp").get<std::size_t>());
        EXPECT_EQ(d.counts.fn, w.at("fn").get<std::size_t>());
        // Percentages recomputed from the hand counts, not from the library.
        auto o = oracle::prf(w.at("tp"), w.at("fp"), w.at("fn"));
        EXPECT_NEAR(d.scores.precision, o.precision, 0.01);
        EXPECT_NEAR(d.scores.recall, o.recall, 0.01);
        EXPECT_NEAR(d.scores.f1, o.f1, 0.01);
        EXPECT_NEAR(d.scores.f1, w.at("f1").get<double>(), 0.01);
    }
    EXPECT_NEAR(got.combined_f1, want.at("combined_f1").get<double>(), 0.01);
    EXPECT_NEAR(*got.normalization_accuracy, want.at("temporal_normalization_accuracy").get<double>(), 0.01);
    EXPECT_NEAR(*got.geocoding_success_rate, want.at("geocoding_success_rate").get<double>(), 0.01);
    EXPECT_NEAR(*got.mde_km, want.at("mde_km").get<double>(), 0.01);
    EXPECT_EQ(got.mde_pairs, want.at("mde_pairs").get<std::size_t>());
}

}  // namespace

TEST(Prf, HandComputedCase) {
    auto s = prf(2, 1, 2);
    EXPECT_DOUBLE_EQ(round2(s.precision), 66.67);
    EXPECT_DOUBLE_EQ(round2(s.recall), 50.00);
    EXPECT_DOUBLE_EQ(round2(s.f1), 57.14);
}

TEST(Prf, EmptyCountsAreZero) {
    auto s = prf(0, 0, 0);
    EXPECT_EQ(s.precision, 0.0);
    EXPECT_EQ(s.recall, 0.0);
    EXPECT_EQ(s.f1, 0.0);
}

TEST(Prf, AgreesWithReferenceAndStaysInRange) {
    std::mt19937 rng(17);
    for (int i = 0; i < 2000; ++i) {
        std::size_t tp = rng() % 60, fp = rng() % 60, fn = rng() % 60;
        auto s = prf(tp, fp, fn);
        auto o = oracle::prf(static_cast<long>(tp), static_cast<long>(fp), static_cast<long>(fn));
        EXPECT_NEAR(round2(s.f1), o.f1, 0.011);
        for (double v : {s.precision, s.recall, s.f1}) {
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 100.0);
        }
        if (fp == fn) EXPECT_NEAR(s.f1, s.precision, 1e-9);  // P == R
    }
}

TEST(CombinedF1, ReproducesReferenceCells) {
    // Temporal F1, spatial F1, combined, one row per model and mode.
    const double cells[][3] = {{66.61, 74.83, 70.72}, {69.66, 77.97, 73.81}, {58.27, 81.35, 69.81}, {66.50, 78.15, 72.32}};
    for (const auto& c : cells) EXPECT_NEAR(combined_f1(c[0], c[1]), c[2], 0.005) << c[0] << " " << c[1];
}

TEST(CombinedF1, MeanOfEqualInputsIsTheInput) {
    for (double x : {0.0, 12.34, 50.0, 99.99, 100.0}) EXPECT_DOUBLE_EQ(combined_f1(x, x), x);
}

TEST(FuzzyMatch, SpecCases) {
    EXPECT_TRUE(spatial_fuzzy_match("Perth", "Perth, Western Australia"));
    EXPECT_TRUE(spatial_fuzzy_match("WA, Australia", "Western Australia"));
    EXPECT_FALSE(spatial_fuzzy_match("Sydney", "Melbourne"));
    EXPECT_FALSE(spatial_fuzzy_match("", "Perth"));
    EXPECT_FALSE(spatial_fuzzy_match("WA, Australia", "Western Australia", 0.6));
}

TEST(FuzzyMatch, IsSymmetric) {
    const char* names[] = {"Perth",         "Perth, Western Australia", "WA",        "Western Australia",
                           "Perth Airport", "Perth Children's Hospital", "Kuala Lumpur", "New South Wales",
                           "South Wales",   "Wales",                    "St. John's", "st johns"};
    for (auto* a : names)
        for (auto* b : names)
            for (double tau : {0.3, 0.5, 0.7, 1.0})
                EXPECT_EQ(spatial_fuzzy_match(a, b, tau), spatial_fuzzy_match(b, a, tau)) << a << " | " << b;
}

TEST(MatchTemporal, OneToOne) {
    EXPECT_EQ(match_temporal({day("2024-03-15")}, {day("2024-03-15")}), (MatchCounts{1, 0, 0}));
    EXPECT_EQ(match_temporal({day("2024-03-15"), day("2024-03-15")}, {day("2024-03-15")}), (MatchCounts{1, 1, 0}));
    EXPECT_EQ(match_temporal({}, {day("2024-03-15")}), (MatchCounts{0, 0, 1}));
    EXPECT_EQ(match_temporal({day("2024-03")}, {day("2024-03-15")}), (MatchCounts{0, 1, 1}));
}

TEST(MatchTemporal, TruePositivesNeverExceedEitherSide) {
    std::mt19937 rng(2);
    const char* pool[] = {"2024-03-15", "2024-03-16", "2024-03", "2024", "2024-03-15/2024-03-17"};
    for (int i = 0; i < 500; ++i) {
        std::vector<TemporalValue> p, g;
        for (auto k = rng() % 5; k > 0; --k) p.push_back(day(pool[rng() % 5]));
        for (auto k = rng() % 5; k > 0; --k) g.push_back(day(pool[rng() % 5]));
        auto c = match_temporal(p, g);
        EXPECT_LE(c.tp, std::min(p.size(), g.size()));
        EXPECT_EQ(c.tp + c.fp, p.size());
        EXPECT_EQ(c.tp + c.fn, g.size());
    }
}

TEST(Mde, SpecCases) {
    LatLon perth{-31.95, 115.86};
    EXPECT_DOUBLE_EQ(mde({{perth, perth}}).km, 0.0);
    // Along a meridian one degree is R * pi / 180 km.
    const double deg = std::numbers::pi * kEarthRadiusKm / 180.0;
    LatLon o{0, 0};
    LatLon at100{100.0 / deg, 0}, at300{300.0 / deg, 0};
    auto r = mde({{o, at100}, {o, at300}, {o, std::nullopt}});
    EXPECT_NEAR(r.km, 200.0, 1e-6);
    EXPECT_EQ(r.measured, 2u);
    EXPECT_EQ(r.excluded, 1u);
    EXPECT_THROW(mde({{std::nullopt, perth}}), NoMeasurablePairs);
    EXPECT_THROW(mde({}), NoMeasurablePairs);
}

TEST(EvaluateRun, IdentityRunScoresPerfectly) {
    auto gold = demo_gold();
    auto report = evaluate_run(run_from_gold(gold), gold);
    for (const auto& [dim, d] : report.dimensions) {
        EXPECT_DOUBLE_EQ(d.scores.precision, 100.0) << dim;
        EXPECT_DOUBLE_EQ(d.scores.recall, 100.0) << dim;
        EXPECT_DOUBLE_EQ(d.scores.f1, 100.0) << dim;
    }
    EXPECT_DOUBLE_EQ(report.combined_f1, 100.0);
    EXPECT_DOUBLE_EQ(*report.mde_km, 0.0);
    EXPECT_DOUBLE_EQ(*report.normalization_accuracy, 100.0);
}

TEST(EvaluateRun, EmptyPredictionScoresZero) {
    auto gold = demo_gold();
    auto report = evaluate_run({}, gold);
    EXPECT_EQ(report.temporal().scores.precision, 0.0);
    EXPECT_EQ(report.temporal().scores.recall, 0.0);
    EXPECT_EQ(report.spatial().scores.recall, 0.0);
    EXPECT_GT(report.spatial().counts.fn, 0u);
    EXPECT_FALSE(report.mde_km);
    EXPECT_FALSE(report.geocoding_success_rate);
}

TEST(EvaluateRun, UnknownChunkIsAKeyMismatch) {
    auto gold = demo_gold();
    auto run = run_from_gold(gold);
    run[0].kept[0].chunk_index = 99;
    EXPECT_THROW(evaluate_run(run, gold), KeyMismatch);
}

TEST(EvaluateRun, RecordOrderDoesNotMatter) {
    auto gold = demo_gold();
    auto s = cli_detail::demo_settings(testing_support::data_dir(), false);
    auto p = cli_detail::prepare(s);
    auto run = cli_detail::run_extraction(p, s);
    auto base = report_to_json(evaluate_run(run, gold)).dump();
    std::mt19937 rng(4);
    for (int i = 0; i < 10; ++i) {
        std::shuffle(run.begin(), run.end(), rng);
        for (auto& r : run) std::shuffle(r.kept.begin(), r.kept.end(), rng);
        std::shuffle(gold.begin(), gold.end(), rng);
        EXPECT_EQ(report_to_json(evaluate_run(run, gold)).dump(), base);
    }
}

TEST(EvaluateRun, DemoRunsMatchTheHandScoredReport) {
    auto expected = json::parse(text::read_file(testing_support::data_dir() / "expected-report.json"));
    auto gold = demo_gold();
    for (bool baseline : {false, true}) {
        SCOPED_TRACE(baseline ? "baseline" : "full");
        auto s = cli_detail::demo_settings(testing_support::data_dir(), baseline);
        auto p = cli_detail::prepare(s);
        auto report = evaluate_run(cli_detail::run_extraction(p, s), gold);
        expect_matches_expected(report, expected.at(baseline ? "baseline" : "full"));
    }
}

TEST(Report, TableHasBothColumnBlocks) {
    auto gold = demo_gold();
    auto report = evaluate_run(run_from_gold(gold), gold);
    auto table = render_table({{"fixture", "Full", &report}});
    for (const char* col : {"T-P", "T-R", "T-F1", "Comb-F1", "S-P", "S-R", "S-F1", "MDE (km)"})
        EXPECT_NE(table.find(col), std::string::npos) << col;
}
