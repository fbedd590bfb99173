#include "../oracles.hpp"
#include "support.hpp"

using namespace stindex;

namespace {

StEvent event(std::size_t id, double lat, double lon, std::int64_t day) {
    StEvent e;
    e.event_id = id;
    e.coords = LatLon{lat, lon};
    e.day = day;
    return e;
}

ExtractedEntity category(const std::string& dim, const std::string& label, std::size_t chunk) {
    ExtractedEntity e;
    e.dimension = dim;
    e.chunk_index = chunk;
    e.value = CategoryValue{label};
    return e;
}

ExtractedEntity dated(const std::string& iso, std::size_t chunk, std::size_t at) {
    ExtractedEntity e;
    e.dimension = "temporal";
    e.chunk_index = chunk;
    e.doc_span = {at, at + 10};
    e.value = parse_iso(iso);
    return e;
}

ExtractedEntity placed(const std::string& name, double lat, double lon, std::size_t chunk, std::size_t at) {
    ExtractedEntity e;
    e.dimension = "spatial";
    e.chunk_index = chunk;
    e.doc_span = {at, at + name.size()};
    GeoValue g;
    g.name = g.resolved_name = name;
    g.coords = LatLon{lat, lon};
    g.country_code = "AU";
    g.resolution_level = ResolutionLevel::exact;
    e.value = g;
    return e;
}

std::vector<std::int64_t> expand(std::initializer_list<int> daily) {
    std::vector<std::int64_t> days;
    std::int64_t d = 1;
    for (int n : daily) {
        for (int i = 0; i < n; ++i) days.push_back(d);
        ++d;
    }
    return days;
}

}  // namespace

TEST(Cluster, ThreeDaysOneLocation) {
    std::vector<StEvent> ev{event(0, -31.95, 115.86, 1), event(1, -31.95, 115.86, 2), event(2, -31.95, 115.86, 3)};
    auto r = cluster_st(ev);
    ASSERT_EQ(r.clusters.size(), 1u);
    EXPECT_EQ(r.clusters[0].members, (std::vector<std::size_t>{0, 1, 2}));
    EXPECT_TRUE(r.noise.empty());
    EXPECT_EQ(r.clusters[0].first_day, 1);
    EXPECT_EQ(r.clusters[0].last_day, 3);
}

TEST(Cluster, IsolatedEventIsNoise) {
    std::vector<StEvent> ev{event(4, -31.95, 115.86, 1)};
    auto r = cluster_st(ev);
    EXPECT_TRUE(r.clusters.empty());
    EXPECT_EQ(r.noise, (std::vector<std::size_t>{4}));
}

TEST(Cluster, HundredKilometresApartIsNoise) {
    // 0.9 degrees of latitude is about 100 km.
    std::vector<StEvent> ev{event(0, -31.0, 115.86, 1), event(1, -31.9, 115.86, 1)};
    auto r = cluster_st(ev);
    EXPECT_TRUE(r.clusters.empty());
    EXPECT_EQ(r.noise.size(), 2u);
}

TEST(Cluster, BoundariesAreInclusive) {
    std::vector<StEvent> ev{event(0, 0, 0, 1), event(1, 0, 0, 8)};
    EXPECT_EQ(cluster_st(ev).clusters.size(), 1u);
    ev[1].day = 9;
    EXPECT_TRUE(cluster_st(ev).clusters.empty());
}

TEST(Cluster, UngroundedEventsAndBadParamsThrow) {
    std::vector<StEvent> ev{event(0, 0, 0, 1)};
    ev[0].day.reset();
    EXPECT_THROW(cluster_st(ev), EmptyInput);
    std::vector<StEvent> ok{event(0, 0, 0, 1)};
    EXPECT_THROW(cluster_st(ok, {50, 7, 1}), EmptyInput);
    EXPECT_THROW(cluster_st(ok, {0, 7, 2}), EmptyInput);
}

TEST(Cluster, BorderJoinsTheLowestReachingCluster) {
    // Along the equator; 0.1 degree is about 11 km. Event 4 reaches one core
    // of each group, the groups are 67 km apart, and it is not core itself.
    std::vector<StEvent> ev{event(0, 0, -0.1, 1), event(1, 0, -0.05, 1), event(2, 0, 0.1, 1), event(3, 0, 0.0, 1),
                            event(4, 0, 0.4, 1),  event(5, 0, 0.7, 1),   event(6, 0, 0.8, 1), event(7, 0, 0.85, 1),
                            event(8, 0, 0.9, 1)};
    auto r = cluster_st(ev, {40, 7, 4});
    ASSERT_EQ(r.clusters.size(), 2u);
    EXPECT_EQ(r.clusters[0].members, (std::vector<std::size_t>{0, 1, 2, 3, 4}));
    EXPECT_EQ(r.clusters[1].members, (std::vector<std::size_t>{5, 6, 7, 8}));
    EXPECT_FALSE(r.core.count(4));
    EXPECT_TRUE(r.noise.empty());
}

TEST(Cluster, MatchesBruteForceReference) {
    for (unsigned seed = 0; seed < 25; ++seed) {
        std::mt19937 rng(seed);
        std::uniform_int_distribution<int> size(1, 200), centre_pick(0, 4), day(0, 60);
        std::normal_distribution<double> jitter(0.0, 0.3);
        std::vector<std::pair<double, double>> centres;
        for (int c = 0; c < 5; ++c) centres.emplace_back(-34.0 + 3.0 * c, 115.0 + 1.5 * c);
        std::vector<StEvent> ev;
        std::vector<oracle::Point> pts;
        int n = size(rng);
        for (int i = 0; i < n; ++i) {
            auto [lat, lon] = centres[static_cast<std::size_t>(centre_pick(rng))];
            lat += jitter(rng);
            lon += jitter(rng);
            auto d = day(rng);
            ev.push_back(event(static_cast<std::size_t>(i), lat, lon, d));
            pts.push_back({lat, lon, d});
        }
        std::shuffle(ev.begin(), ev.end(), rng);
        auto got = cluster_st(ev);
        auto want = oracle::dbscan(pts, 50, 7, 2);

        EXPECT_EQ(got.core, want.core) << "seed " << seed;
        std::set<std::size_t> noise(got.noise.begin(), got.noise.end());
        EXPECT_EQ(noise, want.noise) << "seed " << seed;
        std::set<std::set<std::size_t>> core_partition;
        std::size_t placed = noise.size();
        for (const auto& c : got.clusters) {
            EXPECT_GE(c.members.size(), 2u);
            std::set<std::size_t> cores;
            for (auto m : c.members)
                if (want.core.count(m)) cores.insert(m);
            core_partition.insert(cores);
            placed += c.members.size();
        }
        EXPECT_EQ(core_partition, want.core_partition) << "seed " << seed;
        EXPECT_EQ(placed, ev.size()) << "seed " << seed;
        for (std::size_t k = 1; k < got.clusters.size(); ++k)
            EXPECT_LE(got.clusters[k - 1].first_day, got.clusters[k].first_day);
    }
}

TEST(Cluster, PermutationDoesNotChangeTheResult) {
    std::mt19937 rng(3);
    std::vector<StEvent> ev;
    for (std::size_t i = 0; i < 80; ++i)
        ev.push_back(event(i, -32 + (rng() % 100) / 50.0, 116 + (rng() % 100) / 50.0, static_cast<int>(rng() % 30)));
    auto base = cluster_st(ev);
    for (int k = 0; k < 10; ++k) {
        std::shuffle(ev.begin(), ev.end(), rng);
        auto again = cluster_st(ev);
        EXPECT_EQ(again.noise, base.noise);
        ASSERT_EQ(again.clusters.size(), base.clusters.size());
        for (std::size_t c = 0; c < base.clusters.size(); ++c)
            EXPECT_EQ(again.clusters[c].members, base.clusters[c].members);
    }
}

TEST(Burst, SpikeOnTheLastDay) {
    auto days = expand({1, 1, 1, 1, 10});
    auto b = detect_bursts(days, {1, 1, 2.0, 3});
    ASSERT_EQ(b.size(), 1u);
    EXPECT_EQ(b[0].start_day, 5);
    EXPECT_EQ(b[0].end_day, 5);
    EXPECT_EQ(b[0].count, 10u);
    EXPECT_DOUBLE_EQ(b[0].baseline_mean, 1.0);
    EXPECT_DOUBLE_EQ(b[0].baseline_sd, 0.0);
    EXPECT_FALSE(b[0].z_score);
}

TEST(Burst, UniformCountsAndSingleEventsHaveNone) {
    auto uniform = expand({2, 2, 2, 2});
    EXPECT_TRUE(detect_bursts(uniform, {1, 1, 2.0, 3}).empty());
    std::vector<std::int64_t> single{42};
    EXPECT_TRUE(detect_bursts(single).empty());
    std::vector<std::int64_t> none;
    EXPECT_THROW(detect_bursts(none), EmptyInput);
}

TEST(Burst, OverlappingWindowsMerge) {
    std::vector<std::int64_t> days;
    for (int d = 0; d < 30; ++d) days.push_back(d);
    for (int k = 0; k < 8; ++k) days.push_back(31);
    auto b = detect_bursts(days);
    ASSERT_EQ(b.size(), 1u);
    EXPECT_LE(b[0].start_day, 31);
    EXPECT_GE(b[0].end_day, 31);
}

TEST(Cooccurrence, OneChunkMakesATriangle) {
    ExtractionResult r;
    r.doc_id = "d";
    r.kept = {category("a", "x", 0), category("b", "y", 0), category("c", "z", 0)};
    auto g = cooccurrence_graph({r});
    ASSERT_EQ(g.nodes.size(), 3u);
    ASSERT_EQ(g.edges.size(), 3u);
    for (const auto& e : g.edges) {
        EXPECT_EQ(e.weight, 1u);
        EXPECT_LT(e.source, e.target);
    }
}

TEST(Cooccurrence, WeightCountsChunks) {
    ExtractionResult r;
    r.doc_id = "d";
    r.kept = {category("a", "x", 0), category("b", "y", 0), category("a", "x", 3), category("b", "y", 3),
              category("c", "lonely", 5)};
    auto g = cooccurrence_graph({r});
    ASSERT_EQ(g.edges.size(), 1u);
    EXPECT_EQ(g.edges[0].weight, 2u);
    ASSERT_EQ(g.nodes.size(), 3u);
    EXPECT_EQ(g.nodes[0].frequency, 2u);
    EXPECT_EQ(g.nodes[2].value, "lonely");
}

TEST(Cooccurrence, RepeatsInOneChunkCountOnceAndNoSelfEdges) {
    ExtractionResult r;
    r.doc_id = "d";
    r.kept = {category("a", "x", 0), category("a", "x", 0), category("b", "y", 0)};
    auto g = cooccurrence_graph({r});
    ASSERT_EQ(g.edges.size(), 1u);
    EXPECT_EQ(g.edges[0].weight, 1u);
    for (const auto& e : g.edges) EXPECT_NE(e.source, e.target);
}

TEST(Cooccurrence, EmptyInputGivesEmptyGraph) {
    auto g = cooccurrence_graph({});
    EXPECT_TRUE(g.nodes.empty());
    EXPECT_TRUE(g.edges.empty());
}

TEST(Breakdown, CountsDescendingTiesLexicographic) {
    std::vector<ExtractedEntity> in{category("disease", "measles", 0), category("disease", "influenza", 0),
                                    category("disease", "measles", 1), category("disease", "dengue", 2),
                                    category("venue_type", "airport", 0)};
    auto b = dimension_breakdown(in);
    ASSERT_EQ(b.size(), 2u);
    EXPECT_EQ(b[0].dimension, "disease");
    EXPECT_EQ(b[0].total, 4u);
    using Row = std::pair<std::string, std::size_t>;
    EXPECT_EQ(b[0].values, (std::vector<Row>{{"measles", 2}, {"dengue", 1}, {"influenza", 1}}));
    EXPECT_EQ(b[1].total, 1u);
    EXPECT_TRUE(dimension_breakdown({}).empty());
}

TEST(Breakdown, SingleEntity) {
    auto b = dimension_breakdown({category("disease", "measles", 0)});
    ASSERT_EQ(b.size(), 1u);
    ASSERT_EQ(b[0].values.size(), 1u);
    EXPECT_EQ(b[0].values[0].second, 1u);
}

TEST(Events, NearestPlacePairsWithEachDate) {
    ExtractionResult r;
    r.doc_id = "d";
    r.kept = {dated("2024-03-15", 0, 0), placed("Perth", -31.95, 115.86, 0, 12), placed("Broome", -17.96, 122.24, 0, 80),
              dated("2024-03-20", 0, 90), category("disease", "measles", 0), dated("2024-03", 1, 0),
              placed("Albany", -35.02, 117.88, 2, 0)};
    auto set = build_events({r});
    ASSERT_EQ(set.events.size(), 2u);
    EXPECT_EQ(set.events[0].place, "Perth");
    EXPECT_EQ(set.events[1].place, "Broome");
    EXPECT_EQ(set.events[0].linked.size(), 1u);
    // Month-only date and a place without a date are both excluded.
    EXPECT_EQ(set.excluded.size(), 2u);
}

TEST(Events, EveryEventLandsInExactlyOneBucket) {
    auto s = cli_detail::demo_settings(testing_support::data_dir(), false);
    auto p = cli_detail::prepare(s);
    auto run = cli_detail::run_extraction(p, s);
    auto set = build_events(run);
    auto clusters = cluster_st(set.events);
    std::map<std::size_t, int> seen;
    for (const auto& c : clusters.clusters)
        for (auto id : c.members) ++seen[id];
    for (auto id : clusters.noise) ++seen[id];
    for (const auto& e : set.excluded) ++seen[e.event_id];
    EXPECT_EQ(seen.size(), set.events.size() + set.excluded.size());
    for (const auto& [id, n] : seen) EXPECT_EQ(n, 1) << id;
}
