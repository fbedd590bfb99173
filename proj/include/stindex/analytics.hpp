#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "stindex/error.hpp"
#include "stindex/extraction.hpp"
#include "stindex/geo.hpp"
#include "stindex/temporal.hpp"

namespace stindex {

/// A grounded event: one kept temporal mention paired with the nearest
/// resolved place in the same chunk, plus the chunk's other dimensions.
struct StEvent {
    std::size_t event_id = 0;
    std::string doc_id;
    std::size_t chunk_index = 0;
    /// Days since 1970-01-01; absent unless the time is day-granular or finer.
    std::optional<std::int64_t> day;
    std::string time;
    std::optional<LatLon> coords;
    std::string place;
    std::string country_code;
    std::vector<std::pair<std::string, std::string>> linked;

    bool grounded() const { return day.has_value() && coords.has_value(); }
};

struct EventSet {
    std::vector<StEvent> events;  // grounded only, ids ascending
    std::vector<StEvent> excluded;
};

/// Builds events from kept entities. Ids follow document order across the
/// result set; events lacking a place or a day-level time are excluded.
inline EventSet build_events(const std::vector<ExtractionResult>& results) {
    EventSet out;
    std::size_t next_id = 0;
    for (const auto& r : results) {
        std::map<std::size_t, std::vector<const ExtractedEntity*>> by_chunk;
        for (const auto& e : r.kept) {
            if (e.provenance == Provenance::kept) by_chunk[e.chunk_index].push_back(&e);
        }
        for (auto& [chunk, entities] : by_chunk) {
            std::stable_sort(entities.begin(), entities.end(),
                             [](const auto* a, const auto* b) { return a->doc_span.first < b->doc_span.first; });
            std::vector<const ExtractedEntity*> times;
            std::vector<const ExtractedEntity*> places;
            std::vector<std::pair<std::string, std::string>> linked;
            for (const auto* e : entities) {
                if (e->temporal()) times.push_back(e);
                else if (e->geo()) places.push_back(e);
                else linked.emplace_back(e->dimension, canonical_value(*e));
            }
            auto make = [&](const ExtractedEntity* t, const ExtractedEntity* p) {
                StEvent ev;
                ev.event_id = next_id++;
                ev.doc_id = r.doc_id;
                ev.chunk_index = chunk;
                ev.linked = linked;
                if (t) {
                    const auto* tv = t->temporal();
                    ev.time = serialize(*tv);
                    if (tv->granularity >= Granularity::day) ev.day = day_number(*tv);
                }
                if (p) {
                    const auto* g = p->geo();
                    ev.place = canonical_value(*p);
                    if (g->resolved() && g->coords) {
                        ev.coords = g->coords;
                        ev.country_code = g->country_code;
                    }
                }
                (ev.grounded() ? out.events : out.excluded).push_back(std::move(ev));
            };
            if (times.empty()) {
                for (const auto* p : places) make(nullptr, p);
                continue;
            }
            for (const auto* t : times) {
                const ExtractedEntity* best = nullptr;
                std::size_t best_gap = 0;
                for (const auto* p : places) {
                    if (!p->geo()->resolved()) continue;
                    auto gap = p->doc_span.first >= t->doc_span.second ? p->doc_span.first - t->doc_span.second
                               : t->doc_span.first >= p->doc_span.second ? t->doc_span.first - p->doc_span.second
                                                                          : 0;
                    if (!best || gap < best_gap) {
                        best = p;
                        best_gap = gap;
                    }
                }
                if (!best && !places.empty()) best = places.front();
                make(t, best);
            }
        }
    }
    return out;
}

struct ClusterParams {
    double eps_km = 50.0;
    double eps_days = 7.0;
    std::size_t min_pts = 2;
};

struct StCluster {
    std::size_t cluster_id = 0;
    std::vector<std::size_t> members;  // event ids, ascending
    LatLon centroid;
    std::int64_t first_day = 0;
    std::int64_t last_day = 0;
};

struct ClusterResult {
    std::vector<StCluster> clusters;
    std::vector<std::size_t> noise;
    /// Event ids whose cluster membership came from the core rule (not border).
    std::set<std::size_t> core;
};

/// True if `b` lies inside `a`'s space-time neighbourhood.
inline bool st_neighbours(const StEvent& a, const StEvent& b, const ClusterParams& p) {
    auto dt = std::llabs(*a.day - *b.day);
    return static_cast<double>(dt) <= p.eps_days && haversine_km(*a.coords, *b.coords) <= p.eps_km;
}

/// DBSCAN over space and time: neighbours must be within eps_km AND
/// eps_days; min_pts counts the point itself. Points are visited in
/// ascending event id, so a border point joins the first cluster that
/// reaches it. Clusters come back ordered by earliest member day.
inline ClusterResult cluster_st(std::span<const StEvent> input, const ClusterParams& params = {}) {
    if (params.eps_km <= 0 || params.eps_days <= 0 || params.min_pts < 2)
        throw EmptyInput("clustering needs eps_km > 0, eps_days > 0 and min_pts >= 2");
    std::vector<const StEvent*> events;
    for (const auto& e : input) {
        if (!e.grounded()) throw EmptyInput("event " + std::to_string(e.event_id) + " lacks a place or a day");
        events.push_back(&e);
    }
    std::sort(events.begin(), events.end(), [](const auto* a, const auto* b) { return a->event_id < b->event_id; });
    const auto n = events.size();

    std::vector<std::vector<std::size_t>> neighbours(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            if (st_neighbours(*events[i], *events[j], params)) {
                neighbours[i].push_back(j);
                neighbours[j].push_back(i);
            }
        }
    }
    for (auto& nb : neighbours) std::sort(nb.begin(), nb.end());
    auto is_core = [&](std::size_t i) { return neighbours[i].size() + 1 >= params.min_pts; };

    constexpr long kUnassigned = -1;
    std::vector<long> label(n, kUnassigned);
    long next_cluster = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (label[i] != kUnassigned || !is_core(i)) continue;
        const long c = next_cluster++;
        label[i] = c;
        std::deque<std::size_t> frontier{i};
        while (!frontier.empty()) {
            auto p = frontier.front();
            frontier.pop_front();
            if (!is_core(p)) continue;
            for (auto q : neighbours[p]) {
                if (label[q] != kUnassigned) continue;
                label[q] = c;
                frontier.push_back(q);
            }
        }
    }

    ClusterResult result;
    std::vector<StCluster> clusters(static_cast<std::size_t>(next_cluster));
    for (std::size_t i = 0; i < n; ++i) {
        if (is_core(i)) result.core.insert(events[i]->event_id);
        if (label[i] == kUnassigned) {
            result.noise.push_back(events[i]->event_id);
            continue;
        }
        clusters[static_cast<std::size_t>(label[i])].members.push_back(events[i]->event_id);
    }
    std::map<std::size_t, const StEvent*> by_id;
    for (const auto* e : events) by_id[e->event_id] = e;
    for (auto& c : clusters) {
        double lat = 0, lon = 0;
        c.first_day = *by_id[c.members.front()]->day;
        c.last_day = c.first_day;
        for (auto id : c.members) {
            const auto* e = by_id[id];
            lat += e->coords->lat;
            lon += e->coords->lon;
            c.first_day = std::min(c.first_day, *e->day);
            c.last_day = std::max(c.last_day, *e->day);
        }
        c.centroid = {lat / static_cast<double>(c.members.size()), lon / static_cast<double>(c.members.size())};
    }
    std::stable_sort(clusters.begin(), clusters.end(), [](const auto& a, const auto& b) {
        if (a.first_day != b.first_day) return a.first_day < b.first_day;
        return a.members.front() < b.members.front();
    });
    for (std::size_t k = 0; k < clusters.size(); ++k) clusters[k].cluster_id = k;
    result.clusters = std::move(clusters);
    return result;
}

struct BurstParams {
    int window_days = 7;
    int step_days = 1;
    double z = 2.0;
    std::size_t min_count = 3;
};

struct BurstWindow {
    std::int64_t start_day = 0;
    std::int64_t end_day = 0;  // inclusive
    std::size_t count = 0;
    double baseline_mean = 0.0;
    double baseline_sd = 0.0;
    /// Undefined when the baseline has no spread.
    std::optional<double> z_score;
};

/// Sliding windows over [first day, last day]. A window is a burst when its
/// count reaches baseline mean + z * sd over all earlier windows and at
/// least min_count; the first window has no baseline. Overlapping flagged
/// windows merge into maximal runs.
inline std::vector<BurstWindow> detect_bursts(std::span<const std::int64_t> days, const BurstParams& params = {}) {
    if (days.empty()) throw EmptyInput("burst detection needs at least one dated event");
    if (params.window_days < 1 || params.step_days < 1)
        throw EmptyInput("burst window and step must be at least one day");
    std::vector<std::int64_t> sorted(days.begin(), days.end());
    std::sort(sorted.begin(), sorted.end());
    auto count_in = [&](std::int64_t a, std::int64_t b) {
        return static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), b) -
                                        std::lower_bound(sorted.begin(), sorted.end(), a));
    };

    std::vector<BurstWindow> flagged;
    double sum = 0, sum_sq = 0;
    std::size_t windows = 0;
    for (auto start = sorted.front(); start <= sorted.back(); start += params.step_days) {
        BurstWindow w;
        w.start_day = start;
        w.end_day = start + params.window_days - 1;
        w.count = count_in(w.start_day, w.end_day);
        if (windows > 0) {
            w.baseline_mean = sum / static_cast<double>(windows);
            auto var = sum_sq / static_cast<double>(windows) - w.baseline_mean * w.baseline_mean;
            w.baseline_sd = std::sqrt(std::max(0.0, var));
            auto c = static_cast<double>(w.count);
            if (w.baseline_sd > 0) w.z_score = (c - w.baseline_mean) / w.baseline_sd;
            if (c >= w.baseline_mean + params.z * w.baseline_sd && w.count >= params.min_count && c > w.baseline_mean)
                flagged.push_back(w);
        }
        sum += static_cast<double>(w.count);
        sum_sq += static_cast<double>(w.count) * static_cast<double>(w.count);
        ++windows;
    }

    std::vector<BurstWindow> merged;
    for (const auto& w : flagged) {
        if (!merged.empty() && w.start_day <= merged.back().end_day) {
            auto& m = merged.back();
            m.end_day = std::max(m.end_day, w.end_day);
            if (w.z_score && (!m.z_score || *w.z_score > *m.z_score)) m.z_score = w.z_score;
            continue;
        }
        merged.push_back(w);
    }
    for (auto& m : merged) m.count = count_in(m.start_day, m.end_day);
    return merged;
}

struct CoocNode {
    std::string dimension;
    std::string value;
    std::size_t frequency = 0;
};

struct CoocEdge {
    std::size_t source = 0;  // node indices, source < target
    std::size_t target = 0;
    std::size_t weight = 0;
};

struct CoocGraph {
    std::vector<CoocNode> nodes;  // sorted by (dimension, value)
    std::vector<CoocEdge> edges;  // sorted by (source, target)
};

/// Nodes are distinct (dimension, value) pairs among kept entities; an edge
/// counts the chunks in which both ends occur.
inline CoocGraph cooccurrence_graph(const std::vector<ExtractionResult>& results) {
    std::map<std::pair<std::string, std::string>, std::size_t> frequency;
    std::map<std::pair<std::string, std::size_t>, std::set<std::pair<std::string, std::string>>> per_chunk;
    for (const auto& r : results) {
        for (const auto& e : r.kept) {
            if (e.provenance != Provenance::kept) continue;
            std::pair<std::string, std::string> key{e.dimension, canonical_value(e)};
            ++frequency[key];
            per_chunk[{r.doc_id, e.chunk_index}].insert(key);
        }
    }
    CoocGraph g;
    std::map<std::pair<std::string, std::string>, std::size_t> index;
    for (const auto& [key, f] : frequency) {
        index[key] = g.nodes.size();
        g.nodes.push_back({key.first, key.second, f});
    }
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> weights;
    for (const auto& [_, keys] : per_chunk) {
        std::vector<std::size_t> ids;
        for (const auto& k : keys) ids.push_back(index[k]);
        for (std::size_t i = 0; i < ids.size(); ++i)
            for (std::size_t j = i + 1; j < ids.size(); ++j) ++weights[{std::min(ids[i], ids[j]), std::max(ids[i], ids[j])}];
    }
    for (const auto& [ends, w] : weights) g.edges.push_back({ends.first, ends.second, w});
    return g;
}

struct DimensionBreakdown {
    std::string dimension;
    std::size_t total = 0;
    std::vector<std::pair<std::string, std::size_t>> values;  // count desc, then value
};

/// Frequency table per dimension. With a schema, required dimensions come
/// first, then schema order, then anything else alphabetically.
inline std::vector<DimensionBreakdown> dimension_breakdown(const std::vector<ExtractedEntity>& entities,
                                                           const SchemaSet* schema = nullptr) {
    std::map<std::string, std::map<std::string, std::size_t>> counts;
    for (const auto& e : entities) {
        if (e.provenance == Provenance::kept) ++counts[e.dimension][canonical_value(e)];
    }
    std::vector<std::string> order;
    if (schema) {
        for (bool required : {true, false})
            for (const auto& d : schema->dimensions)
                if (d.required == required && counts.count(d.name)) order.push_back(d.name);
    }
    for (const auto& [dim, _] : counts) {
        if (std::find(order.begin(), order.end(), dim) == order.end()) order.push_back(dim);
    }
    std::vector<DimensionBreakdown> out;
    for (const auto& dim : order) {
        DimensionBreakdown b;
        b.dimension = dim;
        for (const auto& [value, n] : counts[dim]) {
            b.values.emplace_back(value, n);
            b.total += n;
        }
        std::stable_sort(b.values.begin(), b.values.end(), [](const auto& x, const auto& y) {
            if (x.second != y.second) return x.second > y.second;
            return x.first < y.first;
        });
        out.push_back(std::move(b));
    }
    return out;
}

struct AnalyticsParams {
    ClusterParams cluster;
    BurstParams burst;
};

struct AnalyticsReport {
    AnalyticsParams params;
    EventSet events;
    ClusterResult clustering;
    std::vector<BurstWindow> bursts;
    CoocGraph graph;
    std::vector<DimensionBreakdown> breakdown;
};

inline AnalyticsReport analyze(const std::vector<ExtractionResult>& results, const AnalyticsParams& params = {},
                               const SchemaSet* schema = nullptr) {
    AnalyticsReport report;
    report.params = params;
    report.events = build_events(results);
    report.clustering = cluster_st(report.events.events, params.cluster);
    std::vector<std::int64_t> days;
    for (const auto& set : {&report.events.events, &report.events.excluded})
        for (const auto& e : *set)
            if (e.day) days.push_back(*e.day);
    if (!days.empty()) report.bursts = detect_bursts(days, params.burst);
    report.graph = cooccurrence_graph(results);
    std::vector<ExtractedEntity> kept;
    for (const auto& r : results) kept.insert(kept.end(), r.kept.begin(), r.kept.end());
    report.breakdown = dimension_breakdown(kept, schema);
    return report;
}

}  // namespace stindex
