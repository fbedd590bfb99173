#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stindex/error.hpp"
#include "stindex/extraction.hpp"
#include "stindex/geo.hpp"
#include "stindex/json_io.hpp"
#include "stindex/temporal.hpp"
#include "stindex/text.hpp"

namespace stindex {

struct GoldTemporal {
    std::string value;  // ISO 8601
    std::optional<std::string> text;
};

struct GoldSpatial {
    std::string name;
    std::optional<LatLon> coords;
};

struct GoldRecord {
    std::string doc_id;
    std::size_t chunk_index = 0;
    std::vector<GoldTemporal> temporal;
    std::vector<GoldSpatial> spatial;
    /// Other dimensions: canonical values.
    std::map<std::string, std::vector<std::string>> other;
};

struct MatchCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;

    MatchCounts& operator+=(const MatchCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    bool operator==(const MatchCounts&) const = default;
};

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

namespace detail {

/// Snaps binary noise off a percent value so ties are real ties.
inline double snap_scaled(double x) { return std::round(x * 100.0 * 1e6) / 1e6; }

}  // namespace detail

/// Two-decimal rounding, ties away from zero.
inline double round2(double x) {
    auto s = detail::snap_scaled(x);
    return (s < 0 ? -std::floor(-s + 0.5) : std::floor(s + 0.5)) / 100.0;
}

/// Percentages. Empty denominators give 0.
inline Prf prf(std::size_t tp, std::size_t fp, std::size_t fn) {
    Prf r;
    if (tp + fp > 0) r.precision = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) r.recall = 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (r.precision + r.recall > 0) r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

/// Arithmetic mean of the two F1 percents at two decimals. An exact half
/// rounds down, so 73.815 reports as 73.81.
inline double combined_f1(double t_f1, double s_f1) {
    auto s = detail::snap_scaled((t_f1 + s_f1) / 2.0);
    return std::ceil(s - 0.5) / 100.0;
}

/// Case-folded, punctuation-free, whitespace-collapsed form.
inline std::string normalize_place_name(std::string_view name) {
    std::string out;
    for (unsigned char c : name) {
        if (std::ispunct(c)) out.push_back(' ');
        else out.push_back(static_cast<char>(std::tolower(c)));
    }
    return text::collapse_whitespace(out);
}

inline bool spatial_fuzzy_match(std::string_view pred, std::string_view gold, double tau = 0.5) {
    auto a = normalize_place_name(pred);
    auto b = normalize_place_name(gold);
    if (a.empty() || b.empty()) return false;
    if (a.find(b) != std::string::npos || b.find(a) != std::string::npos) return true;
    auto ta = text::split(a, ' ');
    auto tb = text::split(b, ' ');
    std::set<std::string> sa(ta.begin(), ta.end()), sb(tb.begin(), tb.end());
    std::size_t common = 0;
    for (const auto& t : sa) common += sb.count(t);
    return static_cast<double>(common) / static_cast<double>(std::min(sa.size(), sb.size())) >= tau;
}

/// Greedy one-to-one matching: preds in the given order, each taking the
/// first unconsumed gold it matches. Returns pred -> gold index pairs.
template <typename P, typename G, typename Pred>
std::vector<std::pair<std::size_t, std::size_t>> greedy_match(const std::vector<P>& preds, const std::vector<G>& golds,
                                                               Pred&& matches) {
    std::vector<bool> used(golds.size(), false);
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        for (std::size_t j = 0; j < golds.size(); ++j) {
            if (!used[j] && matches(preds[i], golds[j])) {
                used[j] = true;
                pairs.emplace_back(i, j);
                break;
            }
        }
    }
    return pairs;
}

inline MatchCounts counts_from(std::size_t preds, std::size_t golds, std::size_t matched) {
    return {matched, preds - matched, golds - matched};
}

inline MatchCounts match_temporal(const std::vector<TemporalValue>& pred, const std::vector<TemporalValue>& gold) {
    auto pairs = greedy_match(pred, gold, [](const auto& p, const auto& g) { return temporal_exact_match(p, g); });
    return counts_from(pred.size(), gold.size(), pairs.size());
}

struct CoordPair {
    std::optional<LatLon> pred;
    std::optional<LatLon> gold;
};

struct MdeResult {
    double km = 0.0;
    std::size_t measured = 0;
    std::size_t excluded = 0;
};

inline MdeResult mde(const std::vector<CoordPair>& pairs) {
    MdeResult r;
    double sum = 0.0;
    for (const auto& p : pairs) {
        if (!p.pred || !p.gold) {
            ++r.excluded;
            continue;
        }
        sum += haversine_km(*p.pred, *p.gold);
        ++r.measured;
    }
    if (r.measured == 0) throw NoMeasurablePairs("no matched spatial pair carries coordinates on both sides");
    r.km = sum / static_cast<double>(r.measured);
    return r;
}

struct DimensionScore {
    MatchCounts counts;
    Prf scores;  // rounded to 2 decimals
};

struct EvalReport {
    std::string temporal_dimension = "temporal";
    std::string spatial_dimension = "spatial";
    std::map<std::string, DimensionScore> dimensions;
    double combined_f1 = 0.0;
    std::optional<double> normalization_accuracy;
    std::optional<double> geocoding_success_rate;
    std::optional<double> mde_km;
    std::size_t mde_pairs = 0;
    std::size_t mde_excluded = 0;
    std::size_t chunks = 0;
    double tau = 0.5;

    const DimensionScore& temporal() const { return dimensions.at(temporal_dimension); }
    const DimensionScore& spatial() const { return dimensions.at(spatial_dimension); }
};

struct EvalOptions {
    double tau = 0.5;
    std::string temporal_dimension = "temporal";
    std::string spatial_dimension = "spatial";
};

inline GoldRecord gold_from_json(const json& j, const EvalOptions& opts = {}) {
    GoldRecord g;
    g.doc_id = j.at("doc_id").get<std::string>();
    g.chunk_index = j.at("chunk_index").get<std::size_t>();
    const auto& ents = j.at("entities");
    for (const auto& [dim, items] : ents.items()) {
        for (const auto& item : items) {
            if (dim == opts.temporal_dimension) {
                GoldTemporal t;
                if (item.is_string()) {
                    t.value = item.get<std::string>();
                } else {
                    t.value = item.at("value").get<std::string>();
                    if (item.contains("text")) t.text = item.at("text").get<std::string>();
                }
                parse_iso(t.value);
                g.temporal.push_back(std::move(t));
            } else if (dim == opts.spatial_dimension) {
                GoldSpatial s;
                if (item.is_string()) {
                    s.name = item.get<std::string>();
                } else {
                    s.name = item.at("name").get<std::string>();
                    if (item.contains("lat") && item.contains("lon"))
                        s.coords = LatLon{item.at("lat").get<double>(), item.at("lon").get<double>()};
                }
                g.spatial.push_back(std::move(s));
            } else {
                g.other[dim].push_back(item.get<std::string>());
            }
        }
    }
    return g;
}

/// JSON-lines gold file. Throws FormatError with the 1-based line number.
inline std::vector<GoldRecord> parse_gold(std::string_view content, const EvalOptions& opts = {}) {
    std::vector<GoldRecord> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= content.size()) {
        auto nl = content.find('\n', pos);
        auto line = content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        if (!text::trim_view(line).empty()) {
            try {
                out.push_back(gold_from_json(json::parse(line), opts));
            } catch (const json::exception& e) {
                throw FormatError(e.what(), line_no);
            } catch (const BadIso& e) {
                throw FormatError(e.what(), line_no);
            }
        }
        if (nl == std::string_view::npos) break;
        pos = nl + 1;
    }
    return out;
}

inline std::vector<GoldRecord> load_gold(const std::filesystem::path& path, const EvalOptions& opts = {}) {
    if (!std::filesystem::exists(path)) throw IoError("gold file not found: " + path.string());
    return parse_gold(text::read_file(path), opts);
}

/// Scores kept entities against gold, chunk by chunk. Temporal values match
/// exactly, places fuzzily by name, other dimensions exactly by canonical
/// value. Within a chunk preds are taken in document order.
inline EvalReport evaluate_run(const std::vector<ExtractionResult>& run, const std::vector<GoldRecord>& gold,
                               const EvalOptions& opts = {}) {
    using Key = std::pair<std::string, std::size_t>;
    std::map<Key, const GoldRecord*> gold_by_key;
    for (const auto& g : gold) gold_by_key[{g.doc_id, g.chunk_index}] = &g;

    std::map<Key, std::vector<const ExtractedEntity*>> pred_by_key;
    for (const auto& r : run) {
        for (const auto& e : r.kept) {
            if (e.provenance != Provenance::kept) continue;
            Key k{e.doc_id, e.chunk_index};
            if (!gold_by_key.count(k))
                throw KeyMismatch("prediction for " + e.doc_id + " chunk " + std::to_string(e.chunk_index) +
                                  " has no gold record");
            pred_by_key[k].push_back(&e);
        }
    }
    for (auto& [_, v] : pred_by_key) {
        std::stable_sort(v.begin(), v.end(), [](const auto* a, const auto* b) {
            if (a->doc_span != b->doc_span) return a->doc_span < b->doc_span;
            return a->entity_id < b->entity_id;
        });
    }

    EvalReport report;
    report.tau = opts.tau;
    report.temporal_dimension = opts.temporal_dimension;
    report.spatial_dimension = opts.spatial_dimension;
    report.chunks = gold_by_key.size();
    std::map<std::string, MatchCounts> totals;
    totals[opts.temporal_dimension];
    totals[opts.spatial_dimension];
    std::vector<CoordPair> coord_pairs;
    std::size_t norm_total = 0, norm_ok = 0;
    bool gold_has_text = false;
    std::size_t spatial_kept = 0, spatial_resolved = 0;
    std::size_t temporal_gold_total = 0, temporal_tp = 0;

    for (const auto& [key, g] : gold_by_key) {
        static const std::vector<const ExtractedEntity*> kNone;
        auto it = pred_by_key.find(key);
        const auto& preds = it == pred_by_key.end() ? kNone : it->second;

        std::vector<TemporalValue> pt;
        std::vector<std::string> pt_surface;
        std::vector<const GeoValue*> ps;
        std::map<std::string, std::vector<std::string>> po;
        for (const auto* e : preds) {
            if (e->dimension == opts.temporal_dimension) {
                if (const auto* t = e->temporal()) {
                    pt.push_back(*t);
                    pt_surface.push_back(e->surface);
                }
            } else if (e->dimension == opts.spatial_dimension) {
                if (const auto* s = e->geo()) {
                    ps.push_back(s);
                    ++spatial_kept;
                    if (s->resolved()) ++spatial_resolved;
                }
            } else {
                po[e->dimension].push_back(canonical_value(*e));
            }
        }

        std::vector<TemporalValue> gt;
        for (const auto& t : g->temporal) gt.push_back(parse_iso(t.value));
        auto t_counts = match_temporal(pt, gt);
        totals[opts.temporal_dimension] += t_counts;
        temporal_gold_total += gt.size();
        temporal_tp += t_counts.tp;

        // Normalization: gold items carrying their surface text are paired
        // with the pred of the same surface and compared by serialization.
        std::vector<bool> surface_used(pt.size(), false);
        for (std::size_t j = 0; j < g->temporal.size(); ++j) {
            const auto& gtext = g->temporal[j].text;
            if (!gtext) continue;
            gold_has_text = true;
            ++norm_total;
            auto want = text::to_lower(text::collapse_whitespace(*gtext));
            for (std::size_t i = 0; i < pt.size(); ++i) {
                if (surface_used[i] || text::to_lower(text::collapse_whitespace(pt_surface[i])) != want) continue;
                surface_used[i] = true;
                if (serialize(pt[i]) == serialize(gt[j])) ++norm_ok;
                break;
            }
        }

        auto s_pairs = greedy_match(ps, g->spatial, [&](const GeoValue* p, const GoldSpatial& gs) {
            return spatial_fuzzy_match(p->name, gs.name, opts.tau);
        });
        totals[opts.spatial_dimension] += counts_from(ps.size(), g->spatial.size(), s_pairs.size());
        for (auto [i, j] : s_pairs) coord_pairs.push_back({ps[i]->coords, g->spatial[j].coords});

        std::set<std::string> dims;
        for (const auto& [d, _] : po) dims.insert(d);
        for (const auto& [d, _] : g->other) dims.insert(d);
        for (const auto& d : dims) {
            static const std::vector<std::string> kEmpty;
            const auto& p = po.count(d) ? po.at(d) : kEmpty;
            const auto& gv = g->other.count(d) ? g->other.at(d) : kEmpty;
            auto pairs = greedy_match(p, gv, [](const auto& a, const auto& b) { return a == b; });
            totals[d] += counts_from(p.size(), gv.size(), pairs.size());
        }
    }

    for (const auto& [dim, c] : totals) {
        auto s = prf(c.tp, c.fp, c.fn);
        report.dimensions[dim] = {c, {round2(s.precision), round2(s.recall), round2(s.f1)}};
    }
    report.combined_f1 = combined_f1(report.temporal().scores.f1, report.spatial().scores.f1);
    if (gold_has_text) {
        if (norm_total) report.normalization_accuracy = round2(100.0 * norm_ok / static_cast<double>(norm_total));
    } else if (temporal_gold_total) {
        report.normalization_accuracy = round2(100.0 * temporal_tp / static_cast<double>(temporal_gold_total));
    }
    if (spatial_kept)
        report.geocoding_success_rate = round2(100.0 * spatial_resolved / static_cast<double>(spatial_kept));
    try {
        auto m = mde(coord_pairs);
        report.mde_km = round2(m.km);
        report.mde_pairs = m.measured;
        report.mde_excluded = m.excluded;
    } catch (const NoMeasurablePairs&) {
        report.mde_excluded = coord_pairs.size();
    }
    return report;
}

inline ordered_json report_to_json(const EvalReport& r) {
    auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
    ordered_json dims = ordered_json::object();
    for (const auto& [name, d] : r.dimensions) {
        dims[name] = {{"tp", d.counts.tp},
                      {"fp", d.counts.fp},
                      {"fn", d.counts.fn},
                      {"precision", d.scores.precision},
                      {"recall", d.scores.recall},
                      {"f1", d.scores.f1}};
    }
    return {{"temporal_dimension", r.temporal_dimension},
            {"spatial_dimension", r.spatial_dimension},
            {"chunks", r.chunks},
            {"tau", r.tau},
            {"dimensions", dims},
            {"combined_f1", r.combined_f1},
            {"temporal_normalization_accuracy", opt(r.normalization_accuracy)},
            {"geocoding_success_rate", opt(r.geocoding_success_rate)},
            {"mde_km", opt(r.mde_km)},
            {"mde_pairs", r.mde_pairs},
            {"mde_excluded_pairs", r.mde_excluded}};
}

struct TableRow {
    std::string model;
    std::string mode;
    const EvalReport* report = nullptr;
};

namespace detail {

inline std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

inline std::string signed2(double v, const char* suffix = "") {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.2f%s", round2(v), suffix);
    return buf;
}

inline std::string pad(const std::string& s, std::size_t w, bool right) {
    if (s.size() >= w) return s;
    return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

}  // namespace detail

/// Two blocks: temporal scores with Comb-F1, then
/// spatial scores with MDE. A Baseline row followed by another row for the
/// same model gets an Improvement row: percentage points for P/R/F1,
/// relative percent for Comb-F1 and MDE (positive = lower error).
inline std::string render_table(const std::vector<TableRow>& rows) {
    std::ostringstream out;
    auto block = [&](bool temporal) {
        std::vector<std::vector<std::string>> cells;
        cells.push_back({"Model", "Mode", temporal ? "T-P" : "S-P", temporal ? "T-R" : "S-R", temporal ? "T-F1" : "S-F1",
                         temporal ? "Comb-F1" : "MDE (km)"});
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = *rows[i].report;
            const auto& d = temporal ? r.temporal() : r.spatial();
            std::string last = temporal ? detail::fmt2(r.combined_f1) : (r.mde_km ? detail::fmt2(*r.mde_km) : "n/a");
            cells.push_back({rows[i].model, rows[i].mode, detail::fmt2(d.scores.precision),
                             detail::fmt2(d.scores.recall), detail::fmt2(d.scores.f1), last});
            if (i == 0 || rows[i - 1].model != rows[i].model || rows[i - 1].mode != "Baseline") continue;
            const auto& b = *rows[i - 1].report;
            const auto& bd = temporal ? b.temporal() : b.spatial();
            std::string rel = "n/a";
            if (temporal && b.combined_f1 > 0) {
                rel = detail::signed2(100.0 * (r.combined_f1 - b.combined_f1) / b.combined_f1, "%");
            } else if (!temporal && b.mde_km && r.mde_km && *b.mde_km > 0) {
                rel = detail::signed2(100.0 * (*b.mde_km - *r.mde_km) / *b.mde_km, "%");
            }
            cells.push_back({"", "Improvement (pp / rel.)", detail::signed2(d.scores.precision - bd.scores.precision),
                             detail::signed2(d.scores.recall - bd.scores.recall),
                             detail::signed2(d.scores.f1 - bd.scores.f1), rel});
        }
        std::vector<std::size_t> width(6, 0);
        for (const auto& row : cells)
            for (std::size_t c = 0; c < 6; ++c) width[c] = std::max(width[c], row[c].size());
        for (std::size_t k = 0; k < cells.size(); ++k) {
            std::string line;
            for (std::size_t c = 0; c < 6; ++c) {
                if (c) line += "  ";
                line += detail::pad(cells[k][c], width[c], c >= 2);
            }
            out << line << '\n';
            if (k == 0) {
                std::size_t total = 0;
                for (auto w : width) total += w;
                out << std::string(total + 10, '-') << '\n';
            }
        }
    };
    block(true);
    out << '\n';
    block(false);
    const auto& last = *rows.back().report;
    out << '\n';
    for (const auto& [name, d] : last.dimensions) {
        if (name == last.temporal_dimension || name == last.spatial_dimension) continue;
        out << name << ": P " << detail::fmt2(d.scores.precision) << "  R " << detail::fmt2(d.scores.recall) << "  F1 "
            << detail::fmt2(d.scores.f1) << '\n';
    }
    auto opt = [](const std::optional<double>& v, const char* unit) {
        return v ? detail::fmt2(*v) + unit : std::string("n/a");
    };
    out << "temporal normalization accuracy: " << opt(last.normalization_accuracy, "%") << '\n';
    out << "geocoding success rate: " << opt(last.geocoding_success_rate, "%") << '\n';
    out << "MDE pairs measured: " << last.mde_pairs << ", excluded: " << last.mde_excluded << '\n';
    return out.str();
}

}  // namespace stindex
