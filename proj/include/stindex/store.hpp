#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "stindex/analytics.hpp"
#include "stindex/error.hpp"
#include "stindex/extraction.hpp"
#include "stindex/ingest.hpp"
#include "stindex/json_io.hpp"
#include "stindex/llm.hpp"
#include "stindex/schema.hpp"
#include "stindex/text.hpp"

namespace stindex {

inline constexpr const char* kToolVersion = "0.3.0";
inline constexpr const char* kBundleVersion = "1";

// ---- values -------------------------------------------------------------

inline ordered_json value_to_json(const EntityValue& v) {
    return std::visit(
        [](const auto& x) -> ordered_json {
            using T = std::decay_t<decltype(x)>;
            if constexpr (std::is_same_v<T, TemporalValue>) {
                return {{"type", "temporal"},
                        {"iso", serialize(x)},
                        {"kind", to_string(x.kind)},
                        {"granularity", to_string(x.granularity)},
                        {"original_expression", x.original_expression},
                        {"relative", x.relative}};
            } else if constexpr (std::is_same_v<T, GeoValue>) {
                ordered_json h = ordered_json::object();
                for (const auto& [k, val] : x.hierarchy) h[k] = val;
                return {{"type", "spatial"},
                        {"name", x.name},
                        {"resolved_name", x.resolved_name},
                        {"lat", x.coords ? ordered_json(x.coords->lat) : ordered_json(nullptr)},
                        {"lon", x.coords ? ordered_json(x.coords->lon) : ordered_json(nullptr)},
                        {"hierarchy", h},
                        {"country_code", x.country_code},
                        {"admin", x.admin},
                        {"resolution_level", to_string(x.resolution_level)},
                        {"provider", to_string(x.provider)}};
            } else if constexpr (std::is_same_v<T, CategoryValue>) {
                return {{"type", "category"}, {"label", x.label}};
            } else {
                return {{"type", "structured"}, {"attributes", ordered_json::parse(x.attributes.dump())}};
            }
        },
        v);
}

inline EntityValue value_from_json(const json& j) {
    auto type = j.at("type").get<std::string>();
    if (type == "temporal") {
        auto v = parse_iso(j.at("iso").get<std::string>());
        v.original_expression = j.at("original_expression").get<std::string>();
        v.relative = j.at("relative").get<bool>();
        return v;
    }
    if (type == "spatial") {
        GeoValue g;
        g.name = j.at("name").get<std::string>();
        g.resolved_name = j.at("resolved_name").get<std::string>();
        if (!j.at("lat").is_null()) g.coords = LatLon{j.at("lat").get<double>(), j.at("lon").get<double>()};
        for (const auto& [k, val] : j.at("hierarchy").items()) g.hierarchy[k] = val.get<std::string>();
        g.country_code = j.at("country_code").get<std::string>();
        g.admin = j.at("admin").get<std::string>();
        auto level = parse_resolution_level(j.at("resolution_level").get<std::string>());
        auto provider = parse_geo_provider(j.at("provider").get<std::string>());
        if (!level || !provider) throw SchemaViolation("unknown resolution level or provider");
        g.resolution_level = *level;
        g.provider = *provider;
        return g;
    }
    if (type == "category") return CategoryValue{j.at("label").get<std::string>()};
    if (type == "structured") return StructuredValue{j.at("attributes")};
    throw SchemaViolation("unknown value type '" + type + "'");
}

// ---- run files ----------------------------------------------------------

inline ordered_json entity_to_json(const ExtractedEntity& e) {
    ordered_json refl = nullptr;
    if (e.reflection)
        refl = {{"relevance", e.reflection->relevance},
                {"accuracy", e.reflection->accuracy},
                {"consistency", e.reflection->consistency}};
    return {{"record", "entity"},
            {"entity_id", e.entity_id},
            {"doc_id", e.doc_id},
            {"chunk_index", e.chunk_index},
            {"dimension", e.dimension},
            {"surface", e.surface},
            {"doc_span", {e.doc_span.first, e.doc_span.second}},
            {"value", e.value ? value_to_json(*e.value) : ordered_json(nullptr)},
            {"raw_value", e.raw_value},
            {"qualifier", e.qualifier ? ordered_json(*e.qualifier) : ordered_json(nullptr)},
            {"confidence", e.confidence},
            {"reflection", refl},
            {"provenance", to_string(e.provenance)},
            {"reason", e.reason}};
}

inline ExtractedEntity entity_from_json(const json& j) {
    ExtractedEntity e;
    e.entity_id = j.at("entity_id").get<std::string>();
    e.doc_id = j.at("doc_id").get<std::string>();
    e.chunk_index = j.at("chunk_index").get<std::size_t>();
    e.dimension = j.at("dimension").get<std::string>();
    e.surface = j.at("surface").get<std::string>();
    e.doc_span = {j.at("doc_span").at(0).get<std::size_t>(), j.at("doc_span").at(1).get<std::size_t>()};
    if (!j.at("value").is_null()) e.value = value_from_json(j.at("value"));
    e.raw_value = j.at("raw_value").get<std::string>();
    if (!j.at("qualifier").is_null()) e.qualifier = j.at("qualifier").get<std::string>();
    e.confidence = j.at("confidence").get<double>();
    if (const auto& r = j.at("reflection"); !r.is_null())
        e.reflection = ReflectionScores{r.at("relevance").get<double>(), r.at("accuracy").get<double>(),
                                        r.at("consistency").get<double>()};
    auto p = parse_provenance(j.at("provenance").get<std::string>());
    if (!p) throw SchemaViolation("unknown provenance");
    e.provenance = *p;
    e.reason = j.at("reason").get<std::string>();
    return e;
}

inline ordered_json result_header_to_json(const ExtractionResult& r) {
    auto opt = [](const std::optional<std::string>& s) { return s ? ordered_json(*s) : ordered_json(nullptr); };
    ordered_json chunks = ordered_json::array();
    for (const auto& c : r.chunks) {
        chunks.push_back({{"chunk_index", c.chunk_index},
                          {"char_start", c.char_start},
                          {"char_end", c.char_end},
                          {"state", to_string(c.state)},
                          {"message", c.message},
                          {"dropped_items", c.dropped_items}});
    }
    return {{"record", "result"},
            {"doc_id", r.doc_id},
            {"title", opt(r.title)},
            {"pub_date", opt(r.pub_date)},
            {"source_location", opt(r.source_location)},
            {"chunks", chunks},
            {"usage",
             {{"llm_calls", r.usage.llm_calls},
              {"prompt_tokens", r.usage.prompt_tokens},
              {"completion_tokens", r.usage.completion_tokens},
              {"latency_ms", r.usage.latency_ms}}}};
}

inline ExtractionResult result_header_from_json(const json& j) {
    auto opt = [&](const char* k) -> std::optional<std::string> {
        if (j.at(k).is_null()) return std::nullopt;
        return j.at(k).get<std::string>();
    };
    ExtractionResult r;
    r.doc_id = j.at("doc_id").get<std::string>();
    r.title = opt("title");
    r.pub_date = opt("pub_date");
    r.source_location = opt("source_location");
    for (const auto& c : j.at("chunks")) {
        auto state = parse_chunk_state(c.at("state").get<std::string>());
        if (!state) throw SchemaViolation("unknown chunk state");
        r.chunks.push_back({c.at("chunk_index").get<std::size_t>(), c.at("char_start").get<std::size_t>(),
                            c.at("char_end").get<std::size_t>(), *state, c.at("message").get<std::string>(),
                            c.at("dropped_items").get<std::size_t>()});
    }
    const auto& u = j.at("usage");
    r.usage.llm_calls = u.at("llm_calls").get<long>();
    r.usage.prompt_tokens = u.at("prompt_tokens").get<long>();
    r.usage.completion_tokens = u.at("completion_tokens").get<long>();
    r.usage.latency_ms = u.at("latency_ms").get<long>();
    return r;
}

/// One "result" line per document, followed by its entity lines (kept,
/// then filtered). Floats use the shortest form that reads back exactly.
inline std::string serialize_run(const std::vector<ExtractionResult>& results) {
    std::string out;
    for (const auto& r : results) {
        out += result_header_to_json(r).dump();
        out += '\n';
        for (const auto* set : {&r.kept, &r.filtered}) {
            for (const auto& e : *set) {
                out += entity_to_json(e).dump();
                out += '\n';
            }
        }
    }
    return out;
}

inline std::vector<ExtractionResult> parse_run(std::string_view content) {
    std::vector<ExtractionResult> results;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < content.size()) {
        auto nl = content.find('\n', pos);
        auto line = content.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        ++line_no;
        pos = nl == std::string_view::npos ? content.size() : nl + 1;
        if (text::trim_view(line).empty()) continue;
        try {
            auto j = json::parse(line);
            auto kind = j.at("record").get<std::string>();
            if (kind == "result") {
                results.push_back(result_header_from_json(j));
            } else if (kind == "entity") {
                if (results.empty()) throw FormatError("entity record before any result record", line_no);
                auto e = entity_from_json(j);
                if (e.doc_id != results.back().doc_id)
                    throw FormatError("entity belongs to " + e.doc_id + ", not " + results.back().doc_id, line_no);
                (e.provenance == Provenance::kept ? results.back().kept : results.back().filtered).push_back(std::move(e));
            } else {
                throw FormatError("unknown record type '" + kind + "'", line_no);
            }
        } catch (const FormatError&) {
            throw;
        } catch (const json::exception& e) {
            throw FormatError(e.what(), line_no);
        } catch (const Error& e) {
            throw FormatError(e.what(), line_no);
        }
    }
    return results;
}

inline void write_run(const std::vector<ExtractionResult>& results, const std::filesystem::path& path) {
    text::write_file(path, serialize_run(results));
}

inline std::vector<ExtractionResult> read_run(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw IoError("run file not found: " + path.string());
    return parse_run(text::read_file(path));
}

// ---- manifest -----------------------------------------------------------

struct CorpusEntry {
    std::string locator;
    std::string doc_id;
    std::string content_hash;
};

struct RunManifest {
    std::string schema_version;
    std::string schema_hash;
    BackendSpec backend;
    std::vector<CorpusEntry> corpus;
    ChunkParams chunking;
    ExtractionOptions options;
    std::string geocoder = "offline";
    std::string started_at;
    std::string finished_at;

    /// Everything but timestamps; the API key is never part of a manifest,
    /// only the name of the variable it is read from.
    ordered_json reproducible_json() const {
        ordered_json corpus_json = ordered_json::array();
        for (const auto& c : corpus)
            corpus_json.push_back({{"locator", c.locator}, {"doc_id", c.doc_id}, {"content_hash", c.content_hash}});
        return {{"schema", {{"version", schema_version}, {"hash", schema_hash}}},
                {"backend",
                 {{"kind", to_string(backend.kind)},
                  {"base_url", backend.base_url},
                  {"fixture_path", backend.fixture_path},
                  {"model", backend.model},
                  {"auth_env", backend.auth_env}}},
                {"geocoder", geocoder},
                {"corpus", corpus_json},
                {"chunking",
                 {{"strategy", to_string(chunking.strategy)},
                  {"size", chunking.size},
                  {"overlap", chunking.overlap}}},
                {"reflection",
                 {{"enabled", options.reflection},
                  {"relevance", options.thresholds.relevance},
                  {"accuracy", options.thresholds.accuracy},
                  {"consistency", options.thresholds.consistency}}},
                {"memory", options.use_memory},
                {"context_correction", options.context_correction},
                {"tool_version", kToolVersion}};
    }

    std::string digest() const { return text::fnv1a_hex(dump_stable(reproducible_json())); }
    std::string run_id() const { return "run-" + digest().substr(0, 12); }

    ordered_json to_json() const {
        ordered_json j = {{"run_id", run_id()}, {"digest", digest()}};
        auto body = reproducible_json();
        for (auto& [k, v] : body.items()) j[k] = v;
        j["started_at"] = started_at;
        j["finished_at"] = finished_at;
        return j;
    }
};

inline std::string utc_now_iso() {
    auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
    auto day = std::chrono::floor<std::chrono::days>(now);
    std::chrono::year_month_day ymd{day};
    std::chrono::hh_mm_ss hms{now - day};
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02ld:%02ld:%02ldZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                  static_cast<long>(hms.hours().count()), static_cast<long>(hms.minutes().count()),
                  static_cast<long>(hms.seconds().count()));
    return buf;
}

// ---- analytics and bundle -----------------------------------------------

inline std::string iso_from_day(std::int64_t day) {
    std::chrono::year_month_day ymd{std::chrono::sys_days{std::chrono::days{day}}};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

inline json event_to_json(const StEvent& e) {
    json linked = json::array();
    for (const auto& [d, v] : e.linked) linked.push_back({{"dimension", d}, {"value", v}});
    return {{"event_id", e.event_id},
            {"doc_id", e.doc_id},
            {"chunk_index", e.chunk_index},
            {"time", e.time.empty() ? json(nullptr) : json(e.time)},
            {"date", e.day ? json(iso_from_day(*e.day)) : json(nullptr)},
            {"place", e.place.empty() ? json(nullptr) : json(e.place)},
            {"lat", e.coords ? json(e.coords->lat) : json(nullptr)},
            {"lon", e.coords ? json(e.coords->lon) : json(nullptr)},
            {"country_code", e.country_code},
            {"linked", linked}};
}

inline json analytics_to_json(const AnalyticsReport& a) {
    json events = json::array(), excluded = json::array(), clusters = json::array(), bursts = json::array();
    for (const auto& e : a.events.events) events.push_back(event_to_json(e));
    for (const auto& e : a.events.excluded) excluded.push_back(event_to_json(e));
    for (const auto& c : a.clustering.clusters) {
        clusters.push_back({{"cluster_id", c.cluster_id},
                            {"members", c.members},
                            {"size", c.members.size()},
                            {"centroid_lat", c.centroid.lat},
                            {"centroid_lon", c.centroid.lon},
                            {"start", iso_from_day(c.first_day)},
                            {"end", iso_from_day(c.last_day)}});
    }
    for (const auto& b : a.bursts) {
        bursts.push_back({{"start", iso_from_day(b.start_day)},
                          {"end", iso_from_day(b.end_day)},
                          {"count", b.count},
                          {"baseline_mean", b.baseline_mean},
                          {"baseline_sd", b.baseline_sd},
                          {"z_score", b.z_score ? json(*b.z_score) : json(nullptr)}});
    }
    json nodes = json::array(), edges = json::array();
    for (std::size_t i = 0; i < a.graph.nodes.size(); ++i) {
        const auto& n = a.graph.nodes[i];
        nodes.push_back({{"id", i}, {"dimension", n.dimension}, {"value", n.value}, {"frequency", n.frequency}});
    }
    for (const auto& e : a.graph.edges) edges.push_back({{"source", e.source}, {"target", e.target}, {"weight", e.weight}});
    json breakdown = json::array();
    for (const auto& b : a.breakdown) {
        json values = json::array();
        for (const auto& [v, n] : b.values) values.push_back({{"value", v}, {"count", n}});
        breakdown.push_back({{"dimension", b.dimension}, {"total", b.total}, {"values", values}});
    }
    return {{"params",
             {{"eps_km", a.params.cluster.eps_km},
              {"eps_days", a.params.cluster.eps_days},
              {"min_pts", a.params.cluster.min_pts},
              {"burst_window_days", a.params.burst.window_days},
              {"burst_step_days", a.params.burst.step_days},
              {"burst_z", a.params.burst.z},
              {"burst_min_count", a.params.burst.min_count}}},
            {"events", events},
            {"excluded_events", excluded},
            {"clusters", clusters},
            {"noise", a.clustering.noise},
            {"bursts", bursts},
            {"cooccurrence", {{"nodes", nodes}, {"edges", edges}}},
            {"dimension_breakdown", breakdown}};
}

inline json bundle_entity(const ExtractedEntity& e, const SchemaSet& schema) {
    const auto* dim = schema.find(e.dimension);
    json j = {{"entity_id", e.entity_id},
              {"doc_id", e.doc_id},
              {"chunk_index", e.chunk_index},
              {"dimension", e.dimension},
              {"kind", dim ? to_string(dim->kind) : "categorical"},
              {"surface", e.surface},
              {"value", canonical_value(e)},
              {"confidence", e.confidence},
              {"provenance", to_string(e.provenance)},
              {"date", nullptr},
              {"lat", nullptr},
              {"lon", nullptr},
              {"country_code", nullptr}};
    if (const auto* t = e.temporal()) j["date"] = iso_from_day(day_number(*t));
    if (const auto* g = e.geo(); g && g->coords) {
        j["lat"] = g->coords->lat;
        j["lon"] = g->coords->lon;
        j["country_code"] = g->country_code;
    }
    return j;
}

/// The dashboard's only input. Sorted keys, floats at 6 decimals.
inline std::string build_dashboard_bundle(const std::vector<ExtractionResult>& run, const AnalyticsReport& analytics,
                                          const SchemaSet& schema, const std::string& manifest_digest) {
    json bundle = analytics_to_json(analytics);
    bundle["bundle_version"] = kBundleVersion;
    bundle["manifest_digest"] = manifest_digest;
    json dims = json::array();
    for (const auto& d : schema.dimensions)
        dims.push_back({{"name", d.name}, {"kind", to_string(d.kind)}, {"required", d.required}});
    bundle["schema"] = {{"version", schema.version}, {"dimensions", dims}};

    json entities = json::array(), documents = json::array();
    std::size_t kept = 0, filtered_reflection = 0, filtered_validation = 0, chunks_ok = 0, chunks_failed = 0;
    json reasons = json::object();
    for (const auto& r : run) {
        documents.push_back({{"doc_id", r.doc_id},
                             {"title", r.title ? json(*r.title) : json(nullptr)},
                             {"pub_date", r.pub_date ? json(*r.pub_date) : json(nullptr)},
                             {"chunks", r.chunks.size()}});
        for (const auto& e : r.kept) {
            entities.push_back(bundle_entity(e, schema));
            ++kept;
        }
        for (const auto& e : r.filtered) {
            (e.provenance == Provenance::filtered_reflection ? filtered_reflection : filtered_validation)++;
            reasons[e.reason] = reasons.value(e.reason, 0) + 1;
        }
        for (const auto& c : r.chunks) (c.state == ChunkState::ok ? chunks_ok : chunks_failed)++;
    }
    bundle["entities"] = entities;
    bundle["documents"] = documents;
    bundle["quality"] = {{"kept", kept},
                         {"filtered_reflection", filtered_reflection},
                         {"filtered_validation", filtered_validation},
                         {"filter_reasons", reasons},
                         {"chunks_ok", chunks_ok},
                         {"chunks_failed", chunks_failed}};
    return dump_stable(bundle) + "\n";
}

inline void export_dashboard_bundle(const std::vector<ExtractionResult>& run, const AnalyticsReport& analytics,
                                    const SchemaSet& schema, const std::string& manifest_digest,
                                    const std::filesystem::path& path) {
    text::write_file(path, build_dashboard_bundle(run, analytics, schema, manifest_digest));
}

}  // namespace stindex
