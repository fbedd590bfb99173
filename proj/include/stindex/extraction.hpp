#pragma once

#include <algorithm>
#include <atomic>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <spdlog/spdlog.h>

#include "stindex/error.hpp"
#include "stindex/geo.hpp"
#include "stindex/ingest.hpp"
#include "stindex/llm.hpp"
#include "stindex/schema.hpp"
#include "stindex/temporal.hpp"

namespace stindex {

struct CategoryValue {
    std::string label;
    bool operator==(const CategoryValue&) const = default;
};

struct StructuredValue {
    json attributes = json::object();
    bool operator==(const StructuredValue&) const = default;
};

using EntityValue = std::variant<TemporalValue, GeoValue, CategoryValue, StructuredValue>;

enum class Provenance { kept, filtered_reflection, filtered_validation };

inline std::string to_string(Provenance p) {
    switch (p) {
        case Provenance::kept: return "kept";
        case Provenance::filtered_reflection: return "filtered_reflection";
        case Provenance::filtered_validation: return "filtered_validation";
    }
    return "?";
}

inline std::optional<Provenance> parse_provenance(std::string_view s) {
    for (auto p : {Provenance::kept, Provenance::filtered_reflection, Provenance::filtered_validation}) {
        if (to_string(p) == s) return p;
    }
    return std::nullopt;
}

/// Reason codes carried by filtered entities.
namespace reason {
inline constexpr const char* bad_iso = "bad_iso";
inline constexpr const char* bad_label = "bad_label";
inline constexpr const char* bad_span = "bad_span";
inline constexpr const char* missing_attribute = "missing_attribute";
inline constexpr const char* bad_attribute = "bad_attribute";
inline constexpr const char* low_relevance = "low_relevance";
inline constexpr const char* low_accuracy = "low_accuracy";
inline constexpr const char* low_consistency = "low_consistency";
}  // namespace reason

struct ExtractedEntity {
    std::string entity_id;
    std::string dimension;
    std::string surface;
    std::string doc_id;
    std::size_t chunk_index = 0;
    /// Scalar offsets into the document body, half-open.
    std::pair<std::size_t, std::size_t> doc_span{0, 0};
    /// Absent only when validation could not build a value.
    std::optional<EntityValue> value;
    /// Model output as given, for audit.
    std::string raw_value;
    std::optional<std::string> qualifier;
    double confidence = 0.5;
    std::optional<ReflectionScores> reflection;
    Provenance provenance = Provenance::kept;
    std::string reason;

    bool operator==(const ExtractedEntity&) const = default;

    const TemporalValue* temporal() const { return value ? std::get_if<TemporalValue>(&*value) : nullptr; }
    const GeoValue* geo() const { return value ? std::get_if<GeoValue>(&*value) : nullptr; }
    GeoValue* geo() { return value ? std::get_if<GeoValue>(&*value) : nullptr; }
};

/// Comparable text form of an entity's value: ISO string, gazetteer name
/// (surface name when unresolved), category label, or sorted attribute JSON.
inline std::string canonical_value(const ExtractedEntity& e) {
    if (!e.value) return e.raw_value;
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, TemporalValue>) return serialize(v);
            else if constexpr (std::is_same_v<T, GeoValue>) return v.resolved() ? v.resolved_name : v.name;
            else if constexpr (std::is_same_v<T, CategoryValue>) return v.label;
            else return v.attributes.dump();
        },
        *e.value);
}

struct ReflectionThresholds {
    double relevance = 0.7;
    double accuracy = 0.7;
    double consistency = 0.7;

    static ReflectionThresholds uniform(double t) { return {t, t, t}; }

    /// Kept iff every score reaches its threshold (inclusive).
    bool passes(const ReflectionScores& s) const {
        return s.relevance >= relevance && s.accuracy >= accuracy && s.consistency >= consistency;
    }
};

struct MemoryEntry {
    std::size_t sequence = 0;
    std::size_t chunk_index = 0;
    std::string dimension;
    std::string surface;
    std::string value;
};

/// Rolling per-document state. Confined to the worker extracting that
/// document.
class ExtractionMemory {
public:
    explicit ExtractionMemory(std::size_t per_dimension = 10) : capacity_(per_dimension) {}

    void seed_temporal_anchor(const TemporalValue& v) {
        if (!v.relative) temporal_anchor_ = v;
    }

    /// Records the kept entities of one chunk.
    void remember(const std::vector<ExtractedEntity>& kept) {
        for (const auto& e : kept) {
            if (e.provenance != Provenance::kept) continue;
            auto& ring = rings_[e.dimension];
            ring.push_back({next_sequence_++, e.chunk_index, e.dimension, e.surface, canonical_value(e)});
            while (ring.size() > capacity_) ring.pop_front();
            if (const auto* t = e.temporal(); t && !t->relative) temporal_anchor_ = *t;
            if (const auto* g = e.geo(); g && g->resolved()) {
                if (!g->admin.empty()) spatial_anchor_ = *g;
            }
        }
    }

    void count_country(const std::string& code) { ++tally_[code]; }

    const std::optional<TemporalValue>& temporal_anchor() const { return temporal_anchor_; }
    const std::optional<GeoValue>& spatial_anchor() const { return spatial_anchor_; }
    const CountryTally& tally() const { return tally_; }
    std::size_t capacity() const { return capacity_; }
    const std::map<std::string, std::deque<MemoryEntry>>& rings() const { return rings_; }

    std::size_t max_chunk_index() const {
        std::size_t m = 0;
        for (const auto& [_, ring] : rings_)
            for (const auto& e : ring) m = std::max(m, e.chunk_index);
        return m;
    }

    /// All remembered entries in the order they were seen.
    std::vector<MemoryEntry> entries() const {
        std::vector<MemoryEntry> all;
        for (const auto& [_, ring] : rings_) all.insert(all.end(), ring.begin(), ring.end());
        std::sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.sequence < b.sequence; });
        return all;
    }

    std::vector<std::string> digest_lines() const {
        std::vector<std::string> lines;
        for (const auto& e : entries())
            lines.push_back("[chunk " + std::to_string(e.chunk_index + 1) + "] " + e.dimension + ": " +
                            json(e.surface).dump() + " = " + e.value);
        return lines;
    }

    /// Consistency notes for the next prompt.
    std::vector<std::string> instructions() const {
        std::vector<std::string> out;
        if (temporal_anchor_)
            out.push_back("Latest absolute date so far: " + serialize(*temporal_anchor_) +
                          ". Resolve relative dates against it.");
        if (!tally_.empty()) {
            auto top = std::max_element(tally_.begin(), tally_.end(),
                                        [](const auto& a, const auto& b) { return a.second < b.second; });
            std::string region = top->first;
            if (spatial_anchor_ && spatial_anchor_->country_code == top->first)
                region = spatial_anchor_->admin + ", " + top->first;
            out.push_back("Document region so far: " + region +
                          ". Read ambiguous place names and abbreviations within this region.");
        }
        return out;
    }

private:
    std::size_t capacity_;
    std::size_t next_sequence_ = 0;
    std::map<std::string, std::deque<MemoryEntry>> rings_;
    std::optional<TemporalValue> temporal_anchor_;
    std::optional<GeoValue> spatial_anchor_;
    CountryTally tally_;
};

struct ValidationResult {
    std::vector<ExtractedEntity> valid;
    std::vector<ExtractedEntity> rejected;
};

namespace detail {

inline std::optional<std::pair<long, long>> locate_surface(const Chunk& chunk, const std::string& surface) {
    auto pos = chunk.text.find(surface);
    if (pos == std::string::npos) return std::nullopt;
    text::Utf8Index idx(chunk.text);
    auto s = idx.char_index(pos);
    return std::pair<long, long>{static_cast<long>(s), static_cast<long>(s + text::char_length(surface))};
}

inline bool attribute_ok(const json& v, AttributeKind kind) {
    switch (kind) {
        case AttributeKind::number:
            if (v.is_number()) return true;
            if (v.is_string()) {
                try {
                    std::size_t used = 0;
                    std::stod(v.get<std::string>(), &used);
                    return used == v.get<std::string>().size();
                } catch (...) {
                    return false;
                }
            }
            return false;
        case AttributeKind::text:
        case AttributeKind::category:
            return v.is_string() && !text::trim_view(v.get<std::string>()).empty();
    }
    return false;
}

}  // namespace detail

/// Meaning checks on parsed candidates: ISO syntax and calendar (temporal),
/// vocabulary membership after case-folding (categorical), span bounds, and
/// declared attributes (structured). When a temporal anchor is supplied,
/// relative expressions are resolved by rule and override the model's value.
inline ValidationResult validate_candidates(const std::vector<CandidateEntity>& candidates, const SchemaSet& schema,
                                            const Chunk& chunk,
                                            const std::optional<TemporalValue>& anchor = std::nullopt) {
    ValidationResult out;
    std::size_t seq = 0;
    for (const auto& c : candidates) {
        ExtractedEntity e;
        e.entity_id = chunk.doc_id + ":" + std::to_string(chunk.chunk_index) + ":" + std::to_string(seq++);
        e.dimension = c.dimension;
        e.surface = c.surface;
        e.doc_id = chunk.doc_id;
        e.chunk_index = chunk.chunk_index;
        e.confidence = c.confidence;
        e.raw_value = c.kind == DimensionKind::structured ? c.attributes.dump() : c.value;
        e.qualifier = c.qualifier;

        auto reject = [&](const char* why) {
            e.provenance = Provenance::filtered_validation;
            e.reason = why;
            out.rejected.push_back(e);
        };

        auto span = c.span ? c.span : detail::locate_surface(chunk, c.surface);
        const auto len = static_cast<long>(chunk.length());
        if (!span || span->first < 0 || span->first >= span->second || span->second > len) {
            if (span) e.doc_span = {chunk.char_start + static_cast<std::size_t>(std::max(0L, span->first)),
                                    chunk.char_start + static_cast<std::size_t>(std::max(0L, span->second))};
            reject(reason::bad_span);
            continue;
        }
        e.doc_span = {chunk.char_start + static_cast<std::size_t>(span->first),
                      chunk.char_start + static_cast<std::size_t>(span->second)};

        const auto* dim = schema.find(c.dimension);
        if (!dim) continue;  // parse_entity_payload only yields schema dimensions
        switch (dim->kind) {
            case DimensionKind::normalized_temporal: {
                std::optional<TemporalValue> resolved;
                if (anchor) {
                    try {
                        resolved = resolve_relative(c.surface, *anchor);
                    } catch (const UnresolvableExpression&) {
                    }
                }
                if (resolved) {
                    if (!c.value.empty() && c.value != serialize(*resolved))
                        spdlog::info("{}: model dated '{}' as {}, rule resolution gives {}", e.entity_id, c.surface,
                                     c.value, serialize(*resolved));
                    e.value = *resolved;
                    break;
                }
                try {
                    auto v = parse_iso(text::trim(c.value));
                    v.original_expression = c.surface;
                    e.value = v;
                } catch (const BadIso&) {
                    reject(reason::bad_iso);
                    continue;
                }
                break;
            }
            case DimensionKind::geocoded_spatial: {
                auto name = text::collapse_whitespace(c.value.empty() ? c.surface : c.value);
                e.value = GeoValue::unresolved(name);
                break;
            }
            case DimensionKind::categorical: {
                auto label = dim->canonical_label(c.value);
                if (!label) {
                    reject(reason::bad_label);
                    continue;
                }
                e.value = CategoryValue{*label};
                break;
            }
            case DimensionKind::structured: {
                StructuredValue sv;
                const char* failure = nullptr;
                for (const auto& attr : *dim->attributes) {
                    if (!c.attributes.contains(attr.name) || c.attributes.at(attr.name).is_null()) {
                        failure = reason::missing_attribute;
                        break;
                    }
                    const auto& v = c.attributes.at(attr.name);
                    if (!detail::attribute_ok(v, attr.kind)) {
                        failure = reason::bad_attribute;
                        break;
                    }
                    if (attr.kind == AttributeKind::number && v.is_string()) sv.attributes[attr.name] = std::stod(v.get<std::string>());
                    else sv.attributes[attr.name] = v;
                }
                if (failure) {
                    reject(failure);
                    continue;
                }
                e.value = sv;
                break;
            }
        }
        out.valid.push_back(std::move(e));
    }
    return out;
}

struct ReflectionOutcome {
    std::vector<ExtractedEntity> kept;
    std::vector<ExtractedEntity> filtered;
    /// True when the reflection call or its reply failed and everything was kept.
    bool failed_open = false;
    std::optional<CompletionResponse> response;
};

/// Second pass: one extra call per chunk scores every candidate; an entity
/// stays iff all three scores reach their thresholds. Failure keeps all.
inline ReflectionOutcome reflect(std::vector<ExtractedEntity> candidates, const Chunk& chunk, Backend& backend,
                                 const ReflectionThresholds& thresholds, const PromptLimits& limits = {},
                                 const RetryPolicy& retry = {}) {
    ReflectionOutcome out;
    if (candidates.empty()) return out;
    std::vector<ReflectionItem> items;
    for (const auto& c : candidates) items.push_back({c.dimension, c.surface, canonical_value(c)});
    std::map<std::size_t, ReflectionScores> scores;
    try {
        auto res = complete(render_reflection_prompt(chunk, items, limits), backend, retry);
        out.response = res;
        scores = parse_reflection_payload(res.text);
    } catch (const Error& e) {
        spdlog::warn("reflection for {} chunk {} failed, keeping all candidates: {}", chunk.doc_id, chunk.chunk_index,
                     e.what());
        out.failed_open = true;
        out.kept = std::move(candidates);
        return out;
    }
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        auto& c = candidates[i];
        auto it = scores.find(i);
        if (it == scores.end()) {
            out.kept.push_back(std::move(c));
            continue;
        }
        c.reflection = it->second;
        if (thresholds.passes(it->second)) {
            out.kept.push_back(std::move(c));
            continue;
        }
        c.provenance = Provenance::filtered_reflection;
        if (it->second.relevance < thresholds.relevance) c.reason = reason::low_relevance;
        else if (it->second.accuracy < thresholds.accuracy) c.reason = reason::low_accuracy;
        else c.reason = reason::low_consistency;
        out.filtered.push_back(std::move(c));
    }
    return out;
}

/// Collapses mentions repeated across chunk overlaps: same dimension, same
/// canonical value and overlapping document spans. The earliest mention
/// survives and takes the higher confidence.
inline std::vector<ExtractedEntity> dedupe_overlap(std::vector<ExtractedEntity> entities) {
    std::stable_sort(entities.begin(), entities.end(), [](const auto& a, const auto& b) {
        if (a.chunk_index != b.chunk_index) return a.chunk_index < b.chunk_index;
        return a.doc_span.first < b.doc_span.first;
    });
    std::vector<ExtractedEntity> out;
    for (auto& e : entities) {
        auto key = canonical_value(e);
        auto dup = std::find_if(out.begin(), out.end(), [&](const ExtractedEntity& s) {
            return s.dimension == e.dimension && canonical_value(s) == key &&
                   s.doc_span.first < e.doc_span.second && e.doc_span.first < s.doc_span.second;
        });
        if (dup != out.end()) {
            dup->confidence = std::max(dup->confidence, e.confidence);
            continue;
        }
        out.push_back(std::move(e));
    }
    return out;
}

enum class ChunkState { ok, payload_failed, backend_failed };

inline std::string to_string(ChunkState s) {
    switch (s) {
        case ChunkState::ok: return "ok";
        case ChunkState::payload_failed: return "payload_failed";
        case ChunkState::backend_failed: return "backend_failed";
    }
    return "?";
}

inline std::optional<ChunkState> parse_chunk_state(std::string_view s) {
    for (auto c : {ChunkState::ok, ChunkState::payload_failed, ChunkState::backend_failed}) {
        if (to_string(c) == s) return c;
    }
    return std::nullopt;
}

struct ChunkStatus {
    std::size_t chunk_index = 0;
    std::size_t char_start = 0;
    std::size_t char_end = 0;
    ChunkState state = ChunkState::ok;
    std::string message;
    std::size_t dropped_items = 0;

    bool operator==(const ChunkStatus&) const = default;
};

struct Usage {
    long llm_calls = 0;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    long latency_ms = 0;

    void add(const CompletionResponse& r) {
        ++llm_calls;
        prompt_tokens += r.prompt_tokens;
        completion_tokens += r.completion_tokens;
        latency_ms += r.latency_ms;
    }

    bool operator==(const Usage&) const = default;
};

struct ExtractionResult {
    std::string doc_id;
    std::optional<std::string> title;
    std::optional<std::string> pub_date;
    std::optional<std::string> source_location;
    std::vector<ExtractedEntity> kept;
    std::vector<ExtractedEntity> filtered;
    std::vector<ChunkStatus> chunks;
    Usage usage;

    bool operator==(const ExtractionResult&) const = default;
};

struct ExtractionOptions {
    bool reflection = true;
    ReflectionThresholds thresholds;
    /// Off reproduces the context-free baseline: no memory, anchors or
    /// consistency notes.
    bool use_memory = true;
    bool context_correction = true;
    std::size_t memory_per_dimension = 10;
    std::size_t memory_budget_chars = 2000;
    PromptLimits limits;
    RetryPolicy retry;
    std::shared_ptr<const Geocoder> geocoder;
    /// Called after each chunk with the memory as it stands.
    std::function<void(std::size_t chunk_index, const ExtractionMemory&)> on_chunk;
};

namespace detail {

inline void geocode_kept(std::vector<ExtractedEntity>& kept, ExtractionMemory& memory, const ExtractionOptions& opts) {
    if (!opts.geocoder) return;
    for (auto& e : kept) {
        auto* g = e.geo();
        if (!g) continue;
        GeoQuery q;
        q.name = g->name;
        q.qualifier = e.qualifier;
        if (opts.use_memory && memory.spatial_anchor()) q.anchor_admin = memory.spatial_anchor()->admin;
        auto v = opts.geocoder->geocode(q);
        if (opts.use_memory && opts.context_correction) v = opts.geocoder->apply_context_correction(v, memory.tally());
        if (v.resolved() && opts.use_memory) memory.count_country(v.country_code);
        *g = std::move(v);
    }
}

}  // namespace detail

/// Extracts one document chunk by chunk, in order; memory from earlier
/// chunks shapes later prompts and post-processing. A failing chunk is
/// recorded and skipped, never fatal.
inline ExtractionResult extract_document(const SourceDocument& doc, const std::vector<Chunk>& chunks,
                                         const SchemaSet& schema, Backend& backend,
                                         const ExtractionOptions& opts = {}) {
    ExtractionResult result;
    result.doc_id = doc.doc_id;
    result.title = doc.title;
    if (doc.pub_date) result.pub_date = serialize(*doc.pub_date);
    result.source_location = doc.source_location;

    ExtractionMemory memory(opts.memory_per_dimension);
    if (opts.use_memory && doc.pub_date) memory.seed_temporal_anchor(*doc.pub_date);
    auto shared_doc = std::make_shared<const SourceDocument>(doc);

    for (const auto& chunk : chunks) {
        ChunkStatus status{chunk.chunk_index, chunk.char_start, chunk.char_end, ChunkState::ok, {}, 0};

        PromptContext ctx;
        ctx.doc_id = doc.doc_id;
        ctx.title = doc.title;
        ctx.pub_date = result.pub_date;
        ctx.source_location = doc.source_location;
        ctx.chunk_ordinal = chunk.chunk_index;
        ctx.chunk_count = chunks.size();
        ctx.memory_budget = opts.memory_budget_chars;
        ctx.document = shared_doc;
        if (opts.use_memory) {
            ctx.memory = memory.digest_lines();
            ctx.instructions = memory.instructions();
        }

        std::vector<CandidateEntity> candidates;
        try {
            auto req = render_extraction_prompt(chunk, schema, ctx, opts.limits);
            auto res = complete(req, backend, opts.retry);
            result.usage.add(res);
            try {
                auto parsed = parse_entity_payload(res.text, schema);
                candidates = std::move(parsed.candidates);
                status.dropped_items = parsed.dropped;
            } catch (const PayloadUnparseable& e) {
                status.state = ChunkState::payload_failed;
                status.message = e.what();
            }
        } catch (const Error& e) {
            status.state = ChunkState::backend_failed;
            status.message = e.what();
        }
        if (status.state != ChunkState::ok) {
            spdlog::warn("{} chunk {}: {}", doc.doc_id, chunk.chunk_index, status.message);
            result.chunks.push_back(std::move(status));
            if (opts.on_chunk) opts.on_chunk(chunk.chunk_index, memory);
            continue;
        }

        std::optional<TemporalValue> anchor;
        if (opts.use_memory) anchor = memory.temporal_anchor();
        auto validated = validate_candidates(candidates, schema, chunk, anchor);
        for (auto& r : validated.rejected) result.filtered.push_back(std::move(r));

        std::vector<ExtractedEntity> kept;
        if (opts.reflection && !validated.valid.empty()) {
            auto reflected = reflect(std::move(validated.valid), chunk, backend, opts.thresholds, opts.limits, opts.retry);
            if (reflected.response) result.usage.add(*reflected.response);
            kept = std::move(reflected.kept);
            for (auto& f : reflected.filtered) result.filtered.push_back(std::move(f));
        } else {
            kept = std::move(validated.valid);
        }

        detail::geocode_kept(kept, memory, opts);
        if (opts.use_memory) memory.remember(kept);
        for (auto& k : kept) result.kept.push_back(std::move(k));
        result.chunks.push_back(std::move(status));
        if (opts.on_chunk) opts.on_chunk(chunk.chunk_index, memory);
    }

    result.kept = dedupe_overlap(std::move(result.kept));
    return result;
}

/// Documents in parallel (chunks stay sequential inside each document).
/// Results come back in input order.
inline std::vector<ExtractionResult> extract_corpus(const std::vector<SourceDocument>& docs, const SchemaSet& schema,
                                                    Backend& backend, const ChunkParams& chunking,
                                                    const ExtractionOptions& opts = {}, std::size_t workers = 0) {
    if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
    workers = std::min(workers, std::max<std::size_t>(1, docs.size()));
    std::vector<ExtractionResult> results(docs.size());
    std::vector<std::exception_ptr> errors(docs.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (auto i = next.fetch_add(1); i < docs.size(); i = next.fetch_add(1)) {
            try {
                results[i] = extract_document(docs[i], chunk_document(docs[i], chunking), schema, backend, opts);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
        work();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

}  // namespace stindex
