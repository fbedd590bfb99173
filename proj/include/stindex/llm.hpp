#pragma once

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <spdlog/spdlog.h>

#include "stindex/error.hpp"
#include "stindex/http.hpp"
#include "stindex/ingest.hpp"
#include "stindex/json_io.hpp"
#include "stindex/schema.hpp"
#include "stindex/temporal.hpp"
#include "stindex/text.hpp"

namespace stindex {

/// The four contexts an extraction call sees. `memory` and `state` and
/// `instructions` are rendered into the prompt; `document` is only handed to
/// post-processing tools.
struct PromptContext {
    /// Memory lines, oldest first.
    std::vector<std::string> memory;
    /// Character budget for the rendered memory block.
    std::size_t memory_budget = 2000;

    std::string doc_id;
    std::optional<std::string> title;
    std::optional<std::string> pub_date;
    std::optional<std::string> source_location;
    std::size_t chunk_ordinal = 0;  // 0-based
    std::size_t chunk_count = 1;

    std::vector<std::string> instructions;

    std::shared_ptr<const SourceDocument> document;
};

struct CompletionRequest {
    std::string system;
    std::string user;
    double temperature = 0.0;
    int max_tokens = 2048;
    std::string model;

    bool operator==(const CompletionRequest&) const = default;
};

struct CompletionResponse {
    std::string text;
    std::string finish_reason = "stop";
    long prompt_tokens = 0;
    long completion_tokens = 0;
    long latency_ms = 0;
};

enum class BackendKind { openai_compatible_http, replay_fixture };

struct BackendSpec {
    BackendKind kind = BackendKind::replay_fixture;
    std::string base_url;
    std::string fixture_path;
    std::string model = "replay";
    /// Name of the environment variable holding the bearer token; the token
    /// itself is never stored.
    std::string auth_env = "STINDEX_API_KEY";
    std::size_t max_in_flight = 4;

    void validate() const {
        if (kind == BackendKind::replay_fixture) {
            if (fixture_path.empty()) throw BackendUnavailable("replay backend needs a fixture file");
            if (!std::filesystem::exists(fixture_path))
                throw BackendUnavailable("replay fixture not found: " + fixture_path);
        } else if (base_url.empty()) {
            throw BackendUnavailable("HTTP backend needs a base URL (STINDEX_BASE_URL)");
        }
    }
};

inline std::string to_string(BackendKind k) {
    return k == BackendKind::replay_fixture ? "replay_fixture" : "openai_compatible_http";
}

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
};

/// Replay key: stable hash of model, system text and user text.
inline std::string request_key(const CompletionRequest& req) {
    return text::fnv1a_hex(req.model + '\x1f' + req.system + '\x1f' + req.user);
}

/// A chat-completion provider. Implementations are stateless apart from the
/// in-flight cap and may be shared between document workers.
class Backend {
public:
    explicit Backend(std::size_t max_in_flight) : slots_(static_cast<std::ptrdiff_t>(std::max<std::size_t>(1, max_in_flight))) {}
    virtual ~Backend() = default;

    Backend(const Backend&) = delete;
    Backend& operator=(const Backend&) = delete;

    CompletionResponse complete_once(const CompletionRequest& req) {
        slots_.acquire();
        struct Release {
            std::counting_semaphore<1024>& s;
            ~Release() { s.release(); }
        } release{slots_};
        return do_complete(req);
    }

    virtual std::string model() const = 0;

protected:
    virtual CompletionResponse do_complete(const CompletionRequest& req) = 0;

private:
    std::counting_semaphore<1024> slots_;
};

/// Serves recorded responses keyed by `request_key`.
class ReplayBackend : public Backend {
public:
    explicit ReplayBackend(std::map<std::string, std::string> responses, std::string model = "replay",
                           std::size_t max_in_flight = 4)
        : Backend(max_in_flight), responses_(std::move(responses)), model_(std::move(model)) {}

    static std::map<std::string, std::string> load_fixture(const std::filesystem::path& path) {
        json j;
        try {
            j = json::parse(text::read_file(path));
        } catch (const json::parse_error& e) {
            throw BackendUnavailable("replay fixture " + path.string() + " is not valid JSON: " + e.what());
        }
        if (!j.is_object()) throw BackendUnavailable("replay fixture must map request keys to response text");
        std::map<std::string, std::string> out;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!it.value().is_string()) throw BackendUnavailable("replay fixture entry " + it.key() + " is not text");
            out[it.key()] = it.value().get<std::string>();
        }
        return out;
    }

    std::string model() const override { return model_; }
    std::size_t size() const { return responses_.size(); }

protected:
    CompletionResponse do_complete(const CompletionRequest& req) override {
        auto key = request_key(req);
        auto it = responses_.find(key);
        if (it == responses_.end()) throw ReplayMiss("no recorded response for request " + key);
        CompletionResponse res;
        res.text = it->second;
        res.prompt_tokens = static_cast<long>((req.system.size() + req.user.size() + 3) / 4);
        res.completion_tokens = static_cast<long>((res.text.size() + 3) / 4);
        return res;
    }

private:
    std::map<std::string, std::string> responses_;
    std::string model_;
};

/// OpenAI-compatible POST /v1/chat/completions with bearer auth.
class HttpBackend : public Backend {
public:
    explicit HttpBackend(BackendSpec spec, std::chrono::seconds timeout = std::chrono::seconds(120))
        : Backend(spec.max_in_flight), spec_(std::move(spec)), timeout_(timeout) {}

    std::string model() const override { return spec_.model; }

protected:
    CompletionResponse do_complete(const CompletionRequest& req) override {
        auto url = http::split_url(spec_.base_url);
        auto path = url.path == "/" ? std::string() : url.path;
        if (!path.empty() && path.back() == '/') path.pop_back();
        if (path.size() < 3 || path.substr(path.size() - 3) != "/v1") path += "/v1";
        path += "/chat/completions";

        json body{{"model", req.model.empty() ? spec_.model : req.model},
                  {"messages", json::array({{{"role", "system"}, {"content", req.system}},
                                            {{"role", "user"}, {"content", req.user}}})},
                  {"temperature", req.temperature},
                  {"max_tokens", req.max_tokens}};
        httplib::Headers headers;
        if (const char* key = std::getenv(spec_.auth_env.c_str()); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);

        auto client = http::make_client(url, timeout_);
        auto started = std::chrono::steady_clock::now();
        auto res = client->Post(path, headers, body.dump(), "application/json");
        if (!res) throw BackendUnavailable("LLM backend unreachable: " + httplib::to_string(res.error()));
        if (res->status == 401 || res->status == 403)
            throw AuthError("LLM backend rejected credentials (HTTP " + std::to_string(res->status) + ")");
        if (res->status == 429 || res->status >= 500)
            throw BackendUnavailable("LLM backend returned HTTP " + std::to_string(res->status));
        if (res->status >= 400)
            throw RequestRejected("LLM backend rejected the request (HTTP " + std::to_string(res->status) + ")");

        CompletionResponse out;
        try {
            auto j = json::parse(res->body);
            const auto& choice = j.at("choices").at(0);
            out.text = choice.at("message").at("content").get<std::string>();
            if (choice.contains("finish_reason") && choice.at("finish_reason").is_string())
                out.finish_reason = choice.at("finish_reason").get<std::string>();
            if (j.contains("usage") && j.at("usage").is_object()) {
                out.prompt_tokens = j.at("usage").value("prompt_tokens", 0L);
                out.completion_tokens = j.at("usage").value("completion_tokens", 0L);
            }
        } catch (const json::exception& e) {
            throw BackendUnavailable(std::string("LLM backend sent an unreadable response: ") + e.what());
        }
        out.latency_ms = static_cast<long>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                               std::chrono::steady_clock::now() - started)
                                               .count());
        return out;
    }

private:
    BackendSpec spec_;
    std::chrono::seconds timeout_;
};

/// Wraps another backend and keeps every exchange, for writing fixtures.
class RecordingBackend : public Backend {
public:
    explicit RecordingBackend(std::shared_ptr<Backend> inner) : Backend(1024), inner_(std::move(inner)) {}

    std::string model() const override { return inner_->model(); }

    std::map<std::string, std::string> recorded() const {
        std::lock_guard lock(mutex_);
        return recorded_;
    }

    void save(const std::filesystem::path& path) const {
        json j = json::object();
        for (const auto& [k, v] : recorded()) j[k] = v;
        text::write_file(path, j.dump(2) + "\n");
    }

protected:
    CompletionResponse do_complete(const CompletionRequest& req) override {
        auto res = inner_->complete_once(req);
        std::lock_guard lock(mutex_);
        recorded_[request_key(req)] = res.text;
        return res;
    }

private:
    std::shared_ptr<Backend> inner_;
    mutable std::mutex mutex_;
    std::map<std::string, std::string> recorded_;
};

inline std::shared_ptr<Backend> make_backend(const BackendSpec& spec) {
    spec.validate();
    if (spec.kind == BackendKind::replay_fixture)
        return std::make_shared<ReplayBackend>(ReplayBackend::load_fixture(spec.fixture_path), spec.model,
                                               spec.max_in_flight);
    return std::make_shared<HttpBackend>(spec);
}

/// Sends a request, retrying transport failures and 429/5xx with exponential
/// backoff. Auth and validation rejections and replay misses are not retried.
inline CompletionResponse complete(const CompletionRequest& req, Backend& backend, const RetryPolicy& retry = {}) {
    auto backoff = retry.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        try {
            return backend.complete_once(req);
        } catch (const BackendUnavailable& e) {
            if (attempt >= retry.attempts) throw;
            spdlog::warn("completion attempt {} failed ({}); retrying in {} ms", attempt, e.what(), backoff.count());
            std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(static_cast<long>(backoff.count() * retry.multiplier));
        }
    }
}

/// Newest memory lines that fit the budget, rendered oldest first.
inline std::string render_memory(const std::vector<std::string>& entries, std::size_t budget) {
    std::vector<const std::string*> kept;
    std::size_t used = 0;
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        auto cost = text::char_length(*it) + 1;
        if (used + cost > budget) break;
        used += cost;
        kept.push_back(&*it);
    }
    if (kept.empty()) return "No prior entities in this document.\n";
    std::string out;
    for (auto it = kept.rbegin(); it != kept.rend(); ++it) {
        out += **it;
        out += '\n';
    }
    return out;
}

inline constexpr std::string_view kExtractionPreamble =
    "You extract structured information from one chunk of a longer document. Every dimension is "
    "extracted in this single reply. Use the document state, the memory of earlier chunks and the "
    "consistency notes to resolve relative dates and ambiguous place names. Reply with one JSON "
    "object and nothing else.";

namespace detail {

inline std::string render_output_contract(const SchemaSet& schema) {
    std::ostringstream out;
    out << "Return exactly one JSON object with these keys: ";
    for (std::size_t i = 0; i < schema.dimensions.size(); ++i)
        out << (i ? ", " : "") << '"' << schema.dimensions[i].name << '"';
    out << ".\nEach key maps to an array (empty if nothing is found). Every item has \"text\" (the "
           "verbatim mention), \"span\" ([start, end] character offsets within the chunk text, end "
           "exclusive), the value fields listed for its dimension, and \"confidence\" (0 to 1).\n";
    return out.str();
}

inline std::string render_user_prompt(const Chunk& chunk, const SchemaSet& schema, const PromptContext& ctx,
                                      std::size_t memory_budget) {
    std::ostringstream out;
    out << "[SCHEMA]\n" << render_schema_instructions(schema) << "\n";
    out << "[STATE]\n"
        << "Document: " << ctx.doc_id << "\n"
        << "Title: " << ctx.title.value_or("(none)") << "\n"
        << "Published: " << ctx.pub_date.value_or("(unknown)") << "\n"
        << "Source location: " << ctx.source_location.value_or("(unknown)") << "\n"
        << "Chunk: " << (ctx.chunk_ordinal + 1) << " of " << ctx.chunk_count << "\n\n";
    out << "[MEMORY]\n" << render_memory(ctx.memory, memory_budget) << "\n";
    out << "[CONSISTENCY]\n";
    if (ctx.instructions.empty()) out << "(none)\n";
    for (const auto& line : ctx.instructions) out << "- " << line << "\n";
    out << "\n[CHUNK]\n<<<\n" << chunk.text << "\n>>>\n\n";
    out << "[OUTPUT FORMAT]\n" << render_output_contract(schema);
    return out.str();
}

}  // namespace detail

struct PromptLimits {
    /// Budget for system plus user text, in characters.
    std::size_t max_prompt_chars = 48000;
    int max_tokens = 2048;
    std::string model;
};

/// Assembles the single extraction call. Order is fixed: preamble (system
/// text), then schema, state, memory, consistency notes, chunk text and the
/// output contract. Memory shrinks before the call is declared too large.
inline CompletionRequest render_extraction_prompt(const Chunk& chunk, const SchemaSet& schema,
                                                  const PromptContext& ctx, const PromptLimits& limits = {}) {
    CompletionRequest req;
    req.system = std::string(kExtractionPreamble);
    req.model = limits.model;
    req.max_tokens = limits.max_tokens;
    auto budget = ctx.memory_budget;
    while (true) {
        req.user = detail::render_user_prompt(chunk, schema, ctx, budget);
        if (text::char_length(req.system) + text::char_length(req.user) <= limits.max_prompt_chars) return req;
        if (budget == 0)
            throw ContextOverflow("prompt for chunk " + std::to_string(chunk.chunk_index) + " of " + chunk.doc_id +
                                  " exceeds " + std::to_string(limits.max_prompt_chars) + " characters");
        budget /= 2;
    }
}

struct ReflectionItem {
    std::string dimension;
    std::string surface;
    std::string value;
};

inline constexpr std::string_view kReflectionPreamble =
    "You review entities extracted from a document chunk. Score each one from 0 to 1 on relevance "
    "(it belongs to its dimension), accuracy (the value matches the text) and consistency (it agrees "
    "with the rest of the chunk). Reply with one JSON object and nothing else.";

inline CompletionRequest render_reflection_prompt(const Chunk& chunk, const std::vector<ReflectionItem>& items,
                                                  const PromptLimits& limits = {}) {
    CompletionRequest req;
    req.system = std::string(kReflectionPreamble);
    req.model = limits.model;
    req.max_tokens = limits.max_tokens;
    std::ostringstream out;
    out << "[STATE]\nDocument: " << chunk.doc_id << "\nChunk index: " << chunk.chunk_index << "\n\n";
    out << "[CHUNK]\n<<<\n" << chunk.text << "\n>>>\n\n[CANDIDATES]\n";
    for (std::size_t i = 0; i < items.size(); ++i)
        out << "[" << i << "] " << items[i].dimension << ": " << json(items[i].surface).dump() << " -> "
            << items[i].value << "\n";
    out << "\n[OUTPUT FORMAT]\nReturn {\"scores\": [{\"id\": <candidate number>, \"relevance\": r, "
           "\"accuracy\": a, \"consistency\": c}, ...]} with one entry per candidate.\n";
    req.user = out.str();
    return req;
}

/// One item of the extraction reply, checked for shape but not yet for
/// meaning (ISO syntax, vocabulary, span bounds are validated later).
struct CandidateEntity {
    std::string dimension;
    DimensionKind kind = DimensionKind::categorical;
    std::string surface;
    std::optional<std::pair<long, long>> span;
    /// ISO text, place name or category label, by kind.
    std::string value;
    std::optional<std::string> qualifier;
    json attributes = json::object();
    double confidence = 0.5;

    bool operator==(const CandidateEntity&) const = default;
};

struct PayloadParseResult {
    std::vector<CandidateEntity> candidates;
    std::size_t dropped = 0;
};

namespace detail {

inline std::string strip_trailing_commas(std::string_view s) {
    std::string out;
    bool in_string = false;
    bool escape = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            out.push_back(c);
            if (escape) escape = false;
            else if (c == '\\') escape = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        if (c == ',') {
            auto j = s.find_first_not_of(" \t\r\n", i + 1);
            if (j != std::string_view::npos && (s[j] == '}' || s[j] == ']')) continue;
        }
        out.push_back(c);
    }
    return out;
}

/// The balanced object starting at `start`, with the brackets still open at
/// the end of the input when it is unterminated.
inline std::pair<std::string, std::string> scan_object(std::string_view s, std::size_t start) {
    std::string open;
    bool in_string = false;
    bool escape = false;
    for (std::size_t i = start; i < s.size(); ++i) {
        char c = s[i];
        if (in_string) {
            if (escape) escape = false;
            else if (c == '\\') escape = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == '{' || c == '[') open.push_back(c);
        else if (c == '}' || c == ']') {
            if (open.empty()) break;
            open.pop_back();
            if (open.empty()) return {std::string(s.substr(start, i - start + 1)), {}};
        }
    }
    if (in_string) open.push_back('"');
    return {std::string(s.substr(start)), open};
}

inline std::optional<json> try_parse_object(const std::string& candidate) {
    try {
        auto j = json::parse(candidate);
        if (j.is_object()) return j;
    } catch (const json::parse_error&) {
    }
    return std::nullopt;
}

}  // namespace detail

/// First JSON object in arbitrary model output. Tolerates code fences and
/// prose; repairs trailing commas and a single unterminated bracket.
inline std::optional<json> extract_json_object(std::string_view raw) {
    std::string_view body = raw;
    if (auto fence = raw.find("```"); fence != std::string_view::npos) {
        auto line_end = raw.find('\n', fence);
        if (line_end != std::string_view::npos) {
            auto close = raw.find("```", line_end);
            body = raw.substr(line_end + 1, close == std::string_view::npos ? std::string_view::npos : close - line_end - 1);
            if (body.find('{') == std::string_view::npos) body = raw;
        }
    }
    constexpr int kMaxStarts = 8;
    std::size_t pos = 0;
    for (int attempt = 0; attempt < kMaxStarts; ++attempt) {
        auto start = body.find('{', pos);
        if (start == std::string_view::npos) break;
        auto [candidate, open] = detail::scan_object(body, start);
        if (open.size() <= 1) {
            auto repaired = detail::strip_trailing_commas(candidate);
            if (open == "{") repaired += '}';
            else if (open == "[") repaired += ']';
            else if (open == "\"") repaired += '"';
            if (auto j = detail::try_parse_object(repaired)) return j;
        }
        pos = start + 1;
    }
    return std::nullopt;
}

/// Reads the single-call extraction reply. Items of the wrong shape are
/// dropped and counted; only a reply with no recoverable object throws.
inline PayloadParseResult parse_entity_payload(std::string_view raw, const SchemaSet& schema) {
    auto obj = extract_json_object(raw);
    if (!obj) throw PayloadUnparseable("no JSON object in model reply");

    PayloadParseResult result;
    for (const auto& dim : schema.dimensions) {
        if (!obj->contains(dim.name) || obj->at(dim.name).is_null()) continue;
        const auto& items = obj->at(dim.name);
        if (!items.is_array()) {
            ++result.dropped;
            continue;
        }
        for (const auto& item : items) {
            if (!item.is_object() || !item.contains("text") || !item.at("text").is_string() ||
                text::trim_view(item.at("text").get<std::string>()).empty()) {
                ++result.dropped;
                continue;
            }
            CandidateEntity c;
            c.dimension = dim.name;
            c.kind = dim.kind;
            c.surface = item.at("text").get<std::string>();

            if (item.contains("span")) {
                const auto& sp = item.at("span");
                if (sp.is_array() && sp.size() == 2 && sp[0].is_number_integer() && sp[1].is_number_integer())
                    c.span = std::pair<long, long>{sp[0].get<long>(), sp[1].get<long>()};
            }
            if (item.contains("confidence") && item.at("confidence").is_number())
                c.confidence = std::clamp(item.at("confidence").get<double>(), 0.0, 1.0);

            auto string_field = [&](const char* key) -> std::optional<std::string> {
                if (item.contains(key) && item.at(key).is_string()) return item.at(key).get<std::string>();
                return std::nullopt;
            };
            bool ok = true;
            switch (dim.kind) {
                case DimensionKind::normalized_temporal:
                    if (item.contains("value") && !item.at("value").is_string() && !item.at("value").is_null()) ok = false;
                    c.value = string_field("value").value_or("");
                    break;
                case DimensionKind::geocoded_spatial:
                    c.value = string_field("name").value_or(c.surface);
                    c.qualifier = string_field("qualifier");
                    if (c.qualifier && text::trim_view(*c.qualifier).empty()) c.qualifier.reset();
                    break;
                case DimensionKind::categorical: {
                    auto label = string_field("label");
                    if (!label) label = string_field("value");
                    if (!label) ok = false;
                    else c.value = *label;
                    break;
                }
                case DimensionKind::structured:
                    if (!item.contains("attributes") || !item.at("attributes").is_object()) ok = false;
                    else c.attributes = item.at("attributes");
                    break;
            }
            if (!ok) {
                ++result.dropped;
                continue;
            }
            result.candidates.push_back(std::move(c));
        }
    }
    return result;
}

struct ReflectionScores {
    double relevance = 0.0;
    double accuracy = 0.0;
    double consistency = 0.0;

    bool operator==(const ReflectionScores&) const = default;
};

/// Scores by candidate id. Throws PayloadUnparseable when nothing usable.
inline std::map<std::size_t, ReflectionScores> parse_reflection_payload(std::string_view raw) {
    auto obj = extract_json_object(raw);
    if (!obj || !obj->contains("scores") || !obj->at("scores").is_array())
        throw PayloadUnparseable("reflection reply has no scores array");
    std::map<std::size_t, ReflectionScores> out;
    for (const auto& s : obj->at("scores")) {
        if (!s.is_object() || !s.contains("id") || !s.at("id").is_number_integer()) continue;
        auto number = [&](const char* key) -> std::optional<double> {
            if (s.contains(key) && s.at(key).is_number()) return std::clamp(s.at(key).get<double>(), 0.0, 1.0);
            return std::nullopt;
        };
        auto r = number("relevance");
        auto a = number("accuracy");
        auto c = number("consistency");
        if (!r || !a || !c || s.at("id").get<long>() < 0) continue;
        out[static_cast<std::size_t>(s.at("id").get<long>())] = {*r, *a, *c};
    }
    return out;
}

}  // namespace stindex
