#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "stindex/error.hpp"
#include "stindex/http.hpp"
#include "stindex/temporal.hpp"
#include "stindex/text.hpp"

namespace stindex {

enum class Origin { raw_text, file, url };

inline std::string to_string(Origin o) {
    switch (o) {
        case Origin::raw_text: return "raw_text";
        case Origin::file: return "file";
        case Origin::url: return "url";
    }
    return "?";
}

struct SourceDocument {
    std::string doc_id;
    Origin origin = Origin::raw_text;
    std::string locator;
    std::optional<std::string> title;
    std::optional<TemporalValue> pub_date;
    std::optional<std::string> source_location;
    std::string body;

    bool operator==(const SourceDocument&) const = default;
};

enum class ChunkStrategy { sliding_window, paragraph, element, semantic };

inline std::string to_string(ChunkStrategy s) {
    switch (s) {
        case ChunkStrategy::sliding_window: return "sliding_window";
        case ChunkStrategy::paragraph: return "paragraph";
        case ChunkStrategy::element: return "element";
        case ChunkStrategy::semantic: return "semantic";
    }
    return "?";
}

inline std::optional<ChunkStrategy> parse_chunk_strategy(std::string_view s) {
    if (s == "sliding_window") return ChunkStrategy::sliding_window;
    if (s == "paragraph") return ChunkStrategy::paragraph;
    if (s == "element") return ChunkStrategy::element;
    if (s == "semantic") return ChunkStrategy::semantic;
    return std::nullopt;
}

/// Offsets count Unicode scalar values of the document body, half-open.
struct Chunk {
    std::string doc_id;
    std::size_t chunk_index = 0;
    std::size_t char_start = 0;
    std::size_t char_end = 0;
    std::string text;
    ChunkStrategy strategy = ChunkStrategy::sliding_window;

    std::size_t length() const { return char_end - char_start; }

    bool operator==(const Chunk&) const = default;
};

/// Scores how strongly a topic boundary falls between two adjacent blocks,
/// in [0, 1]. The semantic strategy cuts where the score reaches its threshold.
using BoundaryScorer = std::function<double(std::string_view before, std::string_view after)>;

struct ChunkParams {
    ChunkStrategy strategy = ChunkStrategy::sliding_window;
    std::size_t size = 2000;
    std::size_t overlap = 200;
    BoundaryScorer boundary_scorer;
    double boundary_threshold = 0.5;
};

struct FetchPolicy {
    std::chrono::milliseconds min_interval{1000};
    std::chrono::seconds timeout{30};
};

/// Plain text plus whatever metadata the markup carried.
struct ConvertedText {
    std::string body;
    std::optional<std::string> title;
    std::optional<std::string> date;
    std::optional<std::string> location;
    std::optional<std::string> id;
};

namespace detail {

inline std::string decode_entity(std::string_view name) {
    static const std::map<std::string, std::string, std::less<>> named = {
        {"amp", "&"}, {"lt", "<"}, {"gt", ">"}, {"quot", "\""}, {"apos", "'"},
        {"nbsp", " "}, {"ndash", "\xE2\x80\x93"}, {"mdash", "\xE2\x80\x94"},
        {"rsquo", "\xE2\x80\x99"}, {"lsquo", "\xE2\x80\x98"}, {"hellip", "\xE2\x80\xA6"},
        {"eacute", "\xC3\xA9"}, {"egrave", "\xC3\xA8"}, {"aacute", "\xC3\xA1"}, {"agrave", "\xC3\xA0"},
        {"iacute", "\xC3\xAD"}, {"oacute", "\xC3\xB3"}, {"uacute", "\xC3\xBA"}, {"ouml", "\xC3\xB6"},
        {"uuml", "\xC3\xBC"}, {"auml", "\xC3\xA4"}, {"ccedil", "\xC3\xA7"}, {"ntilde", "\xC3\xB1"}};
    if (auto it = named.find(name); it != named.end()) return it->second;
    if (name.size() > 1 && name[0] == '#') {
        unsigned long cp = 0;
        try {
            cp = name[1] == 'x' || name[1] == 'X' ? std::stoul(std::string(name.substr(2)), nullptr, 16)
                                                  : std::stoul(std::string(name.substr(1)));
        } catch (...) {
            return {};
        }
        std::string out;
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x110000) {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
        return out;
    }
    return {};
}

inline std::string decode_entities(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '&') {
            auto semi = s.find(';', i);
            if (semi != std::string_view::npos && semi - i <= 10) {
                auto decoded = decode_entity(s.substr(i + 1, semi - i - 1));
                if (!decoded.empty()) {
                    out += decoded;
                    i = semi;
                    continue;
                }
            }
        }
        out.push_back(s[i]);
    }
    return out;
}

inline std::optional<std::string> attribute(std::string_view tag, std::string_view name) {
    auto lower = text::to_lower(tag);
    std::string key = std::string(name) + "=";
    std::size_t pos = 0;
    while ((pos = lower.find(key, pos)) != std::string::npos) {
        if (pos == 0 || std::isspace(static_cast<unsigned char>(lower[pos - 1]))) break;
        ++pos;
    }
    if (pos == std::string::npos) return std::nullopt;
    pos += key.size();
    if (pos >= tag.size()) return std::nullopt;
    char quote = tag[pos];
    if (quote == '"' || quote == '\'') {
        auto end = tag.find(quote, pos + 1);
        if (end == std::string_view::npos) return std::nullopt;
        return decode_entities(tag.substr(pos + 1, end - pos - 1));
    }
    auto end = tag.find_first_of(" \t\n>/", pos);
    return decode_entities(tag.substr(pos, end - pos));
}

inline bool is_block_tag(std::string_view name) {
    static const char* blocks[] = {"p", "div", "br", "h1", "h2", "h3", "h4", "h5", "h6",
                                   "li", "ul", "ol", "tr", "table", "section", "article",
                                   "header", "footer", "main", "nav", "aside", "blockquote",
                                   "pre", "hr", "dl", "dt", "dd", "figure", "figcaption",
                                   "address", "body", "form", "fieldset", "td", "th"};
    for (auto* b : blocks) {
        if (name == b) return true;
    }
    return false;
}

inline std::string join_blocks(const std::vector<std::string>& blocks) {
    std::string body;
    for (const auto& b : blocks) {
        if (b.empty()) continue;
        if (!body.empty()) body += "\n\n";
        body += b;
    }
    return body;
}

/// Splits text on blank lines, trims each block, drops empty ones.
inline std::vector<std::string> text_blocks(std::string_view s) {
    std::vector<std::string> blocks;
    std::string current;
    for (auto& raw_line : text::split(s, '\n')) {
        auto line = raw_line;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (text::trim_view(line).empty()) {
            if (!text::trim_view(current).empty()) blocks.push_back(text::trim(current));
            current.clear();
        } else {
            if (!current.empty()) current += '\n';
            auto end = line.find_last_not_of(" \t");
            current += line.substr(0, end + 1);
        }
    }
    if (!text::trim_view(current).empty()) blocks.push_back(text::trim(current));
    return blocks;
}

}  // namespace detail

/// Markup to plain text: tags removed, block elements become paragraph
/// breaks, script/style/head content dropped (the title is kept as metadata).
inline ConvertedText convert_html(std::string_view html) {
    ConvertedText out;
    std::vector<std::string> blocks;
    std::string current;
    auto flush = [&] {
        auto collapsed = text::collapse_whitespace(detail::decode_entities(current));
        if (!collapsed.empty()) blocks.push_back(collapsed);
        current.clear();
    };

    std::size_t i = 0;
    while (i < html.size()) {
        if (html[i] != '<') {
            auto next = html.find('<', i);
            current.append(html.substr(i, next == std::string_view::npos ? html.size() - i : next - i));
            i = next == std::string_view::npos ? html.size() : next;
            continue;
        }
        if (html.substr(i, 4) == "<!--") {
            auto end = html.find("-->", i + 4);
            i = end == std::string_view::npos ? html.size() : end + 3;
            continue;
        }
        auto close = html.find('>', i);
        if (close == std::string_view::npos) break;
        auto tag = html.substr(i + 1, close - i - 1);
        i = close + 1;

        bool closing = !tag.empty() && tag[0] == '/';
        auto name_view = closing ? tag.substr(1) : tag;
        auto name_end = name_view.find_first_of(" \t\r\n/>");
        auto name = text::to_lower(name_view.substr(0, name_end));

        if (!closing && (name == "script" || name == "style" || name == "head" || name == "title" ||
                         name == "noscript" || name == "template")) {
            auto end_tag = "</" + name;
            auto lower_rest = text::to_lower(html.substr(i));
            auto end = lower_rest.find(end_tag);
            auto inner = html.substr(i, end == std::string::npos ? html.size() - i : end);
            if (name == "title") {
                auto t = text::collapse_whitespace(detail::decode_entities(inner));
                if (!t.empty()) out.title = t;
            } else if (name == "head") {
                // Head content is metadata only: pick up <title> and <meta>.
                auto nested = convert_html(inner);
                if (nested.title) out.title = nested.title;
                if (nested.date) out.date = nested.date;
                if (nested.location) out.location = nested.location;
                if (nested.id) out.id = nested.id;
            }
            if (end == std::string::npos) {
                i = html.size();
            } else {
                auto gt = html.find('>', i + end);
                i = gt == std::string_view::npos ? html.size() : gt + 1;
            }
            continue;
        }
        if (!closing && name == "meta") {
            auto key = detail::attribute(tag, "name");
            if (!key) key = detail::attribute(tag, "property");
            auto content = detail::attribute(tag, "content");
            if (key && content) {
                auto k = text::to_lower(*key);
                if (k == "date" || k == "dc.date" || k == "article:published_time" || k == "pubdate")
                    out.date = *content;
                else if (k == "geo.placename" || k == "location" || k == "dc.coverage")
                    out.location = *content;
                else if (k == "doc_id" || k == "stindex:id")
                    out.id = *content;
            }
            continue;
        }
        if (detail::is_block_tag(name)) flush();
    }
    flush();
    out.body = detail::join_blocks(blocks);
    return out;
}

/// Markdown with optional YAML front matter (title, date, location, id).
/// Heading markers are dropped; paragraphs are separated by blank lines.
inline ConvertedText convert_markdown(std::string_view md) {
    ConvertedText out;
    std::string_view rest = md;
    if (rest.rfind("---\n", 0) == 0 || rest.rfind("---\r\n", 0) == 0) {
        auto end = rest.find("\n---", 3);
        if (end != std::string_view::npos) {
            auto front = rest.substr(4, end - 4);
            try {
                auto node = YAML::Load(std::string(front));
                auto get = [&](const char* key) -> std::optional<std::string> {
                    if (node[key] && node[key].IsScalar()) return node[key].as<std::string>();
                    return std::nullopt;
                };
                out.title = get("title");
                out.date = get("date");
                out.location = get("location");
                out.id = get("id");
            } catch (const YAML::Exception& e) {
                throw SyntaxError(std::string("malformed front matter: ") + e.what());
            }
            auto after = rest.find('\n', end + 4);
            rest = after == std::string_view::npos ? std::string_view{} : rest.substr(after + 1);
        }
    }
    std::vector<std::string> blocks;
    for (auto& block : detail::text_blocks(rest)) {
        std::string cleaned;
        for (auto& line : text::split(block, '\n')) {
            std::string_view l = line;
            if (!l.empty() && l[0] == '#') {
                l.remove_prefix(std::min(l.find_first_not_of('#'), l.size()));
                l = text::trim_view(l);
            }
            if (!cleaned.empty()) cleaned += '\n';
            cleaned += l;
        }
        blocks.push_back(std::move(cleaned));
    }
    out.body = detail::join_blocks(blocks);
    return out;
}

inline ConvertedText convert_plain_text(std::string_view txt) {
    ConvertedText out;
    out.body = detail::join_blocks(detail::text_blocks(txt));
    return out;
}

using DocumentConverter = std::function<ConvertedText(std::string_view)>;

/// Extension-keyed converters. PDF/DOCX support plugs in here.
class ConverterRegistry {
public:
    ConverterRegistry() {
        converters_["txt"] = convert_plain_text;
        converters_["html"] = convert_html;
        converters_["htm"] = convert_html;
        converters_["md"] = convert_markdown;
    }

    void add(const std::string& extension, DocumentConverter converter) {
        converters_[text::to_lower(extension)] = std::move(converter);
    }

    const DocumentConverter& get(const std::string& extension) const {
        auto it = converters_.find(text::to_lower(extension));
        if (it == converters_.end()) throw UnsupportedFormat("unsupported document format: ." + extension);
        return it->second;
    }

private:
    std::map<std::string, DocumentConverter> converters_;
};

struct DocumentSpec {
    Origin origin = Origin::raw_text;
    /// Path, URL, or the text itself for raw_text.
    std::string locator;
    std::optional<std::string> doc_id;
};

inline std::string make_doc_id(Origin origin, std::string_view body) {
    return "doc-" + text::fnv1a_hex(to_string(origin) + "\n" + std::string(body)).substr(0, 12);
}

namespace detail {

inline std::optional<TemporalValue> parse_pub_date(const std::optional<std::string>& raw) {
    if (!raw) return std::nullopt;
    auto s = text::trim(*raw);
    // Keep the date part of timestamps such as 2024-03-15T09:00:00Z.
    if (s.size() > 10 && s[10] == 'T') s = s.substr(0, 10);
    try {
        auto v = parse_iso(s);
        if (v.kind != TemporalKind::instant) return std::nullopt;
        return v;
    } catch (const BadIso&) {
        return std::nullopt;
    }
}

inline SourceDocument finish_document(const DocumentSpec& spec, ConvertedText converted) {
    if (text::trim_view(converted.body).empty())
        throw EmptyDocument("document has no text: " +
                            (spec.origin == Origin::raw_text ? std::string("<inline text>") : spec.locator));
    SourceDocument doc;
    doc.origin = spec.origin;
    doc.locator = spec.origin == Origin::raw_text ? std::string("-") : spec.locator;
    doc.title = std::move(converted.title);
    doc.pub_date = parse_pub_date(converted.date);
    doc.source_location = std::move(converted.location);
    doc.body = std::move(converted.body);
    if (spec.doc_id) doc.doc_id = *spec.doc_id;
    else if (converted.id) doc.doc_id = *converted.id;
    else doc.doc_id = make_doc_id(spec.origin, doc.body);
    return doc;
}

inline std::string extension_of(const std::string& path) {
    auto ext = std::filesystem::path(path).extension().string();
    return ext.empty() ? std::string() : text::to_lower(ext.substr(1));
}

}  // namespace detail

/// Loads and converts one document. `limiter` is shared across concurrent
/// loads and spaces out requests per host.
inline SourceDocument load_document(const DocumentSpec& spec, const FetchPolicy& policy = {},
                                    http::HostRateLimiter* limiter = nullptr,
                                    const ConverterRegistry& converters = ConverterRegistry()) {
    switch (spec.origin) {
        case Origin::raw_text: {
            ConvertedText c;
            c.body = spec.locator;
            return detail::finish_document(spec, std::move(c));
        }
        case Origin::file: {
            const auto& converter = converters.get(detail::extension_of(spec.locator));
            if (!std::filesystem::exists(spec.locator)) throw IoError("file not found: " + spec.locator);
            return detail::finish_document(spec, converter(text::read_file(spec.locator)));
        }
        case Origin::url: {
            auto url = http::split_url(spec.locator);
            if (limiter) limiter->acquire(url.host);
            auto client = http::make_client(url, policy.timeout);
            auto res = client->Get(url.path);
            if (!res) throw FetchError("fetch failed for " + spec.locator + ": " + httplib::to_string(res.error()));
            if (res->status != 200)
                throw FetchError("fetch of " + spec.locator + " returned HTTP " + std::to_string(res->status));
            auto content_type = text::to_lower(res->get_header_value("Content-Type"));
            auto path_ext = detail::extension_of(url.path.substr(0, url.path.find('?')));
            std::string ext = "html";
            if (content_type.find("markdown") != std::string::npos || path_ext == "md") ext = "md";
            else if (content_type.find("text/plain") != std::string::npos) ext = "txt";
            return detail::finish_document(spec, converters.get(ext)(res->body));
        }
    }
    throw UnsupportedFormat("unknown origin");
}

/// Locator to spec: "-" reads stdin; http(s) URLs fetch; anything else is a file.
inline DocumentSpec spec_for_locator(const std::string& locator) {
    if (locator.rfind("http://", 0) == 0 || locator.rfind("https://", 0) == 0) return {Origin::url, locator, {}};
    return {Origin::file, locator, {}};
}

namespace detail {

/// Paragraph units partitioning [0, n): each unit runs from a paragraph start
/// to the next paragraph start, so separators stay with the preceding unit.
inline std::vector<std::pair<std::size_t, std::size_t>> paragraph_units(std::string_view body,
                                                                        const text::Utf8Index& idx) {
    std::vector<std::size_t> starts{0};
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] != '\n') {
            ++i;
            continue;
        }
        auto j = i + 1;
        while (j < body.size() && (body[j] == ' ' || body[j] == '\t' || body[j] == '\r')) ++j;
        if (j < body.size() && body[j] == '\n') {
            while (j < body.size() && std::isspace(static_cast<unsigned char>(body[j]))) ++j;
            if (j < body.size()) starts.push_back(idx.char_index(j));
            i = j;
        } else {
            i = j;
        }
    }
    std::vector<std::pair<std::size_t, std::size_t>> units;
    for (std::size_t k = 0; k < starts.size(); ++k) {
        auto end = k + 1 < starts.size() ? starts[k + 1] : idx.size();
        if (end > starts[k]) units.emplace_back(starts[k], end);
    }
    return units;
}

inline void sliding_spans(std::size_t begin, std::size_t end, std::size_t size, std::size_t overlap,
                          std::vector<std::pair<std::size_t, std::size_t>>& out) {
    const auto stride = size - overlap;
    for (auto s = begin;; s += stride) {
        auto e = std::min(s + size, end);
        out.emplace_back(s, e);
        if (e >= end) break;
    }
}

}  // namespace detail

/// Splits a document into ordered chunks that cover the whole body.
inline std::vector<Chunk> chunk_document(const SourceDocument& doc, const ChunkParams& params = {}) {
    if (params.size == 0) throw InvalidChunkParams("chunk size must be positive");
    if (params.overlap >= params.size)
        throw InvalidChunkParams("chunk overlap (" + std::to_string(params.overlap) +
                                 ") must be smaller than chunk size (" + std::to_string(params.size) + ")");

    text::Utf8Index idx(doc.body);
    const auto n = idx.size();
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    auto strategy = params.strategy;
    if (strategy == ChunkStrategy::semantic && !params.boundary_scorer) strategy = ChunkStrategy::paragraph;

    if (n == 0) {
        // Nothing to cover.
    } else if (strategy == ChunkStrategy::sliding_window) {
        detail::sliding_spans(0, n, params.size, params.overlap, spans);
    } else {
        auto units = detail::paragraph_units(doc.body, idx);
        auto emit = [&](std::size_t a, std::size_t b) {
            if (b - a > params.size) detail::sliding_spans(a, b, params.size, params.overlap, spans);
            else spans.emplace_back(a, b);
        };
        if (strategy == ChunkStrategy::element) {
            const auto small = params.size / 10;
            std::optional<std::size_t> open;
            for (std::size_t k = 0; k < units.size(); ++k) {
                auto [a, b] = units[k];
                if (!open) open = a;
                bool last = k + 1 == units.size();
                if (b - *open < small && !last) continue;
                if (b - *open < small && last && !spans.empty()) {
                    // Trailing fragment joins the previous element.
                    auto prev_start = spans.back().first;
                    spans.pop_back();
                    emit(prev_start, b);
                } else {
                    emit(*open, b);
                }
                open.reset();
            }
        } else {
            std::optional<std::size_t> open;
            std::size_t open_end = 0;
            for (std::size_t k = 0; k < units.size(); ++k) {
                auto [a, b] = units[k];
                if (b - a > params.size) {
                    if (open) emit(*open, open_end);
                    open.reset();
                    emit(a, b);
                    continue;
                }
                bool cut = false;
                if (open) {
                    cut = b - *open > params.size;
                    if (!cut && strategy == ChunkStrategy::semantic) {
                        auto before = text::char_slice(doc.body, idx, *open, a);
                        auto after = text::char_slice(doc.body, idx, a, b);
                        cut = params.boundary_scorer(before, after) >= params.boundary_threshold;
                    }
                }
                if (cut) {
                    emit(*open, open_end);
                    open.reset();
                }
                if (!open) open = a;
                open_end = b;
            }
            if (open) emit(*open, open_end);
        }
    }

    std::vector<Chunk> chunks;
    chunks.reserve(spans.size());
    for (const auto& [a, b] : spans) {
        Chunk c;
        c.doc_id = doc.doc_id;
        c.chunk_index = chunks.size();
        c.char_start = a;
        c.char_end = b;
        c.text = text::char_slice(doc.body, idx, a, b);
        c.strategy = strategy;
        chunks.push_back(std::move(c));
    }
    return chunks;
}

}  // namespace stindex
