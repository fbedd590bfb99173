#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <spdlog/spdlog.h>

#include "stindex/error.hpp"
#include "stindex/http.hpp"
#include "stindex/json_io.hpp"
#include "stindex/text.hpp"

namespace stindex {

inline constexpr double kEarthRadiusKm = 6371.0;

struct LatLon {
    double lat = 0.0;
    double lon = 0.0;

    bool operator==(const LatLon&) const = default;
};

/// Great-circle distance on a sphere of radius 6371 km.
inline double haversine_km(LatLon a, LatLon b) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * rad;
    const double dlon = (b.lon - a.lon) * rad;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(h)));
}

enum class ResolutionLevel { exact, admin_qualified, country_qualified, country_only, unresolved };

enum class GeoProvider { http, gazetteer, cache };

inline std::string to_string(ResolutionLevel r) {
    switch (r) {
        case ResolutionLevel::exact: return "exact";
        case ResolutionLevel::admin_qualified: return "admin_qualified";
        case ResolutionLevel::country_qualified: return "country_qualified";
        case ResolutionLevel::country_only: return "country_only";
        case ResolutionLevel::unresolved: return "unresolved";
    }
    return "?";
}

inline std::optional<ResolutionLevel> parse_resolution_level(std::string_view s) {
    for (auto r : {ResolutionLevel::exact, ResolutionLevel::admin_qualified, ResolutionLevel::country_qualified,
                   ResolutionLevel::country_only, ResolutionLevel::unresolved}) {
        if (to_string(r) == s) return r;
    }
    return std::nullopt;
}

inline std::string to_string(GeoProvider p) {
    switch (p) {
        case GeoProvider::http: return "http";
        case GeoProvider::gazetteer: return "gazetteer";
        case GeoProvider::cache: return "cache";
    }
    return "?";
}

inline std::optional<GeoProvider> parse_geo_provider(std::string_view s) {
    if (s == "http") return GeoProvider::http;
    if (s == "gazetteer") return GeoProvider::gazetteer;
    if (s == "cache") return GeoProvider::cache;
    return std::nullopt;
}

/// Hierarchy levels, coarse to fine. Gazetteer country/admin/locality map
/// onto them by position.
inline const std::vector<std::string>& default_hierarchy_levels() {
    static const std::vector<std::string> levels{"country", "admin", "locality"};
    return levels;
}

struct GeoValue {
    std::string name;
    std::string resolved_name;
    std::optional<LatLon> coords;
    std::map<std::string, std::string> hierarchy;
    std::string country_code;
    std::string admin;
    ResolutionLevel resolution_level = ResolutionLevel::unresolved;
    GeoProvider provider = GeoProvider::gazetteer;

    bool resolved() const { return resolution_level != ResolutionLevel::unresolved; }

    bool operator==(const GeoValue&) const = default;

    static GeoValue unresolved(std::string name) {
        GeoValue v;
        v.name = std::move(name);
        return v;
    }
};

struct GazetteerRow {
    std::string name;
    std::vector<std::string> alt_names;
    std::string country_code;
    std::string admin_name;
    double lat = 0.0;
    double lon = 0.0;
    long long population = 0;

    bool is_country() const { return admin_name.empty(); }
    bool is_admin_region() const { return !admin_name.empty() && text::to_lower(admin_name) == text::to_lower(name); }
};

/// Offline place table. Immutable after load; names and alternates are
/// indexed case-insensitively.
class Gazetteer {
public:
    Gazetteer() = default;

    /// Columns: name, alt_names (|-separated), country_code, admin_name, lat, lon, population.
    /// Blank lines, '#' comments and a header row starting with "name" are skipped.
    static Gazetteer parse(std::string_view tsv) {
        Gazetteer g;
        std::size_t line_no = 0;
        for (const auto& raw : text::split(tsv, '\n')) {
            ++line_no;
            auto line = raw;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (text::trim_view(line).empty() || line[0] == '#') continue;
            auto cols = text::split(line, '\t');
            if (line_no == 1 && cols[0] == "name") continue;
            if (cols.size() != 7) throw FormatError("gazetteer row needs 7 tab-separated columns", line_no);
            GazetteerRow row;
            row.name = text::trim(cols[0]);
            for (auto& alt : text::split(cols[1], '|')) {
                auto a = text::trim(alt);
                if (!a.empty()) row.alt_names.push_back(a);
            }
            row.country_code = text::trim(cols[2]);
            std::transform(row.country_code.begin(), row.country_code.end(), row.country_code.begin(),
                           [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
            row.admin_name = text::trim(cols[3]);
            try {
                row.lat = std::stod(cols[4]);
                row.lon = std::stod(cols[5]);
                row.population = cols[6].empty() ? 0 : std::stoll(cols[6]);
            } catch (const std::exception&) {
                throw FormatError("gazetteer row has a non-numeric coordinate or population", line_no);
            }
            if (row.name.empty() || row.country_code.empty())
                throw FormatError("gazetteer row needs a name and a country code", line_no);
            if (row.lat < -90 || row.lat > 90 || row.lon < -180 || row.lon > 180)
                throw FormatError("gazetteer coordinates out of range", line_no);
            g.add(std::move(row));
        }
        return g;
    }

    static Gazetteer load(const std::filesystem::path& path) { return parse(text::read_file(path)); }

    void add(GazetteerRow row) {
        auto id = rows_.size();
        auto index_name = [&](const std::string& n) {
            auto& ids = index_[text::to_lower(n)];
            if (std::find(ids.begin(), ids.end(), id) == ids.end()) ids.push_back(id);
        };
        index_name(row.name);
        for (const auto& alt : row.alt_names) index_name(alt);
        rows_.push_back(std::move(row));
    }

    const std::vector<GazetteerRow>& rows() const { return rows_; }

    /// Rows whose name or alternate equals `name`, best referent first:
    /// population descending, then country code, then row order.
    std::vector<const GazetteerRow*> candidates(std::string_view name) const {
        std::vector<const GazetteerRow*> out;
        auto it = index_.find(text::to_lower(text::collapse_whitespace(name)));
        if (it == index_.end()) return out;
        for (auto id : it->second) out.push_back(&rows_[id]);
        std::stable_sort(out.begin(), out.end(), [](const GazetteerRow* a, const GazetteerRow* b) {
            if (a->population != b->population) return a->population > b->population;
            return a->country_code < b->country_code;
        });
        return out;
    }

    /// Distinct countries among the candidates for `name`.
    std::size_t candidate_countries(std::string_view name) const {
        std::vector<std::string> codes;
        for (const auto* row : candidates(name)) codes.push_back(row->country_code);
        std::sort(codes.begin(), codes.end());
        return static_cast<std::size_t>(std::unique(codes.begin(), codes.end()) - codes.begin());
    }

    /// Country code for a country name, alternate or code ("Australia", "AU").
    std::optional<std::string> country_code_for(std::string_view s) const {
        for (const auto* row : candidates(s)) {
            if (row->is_country()) return row->country_code;
        }
        auto upper = text::trim(s);
        std::transform(upper.begin(), upper.end(), upper.begin(),
                       [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
        if (upper.size() == 2) {
            for (const auto& row : rows_) {
                if (row.country_code == upper) return upper;
            }
        }
        return std::nullopt;
    }

    /// Canonical admin region name for a name or alternate ("WA" -> "Western Australia").
    std::vector<const GazetteerRow*> admin_regions(std::string_view s) const {
        std::vector<const GazetteerRow*> out;
        for (const auto* row : candidates(s)) {
            if (row->is_admin_region()) out.push_back(row);
        }
        return out;
    }

private:
    std::vector<GazetteerRow> rows_;
    std::unordered_map<std::string, std::vector<std::size_t>> index_;
};

/// Per-document count of resolved countries among kept spatial entities.
using CountryTally = std::map<std::string, int>;

struct GeoQuery {
    std::string name;
    std::optional<std::string> qualifier;
    std::optional<std::string> bias_country;
    std::optional<std::string> anchor_admin;
};

struct GeocoderOptions {
    /// Nominatim-compatible endpoint; empty means gazetteer only.
    std::string http_url;
    std::chrono::milliseconds http_min_interval{1000};
    std::chrono::seconds http_timeout{30};
    std::vector<std::string> hierarchy_levels = default_hierarchy_levels();
    /// Share of prior resolved entities one country needs before it biases
    /// ambiguous names, and the minimum number of prior entities.
    double correction_share = 0.6;
    int correction_min_count = 2;
};

/// Multi-level fallback geocoder over an optional HTTP geocoder and the
/// offline gazetteer. Thread-safe: the gazetteer is read-only and the HTTP
/// cache is guarded.
class Geocoder {
public:
    explicit Geocoder(std::shared_ptr<const Gazetteer> gazetteer, GeocoderOptions options = {})
        : gazetteer_(std::move(gazetteer)),
          options_(std::move(options)),
          limiter_(std::make_shared<http::HostRateLimiter>(options_.http_min_interval)) {
        if (!gazetteer_) gazetteer_ = std::make_shared<const Gazetteer>();
    }

    const Gazetteer& gazetteer() const { return *gazetteer_; }
    const GeocoderOptions& options() const { return options_; }
    bool http_enabled() const { return !options_.http_url.empty(); }

    GeoValue geocode(std::string_view name, std::optional<std::string> bias_country = std::nullopt) const {
        GeoQuery q;
        q.name = std::string(name);
        q.bias_country = std::move(bias_country);
        return geocode(q);
    }

    /// Fallback ladder, first hit wins: explicit qualifier, bias country,
    /// admin region of the spatial anchor, unqualified name, then the
    /// centroid of an enclosing country or admin region named in the text.
    GeoValue geocode(const GeoQuery& query) const {
        auto name = text::collapse_whitespace(query.name);
        if (name.empty()) return GeoValue::unresolved(query.name);

        std::string head = name;
        std::optional<std::string> qualifier = query.qualifier;
        if (qualifier && text::trim_view(*qualifier).empty()) qualifier.reset();
        if (auto comma = name.find(','); comma != std::string::npos) {
            auto q = text::trim(name.substr(comma + 1));
            head = text::trim(name.substr(0, comma));
            if (!q.empty() && !qualifier) qualifier = q;
        }

        if (qualifier) {
            if (auto code = gazetteer_->country_code_for(*qualifier)) {
                if (auto hit = lookup(head, code, std::nullopt, ResolutionLevel::country_qualified)) return finish(*hit, query.name);
            }
            for (const auto* region : gazetteer_->admin_regions(*qualifier)) {
                if (auto hit = lookup(head, region->country_code, region->name, ResolutionLevel::admin_qualified))
                    return finish(*hit, query.name);
            }
        }
        if (query.bias_country) {
            auto code = gazetteer_->country_code_for(*query.bias_country).value_or(*query.bias_country);
            if (auto hit = lookup(head, code, std::nullopt, ResolutionLevel::exact)) return finish(*hit, query.name);
        }
        if (query.anchor_admin) {
            if (auto hit = lookup(head, std::nullopt, *query.anchor_admin, ResolutionLevel::admin_qualified))
                return finish(*hit, query.name);
        }
        if (auto hit = lookup(head, std::nullopt, std::nullopt, ResolutionLevel::exact)) return finish(*hit, query.name);
        if (head != name) {
            if (auto hit = lookup(name, std::nullopt, std::nullopt, ResolutionLevel::exact)) return finish(*hit, query.name);
        }
        if (qualifier) {
            for (const auto* row : gazetteer_->candidates(*qualifier)) {
                if (row->is_country() || row->is_admin_region()) {
                    auto v = from_row(*row, ResolutionLevel::country_only);
                    return finish(v, query.name);
                }
            }
        }
        return GeoValue::unresolved(query.name);
    }

    /// True if the gazetteer knows the name in two or more countries.
    bool ambiguous(std::string_view name) const { return gazetteer_->candidate_countries(name) >= 2; }

    /// Re-geocodes an ambiguous name toward the document's dominant country
    /// when enough prior entities agree on it. Unambiguous names, thin
    /// evidence and biased misses leave the value untouched.
    GeoValue apply_context_correction(const GeoValue& value, const CountryTally& tally) const {
        int total = 0;
        std::string top;
        int top_count = 0;
        for (const auto& [code, count] : tally) {
            total += count;
            if (count > top_count) {
                top = code;
                top_count = count;
            }
        }
        if (total < options_.correction_min_count || top_count == 0) return value;
        if (static_cast<double>(top_count) < options_.correction_share * total) return value;
        if (value.resolved() && value.country_code == top) return value;
        auto surface = value.name;
        auto head = surface.substr(0, surface.find(','));
        if (!ambiguous(text::trim(head))) return value;

        auto hit = lookup(text::trim(head), top, std::nullopt, ResolutionLevel::exact);
        if (!hit || hit->country_code != top) return value;
        auto corrected = finish(*hit, value.name);
        spdlog::debug("context correction: '{}' {} -> {}", value.name, value.country_code, corrected.country_code);
        return corrected;
    }

private:
    std::optional<GeoValue> lookup(const std::string& name, const std::optional<std::string>& country,
                                   const std::optional<std::string>& admin, ResolutionLevel level) const {
        if (http_enabled()) {
            try {
                if (auto v = http_lookup(name, country, admin)) {
                    v->resolution_level = level;
                    return v;
                }
                return std::nullopt;
            } catch (const Error& e) {
                spdlog::warn("geocoder HTTP lookup for '{}' failed, using gazetteer: {}", name, e.what());
            }
        }
        for (const auto* row : gazetteer_->candidates(name)) {
            if (country && row->country_code != *country) continue;
            if (admin && text::to_lower(row->admin_name) != text::to_lower(*admin)) continue;
            return from_row(*row, level);
        }
        return std::nullopt;
    }

    GeoValue from_row(const GazetteerRow& row, ResolutionLevel level) const {
        GeoValue v;
        v.resolved_name = row.name;
        v.coords = LatLon{row.lat, row.lon};
        v.country_code = row.country_code;
        v.resolution_level = level;
        v.provider = GeoProvider::gazetteer;
        fill_hierarchy(v, row.country_code, row.admin_name,
                       row.is_country() || row.is_admin_region() ? std::string() : row.name);
        return v;
    }

    void fill_hierarchy(GeoValue& v, const std::string& country, const std::string& admin,
                        const std::string& locality) const {
        v.admin = admin;
        const auto& levels = options_.hierarchy_levels;
        const std::string parts[] = {country, admin, locality};
        for (std::size_t i = 0; i < 3 && i < levels.size(); ++i) {
            if (!parts[i].empty()) v.hierarchy[levels[i]] = parts[i];
        }
    }

    GeoValue finish(GeoValue v, const std::string& surface) const {
        v.name = surface;
        return v;
    }

    std::optional<GeoValue> http_lookup(const std::string& name, const std::optional<std::string>& country,
                                        const std::optional<std::string>& admin) const {
        auto q = admin ? name + ", " + *admin : name;
        std::string key = q + "|" + country.value_or("");
        {
            std::lock_guard lock(cache_mutex_);
            if (auto it = cache_.find(key); it != cache_.end()) return it->second;
        }
        auto url = http::split_url(options_.http_url);
        auto base = url.path == "/" ? std::string() : url.path;
        if (!base.empty() && base.back() == '/') base.pop_back();
        httplib::Params params{{"q", q}, {"format", "json"}, {"addressdetails", "1"}, {"limit", "1"}};
        if (country) params.emplace("countrycodes", text::to_lower(*country));
        limiter_->acquire(url.host);
        auto client = http::make_client(url, options_.http_timeout);
        auto res = client->Get(base + "/search", params, httplib::Headers{{"User-Agent", "stindex"}});
        if (!res) throw FetchError("geocoder unreachable: " + httplib::to_string(res.error()));
        if (res->status != 200) throw FetchError("geocoder returned HTTP " + std::to_string(res->status));

        std::optional<GeoValue> value;
        try {
            auto body = json::parse(res->body);
            if (body.is_array() && !body.empty()) {
                const auto& hit = body[0];
                GeoValue v;
                v.coords = LatLon{std::stod(hit.at("lat").get<std::string>()), std::stod(hit.at("lon").get<std::string>())};
                auto display = hit.value("display_name", name);
                v.resolved_name = hit.value("name", text::trim(display.substr(0, display.find(','))));
                const auto address = hit.value("address", json::object());
                auto code = address.value("country_code", std::string());
                std::transform(code.begin(), code.end(), code.begin(),
                               [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
                if (code.empty()) throw FetchError("geocoder hit without country");
                v.country_code = code;
                std::string locality;
                for (const char* k : {"city", "town", "village", "suburb", "hamlet"}) {
                    if (address.contains(k)) {
                        locality = address.at(k).get<std::string>();
                        break;
                    }
                }
                v.provider = GeoProvider::http;
                fill_hierarchy(v, code, address.value("state", std::string()), locality);
                value = v;
            }
        } catch (const json::exception& e) {
            throw FetchError(std::string("geocoder response unreadable: ") + e.what());
        } catch (const std::invalid_argument&) {
            throw FetchError("geocoder returned non-numeric coordinates");
        }
        std::lock_guard lock(cache_mutex_);
        cache_[key] = value;
        return value;
    }

    std::shared_ptr<const Gazetteer> gazetteer_;
    GeocoderOptions options_;
    std::shared_ptr<http::HostRateLimiter> limiter_;
    mutable std::mutex cache_mutex_;
    mutable std::unordered_map<std::string, std::optional<GeoValue>> cache_;
};

}  // namespace stindex
