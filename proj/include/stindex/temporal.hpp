#pragma once

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <regex>
#include <string>
#include <string_view>

#include "stindex/error.hpp"
#include "stindex/text.hpp"

namespace stindex {

enum class TemporalKind { instant, interval };

/// Ordered coarse to fine.
enum class Granularity { year = 0, month = 1, day = 2, hour = 3, minute = 4 };

inline std::string to_string(TemporalKind k) { return k == TemporalKind::instant ? "instant" : "interval"; }

inline std::string to_string(Granularity g) {
    switch (g) {
        case Granularity::year: return "year";
        case Granularity::month: return "month";
        case Granularity::day: return "day";
        case Granularity::hour: return "hour";
        case Granularity::minute: return "minute";
    }
    return "?";
}

/// Naive local calendar timestamp. Fields finer than the owning value's
/// granularity hold their minimum (month/day 1, hour/minute 0).
struct Timestamp {
    int year = 1970;
    unsigned month = 1;
    unsigned day = 1;
    unsigned hour = 0;
    unsigned minute = 0;

    auto operator<=>(const Timestamp&) const = default;

    std::chrono::sys_days date() const {
        return std::chrono::sys_days{std::chrono::year{year} / std::chrono::month{month} /
                                     std::chrono::day{day}};
    }

    static Timestamp from_date(std::chrono::sys_days d) {
        std::chrono::year_month_day ymd{d};
        return {static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                static_cast<unsigned>(ymd.day()), 0, 0};
    }
};

struct TemporalValue {
    TemporalKind kind = TemporalKind::instant;
    Timestamp start;
    std::optional<Timestamp> end;
    Granularity granularity = Granularity::day;
    std::string original_expression;
    bool relative = false;

    bool operator==(const TemporalValue&) const = default;

    static TemporalValue day(int y, unsigned m, unsigned d) {
        TemporalValue v;
        v.start = {y, m, d, 0, 0};
        return v;
    }
};

namespace detail {

inline std::string format_timestamp(const Timestamp& t, Granularity g) {
    char buf[32];
    int n = std::snprintf(buf, sizeof buf, "%04d", t.year);
    if (g >= Granularity::month) n += std::snprintf(buf + n, sizeof buf - n, "-%02u", t.month);
    if (g >= Granularity::day) n += std::snprintf(buf + n, sizeof buf - n, "-%02u", t.day);
    if (g >= Granularity::hour) n += std::snprintf(buf + n, sizeof buf - n, "T%02u", t.hour);
    if (g >= Granularity::minute) std::snprintf(buf + n, sizeof buf - n, ":%02u", t.minute);
    return buf;
}

inline unsigned days_in_month(int year, unsigned month) {
    using namespace std::chrono;
    return static_cast<unsigned>((std::chrono::year{year} / std::chrono::month{month} / last).day());
}

struct IsoCursor {
    std::string_view text;
    std::size_t pos = 0;
    std::size_t base = 0;  // offset of `text` inside the full input

    [[noreturn]] void fail(const std::string& why) const { throw BadIso(why, base + pos); }

    unsigned digits(std::size_t count, const char* field) {
        unsigned value = 0;
        for (std::size_t i = 0; i < count; ++i) {
            if (pos >= text.size() || text[pos] < '0' || text[pos] > '9')
                fail(std::string("expected ") + std::to_string(count) + "-digit " + field);
            value = value * 10 + static_cast<unsigned>(text[pos] - '0');
            ++pos;
        }
        return value;
    }

    bool accept(char c) {
        if (pos < text.size() && text[pos] == c) {
            ++pos;
            return true;
        }
        return false;
    }

    bool done() const { return pos == text.size(); }
};

inline std::pair<Timestamp, Granularity> parse_timestamp(std::string_view s, std::size_t base) {
    IsoCursor c{s, 0, base};
    Timestamp t;
    t.year = static_cast<int>(c.digits(4, "year"));
    if (t.year < 1) c.fail("year out of range");
    auto g = Granularity::year;
    if (c.accept('-')) {
        auto month_pos = c.pos;
        t.month = c.digits(2, "month");
        if (t.month < 1 || t.month > 12) {
            c.pos = month_pos;
            c.fail("month out of range");
        }
        g = Granularity::month;
        if (c.accept('-')) {
            auto day_pos = c.pos;
            t.day = c.digits(2, "day");
            if (t.day < 1 || t.day > days_in_month(t.year, t.month)) {
                c.pos = day_pos;
                c.fail("day out of range for month");
            }
            g = Granularity::day;
            if (c.accept('T')) {
                auto hour_pos = c.pos;
                t.hour = c.digits(2, "hour");
                if (t.hour > 23) {
                    c.pos = hour_pos;
                    c.fail("hour out of range");
                }
                g = Granularity::hour;
                if (c.accept(':')) {
                    auto minute_pos = c.pos;
                    t.minute = c.digits(2, "minute");
                    if (t.minute > 59) {
                        c.pos = minute_pos;
                        c.fail("minute out of range");
                    }
                    g = Granularity::minute;
                }
            }
        }
    }
    if (!c.done()) c.fail("unexpected trailing characters");
    return {t, g};
}

}  // namespace detail

/// Canonical ISO 8601 form at the value's granularity; intervals join with '/'.
inline std::string serialize(const TemporalValue& v) {
    auto out = detail::format_timestamp(v.start, v.granularity);
    if (v.kind == TemporalKind::interval && v.end) {
        out += '/';
        out += detail::format_timestamp(*v.end, v.granularity);
    }
    return out;
}

/// Accepts YYYY, YYYY-MM, YYYY-MM-DD, YYYY-MM-DDThh, YYYY-MM-DDThh:mm and
/// "A/B" intervals whose endpoints share a granularity.
inline TemporalValue parse_iso(std::string_view text) {
    if (text.empty()) throw BadIso("empty temporal value", 0);
    TemporalValue v;
    auto slash = text.find('/');
    if (slash == std::string_view::npos) {
        auto [ts, g] = detail::parse_timestamp(text, 0);
        v.start = ts;
        v.granularity = g;
        return v;
    }
    auto [start, g1] = detail::parse_timestamp(text.substr(0, slash), 0);
    auto [end, g2] = detail::parse_timestamp(text.substr(slash + 1), slash + 1);
    if (g1 != g2) throw BadIso("interval endpoints differ in granularity", slash);
    if (end < start) throw BadIso("interval ends before it starts", slash);
    v.kind = TemporalKind::interval;
    v.start = start;
    v.end = end;
    v.granularity = g1;
    return v;
}

inline bool is_valid_iso(std::string_view text) {
    try {
        parse_iso(text);
        return true;
    } catch (const BadIso&) {
        return false;
    }
}

/// True iff kind, granularity and every populated field agree.
inline bool temporal_exact_match(const TemporalValue& a, const TemporalValue& b) {
    return a.kind == b.kind && a.granularity == b.granularity && serialize(a) == serialize(b);
}

/// Days since 1970-01-01 of the value's start (intervals contribute their start).
inline std::int64_t day_number(const TemporalValue& v) {
    return v.start.date().time_since_epoch().count();
}

/// Calendar month arithmetic; the day clamps to the target month's length.
inline Timestamp add_months(const Timestamp& t, int months) {
    int total = t.year * 12 + static_cast<int>(t.month) - 1 + months;
    Timestamp out = t;
    out.year = total / 12;
    out.month = static_cast<unsigned>(total % 12) + 1;
    out.day = std::min(t.day, detail::days_in_month(out.year, out.month));
    return out;
}

inline Timestamp add_days(const Timestamp& t, int days) {
    auto out = Timestamp::from_date(t.date() + std::chrono::days{days});
    out.hour = t.hour;
    out.minute = t.minute;
    return out;
}

namespace detail {

inline std::optional<int> parse_count(const std::string& word) {
    static const char* names[] = {"zero", "one", "two", "three", "four", "five", "six",
                                  "seven", "eight", "nine", "ten", "eleven", "twelve"};
    if (word == "a" || word == "an") return 1;
    for (int i = 0; i < 13; ++i) {
        if (word == names[i]) return i;
    }
    if (!word.empty() && word.size() <= 4 &&
        word.find_first_not_of("0123456789") == std::string::npos)
        return std::stoi(word);
    return std::nullopt;
}

inline std::optional<unsigned> parse_weekday(const std::string& word) {
    static const char* names[] = {"sunday", "monday", "tuesday", "wednesday",
                                  "thursday", "friday", "saturday"};
    for (unsigned i = 0; i < 7; ++i) {
        if (word == names[i]) return i;
    }
    return std::nullopt;
}

inline std::string normalize_expression(std::string_view expression) {
    auto s = text::to_lower(text::collapse_whitespace(expression));
    while (!s.empty() && (s.back() == '.' || s.back() == ',' || s.back() == ';')) s.pop_back();
    if (s.rfind("the ", 0) == 0) s.erase(0, 4);
    return s;
}

inline TemporalValue day_value(const Timestamp& t, std::string_view expression) {
    TemporalValue v;
    v.start = {t.year, t.month, t.day, 0, 0};
    v.granularity = Granularity::day;
    v.original_expression = std::string(expression);
    v.relative = true;
    return v;
}

}  // namespace detail

/// Rule-based resolution of a relative expression against an absolute anchor.
/// Inventory: today, tomorrow, yesterday, the next day, the previous day,
/// N days/weeks/months later/earlier, next/last <weekday>,
/// this/next/last week/month/year. Case-insensitive; the article is optional.
inline TemporalValue resolve_relative(std::string_view expression, const TemporalValue& anchor) {
    const auto s = detail::normalize_expression(expression);
    const auto& base = anchor.start;
    auto require = [&](Granularity needed) {
        if (anchor.granularity < needed)
            throw UnresolvableExpression("anchor " + serialize(anchor) + " is coarser than '" +
                                         std::string(expression) + "' needs");
    };

    if (s == "today") {
        require(Granularity::day);
        return detail::day_value(base, expression);
    }
    if (s == "tomorrow" || s == "next day") {
        require(Granularity::day);
        return detail::day_value(add_days(base, 1), expression);
    }
    if (s == "yesterday" || s == "previous day") {
        require(Granularity::day);
        return detail::day_value(add_days(base, -1), expression);
    }

    static const std::regex offset_re(R"(^(\w+) (day|days|week|weeks|month|months) (later|earlier)$)");
    static const std::regex weekday_re(R"(^(next|last) (\w+)$)");
    static const std::regex period_re(R"(^(this|next|last) (week|month|year)$)");
    std::smatch m;

    if (std::regex_match(s, m, offset_re)) {
        auto count = detail::parse_count(m[1].str());
        if (!count) throw UnresolvableExpression("unknown quantity in '" + std::string(expression) + "'");
        int sign = m[3].str() == "later" ? 1 : -1;
        auto unit = m[2].str();
        if (unit.rfind("month", 0) == 0) {
            require(Granularity::day);
            return detail::day_value(add_months(base, sign * *count), expression);
        }
        require(Granularity::day);
        int days = *count * (unit.rfind("week", 0) == 0 ? 7 : 1);
        return detail::day_value(add_days(base, sign * days), expression);
    }

    if (std::regex_match(s, m, period_re)) {
        int step = m[1].str() == "this" ? 0 : (m[1].str() == "next" ? 1 : -1);
        auto unit = m[2].str();
        TemporalValue v;
        v.original_expression = std::string(expression);
        v.relative = true;
        if (unit == "year") {
            require(Granularity::year);
            v.granularity = Granularity::year;
            v.start = {base.year + step, 1, 1, 0, 0};
            return v;
        }
        if (unit == "month") {
            require(Granularity::month);
            auto t = add_months({base.year, base.month, 1, 0, 0}, step);
            v.granularity = Granularity::month;
            v.start = {t.year, t.month, 1, 0, 0};
            return v;
        }
        require(Granularity::day);
        // Weeks run Monday to Sunday.
        auto date = base.date() + std::chrono::days{7 * step};
        auto back = (std::chrono::weekday{date} - std::chrono::Monday).count();
        auto monday = date - std::chrono::days{back};
        v.kind = TemporalKind::interval;
        v.granularity = Granularity::day;
        v.start = Timestamp::from_date(monday);
        v.end = Timestamp::from_date(monday + std::chrono::days{6});
        return v;
    }

    if (std::regex_match(s, m, weekday_re)) {
        auto wd = detail::parse_weekday(m[2].str());
        if (wd) {
            require(Granularity::day);
            std::chrono::weekday target{*wd};
            auto date = base.date();
            std::chrono::sys_days out;
            if (m[1].str() == "next") {
                auto ahead = (target - std::chrono::weekday{date}).count();
                out = date + std::chrono::days{ahead == 0 ? 7 : ahead};
            } else {
                auto behind = (std::chrono::weekday{date} - target).count();
                out = date - std::chrono::days{behind == 0 ? 7 : behind};
            }
            return detail::day_value(Timestamp::from_date(out), expression);
        }
    }

    throw UnresolvableExpression("no rule for '" + std::string(expression) + "'");
}

}  // namespace stindex
